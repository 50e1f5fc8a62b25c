#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "harmony/rng.hpp"
#include "harmony/tensor.hpp"

namespace harmony::testing {

// ‖g_analytic - g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂, 1e-8) over the
// checked coordinates of every tensor in `wrt`.
struct GradReport {
    double rel_err = 0;
    std::size_t coords = 0;
};

// `loss` must rebuild the graph from the tensors in `wrt` (they are perturbed
// in place). With max_coords > 0 a random subset of that many coordinates per
// tensor is checked.
inline GradReport check_gradient(const std::function<Tensor()>& loss, std::vector<Tensor> wrt,
                                 Rng* pick = nullptr, std::size_t max_coords = 0,
                                 double h = 1e-6) {
    for (auto& t : wrt) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    loss().backward();

    double diff = 0, na = 0, nn = 0;
    GradReport rep;
    for (auto& t : wrt) {
        std::vector<std::size_t> coords(t.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (pick && max_coords && coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), pick->engine());
            coords.resize(max_coords);
        }
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        for (auto i : coords) {
            auto data = t.mutable_data();
            const double orig = data[i];
            double up, down;
            {
                NoGradGuard ng;
                data[i] = orig + h;
                up = loss().item();
                data[i] = orig - h;
                down = loss().item();
            }
            data[i] = orig;
            const double num = (up - down) / (2 * h);
            diff += (analytic[i] - num) * (analytic[i] - num);
            na += analytic[i] * analytic[i];
            nn += num * num;
            ++rep.coords;
        }
    }
    rep.rel_err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    return rep;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(d));
}

// Fixed random projection to a scalar: Σ w ⊙ y.
inline Tensor project(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

inline std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + rng.index(hi - lo + 1);
}

}  // namespace harmony::testing
