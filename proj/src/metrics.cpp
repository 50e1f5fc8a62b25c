#include "harmony/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "harmony/errors.hpp"
#include "harmony/tensor.hpp"

namespace harmony {

std::string format_box(const Box& b) {
    auto i = [](double v) { return std::to_string(static_cast<long>(std::lround(v))); };
    return "<" + i(b.x0) + "," + i(b.y0) + "," + i(b.x1) + "," + i(b.y1) + ">";
}

std::optional<Box> parse_box(std::string_view s) {
    if (s.size() < 9 || s.front() != '<' || s.back() != '>') return std::nullopt;
    s = s.substr(1, s.size() - 2);
    double v[4];
    for (int k = 0; k < 4; ++k) {
        auto comma = s.find(',');
        auto part = k < 3 ? s.substr(0, comma) : s;
        if (part.empty() || (k < 3 && comma == std::string_view::npos)) return std::nullopt;
        long x = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
        if (ec != std::errc() || ptr != part.data() + part.size()) return std::nullopt;
        v[k] = static_cast<double>(x);
        if (k < 3) s = s.substr(comma + 1);
    }
    return Box{v[0], v[1], v[2], v[3]};
}

std::vector<Box> parse_boxes(std::string_view s) {
    std::vector<Box> out;
    std::size_t pos = 0;
    while ((pos = s.find('<', pos)) != std::string_view::npos) {
        auto end = s.find('>', pos);
        if (end == std::string_view::npos) break;
        if (auto b = parse_box(s.substr(pos, end - pos + 1))) out.push_back(*b);
        pos = end + 1;
    }
    return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double ned(std::string_view a, std::string_view b) {
    const std::size_t m = std::max(a.size(), b.size());
    if (m == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

IouResult acc_at_05(const Box& pred, const Box& gt) {
    if (!pred.valid() || !gt.valid()) throw ContractError("acc_at_05: degenerate box");
    const double ix = std::max(0.0, std::min(pred.x1, gt.x1) - std::max(pred.x0, gt.x0));
    const double iy = std::max(0.0, std::min(pred.y1, gt.y1) - std::max(pred.y0, gt.y0));
    const double inter = ix * iy;
    const double iou = inter / (pred.area() + gt.area() - inter);
    return {iou, iou >= 0.5};
}

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace

double exact_accuracy(std::span<const std::string> preds, std::span<const std::string> gts) {
    if (preds.size() != gts.size()) {
        throw ContractError("exact_accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(gts.size()) + " references");
    }
    if (preds.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += trim(preds[i]) == trim(gts[i]);
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

FeatureStats feature_stats(std::span<const std::vector<double>> features) {
    if (features.empty()) throw ContractError("feature_stats: empty set");
    FeatureStats s;
    s.dim = features[0].size();
    const double n = static_cast<double>(features.size());
    s.mean.assign(s.dim, 0.0);
    for (const auto& f : features) {
        if (f.size() != s.dim) throw DimensionError("feature_stats: ragged features");
        for (std::size_t i = 0; i < s.dim; ++i) s.mean[i] += f[i];
    }
    for (auto& m : s.mean) m /= n;
    s.cov.assign(s.dim * s.dim, 0.0);
    if (features.size() > 1) {
        for (const auto& f : features)
            for (std::size_t i = 0; i < s.dim; ++i)
                for (std::size_t j = 0; j < s.dim; ++j)
                    s.cov[i * s.dim + j] += (f[i] - s.mean[i]) * (f[j] - s.mean[j]);
        for (auto& c : s.cov) c /= (n - 1.0);
    }
    for (std::size_t i = 0; i < s.dim; ++i) s.cov[i * s.dim + i] += 1e-6;
    return s;
}

namespace {

using Mat = std::vector<double>;

Mat matmul_sq(const Mat& a, const Mat& b, std::size_t n) {
    Mat c(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * n + k] * b[k * n + j];
    return c;
}

Mat symmetrize(Mat m, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = m[j * n + i] = v;
        }
    return m;
}

// PSD square root V·diag(√max(λ,0))·Vᵀ.
Mat psd_sqrt(const Mat& m, std::size_t n) {
    auto eig = sym_eig(m, n);
    Mat out(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double r = std::sqrt(std::max(eig.values[k], 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += eig.vectors[i * n + k] * r * eig.vectors[j * n + k];
    }
    return out;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim != b.dim) throw DimensionError("frechet_distance: feature dimensions differ");
    const std::size_t n = a.dim;
    double mean_term = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
    auto ra = psd_sqrt(a.cov, n);
    auto inner = symmetrize(matmul_sq(matmul_sq(ra, b.cov, n), ra, n), n);
    auto root = psd_sqrt(inner, n);
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += a.cov[i * n + i] + b.cov[i * n + i] - 2.0 * root[i * n + i];
    return std::max(0.0, mean_term + trace);
}

std::vector<double> toy_fid_features(const Image& img) {
    if (img.height != 16 || img.width != 16 || img.channels != 1) {
        throw DimensionError("toy_fid_features expects a 16x16x1 image");
    }
    std::vector<double> f(64, 0.0);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) f[(y / 2) * 8 + x / 2] += 0.25 * img.at(y, x);
    return f;
}

double toy_fid(std::span<const Image> set_a, std::span<const Image> set_b) {
    if (set_a.empty() || set_b.empty()) throw ContractError("toy_fid: empty image set");
    std::vector<std::vector<double>> fa, fb;
    for (const auto& im : set_a) fa.push_back(toy_fid_features(im));
    for (const auto& im : set_b) fb.push_back(toy_fid_features(im));
    return frechet_distance(feature_stats(fa), feature_stats(fb));
}

}  // namespace harmony
