#include "doctest.h"

#include <cmath>

#include "harmony/diffusion.hpp"
#include "harmony/errors.hpp"
#include "harmony/synthworld.hpp"
#include "harmony/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace harmony;

TEST_CASE("schedule identities") {
    const auto s = make_schedule(50, 1e-4, 0.05);
    CHECK(s.beta_at(1) == 1e-4);
    CHECK(s.beta_at(50) == doctest::Approx(0.05).epsilon(1e-15));
    double prod = 1.0;
    for (std::size_t t = 1; t <= 50; ++t) {
        CHECK(s.alpha_at(t) == 1.0 - s.beta_at(t));
        prod *= s.alpha_at(t);
        CHECK(std::abs(s.alpha_bar_at(t) - prod) <= 1e-15);
        if (t > 1) {
            CHECK(s.beta_at(t) > s.beta_at(t - 1));
            CHECK(std::abs(s.alpha_bar_at(t) - s.alpha_bar_at(t - 1) * s.alpha_at(t)) <= 1e-15);
        }
    }
    CHECK_THROWS_AS(make_schedule(1, 1e-4, 0.05), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.1, 0.05), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST_CASE("q_sample moments") {
    const auto s = make_schedule(50, 1e-4, 0.05);
    Rng rng(1);
    const std::vector<double> x0{0.8, -0.3};
    for (std::size_t t : {1, 10, 25, 50}) {
        const std::size_t n = 10000;
        double m[2] = {0, 0}, v[2] = {0, 0};
        std::vector<double> eps(2);
        for (std::size_t i = 0; i < n; ++i) {
            eps = {rng.normal(), rng.normal()};
            auto x = q_sample(s, x0, t, eps);
            for (int k = 0; k < 2; ++k) {
                m[k] += x[k] / n;
                v[k] += x[k] * x[k] / n;
            }
        }
        const double ab = s.alpha_bar_at(t);
        for (int k = 0; k < 2; ++k) {
            const double mean = std::sqrt(ab) * x0[k], var = 1.0 - ab;
            INFO("t=", t, " k=", k);
            CHECK(std::abs(m[k] - mean) <= 0.05 * std::max(std::abs(mean), std::sqrt(var)));
            CHECK(std::abs((v[k] - m[k] * m[k]) - var) <= 0.05 * var);
        }
    }
    CHECK_THROWS_AS(q_sample(s, x0, 0, x0), IndexError);
    CHECK_THROWS_AS(q_sample(s, x0, 51, x0), IndexError);
}

TEST_CASE("pixel and signal ranges") {
    CHECK(to_signal(0.0) == -1.0);
    CHECK(to_signal(1.0) == 1.0);
    CHECK(to_pixel(-1.0) == 0.0);
    CHECK(to_pixel(3.0) == 1.0);
    CHECK(to_pixel(to_signal(0.25)) == 0.25);
}

TEST_CASE("patch layout round-trips") {
    ParamStore st;
    Rng rng(2);
    DenoiseNet net(st, DiffusionConfig{}, 16, 1, 4, 32, rng);
    std::vector<Word> w{{"HI", 2, 1}};
    auto img = render(stamps(w));
    CHECK(net.from_patches(net.to_patches(img)) == img);
    CHECK(net.patch_count() == 16);
    CHECK(net.patch_dim() == 16);
}

TEST_CASE("epsilon oracle has zero loss") {
    ParamStore st;
    Rng rng(3);
    DiffusionConfig dc;
    DenoiseNet net(st, dc, 16, 1, 4, 32, rng);
    const auto sched = make_schedule(dc.steps, dc.beta_min, dc.beta_max);
    std::vector<Word> w{{"A", 0, 0}};
    const auto img = render(stamps(w));
    auto cond = harmony::testing::random_tensor({4, 32}, rng);
    DenoiseSample drawn;
    Rng r1(5);
    const double loss = denoise_loss(net, sched, img, cond, r1, false, &drawn).item();

    // Same draw through the pieces: the loss is the network's ε error.
    std::vector<double> x0 = net.to_patches(img);
    for (auto& v : x0) v = to_signal(v);
    const auto xt = q_sample(sched, x0, drawn.t, drawn.eps);
    const auto eps = Tensor::from({16, 16}, drawn.eps);
    CHECK(loss == mse(net.forward(Tensor::from({16, 16}, xt), drawn.t, cond), eps).item());

    // A predictor that knows x0 inverts q_sample and scores zero.
    const double ab = sched.alpha_bar_at(drawn.t);
    std::vector<double> oracle(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i) oracle[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
    CHECK(mse(Tensor::from({16, 16}, oracle), eps).item() < 1e-24);
}

TEST_CASE("sampler runs exactly T evaluations and stays in range") {
    ParamStore st;
    Rng rng(4);
    DiffusionConfig dc;
    dc.steps = 7;
    DenoiseNet net(st, dc, 16, 1, 4, 32, rng);
    const auto sched = make_schedule(dc.steps, dc.beta_min, dc.beta_max);
    std::size_t evals = 0;
    Rng r(1);
    auto img = sample(net, sched, harmony::testing::random_tensor({4, 32}, rng), r, &evals);
    CHECK(evals == 7);
    for (double p : img.pixels) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("single-image overfit") {
    const auto r = harmony::testing::single_image_overfit(1);
    INFO("mse ", r.mse, " in ", r.seconds, " s");
    CHECK(r.mse < 0.05);
    CHECK(r.seconds < 120);
}
