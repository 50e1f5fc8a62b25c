#include "doctest.h"

#include <cmath>

#include "harmony/errors.hpp"
#include "harmony/metrics.hpp"
#include "harmony/rng.hpp"
#include "support/suites.hpp"

using namespace harmony;

TEST_CASE("levenshtein against the recursive definition") {
    CHECK(harmony::testing::levenshtein_mismatches(6) == 0);
    CHECK(levenshtein("kitten", "sitting") == 3);
    CHECK(levenshtein("", "abc") == 3);
}

TEST_CASE("ned") {
    CHECK(ned("", "") == 1.0);
    CHECK(ned("abc", "abc") == 1.0);
    CHECK(ned("abc", "") == 0.0);
    CHECK(ned("abcd", "abce") == 0.75);
    for (const char* a : {"", "a", "ab", "ba", "aab"})
        for (const char* b : {"", "a", "ab", "ba", "aab"}) {
            CHECK(ned(a, b) == ned(b, a));
            CHECK((ned(a, b) == 1.0) == (std::string(a) == b));
            CHECK((ned(a, b) >= 0.0 && ned(a, b) <= 1.0));
        }
}

TEST_CASE("iou hand cases") {
    CHECK(acc_at_05({0, 0, 4, 4}, {0, 0, 4, 4}).iou == 1.0);
    CHECK(acc_at_05({0, 0, 4, 4}, {4, 0, 8, 4}).iou == 0.0);
    CHECK(acc_at_05({0, 0, 4, 4}, {8, 8, 12, 12}).iou == 0.0);
    const auto half = acc_at_05({0, 0, 4, 4}, {0, 0, 4, 8});
    CHECK(half.iou == 0.5);
    CHECK(half.hit);
    const auto third = acc_at_05({0, 0, 4, 4}, {2, 0, 6, 4});
    CHECK(third.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_FALSE(third.hit);
    CHECK(acc_at_05({1, 1, 3, 3}, {0, 0, 4, 4}).iou == 0.25);
    // Joint translation leaves IoU unchanged.
    CHECK(acc_at_05({5, 7, 9, 11}, {7, 7, 11, 11}).iou == acc_at_05({0, 0, 4, 4}, {2, 0, 6, 4}).iou);
    CHECK_THROWS_AS(acc_at_05({0, 0, 0, 4}, {0, 0, 4, 4}), ContractError);
    CHECK_THROWS_AS(acc_at_05({0, 0, 4, 4}, {3, 3, 1, 1}), ContractError);
}

TEST_CASE("box text round-trips") {
    const Box b{4, 8, 12, 12};
    CHECK(format_box(b) == "<4,8,12,12>");
    CHECK(parse_box("<4,8,12,12>") == b);
    CHECK_FALSE(parse_box("<4,8,12>").has_value());
    CHECK_FALSE(parse_box("<a,8,12,12>").has_value());
    const auto all = parse_boxes("AB <0,0,8,4> C <12,12,16,16> <junk>");
    REQUIRE(all.size() == 2);
    CHECK(all[1] == Box{12, 12, 16, 16});
}

TEST_CASE("exact accuracy") {
    const std::vector<std::string> a{"a", "b", "c"}, b{"a", "x", "c"}, c{"x", "y", "z"};
    CHECK(exact_accuracy(a, a) == 1.0);
    CHECK(exact_accuracy(a, c) == 0.0);
    CHECK(exact_accuracy(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const std::vector<std::string> padded{" a ", "b\n", "C"};
    CHECK(exact_accuracy(padded, a) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const std::vector<std::string> shorter{"a"};
    CHECK_THROWS_AS(exact_accuracy(a, shorter), ContractError);
}

TEST_CASE("frechet distance closed forms") {
    FeatureStats a{1, {0.0}, {1.0}}, b{1, {3.0}, {1.0}};
    CHECK(std::abs(frechet_distance(a, b) - 9.0) < 1e-8);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
    FeatureStats c{1, {0.0}, {4.0}};
    CHECK(std::abs(frechet_distance(a, c) - 1.0) < 1e-8);  // (σa - σb)²
    FeatureStats d{2, {1.0, 2.0}, {2.0, 0.3, 0.3, 1.0}}, e{2, {0.0, -1.0}, {1.0, -0.2, -0.2, 3.0}};
    CHECK(std::abs(frechet_distance(d, e) - frechet_distance(e, d)) < 1e-8);
    CHECK(frechet_distance(d, e) > 0);
}

TEST_CASE("feature stats use the unbiased covariance") {
    const std::vector<std::vector<double>> f{{1.0}, {3.0}};
    const auto s = feature_stats(f);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.cov[0] == doctest::Approx(2.0 + 1e-6).epsilon(1e-15));
}

namespace {

std::vector<Image> noise_images(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Image> out;
    for (std::size_t i = 0; i < n; ++i) {
        Image img = Image::black(16, 16);
        for (auto& p : img.pixels) p = rng.uniform();
        out.push_back(img);
    }
    return out;
}

}  // namespace

TEST_CASE("toy fid") {
    const auto a = noise_images(20, 1), b = noise_images(20, 2);
    CHECK(std::abs(toy_fid(a, a)) < 1e-8);
    CHECK(toy_fid(a, b) > 0);
    CHECK(std::abs(toy_fid(a, b) - toy_fid(b, a)) < 1e-8);
    auto ra = a, rb = b;
    std::reverse(ra.begin(), ra.end());
    std::reverse(rb.begin(), rb.end());
    CHECK(std::abs(toy_fid(ra, rb) - toy_fid(a, b)) < 1e-8);
    CHECK(toy_fid_features(a[0]).size() == 64);
    CHECK_THROWS_AS(toy_fid(std::span<const Image>{}, b), ContractError);
}
