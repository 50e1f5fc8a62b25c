#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/image.hpp"

namespace harmony {

struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double area() const { return (x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 < x1 && y0 < y1; }
    bool operator==(const Box&) const = default;
};

// "<x0,y0,x1,y1>" with integer coordinates.
std::string format_box(const Box& b);
std::optional<Box> parse_box(std::string_view s);
// Every "<...>" group in a string that parses as a box.
std::vector<Box> parse_boxes(std::string_view s);

std::size_t levenshtein(std::string_view a, std::string_view b);

// 1 - Levenshtein/max(|a|,|b|); 1 when both are empty.
double ned(std::string_view a, std::string_view b);

struct IouResult {
    double iou = 0.0;
    bool hit = false;  // iou >= 0.5
};

IouResult acc_at_05(const Box& pred, const Box& gt);

// Fraction of exact matches after trimming surrounding whitespace.
double exact_accuracy(std::span<const std::string> preds, std::span<const std::string> gts);

// Gaussian fit of a feature set. Covariance is unbiased (n-1), plus 1e-6·I.
struct FeatureStats {
    std::size_t dim = 0;
    std::vector<double> mean;
    std::vector<double> cov;  // dim×dim row-major
};

FeatureStats feature_stats(std::span<const std::vector<double>> features);

// ‖μa-μb‖² + Tr(Σa + Σb - 2(Σa^½ Σb Σa^½)^½), roots via sym_eig with negative
// eigenvalues clamped to zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// 8×8 mean-pooled pixels of a 16×16 single-channel image (d = 64).
std::vector<double> toy_fid_features(const Image& img);

// Fréchet distance between Gaussian fits of toy_fid_features over two image sets.
double toy_fid(std::span<const Image> set_a, std::span<const Image> set_b);

}  // namespace harmony
