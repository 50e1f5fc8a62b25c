#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Property suites shared by the unit tests and the acceptance runner.
namespace harmony::testing {

struct OpCheck {
    std::string name;
    std::size_t cases = 0;
    double worst = 0;  // largest norm-wise relative error over the cases
};

// Central finite differences against backward() for every differentiable op.
std::vector<OpCheck> gradient_suite(std::uint64_t seed, std::size_t cases = 20);

struct Check {
    std::string name;
    bool ok = false;
    std::string detail;
};

// Zero-init transparency, branch exclusivity, γ = 0.5 routing and the ½-scaling
// identity, exhaustively over small dims and expert counts.
std::vector<Check> slide_lora_algebra();

// param_overhead against counting the registered adapter tensors over the
// (n, s, rank, gate_hidden, placement) grid.
std::vector<Check> param_overhead_grid();

struct FactorizationReport {
    double max_abs_err = 0;  // teacher-forced log p vs per-prefix product
    double mass_err = 0;     // |Σ p - 1|
    std::size_t sequences = 0;
};

// Vocab 3, 4 free tokens after a fixed first token.
FactorizationReport factorization_oracle(std::uint64_t seed);

// Largest change of any earlier row when one later token changes, over every
// length up to max_len and every position.
double causality_violation(std::uint64_t seed, std::size_t max_len);

// Mismatches between levenshtein() and a plain recursive definition over every
// pair of strings from alphabet {a,b} up to max_len, plus three-letter strings to 4.
std::size_t levenshtein_mismatches(std::size_t max_len);

// Largest |ᾱ_t - Π_{s≤t} α_s| and |ᾱ_t - ᾱ_{t-1}·α_t| over a few schedules.
double alpha_bar_identity_error();

// Largest relative error of the empirical mean and variance of q_sample over
// 10⁴ draws against √ᾱ·x0 and 1-ᾱ, over several t.
double q_sample_moment_error(std::uint64_t seed);

struct EpsilonOracle {
    double pieces_diff = 0;  // denoise_loss vs the same draw through q_sample + forward
    double oracle_loss = 0;  // MSE of the ε recovered from x_t and the known x0
};
EpsilonOracle epsilon_oracle(std::uint64_t seed);

struct OverfitReport {
    double mse = 0;  // sampler output vs the training image, in pixel units
    double seconds = 0;
};
// Trains a fresh denoiser on one rendered image, then samples it once.
OverfitReport single_image_overfit(std::uint64_t seed);

struct GoldenReport {
    std::size_t cases = 0;
    std::vector<std::string> failed;
};
GoldenReport filter_golden(const std::string& path);

// Trains one step, saves, reloads; true when parameters, logits, optimizer
// step count and RNG state all match exactly.
bool checkpoint_round_trip(const std::string& dir);

}  // namespace harmony::testing
