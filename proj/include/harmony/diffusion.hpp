#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "harmony/image.hpp"
#include "harmony/nn.hpp"

namespace harmony {

// Linear β schedule. Step t ∈ [1, T] lives at index t-1.
struct DiffusionSchedule {
    std::size_t steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
    double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t - 1); }
};

DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max);

// x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε
std::vector<double> q_sample(const DiffusionSchedule& schedule, std::span<const double> x0,
                             std::size_t t, std::span<const double> eps);

struct DiffusionConfig {
    std::size_t steps = 50;
    double beta_min = 1e-4;
    double beta_max = 0.2;  // ᾱ_T ≈ 0.005, so sampling can start from N(0, I)
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t blocks = 2;
};

// Sinusoidal embedding of the integer step t.
std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

// Transformer over image patches with cross-attention to the condition vectors.
// Works in patch layout [P×p²C]; to_patches/from_patches convert images.
class DenoiseNet {
public:
    struct Block {
        LayerNorm ln_self;
        Linear self_q, self_k, self_v, self_o;
        LayerNorm ln_cross, ln_cond;
        Linear cross_q, cross_k, cross_v, cross_o;
        LayerNorm ln_mlp;
        Mlp mlp;
    };

    DenoiseNet() = default;
    DenoiseNet(ParamStore& store, const DiffusionConfig& cfg, std::size_t image_size,
               std::size_t channels, std::size_t patch, std::size_t cond_dim, Rng& rng);

    Tensor forward(const Tensor& x_patches, std::size_t t, const Tensor& cond) const;

    std::vector<double> to_patches(const Image& img) const;
    Image from_patches(std::span<const double> patches) const;
    std::size_t patch_count() const { return positions.rows(); }
    std::size_t patch_dim() const { return patch * patch * channels; }

    std::size_t image_size = 0, channels = 0, patch = 0, width = 0, heads = 1;
    Linear in_proj;
    Tensor positions;
    Linear time_proj;
    std::vector<Block> blocks;
    LayerNorm ln_out;
    Linear out_proj;
};

// Pixels [0,1] <-> diffusion range [-1,1].
double to_signal(double pixel);
double to_pixel(double signal);

struct DenoiseSample {
    std::size_t t = 0;
    std::vector<double> eps;
};

// E_{ε,t}‖ε - net(x_t, t, cond)‖² for one image with t ~ U{1..T}, ε ~ N(0, I).
// With stop_cond_grad the condition is detached from the LM.
Tensor denoise_loss(const DenoiseNet& net, const DiffusionSchedule& schedule, const Image& x0,
                    const Tensor& cond, Rng& rng, bool stop_cond_grad = false,
                    DenoiseSample* drawn = nullptr);

// Ancestral DDPM sampling from x_T ~ N(0, I) with the x0 estimate clipped to the signal range;
// output clamped to [0,1].
// Runs exactly T network evaluations.
Image sample(const DenoiseNet& net, const DiffusionSchedule& schedule, const Tensor& cond,
             Rng& rng, std::size_t* evaluations = nullptr);

}  // namespace harmony
