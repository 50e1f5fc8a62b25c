#include "harmony/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "harmony/errors.hpp"

namespace harmony {

DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
    if (steps < 2) throw ConfigError("diffusion schedule needs T >= 2");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ConfigError("diffusion schedule needs 0 < beta_min <= beta_max < 1");
    }
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);
    double running = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
        s.beta[i] = beta_min == beta_max ? beta_min : beta_min + (beta_max - beta_min) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
    }
    return s;
}

std::vector<double> q_sample(const DiffusionSchedule& schedule, std::span<const double> x0,
                             std::size_t t, std::span<const double> eps) {
    if (t < 1 || t > schedule.steps) {
        throw IndexError("q_sample: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(schedule.steps) + "]");
    }
    if (x0.size() != eps.size()) throw DimensionError("q_sample: noise shape differs from image");
    const double ab = schedule.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
    std::vector<double> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(std::max<std::size_t>(half, 1)));
        e[2 * i] = std::sin(static_cast<double>(t) * freq);
        e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

double to_signal(double pixel) { return 2.0 * pixel - 1.0; }
double to_pixel(double signal) { return std::clamp(0.5 * (signal + 1.0), 0.0, 1.0); }

// ------------------------------------------------------------------ network

DenoiseNet::DenoiseNet(ParamStore& store, const DiffusionConfig& cfg, std::size_t image_size_,
                       std::size_t channels_, std::size_t patch_, std::size_t cond_dim, Rng& rng)
    : image_size(image_size_), channels(channels_), patch(patch_), width(cfg.width), heads(cfg.heads) {
    if (patch == 0 || image_size % patch != 0) throw ConfigError("diffusion: bad patch size");
    const std::size_t per_side = image_size / patch;
    const std::string p = "diffusion";
    in_proj = Linear(store, p + ".in_proj", patch_dim(), width, rng);
    positions = store.add(p + ".positions", normal_param({per_side * per_side, width}, 0.1, rng));
    time_proj = Linear(store, p + ".time_proj", width, width, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string b = p + ".block" + std::to_string(i);
        Block blk{
            LayerNorm(store, b + ".ln_self", width),
            Linear(store, b + ".self.q", width, width, rng),
            Linear(store, b + ".self.k", width, width, rng),
            Linear(store, b + ".self.v", width, width, rng),
            Linear(store, b + ".self.o", width, width, rng),
            LayerNorm(store, b + ".ln_cross", width),
            LayerNorm(store, b + ".ln_cond", cond_dim),
            Linear(store, b + ".cross.q", width, width, rng),
            Linear(store, b + ".cross.k", cond_dim, width, rng),
            Linear(store, b + ".cross.v", cond_dim, width, rng),
            Linear(store, b + ".cross.o", width, width, rng),
            LayerNorm(store, b + ".ln_mlp", width),
            Mlp(store, b + ".mlp", width, 2 * width, rng),
        };
        blocks.push_back(std::move(blk));
    }
    ln_out = LayerNorm(store, p + ".ln_out", width);
    out_proj = Linear(store, p + ".out_proj", width, patch_dim(), rng);
}

Tensor DenoiseNet::forward(const Tensor& x_patches, std::size_t t, const Tensor& cond) const {
    if (x_patches.rows() != patch_count() || x_patches.cols() != patch_dim()) {
        throw DimensionError("denoiser input " + shape_string(x_patches.shape()) +
                             " does not match patch layout");
    }
    auto temb = Tensor::from({1, width}, timestep_embedding(t, width));
    auto h = add(in_proj.forward(x_patches), positions);
    h = add_row(h, gelu(time_proj.forward(temb)));
    for (const auto& b : blocks) {
        auto a = b.ln_self.forward(h);
        h = add(h, b.self_o.forward(multi_head_attention(b.self_q.forward(a), b.self_k.forward(a),
                                                         b.self_v.forward(a), heads, false)));
        auto c = b.ln_cross.forward(h);
        auto m = b.ln_cond.forward(cond);
        h = add(h, b.cross_o.forward(multi_head_attention(b.cross_q.forward(c), b.cross_k.forward(m),
                                                          b.cross_v.forward(m), heads, false)));
        h = add(h, b.mlp.forward(b.ln_mlp.forward(h)));
    }
    return out_proj.forward(ln_out.forward(h));
}

std::vector<double> DenoiseNet::to_patches(const Image& img) const {
    if (img.height != image_size || img.width != image_size || img.channels != channels) {
        throw DimensionError("denoiser expects " + std::to_string(image_size) + "x" +
                             std::to_string(image_size) + "x" + std::to_string(channels) + " images");
    }
    const std::size_t per_side = image_size / patch;
    std::vector<double> out(img.size());
    std::size_t k = 0;
    for (std::size_t py = 0; py < per_side; ++py)
        for (std::size_t px = 0; px < per_side; ++px)
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < channels; ++c)
                        out[k++] = img.at(py * patch + y, px * patch + x, c);
    return out;
}

Image DenoiseNet::from_patches(std::span<const double> patches) const {
    Image img = Image::black(image_size, image_size, channels);
    if (patches.size() != img.size()) throw DimensionError("from_patches: wrong element count");
    const std::size_t per_side = image_size / patch;
    std::size_t k = 0;
    for (std::size_t py = 0; py < per_side; ++py)
        for (std::size_t px = 0; px < per_side; ++px)
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < channels; ++c)
                        img.at(py * patch + y, px * patch + x, c) = patches[k++];
    return img;
}

// ------------------------------------------------------------------ loss / sampler

Tensor denoise_loss(const DenoiseNet& net, const DiffusionSchedule& schedule, const Image& x0,
                    const Tensor& cond, Rng& rng, bool stop_cond_grad, DenoiseSample* drawn) {
    auto signal = net.to_patches(x0);
    for (auto& v : signal) v = to_signal(v);
    const std::size_t t = 1 + rng.index(schedule.steps);
    std::vector<double> eps(signal.size());
    for (auto& e : eps) e = rng.normal();
    auto xt = q_sample(schedule, signal, t, eps);
    const Shape shape{net.patch_count(), net.patch_dim()};
    auto pred = net.forward(Tensor::from(shape, std::move(xt)), t,
                            stop_cond_grad ? cond.detach() : cond);
    if (drawn) *drawn = {t, eps};
    return mse(pred, Tensor::from(shape, std::move(eps)));
}

Image sample(const DenoiseNet& net, const DiffusionSchedule& schedule, const Tensor& cond,
             Rng& rng, std::size_t* evaluations) {
    NoGradGuard no_grad;
    const Shape shape{net.patch_count(), net.patch_dim()};
    std::vector<double> x(shape_numel(shape));
    for (auto& v : x) v = rng.normal();
    std::size_t evals = 0;
    for (std::size_t t = schedule.steps; t >= 1; --t) {
        auto eps = net.forward(Tensor::from(shape, x), t, cond);
        ++evals;
        const double beta = schedule.beta_at(t);
        const double ab = schedule.alpha_bar_at(t);
        const double ab_prev = t > 1 ? schedule.alpha_bar_at(t - 1) : 1.0;
        // Posterior mean through the clipped x0 estimate.
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double ct = std::sqrt(schedule.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        auto e = eps.data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0 = std::clamp((x[i] - sn * e[i]) / sa, -1.0, 1.0);
            x[i] = c0 * x0 + ct * x[i];
        }
        if (t > 1) {
            const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
            for (auto& v : x) v += sigma * rng.normal();
        }
    }
    if (evaluations) *evaluations = evals;
    for (auto& v : x) v = to_pixel(v);
    return net.from_patches(x);
}

}  // namespace harmony
