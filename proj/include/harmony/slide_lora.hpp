#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "harmony/nn.hpp"

namespace harmony {

enum class Placement { vision_encoder, llm, both };

std::string to_string(Placement p);
// Accepts "vision_encoder", "vision-encoder", "llm", "both".
Placement parse_placement(const std::string& s);

struct SlideLoraConfig {
    std::size_t n = 3;  // total experts, split evenly into text / image / shared groups
    std::size_t s = 1;  // experts per group
    std::size_t rank = 4;
    double alpha = 8.0;
    std::size_t gate_hidden = 16;
    Placement placement = Placement::both;

    // Throws ConfigError unless n == 3s and rank >= 1.
    void validate() const;
};

// Rank-r update scaling·x·Aᵀ·Bᵀ. B starts at zero so a fresh expert is a no-op.
struct LoraExpert {
    Tensor a;  // [r×D_in]
    Tensor b;  // [D_out×r]
    std::size_t rank = 0;
    double scaling = 1.0;
};

LoraExpert make_expert(ParamStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t rank, double alpha, Rng& rng);
Tensor expert_delta(const LoraExpert& e, const Tensor& x);

// γ = sigmoid(W₂·gelu(W₁·meanpool(x) + b₁) + b₂). The output layer starts at
// zero, so an untrained gate reports exactly 0.5.
class GatingNetwork {
public:
    GatingNetwork() = default;
    GatingNetwork(ParamStore& store, const std::string& name, std::size_t dim,
                  std::size_t hidden, Rng& rng);

    // Pre-sigmoid logit from the first `pool_rows` rows of x (all rows when 0).
    Tensor logit(const Tensor& x, std::size_t pool_rows = 0) const;
    double gamma(const Tensor& x, std::size_t pool_rows = 0) const;
    std::size_t param_count() const;

    Linear hidden;
    Linear out;
};

// Carries the routing decisions of one forward call. Each Slide-LoRA layer
// pulls its γ from here in call order: either computed by its gate (and
// recorded) or, once frozen, replayed from an earlier pass.
class RouteTrace {
public:
    // Rows of the layer input the gates pool over; 0 means every row.
    std::size_t pool_rows = 0;
    // Tests and diagnostics can pin every layer to one γ.
    std::optional<double> forced_gamma;

    double resolve(const GatingNetwork& gate, const Tensor& x);

    // Later resolve() calls replay the recorded γ values in order, starting at
    // entry `from`. Calling it again rewinds the replay.
    void freeze(std::size_t from = 0);
    bool frozen() const { return frozen_; }

    const std::vector<double>& gammas() const { return gammas_; }
    const std::vector<Tensor>& logits() const { return logits_; }

private:
    std::vector<double> gammas_;
    std::vector<Tensor> logits_;
    bool frozen_ = false;
    std::size_t cursor_ = 0;
};

enum class Branch { text, image };

class SlideLoraLayer {
public:
    Linear base;
    std::vector<LoraExpert> experts_text;
    std::vector<LoraExpert> experts_image;
    std::vector<LoraExpert> experts_shared;
    GatingNetwork gate;
    std::size_t group_size = 1;

    // base(x) + ½·(mean R^sel(x) + mean R^S(x)); R^sel is the text group iff γ ≥ 0.5.
    Tensor forward(const Tensor& x, RouteTrace* trace) const;
    Tensor forward_with_gamma(const Tensor& x, double gamma) const;

    static Branch branch_for(double gamma) { return gamma >= 0.5 ? Branch::text : Branch::image; }
    std::size_t added_param_count() const;
};

// Plain LoRA (one expert, no routing) used by the dense comparison arms.
class LoraLinear {
public:
    Linear base;
    LoraExpert expert;
    Tensor forward(const Tensor& x) const { return add(base.forward(x), expert_delta(expert, x)); }
};

// A linear map inside an attention block that an adapter can be attached to.
class Projection {
public:
    Projection() = default;
    explicit Projection(Linear base) : impl_(std::move(base)) {}

    Tensor forward(const Tensor& x, RouteTrace* trace) const;
    const Linear& base() const;
    std::size_t in_features() const { return base().in_features(); }
    std::size_t out_features() const { return base().out_features(); }

    bool has_slide_lora() const { return std::holds_alternative<SlideLoraLayer>(impl_); }
    bool has_lora() const { return std::holds_alternative<LoraLinear>(impl_); }
    const SlideLoraLayer* slide_lora() const { return std::get_if<SlideLoraLayer>(&impl_); }
    SlideLoraLayer* slide_lora() { return std::get_if<SlideLoraLayer>(&impl_); }
    const LoraLinear* lora() const { return std::get_if<LoraLinear>(&impl_); }

    void set(SlideLoraLayer layer) { impl_ = std::move(layer); }
    void set(LoraLinear layer) { impl_ = std::move(layer); }

private:
    std::variant<Linear, LoraLinear, SlideLoraLayer> impl_;
};

enum class Component { vision_encoder, llm };

struct ProjectionSite {
    std::string name;  // e.g. "lm.block0.attn.q"
    Component component;
    Projection* projection;
};

struct AttachReport {
    std::vector<std::string> added_params;
    std::size_t layers = 0;
};

// Wraps every site in the placement's component(s) with a Slide-LoRA layer.
// Base weights are frozen; adapter init is seeded per site from `seed`.
AttachReport attach_slide_lora(ParamStore& store, std::span<const ProjectionSite> sites,
                               const SlideLoraConfig& config, std::uint64_t seed);
AttachReport attach_lora(ParamStore& store, std::span<const ProjectionSite> sites,
                         Placement placement, std::size_t rank, double alpha, std::uint64_t seed);

struct ParamOverhead {
    std::size_t added = 0;
    std::size_t base = 0;
    double ratio = 0.0;
};

// Closed form Σ_layers [3s·r·(D_in+D_out) + D_in·h + 2h + 1] over the
// instrumented sites, relative to `base_count` base parameters.
ParamOverhead param_overhead(std::span<const ProjectionSite> sites, std::size_t base_count);

}  // namespace harmony
