#include "harmony/slide_lora.hpp"

#include <algorithm>
#include <cmath>

#include "harmony/errors.hpp"

namespace harmony {

std::string to_string(Placement p) {
    switch (p) {
        case Placement::vision_encoder: return "vision_encoder";
        case Placement::llm: return "llm";
        case Placement::both: return "both";
    }
    return "both";
}

Placement parse_placement(const std::string& s) {
    if (s == "vision_encoder" || s == "vision-encoder") return Placement::vision_encoder;
    if (s == "llm") return Placement::llm;
    if (s == "both") return Placement::both;
    throw ConfigError("unknown Slide-LoRA placement '" + s + "'");
}

void SlideLoraConfig::validate() const {
    if (n % 3 != 0) throw ConfigError("slide_lora.n=" + std::to_string(n) + " is not divisible by 3");
    if (n != 3 * s) {
        throw ConfigError("slide_lora.n=" + std::to_string(n) + " must equal 3*s (s=" +
                          std::to_string(s) + ")");
    }
    if (rank == 0) throw ConfigError("slide_lora.rank must be >= 1");
    if (gate_hidden == 0) throw ConfigError("slide_lora.gate_hidden must be >= 1");
}

LoraExpert make_expert(ParamStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t rank, double alpha, Rng& rng) {
    if (rank == 0 || rank >= std::min(in, out)) {
        throw ConfigError("LoRA rank " + std::to_string(rank) + " must be in [1, min(" +
                          std::to_string(in) + ", " + std::to_string(out) + "))");
    }
    LoraExpert e;
    e.rank = rank;
    e.scaling = alpha / static_cast<double>(rank);
    e.a = store.add(name + ".A", normal_param({rank, in}, 0.02, rng));
    e.b = store.add(name + ".B", Tensor::zeros({out, rank}));
    return e;
}

Tensor expert_delta(const LoraExpert& e, const Tensor& x) {
    if (x.cols() != e.a.cols()) {
        throw DimensionError("expert_delta: input " + shape_string(x.shape()) +
                             " does not match A " + shape_string(e.a.shape()));
    }
    return scale(linear(linear(x, e.a), e.b), e.scaling);
}

// ------------------------------------------------------------------ gate

GatingNetwork::GatingNetwork(ParamStore& store, const std::string& name, std::size_t dim,
                             std::size_t hidden_dim, Rng& rng)
    : hidden(store, name + ".hidden", dim, hidden_dim, rng) {
    out.weight = store.add(name + ".out.weight", Tensor::zeros({1, hidden_dim}));
    out.bias = store.add(name + ".out.bias", Tensor::zeros({1}));
}

Tensor GatingNetwork::logit(const Tensor& x, std::size_t pool_rows) const {
    if (x.rows() == 0) throw ContractError("gate: empty sequence");
    const std::size_t rows = pool_rows == 0 ? x.rows() : std::min(pool_rows, x.rows());
    // The gate sees a detached copy: its training signal never reaches the experts or backbone.
    auto pooled = mean_rows(slice_rows(x.detach(), 0, rows));
    return out.forward(gelu(hidden.forward(pooled)));
}

double GatingNetwork::gamma(const Tensor& x, std::size_t pool_rows) const {
    return sigmoid(logit(x, pool_rows).detach()).item();
}

std::size_t GatingNetwork::param_count() const {
    return hidden.weight.numel() + hidden.bias.numel() + out.weight.numel() + out.bias.numel();
}

double RouteTrace::resolve(const GatingNetwork& gate, const Tensor& x) {
    if (forced_gamma) return *forced_gamma;
    if (frozen_) {
        if (cursor_ >= gammas_.size()) {
            throw ContractError("RouteTrace: replay exhausted after " +
                                std::to_string(gammas_.size()) + " gates");
        }
        return gammas_[cursor_++];
    }
    auto z = gate.logit(x, pool_rows);
    const double g = sigmoid(z.detach()).item();
    logits_.push_back(z);
    gammas_.push_back(g);
    return g;
}

void RouteTrace::freeze(std::size_t from) {
    if (from > gammas_.size()) throw ContractError("RouteTrace: replay start past the recorded gates");
    frozen_ = true;
    cursor_ = from;
}

// ------------------------------------------------------------------ layers

namespace {

Tensor group_mean(const std::vector<LoraExpert>& group, const Tensor& x) {
    Tensor acc = expert_delta(group[0], x);
    for (std::size_t i = 1; i < group.size(); ++i) acc = add(acc, expert_delta(group[i], x));
    return group.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(group.size()));
}

}  // namespace

Tensor SlideLoraLayer::forward_with_gamma(const Tensor& x, double gamma) const {
    const auto& selected = branch_for(gamma) == Branch::text ? experts_text : experts_image;
    auto delta = add(group_mean(selected, x), group_mean(experts_shared, x));
    return add(base.forward(x), scale(delta, 0.5));
}

Tensor SlideLoraLayer::forward(const Tensor& x, RouteTrace* trace) const {
    const double g = trace ? trace->resolve(gate, x) : gate.gamma(x);
    return forward_with_gamma(x, g);
}

std::size_t SlideLoraLayer::added_param_count() const {
    std::size_t n = gate.param_count();
    for (const auto* group : {&experts_text, &experts_image, &experts_shared})
        for (const auto& e : *group) n += e.a.numel() + e.b.numel();
    return n;
}

Tensor Projection::forward(const Tensor& x, RouteTrace* trace) const {
    return std::visit(
        [&](const auto& layer) -> Tensor {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, SlideLoraLayer>) return layer.forward(x, trace);
            else return layer.forward(x);
        },
        impl_);
}

const Linear& Projection::base() const {
    return std::visit(
        [](const auto& layer) -> const Linear& {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, Linear>) return layer;
            else return layer.base;
        },
        impl_);
}

// ------------------------------------------------------------------ attach

namespace {

bool placement_covers(Placement p, Component c) {
    switch (p) {
        case Placement::vision_encoder: return c == Component::vision_encoder;
        case Placement::llm: return c == Component::llm;
        case Placement::both: return true;
    }
    return false;
}

void freeze_base(const Linear& base) {
    Tensor w = base.weight;
    w.set_requires_grad(false);
    if (base.bias.defined()) {
        Tensor b = base.bias;
        b.set_requires_grad(false);
    }
}

void collect_new(const ParamStore& store, std::size_t before, AttachReport& report) {
    for (std::size_t i = before; i < store.params().size(); ++i)
        report.added_params.push_back(store.params()[i].name);
}

}  // namespace

AttachReport attach_slide_lora(ParamStore& store, std::span<const ProjectionSite> sites,
                               const SlideLoraConfig& config, std::uint64_t seed) {
    config.validate();
    AttachReport report;
    const std::size_t before = store.params().size();
    for (const auto& site : sites) {
        if (!placement_covers(config.placement, site.component)) continue;
        if (!site.projection) throw ConfigError("attach: missing projection at " + site.name);
        if (site.projection->has_slide_lora() || site.projection->has_lora()) {
            throw ConfigError("attach: " + site.name + " already carries an adapter");
        }
        Rng rng(derive_seed(seed, site.name));
        SlideLoraLayer layer;
        layer.base = site.projection->base();
        layer.group_size = config.s;
        const auto in = layer.base.in_features();
        const auto out = layer.base.out_features();
        const std::string prefix = site.name + ".slide";
        for (std::size_t i = 0; i < config.s; ++i) {
            layer.experts_text.push_back(make_expert(store, prefix + ".text" + std::to_string(i),
                                                     in, out, config.rank, config.alpha, rng));
            layer.experts_image.push_back(make_expert(store, prefix + ".image" + std::to_string(i),
                                                      in, out, config.rank, config.alpha, rng));
            layer.experts_shared.push_back(make_expert(
                store, prefix + ".shared" + std::to_string(i), in, out, config.rank, config.alpha,
                rng));
        }
        layer.gate = GatingNetwork(store, prefix + ".gate", in, config.gate_hidden, rng);
        freeze_base(layer.base);
        site.projection->set(std::move(layer));
        ++report.layers;
    }
    collect_new(store, before, report);
    return report;
}

AttachReport attach_lora(ParamStore& store, std::span<const ProjectionSite> sites,
                         Placement placement, std::size_t rank, double alpha, std::uint64_t seed) {
    AttachReport report;
    const std::size_t before = store.params().size();
    for (const auto& site : sites) {
        if (!placement_covers(placement, site.component)) continue;
        if (site.projection->has_slide_lora() || site.projection->has_lora()) {
            throw ConfigError("attach: " + site.name + " already carries an adapter");
        }
        Rng rng(derive_seed(seed, site.name));
        LoraLinear layer;
        layer.base = site.projection->base();
        layer.expert = make_expert(store, site.name + ".lora", layer.base.in_features(),
                                   layer.base.out_features(), rank, alpha, rng);
        freeze_base(layer.base);
        site.projection->set(std::move(layer));
        ++report.layers;
    }
    collect_new(store, before, report);
    return report;
}

ParamOverhead param_overhead(std::span<const ProjectionSite> sites, std::size_t base_count) {
    ParamOverhead result;
    result.base = base_count;
    for (const auto& site : sites) {
        const auto* layer = site.projection->slide_lora();
        if (!layer) continue;
        const std::size_t s = layer->group_size;
        const std::size_t r = layer->experts_text.front().rank;
        const std::size_t in = layer->base.in_features();
        const std::size_t out = layer->base.out_features();
        const std::size_t h = layer->gate.hidden.out_features();
        result.added += 3 * s * r * (in + out) + (in * h + h + h + 1);
    }
    result.ratio = base_count ? static_cast<double>(result.added) / static_cast<double>(base_count)
                              : 0.0;
    return result;
}

}  // namespace harmony
