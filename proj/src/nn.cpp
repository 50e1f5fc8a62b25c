#include "harmony/nn.hpp"

#include <cmath>

#include "harmony/errors.hpp"

namespace harmony {

void snap32(std::span<double> values) {
    for (auto& v : values) v = snap32(v);
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p.tensor;
    return nullptr;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : params_)
        if (p.name.compare(0, prefix.size(), prefix) == 0) p.tensor.set_requires_grad(trainable);
}

void ParamStore::set_trainable_all(bool trainable) {
    for (auto& p : params_) p.tensor.set_requires_grad(trainable);
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Tensor normal_param(Shape shape, double std, Rng& rng) {
    const auto n = shape_numel(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = snap32(std * rng.normal());
    return Tensor::from(std::move(shape), std::move(data));
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, bool with_bias) {
    weight = store.add(name + ".weight",
                       normal_param({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (with_bias) bias = store.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const {
    return bias.defined() ? linear(x, weight, bias) : linear(x, weight);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
    gain = store.add(name + ".gain", Tensor::full({dim}, 1.0));
    bias = store.add(name + ".bias", Tensor::zeros({dim}));
}

Mlp::Mlp(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
         Rng& rng)
    : up(store, name + ".up", dim, hidden, rng), down(store, name + ".down", hidden, dim, rng) {}

namespace {

void check_heads(const Tensor& q, const Tensor& k, std::size_t heads) {
    if (heads == 0 || q.cols() % heads != 0) {
        throw ConfigError("attention width " + std::to_string(q.cols()) +
                          " not divisible by heads " + std::to_string(heads));
    }
    if (k.cols() != q.cols()) {
        throw DimensionError("attention: query " + shape_string(q.shape()) + " vs key " +
                             shape_string(k.shape()));
    }
}

}  // namespace

std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads,
                                      bool causal) {
    check_heads(q, k, heads);
    const std::size_t dh = q.cols() / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        out.push_back(softmax_rows(scale(linear(qh, kh), s), causal));
    }
    return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads, bool causal) {
    auto weights = attention_weights(q, k, heads, causal);
    const std::size_t dh = q.cols() / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h)
        outs.push_back(matmul(weights[h], slice_cols(v, h * dh, dh)));
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace harmony
