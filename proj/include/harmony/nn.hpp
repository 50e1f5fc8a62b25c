#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "harmony/rng.hpp"
#include "harmony/tensor.hpp"

namespace harmony {

// Persistent state is kept representable in 32-bit floats so checkpoints
// (which store float32) round-trip bit-exactly; arithmetic stays in double.
inline double snap32(double v) { return static_cast<double>(static_cast<float>(v)); }
void snap32(std::span<double> values);

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Ordered registry of every learnable tensor in a model. Registration order
// is the checkpoint order.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t);
    const std::vector<NamedParam>& params() const { return params_; }
    const Tensor* find(const std::string& name) const;
    std::size_t count() const;

    // requires_grad on every parameter whose name starts with `prefix`.
    void set_trainable(const std::string& prefix, bool trainable);
    void set_trainable_all(bool trainable);
    void zero_grad();

private:
    std::vector<NamedParam> params_;
};

// N(0, std²) init, snapped to float32.
Tensor normal_param(Shape shape, double std, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
           Rng& rng, bool with_bias = true);

    Tensor forward(const Tensor& x) const;
    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }

    Tensor weight;  // [out×in]
    Tensor bias;    // [out], undefined when built without bias
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

    Tensor gain;
    Tensor bias;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
    Tensor forward(const Tensor& x) const { return down.forward(gelu(up.forward(x))); }

    Linear up;
    Linear down;
};

// Scaled dot-product attention over pre-projected q, k, v split into `heads`.
// `causal` masks keys after each query position.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads, bool causal);

// Per-head attention weights [heads][Lq×Lk] for inspection.
std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads,
                                      bool causal);

}  // namespace harmony
