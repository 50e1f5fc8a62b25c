#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace harmony {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One record of the define-by-run graph. `order` is taken from a per-thread
// counter at creation, so parents always carry a smaller order than their
// children and reverse creation order is a valid topological order.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::uint64_t order = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals. Copies share the underlying node;
// use clone() for an independent leaf.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t numel() const;
    // Rows/cols of a 2-D tensor. A 1-D tensor of length n reads as 1×n.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;
    // Zero-filled when no backward pass has touched this tensor yet.
    std::span<const double> grad() const;
    void zero_grad();

    // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
    // Non-leaf gradients are recomputed from scratch on every call.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;
    Tensor reshape(Shape shape) const;

    const detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(detail::Node&)>);
};

// While alive, ops on this thread record no graph edges (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Builds an op output; the graph edge is only kept when some input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x·wᵀ (+ bias): w is [out×in], bias has `out` entries.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Adds a length-N row to every row of an M×N tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- reductions and reshaping ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over the sequence (row) axis: [L×D] -> [1×D].
Tensor mean_rows(const Tensor& a);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// ---- normalization / probabilities ----
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-9);
// Row softmax. With `causal`, row i only covers columns <= i + causal_offset.
Tensor softmax_rows(const Tensor& x, bool causal = false, std::size_t causal_offset = 0);

// ---- losses (scalar outputs) ----
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
Tensor mse(const Tensor& pred, const Tensor& target);
// Mean binary cross-entropy of sigmoid(logits) against labels in {0,1}.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);

// ---- symmetric eigendecomposition (no autodiff) ----
struct SymEig {
    std::vector<double> values;   // ascending
    std::vector<double> vectors;  // N×N row-major; column j pairs with values[j]
    std::size_t n = 0;
    int sweeps = 0;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below 1e-12.
SymEig sym_eig(const Tensor& a);
SymEig sym_eig(std::span<const double> a, std::size_t n);

}  // namespace harmony
