#include "harmony/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "harmony/errors.hpp"

namespace harmony {

namespace {

thread_local std::uint64_t g_node_counter = 0;
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->order = ++g_node_counter;
    if (requires_grad) node->grad.assign(node->data.size(), 0.0);
    return node;
}

void ensure_grad(detail::Node& n) {
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
}

std::size_t rows_of(const Shape& s) { return s.size() == 1 ? 1 : s[0]; }
std::size_t cols_of(const Shape& s) { return s.size() == 1 ? s[0] : s[1]; }

void require_2d(const Tensor& t, const char* op) {
    if (t.dim() != 1 && t.dim() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.numel() != b.numel() || a.rows() != b.rows()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

// Parent accessors used inside backward closures.
detail::Node& parent(detail::Node& n, std::size_t i) { return *n.parents[i]; }

bool wants(const detail::Node& p) { return p.requires_grad; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return shape.empty() ? 1 : n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ------------------------------------------------------------------ Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("Tensor::matrix: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return from({rows.size(), cols}, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on non-scalar tensor of shape " + shape_string(shape()));
    }
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!node_->leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = flag;
    if (flag) ensure_grad(*node_);
}

bool Tensor::is_leaf() const { return node_->leaf; }

std::span<const double> Tensor::grad() const {
    ensure_grad(*node_);
    return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_string(shape()));
    }
    if (!node_->requires_grad) {
        throw ContractError("backward(): loss is not connected to any tensor requiring grad");
    }
    std::vector<detail::Node*> nodes;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->order > b->order; });
    for (auto* n : nodes) {
        if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
        else ensure_grad(*n);
    }
    node_->grad[0] += 1.0;
    for (auto* n : nodes) {
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data, false)); }

Tensor Tensor::clone() const {
    return Tensor(new_node(shape(), node_->data, node_->requires_grad));
}

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw DimensionError("reshape: cannot view " + shape_string(shape()) + " as " +
                             shape_string(new_shape));
    }
    return make_result(std::move(new_shape), node_->data, {*this}, [](detail::Node& out) {
        auto& a = parent(out, 0);
        if (!wants(a)) return;
        for (std::size_t i = 0; i < out.grad.size(); ++i) a.grad[i] += out.grad[i];
    });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn) {
    bool any = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    auto node = new_node(std::move(shape), std::move(data), any);
    node->leaf = false;
    if (any) {
        for (auto& t : inputs) node->parents.push_back(t.node_);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

// ------------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = &B[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pb = parent(o, 1);
        const auto& G = o.grad;
        if (wants(pa)) {
            // dA = G·Bᵀ
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = &pb.data[p * n];
                    const double* grow = &G[i * n];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    pa.grad[i * k + p] += acc;
                }
            }
        }
        if (wants(pb)) {
            // dB = Aᵀ·G
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa.data[i * k + p];
                    const double* grow = &G[i * n];
                    double* brow = &pb.grad[p * n];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
}

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* bias) {
    require_2d(x, "linear");
    require_2d(w, "linear");
    const std::size_t m = x.rows(), in = x.cols(), out_dim = w.rows();
    if (w.cols() != in) {
        throw DimensionError("linear: input " + shape_string(x.shape()) +
                             " does not match weight " + shape_string(w.shape()));
    }
    if (bias && bias->numel() != out_dim) {
        throw DimensionError("linear: bias " + shape_string(bias->shape()) +
                             " does not match weight " + shape_string(w.shape()));
    }
    std::vector<double> out(m * out_dim, 0.0);
    auto X = x.data();
    auto W = w.data();
    // Row-times-Wᵀ as axpy sweeps over a transposed copy; vectorizes without reassociation.
    std::vector<double> wt(in * out_dim);
    for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t p = 0; p < in; ++p) wt[p * out_dim + o] = W[o * in + p];
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out[i * out_dim];
        if (bias) std::copy(bias->data().begin(), bias->data().end(), orow);
        const double* xrow = &X[i * in];
        for (std::size_t p = 0; p < in; ++p) {
            const double xv = xrow[p];
            const double* wcol = &wt[p * out_dim];
            for (std::size_t o = 0; o < out_dim; ++o) orow[o] += xv * wcol[o];
        }
    }
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias != nullptr;
    return make_result({m, out_dim}, std::move(out), std::move(inputs),
                       [m, in, out_dim, has_bias](detail::Node& o) {
                           auto& px = parent(o, 0);
                           auto& pw = parent(o, 1);
                           const auto& G = o.grad;
                           if (wants(px)) {
                               for (std::size_t i = 0; i < m; ++i) {
                                   double* xg = &px.grad[i * in];
                                   for (std::size_t q = 0; q < out_dim; ++q) {
                                       const double g = G[i * out_dim + q];
                                       if (g == 0.0) continue;
                                       const double* wrow = &pw.data[q * in];
                                       for (std::size_t p = 0; p < in; ++p) xg[p] += g * wrow[p];
                                   }
                               }
                           }
                           if (wants(pw)) {
                               for (std::size_t i = 0; i < m; ++i) {
                                   const double* xrow = &px.data[i * in];
                                   for (std::size_t q = 0; q < out_dim; ++q) {
                                       const double g = G[i * out_dim + q];
                                       if (g == 0.0) continue;
                                       double* wg = &pw.grad[q * in];
                                       for (std::size_t p = 0; p < in; ++p) wg[p] += g * xrow[p];
                                   }
                               }
                           }
                           if (has_bias) {
                               auto& pb = parent(o, 2);
                               if (wants(pb)) {
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t q = 0; q < out_dim; ++q)
                                           pb.grad[q] += G[i * out_dim + q];
                               }
                           }
                       });
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    return linear_impl(x, w, &bias);
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    auto A = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    return make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += o.grad[j * m + i];
    });
}

// ------------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = parent(o, k);
            if (!wants(p)) continue;
            for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pb = parent(o, 1);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (wants(pa)) pa.grad[i] += o.grad[i];
            if (wants(pb)) pb.grad[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pb = parent(o, 1);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (wants(pa)) pa.grad[i] += o.grad[i] * pb.data[i];
            if (wants(pb)) pb.grad[i] += o.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return make_result(a.shape(), std::move(out), {a}, [s](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * s;
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_2d(a, "add_row");
    const std::size_t m = a.rows(), n = a.cols();
    if (row.numel() != n) {
        throw DimensionError("add_row: row " + shape_string(row.shape()) +
                             " does not match columns of " + shape_string(a.shape()));
    }
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + row.data()[j];
    return make_result(a.shape(), std::move(out), {a, row}, [m, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pr = parent(o, 1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double g = o.grad[i * n + j];
                if (wants(pa)) pa.grad[i * n + j] += g;
                if (wants(pr)) pr.grad[j] += g;
            }
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double y = o.data[i];
            pa.grad[i] += o.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& o) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double x = pa.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa.grad[i] += o.grad[i] * (cdf + x * pdf);
        }
    });
}

// ------------------------------------------------------------------ reductions

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({1}, {s}, {a}, [](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (auto& g : pa.grad) g += o.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
    require_2d(a, "mean_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw ContractError("mean_rows: empty sequence");
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
    for (auto& v : out) v /= static_cast<double>(m);
    return make_result({1, n}, std::move(out), {a}, [m, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += o.grad[j] * inv;
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) +
                                 " vs " + shape_string(p.shape()));
        }
        m += p.rows();
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result({m, n}, std::move(out), std::move(inputs), [](detail::Node& o) {
        std::size_t offset = 0;
        for (auto& pp : o.parents) {
            const std::size_t len = pp->data.size();
            if (pp->requires_grad)
                for (std::size_t i = 0; i < len; ++i) pp->grad[i] += o.grad[offset + i];
            offset += len;
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) +
                                 " vs " + shape_string(p.shape()));
        }
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + c0 + j] = parts[k].data()[i * w + j];
        c0 += w;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result({m, n}, std::move(out), std::move(inputs),
                       [m, n, widths](detail::Node& o) {
                           std::size_t c = 0;
                           for (std::size_t k = 0; k < o.parents.size(); ++k) {
                               auto& pp = *o.parents[k];
                               const std::size_t w = widths[k];
                               if (pp.requires_grad)
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < w; ++j)
                                           pp.grad[i * w + j] += o.grad[i * n + c + j];
                               c += w;
                           }
                       });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    require_2d(a, "slice_rows");
    const std::size_t n = a.cols();
    if (begin + count > a.rows()) {
        throw IndexError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_string(a.shape()));
    }
    std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + (begin + count) * n);
    return make_result({count, n}, std::move(out), {a}, [begin, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[begin * n + i] += o.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    require_2d(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin + count > n) {
        throw IndexError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_string(a.shape()));
    }
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * n + begin + j];
    return make_result({m, count}, std::move(out), {a}, [m, n, begin, count](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j)
                pa.grad[i * n + begin + j] += o.grad[i * count + j];
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_2d(a, "gather_rows");
    const std::size_t n = a.cols();
    std::vector<double> out(rows.size() * n);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= a.rows()) {
            throw IndexError("gather_rows: row " + std::to_string(rows[k]) + " out of " +
                             shape_string(a.shape()));
        }
        std::copy_n(a.data().begin() + rows[k] * n, n, out.begin() + k * n);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result({rows.size(), n}, std::move(out), {a}, [idx, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        if (!wants(pa)) return;
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < n; ++j) pa.grad[idx[k] * n + j] += o.grad[k * n + j];
    });
}

// ------------------------------------------------------------------ normalization

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: affine parameters do not match " +
                             shape_string(x.shape()));
    }
    std::vector<double> out(m * n);
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = &x.data()[i * n];
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
        }
    }
    return make_result(
        {m, n}, std::move(out), {x, gain, bias},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
            auto& px = parent(o, 0);
            auto& pg = parent(o, 1);
            auto& pb = parent(o, 2);
            for (std::size_t i = 0; i < m; ++i) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = o.grad[i * n + j];
                    if (wants(pg)) pg.grad[j] += g * xhat[i * n + j];
                    if (wants(pb)) pb.grad[j] += g;
                    const double d = g * pg.data[j];
                    mean_d += d;
                    mean_dx += d * xhat[i * n + j];
                }
                if (!wants(px)) continue;
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = o.grad[i * n + j] * pg.data[j];
                    px.grad[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                }
            }
        });
}

Tensor softmax_rows(const Tensor& x, bool causal, std::size_t causal_offset) {
    require_2d(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t limit = causal ? std::min(n, i + causal_offset + 1) : n;
        const double* row = &x.data()[i * n];
        double mx = row[0];
        for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < limit; ++j) out[i * n + j] /= z;
    }
    return make_result({m, n}, std::move(out), {x}, [m, n](detail::Node& o) {
        auto& px = parent(o, 0);
        if (!wants(px)) return;
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * o.data[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                px.grad[i * n + j] += o.data[i * n + j] * (o.grad[i * n + j] - dot);
        }
    });
}

// ------------------------------------------------------------------ losses

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    require_2d(logits, "softmax_cross_entropy");
    const std::size_t b = logits.rows(), v = logits.cols();
    if (targets.size() != b) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_string(logits.shape()));
    }
    if (b == 0) throw ContractError("softmax_cross_entropy: empty batch");
    std::vector<double> probs(b * v);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (targets[i] >= v) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                             " out of range for " + std::to_string(v) + " classes");
        }
        const double* row = &logits.data()[i * v];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < v; ++j)
            if (row[j] > row[arg]) arg = j;
        const double mx = row[arg];
        // log Σ exp(l - max) = log1p(Σ_{j≠argmax} exp(l_j - max)) keeps tiny losses exact.
        double rest = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(row[j] - mx);
            probs[i * v + j] = e;
            if (j != arg) rest += e;
        }
        const double z = 1.0 + rest;
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        total += std::log1p(rest) - (row[targets[i]] - mx);
    }
    std::vector<std::size_t> t(targets.begin(), targets.end());
    return make_result({1}, {total / static_cast<double>(b)}, {logits},
                       [b, v, t = std::move(t), probs = std::move(probs)](detail::Node& o) {
                           auto& pl = parent(o, 0);
                           if (!wants(pl)) return;
                           const double g = o.grad[0] / static_cast<double>(b);
                           for (std::size_t i = 0; i < b; ++i)
                               for (std::size_t j = 0; j < v; ++j)
                                   pl.grad[i * v + j] +=
                                       g * (probs[i * v + j] - (j == t[i] ? 1.0 : 0.0));
                       });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse: shape mismatch " + shape_string(pred.shape()) + " vs " +
                             shape_string(target.shape()));
    }
    if (pred.numel() == 0) throw ContractError("mse of empty tensors");
    const double n = static_cast<double>(pred.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    return make_result({1}, {acc / n}, {pred, target}, [n](detail::Node& o) {
        auto& pp = parent(o, 0);
        auto& pt = parent(o, 1);
        const double g = o.grad[0] * 2.0 / n;
        for (std::size_t i = 0; i < pp.data.size(); ++i) {
            const double d = pp.data[i] - pt.data[i];
            if (wants(pp)) pp.grad[i] += g * d;
            if (wants(pt)) pt.grad[i] -= g * d;
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
    if (labels.size() != logits.numel()) {
        throw DimensionError("bce_with_logits: " + std::to_string(labels.size()) +
                             " labels for " + shape_string(logits.shape()));
    }
    if (labels.empty()) throw ContractError("bce_with_logits: no entries");
    const double n = static_cast<double>(labels.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double z = logits.data()[i];
        // softplus(z) - y·z, written to avoid overflow
        acc += std::max(z, 0.0) - labels[i] * z + std::log1p(std::exp(-std::abs(z)));
    }
    std::vector<double> y(labels.begin(), labels.end());
    return make_result({1}, {acc / n}, {logits}, [n, y = std::move(y)](detail::Node& o) {
        auto& pl = parent(o, 0);
        if (!wants(pl)) return;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double z = pl.data[i];
            const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            pl.grad[i] += o.grad[0] * (s - y[i]) / n;
        }
    });
}

// ------------------------------------------------------------------ sym_eig

SymEig sym_eig(const Tensor& a) {
    if (a.dim() != 2 || a.rows() != a.cols()) {
        throw DimensionError("sym_eig: expected a square matrix, got " + shape_string(a.shape()));
    }
    return sym_eig(a.data(), a.rows());
}

SymEig sym_eig(std::span<const double> in, std::size_t n) {
    if (in.size() != n * n) throw DimensionError("sym_eig: data length does not match N×N");
    if (n > 64) throw ContractError("sym_eig: N=" + std::to_string(n) + " exceeds 64");
    double scale_ref = 1.0;
    for (double v : in) scale_ref = std::max(scale_ref, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(in[i * n + j] - in[j * n + i]) > 1e-9 * scale_ref) {
                throw ContractError("sym_eig: input is not symmetric at (" + std::to_string(i) +
                                    "," + std::to_string(j) + ")");
            }

    std::vector<double> a(in.begin(), in.end());
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a[i * n + j] * a[i * n + j];
        return std::sqrt(s);
    };

    SymEig result;
    result.n = n;
    constexpr int max_sweeps = 100;
    while (off_norm() >= 1e-12 && result.sweeps < max_sweeps) {
        ++result.sweeps;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });
    result.values.resize(n);
    result.vectors.resize(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        result.values[j] = a[idx[j] * n + idx[j]];
        for (std::size_t k = 0; k < n; ++k) result.vectors[k * n + j] = v[k * n + idx[j]];
    }
    return result;
}

}  // namespace harmony
