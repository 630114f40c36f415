#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "stwa/common.hpp"
#include "stwa/rng.hpp"

namespace stwa {

// ==================== buffers and memory accounting ====================

// The bench reports peak live tensor bytes, so every value buffer goes
// through alloc_buffer and the counters below. Thread-local: tapes are
// never shared across threads.
namespace mem {
inline thread_local std::uint64_t live_bytes = 0;
inline thread_local std::uint64_t peak_bytes = 0;
inline void reset_peak() { peak_bytes = live_bytes; }
}  // namespace mem

using Buffer = std::shared_ptr<std::vector<double>>;

inline Buffer alloc_buffer(std::size_t n) {
    auto* v = new std::vector<double>(n, 0.0);
    const std::uint64_t bytes = static_cast<std::uint64_t>(n) * sizeof(double);
    mem::live_bytes += bytes;
    if (mem::live_bytes > mem::peak_bytes) mem::peak_bytes = mem::live_bytes;
    return Buffer(v, [bytes](std::vector<double>* p) {
        mem::live_bytes -= bytes;
        delete p;
    });
}

// ==================== Tensor ====================

class Tape;

// Row-major f64 tensor. A value, immutable once built; copies share the
// buffer. `node` links it to a position on a tape when it was produced
// by a recorded operation (or mounted as a leaf), -1 when detached.
struct Tensor {
    Shape shape;
    Buffer data;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;
    Tensor(Shape s, Buffer d) : shape(std::move(s)), data(std::move(d)) {}

    std::size_t numel() const { return shape_numel(shape); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }
    bool on_tape() const { return tape != nullptr; }

    // 2D helpers; most of the model works in matrices
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    const std::vector<double>& vec() const { return *data; }
    double val(std::size_t i = 0) const { return (*data)[i]; }
    double at2(std::size_t r, std::size_t c) const { return (*data)[r * shape[1] + c]; }

    Tensor detached() const { return Tensor(shape, data); }
};

inline Tensor zeros(Shape s) {
    auto buf = alloc_buffer(shape_numel(s));
    return Tensor(std::move(s), std::move(buf));
}

inline Tensor full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
}

inline Tensor scalar(double v) { return full({1}, v); }

inline Tensor from_vec(Shape s, std::vector<double> values) {
    if (shape_numel(s) != values.size())
        throw ValueError("from_vec: shape " + shape_str(s) + " wants " +
                         std::to_string(shape_numel(s)) + " values, got " +
                         std::to_string(values.size()));
    Tensor t = zeros(std::move(s));
    std::copy(values.begin(), values.end(), t.data->begin());
    return t;
}

inline Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(s));
    for (double& x : *t.data) x = rng.uniform(lo, hi);
    return t;
}

inline Tensor normal(Shape s, Rng& rng) {
    Tensor t = zeros(std::move(s));
    for (double& x : *t.data) x = rng.normal();
    return t;
}

// ==================== Tape ====================

// Append-only record of the forward pass. Node ids ascend in creation
// order, and an op's inputs always exist before its output, so walking
// ids in descending order is a reverse topological traversal. backward()
// clears accumulators first, which makes replays bit-identical.
class Tape {
public:
    using BackFn = std::function<void(const double* g, Tape&)>;

    int record(std::size_t size, BackFn back) {
        nodes_.push_back(NodeRec{size, std::move(back), false});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Mounts a detached value as a trainable leaf. The returned tensor
    // shares the parameter's buffer.
    Tensor leaf(const Tensor& value) {
        if (value.on_tape()) throw ValueError("leaf: value is already on a tape");
        nodes_.push_back(NodeRec{value.numel(), nullptr, true});
        Tensor t = value;
        t.tape = this;
        t.node = static_cast<int>(nodes_.size()) - 1;
        leaves_.push_back(t.node);
        return t;
    }

    double* grad_buffer(int node, std::size_t n) {
        auto& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(n, 0.0);
        return g.data();
    }

    void backward(const Tensor& loss) {
        if (loss.tape != this) throw ValueError("backward: loss is not on this tape");
        if (!loss.is_scalar())
            throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape));
        grads_.assign(nodes_.size(), {});
        grad_buffer(loss.node, 1)[0] = 1.0;
        for (int id = loss.node; id >= 0; --id) {
            auto& g = grads_[static_cast<std::size_t>(id)];
            if (g.empty()) continue;  // not reached from the loss
            const auto& nd = nodes_[static_cast<std::size_t>(id)];
            if (nd.back) nd.back(g.data(), *this);
        }
    }

    bool has_grad(const Tensor& t) const {
        return t.tape == this && t.node >= 0 &&
               static_cast<std::size_t>(t.node) < grads_.size() &&
               !grads_[static_cast<std::size_t>(t.node)].empty();
    }

    // Gradient of the last backward() w.r.t. `t`; zeros if the loss never
    // reached it.
    Tensor grad(const Tensor& t) const {
        if (t.tape != this) throw ValueError("grad: tensor is not on this tape");
        Tensor out = zeros(t.shape);
        if (has_grad(t)) {
            const auto& g = grads_[static_cast<std::size_t>(t.node)];
            std::copy(g.begin(), g.end(), out.data->begin());
        }
        return out;
    }

    const std::vector<int>& leaves() const { return leaves_; }
    std::size_t node_count() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
        leaves_.clear();
    }

private:
    struct NodeRec {
        std::size_t size;
        BackFn back;
        bool is_leaf;
    };
    std::vector<NodeRec> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<int> leaves_;
};

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tp = nullptr;
    for (const Tensor* t : ts) {
        if (!t->tape) continue;
        if (!tp)
            tp = t->tape;
        else if (tp != t->tape)
            throw ValueError("operands were recorded on different tapes");
    }
    return tp;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw ValueError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

inline void require_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw ValueError(std::string(op) + ": expected 2D tensor, got " + shape_str(t.shape));
}

}  // namespace detail

// ==================== elementwise ops ====================

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    if (Tape* tp = detail::common_tape({&a, &b})) {
        out.tape = tp;
        const int pa = a.node, pb = b.node;
        out.node = tp->record(n, [pa, pb, n](const double* g, Tape& t) {
            if (pa >= 0) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (pb >= 0) {
                double* gb = t.grad_buffer(pb, n);
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    if (Tape* tp = detail::common_tape({&a, &b})) {
        out.tape = tp;
        const int pa = a.node, pb = b.node;
        out.node = tp->record(n, [pa, pb, n](const double* g, Tape& t) {
            if (pa >= 0) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (pb >= 0) {
                double* gb = t.grad_buffer(pb, n);
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    if (Tape* tp = detail::common_tape({&a, &b})) {
        out.tape = tp;
        const int pa = a.node, pb = b.node;
        Buffer av = a.data, bv = b.data;
        out.node = tp->record(n, [pa, pb, n, av, bv](const double* g, Tape& t) {
            if (pa >= 0) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*bv)[i];
            }
            if (pb >= 0) {
                double* gb = t.grad_buffer(pb, n);
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (*av)[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(n, [pa, n, s](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, n);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + c;
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(n, [pa, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, n);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd mk_back) {
    Tensor out = zeros(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*a.data)[i]);
    if (a.tape) {
        out.tape = a.tape;
        out.node = a.tape->record(n, mk_back(a, out, n));
    }
    return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](const Tensor& in, const Tensor&, std::size_t n) -> Tape::BackFn {
            Buffer av = in.data;
            const int pa = in.node;
            return [pa, n, av](const double* g, Tape& t) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i)
                    if ((*av)[i] > 0.0) ga[i] += g[i];
            };
        });
}

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); },
        [](const Tensor& in, const Tensor& out, std::size_t n) -> Tape::BackFn {
            Buffer yv = out.data;
            const int pa = in.node;
            return [pa, n, yv](const double* g, Tape& t) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double y = (*yv)[i];
                    ga[i] += g[i] * (1.0 - y * y);
                }
            };
        });
}

inline double sigmoid_scalar(double x) {
    // split on sign so exp never overflows
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return sigmoid_scalar(x); },
        [](const Tensor& in, const Tensor& out, std::size_t n) -> Tape::BackFn {
            Buffer yv = out.data;
            const int pa = in.node;
            return [pa, n, yv](const double* g, Tape& t) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double y = (*yv)[i];
                    ga[i] += g[i] * y * (1.0 - y);
                }
            };
        });
}

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](const Tensor& in, const Tensor& out, std::size_t n) -> Tape::BackFn {
            Buffer yv = out.data;
            const int pa = in.node;
            return [pa, n, yv](const double* g, Tape& t) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*yv)[i];
            };
        });
}

inline Tensor log_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](const Tensor& in, const Tensor&, std::size_t n) -> Tape::BackFn {
            Buffer av = in.data;
            const int pa = in.node;
            return [pa, n, av](const double* g, Tape& t) {
                double* ga = t.grad_buffer(pa, n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / (*av)[i];
            };
        });
}

// ==================== matmul family ====================

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ValueError("matmul: inner dims differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = zeros({m, n});
    const double* A = a.data->data();
    const double* B = b.data->data();
    double* C = out.data->data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            if (aik == 0.0) continue;
            const double* Brow = B + kk * n;
            double* Crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
        }
    if (Tape* tp = detail::common_tape({&a, &b})) {
        out.tape = tp;
        const int pa = a.node, pb = b.node;
        Buffer av = a.data, bv = b.data;
        out.node = tp->record(m * n, [pa, pb, m, k, n, av, bv](const double* g, Tape& t) {
            if (pa >= 0) {
                // dA = g . B^T
                double* ga = t.grad_buffer(pa, m * k);
                const double* B = bv->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j];
                        if (gij == 0.0) continue;
                        const double* Brow = B + j;  // column j strided
                        double* Garow = ga + i * k;
                        for (std::size_t kk = 0; kk < k; ++kk)
                            Garow[kk] += gij * Brow[kk * n];
                    }
            }
            if (pb >= 0) {
                // dB = A^T . g
                double* gb = t.grad_buffer(pb, k * n);
                const double* A = av->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const double aik = A[i * k + kk];
                        if (aik == 0.0) continue;
                        const double* Grow = g + i * n;
                        double* Gbrow = gb + kk * n;
                        for (std::size_t j = 0; j < n; ++j) Gbrow[j] += aik * Grow[j];
                    }
            }
        });
    }
    return out;
}

// out = a . b^T for a: m x k, b: n x k. Attention scores use this shape
// directly, which avoids materializing transposes on the tape.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw ValueError("matmul_nt: inner dims differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape) + "^T");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = zeros({m, n});
    const double* A = a.data->data();
    const double* B = b.data->data();
    double* C = out.data->data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double* Arow = A + i * k;
            const double* Brow = B + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += Arow[kk] * Brow[kk];
            C[i * n + j] = acc;
        }
    if (Tape* tp = detail::common_tape({&a, &b})) {
        out.tape = tp;
        const int pa = a.node, pb = b.node;
        Buffer av = a.data, bv = b.data;
        out.node = tp->record(m * n, [pa, pb, m, k, n, av, bv](const double* g, Tape& t) {
            if (pa >= 0) {
                // dA = g . B
                double* ga = t.grad_buffer(pa, m * k);
                const double* B = bv->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j];
                        if (gij == 0.0) continue;
                        const double* Brow = B + j * k;
                        double* Garow = ga + i * k;
                        for (std::size_t kk = 0; kk < k; ++kk) Garow[kk] += gij * Brow[kk];
                    }
            }
            if (pb >= 0) {
                // dB = g^T . A
                double* gb = t.grad_buffer(pb, n * k);
                const double* A = av->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j];
                        if (gij == 0.0) continue;
                        const double* Arow = A + i * k;
                        double* Gbrow = gb + j * k;
                        for (std::size_t kk = 0; kk < k; ++kk) Gbrow[kk] += gij * Arow[kk];
                    }
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*out.data)[j * m + i] = (*a.data)[i * n + j];
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(m * n, [pa, m, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, m * n);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

// a: m x n plus a bias row broadcast over the leading dim. This is the
// only broadcast the library does.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    detail::require_2d(a, "add_bias");
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.numel() != n)
        throw ValueError("add_bias: bias " + shape_str(bias.shape) + " does not match row width " +
                         std::to_string(n));
    Tensor out = zeros(a.shape);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            (*out.data)[i * n + j] = (*a.data)[i * n + j] + (*bias.data)[j];
    if (Tape* tp = detail::common_tape({&a, &bias})) {
        out.tape = tp;
        const int pa = a.node, pb = bias.node;
        out.node = tp->record(m * n, [pa, pb, m, n](const double* g, Tape& t) {
            if (pa >= 0) {
                double* ga = t.grad_buffer(pa, m * n);
                for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
            }
            if (pb >= 0) {
                double* gb = t.grad_buffer(pb, n);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return out;
}

// ==================== softmax ====================

// Softmax over the last axis with max subtraction, so finite inputs can
// never overflow. Rows of the result sum to 1.
inline Tensor softmax_lastdim(const Tensor& a) {
    if (a.rank() == 0 || a.shape.back() == 0)
        throw ValueError("softmax_lastdim: empty last axis in " + shape_str(a.shape));
    const std::size_t n = a.shape.back();
    const std::size_t rows = a.numel() / n;
    Tensor out = zeros(a.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data->data() + r * n;
        double* y = out.data->data() + r * n;
        double mx = x[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
    }
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        Buffer yv = out.data;
        const std::size_t total = a.numel();
        out.node = a.tape->record(total, [pa, rows, n, total, yv](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, total);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = yv->data() + r * n;
                const double* gr = g + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
                double* gar = ga + r * n;
                for (std::size_t j = 0; j < n; ++j) gar[j] += y[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

// ==================== reductions / layout ====================

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : *a.data) s += x;
    Tensor out = scalar(s);
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        const std::size_t n = a.numel();
        out.node = a.tape->record(1, [pa, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, n);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor sum_rows(const Tensor& a) {
    detail::require_2d(a, "sum_rows");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = zeros({1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*out.data)[j] += (*a.data)[i * n + j];
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(n, [pa, m, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
        });
    }
    return out;
}

inline Tensor mean_rows(const Tensor& a) {
    return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

inline Tensor repeat_rows(const Tensor& a, std::size_t m) {
    detail::require_2d(a, "repeat_rows");
    if (a.rows() != 1)
        throw ValueError("repeat_rows: expected a single row, got " + shape_str(a.shape));
    const std::size_t n = a.cols();
    Tensor out = zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*out.data)[i * n + j] = (*a.data)[j];
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(m * n, [pa, m, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[j] += g[i * n + j];
        });
    }
    return out;
}

// Contiguous block [r0, r0+cnt) along axis 0; works for any rank.
inline Tensor slice_axis0(const Tensor& a, std::size_t r0, std::size_t cnt) {
    if (a.rank() == 0) throw ValueError("slice_axis0: scalar has no axis 0");
    if (r0 + cnt > a.shape[0])
        throw ValueError("slice_axis0: range [" + std::to_string(r0) + ", " +
                         std::to_string(r0 + cnt) + ") exceeds " + shape_str(a.shape));
    const std::size_t stride = a.numel() / a.shape[0];
    Shape s = a.shape;
    s[0] = cnt;
    Tensor out = zeros(s);
    std::copy(a.data->begin() + static_cast<std::ptrdiff_t>(r0 * stride),
              a.data->begin() + static_cast<std::ptrdiff_t>((r0 + cnt) * stride),
              out.data->begin());
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        const std::size_t total = a.numel(), off = r0 * stride, len = cnt * stride;
        out.node = a.tape->record(len, [pa, total, off, len](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, total);
            for (std::size_t i = 0; i < len; ++i) ga[off + i] += g[i];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t cnt) {
    detail::require_2d(a, "slice_rows");
    return slice_axis0(a, r0, cnt);
}

inline Tensor concat_axis0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValueError("concat_axis0: no tensors given");
    Shape s = parts[0].shape;
    std::size_t total0 = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != s.size() ||
            !std::equal(p.shape.begin() + 1, p.shape.end(), s.begin() + 1))
            throw ValueError("concat_axis0: trailing dims differ, " + shape_str(p.shape) +
                             " vs " + shape_str(s));
        total0 += p.shape[0];
    }
    s[0] = total0;
    Tensor out = zeros(s);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data->begin(), p.data->end(),
                  out.data->begin() + static_cast<std::ptrdiff_t>(off));
        off += p.numel();
    }
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    Tape* tp = nullptr;
    for (const Tensor* p : ptrs) {
        if (!p->tape) continue;
        if (!tp)
            tp = p->tape;
        else if (tp != p->tape)
            throw ValueError("concat_axis0: operands on different tapes");
    }
    if (tp) {
        out.tape = tp;
        std::vector<std::pair<int, std::size_t>> spans;  // (node, numel) in order
        for (const Tensor& p : parts) spans.emplace_back(p.node, p.numel());
        out.node = tp->record(out.numel(), [spans](const double* g, Tape& t) {
            std::size_t off = 0;
            for (auto [node, len] : spans) {
                if (node >= 0) {
                    double* gp = t.grad_buffer(node, len);
                    for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
                }
                off += len;
            }
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) { return concat_axis0(parts); }

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t cnt) {
    detail::require_2d(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (c0 + cnt > n)
        throw ValueError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c0 + cnt) + ") exceeds " + shape_str(a.shape));
    Tensor out = zeros({m, cnt});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cnt; ++j)
            (*out.data)[i * cnt + j] = (*a.data)[i * n + c0 + j];
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        out.node = a.tape->record(m * cnt, [pa, m, n, c0, cnt](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < cnt; ++j) ga[i * n + c0 + j] += g[i * cnt + j];
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValueError("concat_cols: no tensors given");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p.rows() != m)
            throw ValueError("concat_cols: row counts differ, " + shape_str(p.shape) +
                             " vs " + shape_str(parts[0].shape));
        total += p.cols();
    }
    Tensor out = zeros({m, total});
    std::size_t coff = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j)
                (*out.data)[i * total + coff + j] = (*p.data)[i * pc + j];
        coff += pc;
    }
    Tape* tp = nullptr;
    for (const Tensor& p : parts) {
        if (!p.tape) continue;
        if (!tp)
            tp = p.tape;
        else if (tp != p.tape)
            throw ValueError("concat_cols: operands on different tapes");
    }
    if (tp) {
        out.tape = tp;
        std::vector<std::pair<int, std::size_t>> spans;  // (node, cols)
        for (const Tensor& p : parts) spans.emplace_back(p.node, p.cols());
        out.node = tp->record(m * total, [spans, m, total](const double* g, Tape& t) {
            std::size_t coff = 0;
            for (auto [node, pc] : spans) {
                if (node >= 0) {
                    double* gp = t.grad_buffer(node, m * pc);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            gp[i * pc + j] += g[i * total + coff + j];
                }
                coff += pc;
            }
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape s) {
    if (shape_numel(s) != a.numel())
        throw ValueError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(s));
    Tensor out(std::move(s), a.data);  // same buffer, row-major layout unchanged
    if (a.tape) {
        out.tape = a.tape;
        const int pa = a.node;
        const std::size_t n = a.numel();
        out.node = a.tape->record(n, [pa, n](const double* g, Tape& t) {
            double* ga = t.grad_buffer(pa, n);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

// ==================== gradient checking ====================

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t param_index = 0;
    std::size_t elem_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central-difference check. `f` evaluates the scalar objective at the
// current parameter values, `params` are writable views of the live
// parameter buffers and `analytic` the matching gradients. The numeric
// side only ever calls f, so it stays independent of the tape's
// backward pass. Relative error per element:
//   |analytic - numeric| / (|analytic| + |numeric| + denom_floor)
// Raise denom_floor when the objective has legitimately tiny gradient
// entries; the difference method bottoms out around 1e-10 absolute, so
// comparing against a 1e-9 gradient is pure noise.
inline GradCheckReport grad_check(const std::function<double()>& f,
                                  std::span<const std::span<double>> params,
                                  std::span<const std::vector<double>> analytic,
                                  double eps = 1e-5, double denom_floor = 1e-12) {
    if (params.size() != analytic.size())
        throw ValueError("grad_check: params/analytic length mismatch");
    GradCheckReport rep;
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::span<double> theta = params[p];
        if (theta.size() != analytic[p].size())
            throw ValueError("grad_check: gradient size mismatch for parameter " +
                             std::to_string(p));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + eps;
            const double fp = f();
            theta[i] = saved - eps;
            const double fm = f();
            theta[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw ValueError("grad_check: objective non-finite at parameter " +
                                 std::to_string(p) + "[" + std::to_string(i) + "]");
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = analytic[p][i];
            const double rel =
                std::abs(ana - num) / (std::abs(ana) + std::abs(num) + denom_floor);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.param_index = p;
                rep.elem_index = i;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    return rep;
}

}  // namespace stwa
