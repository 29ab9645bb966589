#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vatlab/tensor.hpp"

namespace vatlab {

/// Number of reverse sweeps performed since process start (or since the last
/// reset). Every Tape::backward call adds exactly one; the trainer audits its
/// per-update cost against this counter.
inline std::atomic<std::uint64_t>& backprop_counter() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

inline std::uint64_t backprop_count() { return backprop_counter().load(); }
inline void reset_backprop_count() { backprop_counter().store(0); }

enum class OpKind : std::uint8_t {
    Leaf,        // differentiable input
    Constant,    // frozen input, never receives gradient
    Add,
    Sub,
    Mul,         // elementwise
    MatMul,
    AddRowVec,   // (m x n) + broadcast row vector (n)
    Relu,
    Exp,
    LogSoftmax,  // row-wise over the last axis of a (batch x classes) matrix
    Sum,         // all elements -> rank-0 scalar
    Scale,       // multiply by a compile-time-constant scalar
    GatherRows,  // y[i] = x[i, rows[i]]
    Detach,      // identity forward, zero adjoint to input
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::MatMul: return "matmul";
        case OpKind::AddRowVec: return "add_rowvec";
        case OpKind::Relu: return "relu";
        case OpKind::Exp: return "exp";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::Sum: return "sum";
        case OpKind::Scale: return "scale";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::Detach: return "detach";
    }
    return "?";
}

class Tape;

/// Lightweight handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Recorded computation graph. Nodes are appended in evaluation order, so the
/// vector itself is a topological order: every node's inputs precede it.
/// Values are computed eagerly as the graph is built; backward() runs one
/// reverse sweep over the whole tape, visiting each node exactly once. A tape
/// is built, swept once, and discarded — there is no re-forward path.
class Tape {
public:
    struct Node {
        OpKind op;
        int a = -1;
        int b = -1;
        double alpha = 0.0;          // Scale factor
        std::vector<int> rows;       // GatherRows indices
        Tensor value;
        Tensor adjoint;              // allocated by backward()
        bool detached = false;       // stops adjoint propagation to inputs
    };

    Var leaf(Tensor v) { return push(OpKind::Leaf, -1, -1, std::move(v), false); }

    /// Frozen input: carries a value, never a gradient. Counts as detached,
    /// which is what lets divergence builders require theta-hat semantics.
    Var constant(Tensor v) { return push(OpKind::Constant, -1, -1, std::move(v), true); }

    const Tensor& value(Var v) const { return node(v).value; }

    /// Gradient of the swept output with respect to `v`. Zero tensor if the
    /// sweep never reached it.
    const Tensor& gradient(Var v) const {
        const Node& n = node(v);
        if (!swept_) throw std::logic_error("Tape::gradient: backward has not run");
        return n.adjoint;
    }

    bool is_detached(Var v) const { return node(v).detached; }

    std::size_t size() const { return nodes_.size(); }

    /// One reverse sweep from a scalar output. Adjoints of all nodes are
    /// populated; the global backprop counter advances by exactly one.
    void backward(Var output) {
        const Node& out = node(output);
        if (out.value.size() != 1) {
            throw std::invalid_argument("Tape::backward: output is not scalar, shape " +
                                        out.value.shape_str());
        }
        if (swept_) throw std::logic_error("Tape::backward: tape already swept once");
        swept_ = true;
        backprop_counter().fetch_add(1);

        for (auto& n : nodes_) n.adjoint = Tensor::zeros(n.value.shape());
        nodes_[static_cast<std::size_t>(output.id)].adjoint[0] = 1.0;

        for (std::size_t idx = nodes_.size(); idx-- > 0;) {
            Node& n = nodes_[idx];
            if (!n.adjoint.all_finite()) {
                throw std::runtime_error("non-finite adjoint at node #" + std::to_string(idx) +
                                         " (" + op_name(n.op) + ")");
            }
            if (n.detached) continue;
            propagate(n);
        }
    }

private:
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var mul(Var, Var);
    friend Var matmul(Var, Var);
    friend Var add_rowvec(Var, Var);
    friend Var relu(Var);
    friend Var exp_elem(Var);
    friend Var log_softmax(Var);
    friend Var sum_all(Var);
    friend Var scale(Var, double);
    friend Var gather_rows(Var, std::span<const int>);
    friend Var detach(Var);

    Node& node(Var v) {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    void check(Var v) const {
        if (v.tape != this) throw std::invalid_argument("Var does not belong to this tape");
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw std::invalid_argument("Var id out of range");
        }
    }

    Var push(OpKind op, int a, int b, Tensor value, bool detached,
             double alpha = 0.0, std::vector<int> rows = {}) {
        if (!value.all_finite()) {
            throw std::runtime_error("non-finite value produced by node #" +
                                     std::to_string(nodes_.size()) + " (" + op_name(op) + ")");
        }
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.alpha = alpha;
        n.rows = std::move(rows);
        n.value = std::move(value);
        n.detached = detached;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    void accum(int target, const Tensor& g) {
        Tensor& adj = nodes_[static_cast<std::size_t>(target)].adjoint;
        for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i];
    }

    void propagate(Node& n) {
        const Tensor& g = n.adjoint;
        switch (n.op) {
            case OpKind::Leaf:
            case OpKind::Constant:
            case OpKind::Detach:
                break;
            case OpKind::Add: {
                accum(n.a, g);
                accum(n.b, g);
                break;
            }
            case OpKind::Sub: {
                accum(n.a, g);
                Tensor& adj = nodes_[static_cast<std::size_t>(n.b)].adjoint;
                for (std::size_t i = 0; i < adj.size(); ++i) adj[i] -= g[i];
                break;
            }
            case OpKind::Mul: {
                const Tensor& av = nodes_[static_cast<std::size_t>(n.a)].value;
                const Tensor& bv = nodes_[static_cast<std::size_t>(n.b)].value;
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].adjoint;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                }
                break;
            }
            case OpKind::MatMul: {
                const Tensor& av = nodes_[static_cast<std::size_t>(n.a)].value;
                const Tensor& bv = nodes_[static_cast<std::size_t>(n.b)].value;
                gemm_abt_accum(g, bv, nodes_[static_cast<std::size_t>(n.a)].adjoint);
                gemm_atb_accum(av, g, nodes_[static_cast<std::size_t>(n.b)].adjoint);
                break;
            }
            case OpKind::AddRowVec: {
                accum(n.a, g);
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].adjoint;
                const std::size_t m = g.rows(), c = g.cols();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
                break;
            }
            case OpKind::Relu: {
                // Subgradient at the kink is 0: relu'(x) = 1 only for x > 0.
                const Tensor& av = nodes_[static_cast<std::size_t>(n.a)].value;
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (av[i] > 0.0) ga[i] += g[i];
                }
                break;
            }
            case OpKind::Exp: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
                break;
            }
            case OpKind::LogSoftmax: {
                // dx = dy - softmax(x) * rowsum(dy), with softmax = exp(value).
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                const std::size_t m = g.rows(), c = g.cols();
                for (std::size_t i = 0; i < m; ++i) {
                    double rowsum = 0.0;
                    for (std::size_t j = 0; j < c; ++j) rowsum += g.at(i, j);
                    for (std::size_t j = 0; j < c; ++j) {
                        ga.at(i, j) += g.at(i, j) - std::exp(n.value.at(i, j)) * rowsum;
                    }
                }
                break;
            }
            case OpKind::Sum: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                const double gs = g[0];
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs;
                break;
            }
            case OpKind::Scale: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.alpha * g[i];
                break;
            }
            case OpKind::GatherRows: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].adjoint;
                const std::size_t c = ga.cols();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i * c + static_cast<std::size_t>(n.rows[i])] += g[i];
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    bool swept_ = false;
};

namespace detail {
inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}
}  // namespace detail

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::require_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.push(OpKind::Add, a.id, b.id, std::move(out), false);
}

inline Var sub(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::require_same_shape(av, bv, "sub");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return t.push(OpKind::Sub, a.id, b.id, std::move(out), false);
}

inline Var mul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return t.push(OpKind::Mul, a.id, b.id, std::move(out), false);
}

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " x " +
                                    bv.shape_str());
    }
    Tensor out({av.rows(), bv.cols()});
    gemm(av, bv, out);
    return t.push(OpKind::MatMul, a.id, b.id, std::move(out), false);
}

inline Var add_rowvec(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 1 || av.cols() != bv.size()) {
        throw std::invalid_argument("add_rowvec: incompatible shapes " + av.shape_str() + " + " +
                                    bv.shape_str());
    }
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) += bv[j];
    return t.push(OpKind::AddRowVec, a.id, b.id, std::move(out), false);
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& v : out.flat()) v = v > 0.0 ? v : 0.0;
    return t.push(OpKind::Relu, a.id, -1, std::move(out), false);
}

inline Var exp_elem(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& v : out.flat()) v = std::exp(v);
    return t.push(OpKind::Exp, a.id, -1, std::move(out), false);
}

/// Row-wise log-softmax of a (batch x classes) matrix, computed with
/// max-subtraction so arbitrarily large logits stay finite.
inline Var log_softmax(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2) throw std::invalid_argument("log_softmax: expected rank-2 input");
    Tensor out = av;
    const std::size_t m = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = out.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(out.at(i, j) - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) -= lse;
    }
    return t.push(OpKind::LogSoftmax, a.id, -1, std::move(out), false);
}

inline Var sum_all(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (double v : av.flat()) s += v;
    return t.push(OpKind::Sum, a.id, -1, Tensor::scalar(s), false);
}

inline Var scale(Var a, double alpha) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (auto& v : out.flat()) v *= alpha;
    return t.push(OpKind::Scale, a.id, -1, std::move(out), false, alpha);
}

/// y[i] = x[i, rows[i]] for a (batch x classes) matrix.
inline Var gather_rows(Var a, std::span<const int> rows) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2 || rows.size() != av.rows()) {
        throw std::invalid_argument("gather_rows: need one row index per matrix row");
    }
    Tensor out({av.rows()});
    std::vector<int> idx(rows.begin(), rows.end());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= av.cols()) {
            throw std::invalid_argument("gather_rows: index out of range at row " +
                                        std::to_string(i));
        }
        out[i] = av.at(i, static_cast<std::size_t>(idx[i]));
    }
    return t.push(OpKind::GatherRows, a.id, -1, std::move(out), false, 0.0, std::move(idx));
}

/// Identity forward; the reverse sweep propagates zero through it.
inline Var detach(Var a) {
    Tape& t = *a.tape;
    return t.push(OpKind::Detach, a.id, -1, t.value(a), true);
}

inline Var mean_all(Var a) {
    const std::size_t n = a.tape->value(a).size();
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

}  // namespace vatlab
