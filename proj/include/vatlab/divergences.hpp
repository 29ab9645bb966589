#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "vatlab/tape.hpp"
#include "vatlab/tensor.hpp"

namespace vatlab {

/// Row-wise softmax with max-subtraction. Rows of the result are valid
/// probability vectors (non-negative, summing to 1).
inline Tensor softmax(const Tensor& logits) {
    if (!logits.all_finite()) throw std::invalid_argument("softmax: non-finite input");
    Tensor p = logits.rank() == 1 ? Tensor({1, logits.size()}, {logits.flat().begin(), logits.flat().end()})
                                  : logits;
    if (p.rank() != 2) throw std::invalid_argument("softmax: expected rank 1 or 2");
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double mx = p.at(i, 0);
        for (std::size_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) z += std::exp(p.at(i, j) - mx);
        for (std::size_t j = 0; j < p.cols(); ++j) p.at(i, j) = std::exp(p.at(i, j) - mx) / z;
    }
    if (logits.rank() == 1) return Tensor({logits.size()}, {p.flat().begin(), p.flat().end()});
    return p;
}

namespace detail {

inline Tensor as_matrix(const Tensor& t) {
    if (t.rank() == 2) return t;
    if (t.rank() == 1) return Tensor({1, t.size()}, {t.flat().begin(), t.flat().end()});
    throw std::invalid_argument("expected a probability vector or batch, got " + t.shape_str());
}

inline void require_prob_rows(const Tensor& p) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p.at(i, j) < 0.0) throw std::invalid_argument("probability entry < 0");
            s += p.at(i, j);
        }
        if (std::abs(s - 1.0) > 1e-9) {
            throw std::invalid_argument("probability row does not sum to 1");
        }
    }
}

/// Sum of p*log(p) over a row, with the 0*log(0) := 0 convention.
inline double plogp_row(const Tensor& p, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
        const double v = p.at(i, j);
        if (v > 0.0) s += v * std::log(v);
    }
    return s;
}

inline Tensor log_softmax_plain(const Tensor& logits) {
    Tensor lq = as_matrix(logits);
    for (std::size_t i = 0; i < lq.rows(); ++i) {
        double mx = lq.at(i, 0);
        for (std::size_t j = 1; j < lq.cols(); ++j) mx = std::max(mx, lq.at(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < lq.cols(); ++j) lse += std::exp(lq.at(i, j) - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < lq.cols(); ++j) lq.at(i, j) -= lse;
    }
    return lq;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (value-only) divergences, used by evaluation loops and oracles. The
// second distribution always enters as logits and is handled in log-space;
// log of a softmax output is never taken.
// ---------------------------------------------------------------------------

/// KL(p || softmax(q_logits)), averaged over batch rows.
inline double kl_value(const Tensor& p_in, const Tensor& q_logits_in) {
    Tensor p = detail::as_matrix(p_in);
    Tensor lq = detail::log_softmax_plain(q_logits_in);
    if (p.rows() != lq.rows() || p.cols() != lq.cols()) {
        throw std::invalid_argument("kl: class count mismatch " + p.shape_str() + " vs " +
                                    lq.shape_str());
    }
    detail::require_prob_rows(p);
    double total = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double cross = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p.at(i, j) > 0.0) cross += p.at(i, j) * lq.at(i, j);
        }
        total += detail::plogp_row(p, i) - cross;
    }
    return total / static_cast<double>(p.rows());
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
inline double nll_value(std::span<const int> labels, const Tensor& logits) {
    Tensor lq = detail::log_softmax_plain(logits);
    if (labels.size() != lq.rows()) throw std::invalid_argument("nll: one label per row required");
    double total = 0.0;
    for (std::size_t i = 0; i < lq.rows(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= lq.cols()) {
            throw std::invalid_argument("nll: label out of range at row " + std::to_string(i));
        }
        total -= lq.at(i, static_cast<std::size_t>(labels[i]));
    }
    return total / static_cast<double>(lq.rows());
}

/// Mean conditional entropy -sum_y p log p of probability rows.
inline double conditional_entropy(const Tensor& probs_in) {
    Tensor p = detail::as_matrix(probs_in);
    detail::require_prob_rows(p);
    double total = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) total -= detail::plogp_row(p, i);
    return total / static_cast<double>(p.rows());
}

// ---------------------------------------------------------------------------
// Tape builders. These are the differentiable versions used by training; the
// first argument of the KL is required to be detached (theta-hat semantics).
// ---------------------------------------------------------------------------

/// Mean KL(p || softmax(q_logits)) over batch rows, as a graph node. `p` must
/// be a detached/constant node: the clean distribution is a frozen reference,
/// never a gradient path.
inline Var kl_divergence(Var p, Var q_logits) {
    detail::require_same_tape(p, q_logits);
    Tape& t = *p.tape;
    if (!t.is_detached(p)) {
        throw std::invalid_argument("kl_divergence: first argument must be detached");
    }
    const Tensor& pv = t.value(p);
    const Tensor& qv = t.value(q_logits);
    if (pv.rank() != 2 || !pv.same_shape(qv)) {
        throw std::invalid_argument("kl_divergence: class count mismatch " + pv.shape_str() +
                                    " vs " + qv.shape_str());
    }
    const double batch = static_cast<double>(pv.rows());
    // KL = (1/B) [ sum p*log p  -  sum p .* log_softmax(q) ]; the first term
    // carries no gradient and is folded in as a constant.
    double plogp = 0.0;
    for (std::size_t i = 0; i < pv.rows(); ++i) plogp += detail::plogp_row(pv, i);
    Var cross = scale(sum_all(mul(p, log_softmax(q_logits))), -1.0 / batch);
    return add(cross, t.constant(Tensor::scalar(plogp / batch)));
}

/// Mean NLL of one-hot targets: -(1/B) sum_i log_softmax(logits)[i, label_i].
inline Var nll_onehot(std::span<const int> labels, Var logits) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    if (lv.rank() != 2 || labels.size() != lv.rows()) {
        throw std::invalid_argument("nll_onehot: one label per row required");
    }
    Var picked = gather_rows(log_softmax(logits), labels);
    return scale(sum_all(picked), -1.0 / static_cast<double>(lv.rows()));
}

/// Mean conditional entropy of softmax(logits) as a differentiable node:
/// -(1/B) sum p .* log p with p = exp(log_softmax(logits)).
inline Var conditional_entropy_logits(Var logits) {
    const Tensor& lv = logits.tape->value(logits);
    if (lv.rank() != 2) throw std::invalid_argument("conditional_entropy: rank-2 logits required");
    Var lp = log_softmax(logits);
    Var p = exp_elem(lp);
    return scale(sum_all(mul(p, lp)), -1.0 / static_cast<double>(lv.rows()));
}

}  // namespace vatlab
