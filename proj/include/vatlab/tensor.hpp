#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vatlab {

/// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 and 2 are the
/// shapes that actually occur; the container itself is rank-agnostic.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw std::invalid_argument("Tensor: data length does not match shape");
        }
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    /// Value of a rank-0 or single-element tensor.
    double item() const {
        if (data_.size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ')';
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

/// out = a + alpha * b (shapes must match).
inline Tensor add_scaled(const Tensor& a, double alpha, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_scaled: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * b[i];
    return out;
}

inline Tensor scaled(const Tensor& a, double alpha) {
    Tensor out = a;
    for (auto& v : out.flat()) v *= alpha;
    return out;
}

inline double cosine(const Tensor& a, const Tensor& b) {
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

// ---- matmul kernels (row-major, ikj order so the inner loop is contiguous) ----

/// out = a (m x k) * b (k x n)
inline void gemm(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

/// out += a (m x n) * b^T, with b stored (k x n); result m x k.
inline void gemm_abt_accum(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A + i * n;
        double* ci = C + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = B + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

/// out += a^T * b, with a stored (m x k), b (m x n); result k x n.
inline void gemm_atb_accum(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        const double* bi = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = C + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace vatlab
