#pragma once

// Shared helpers for the test suites: independent finite-difference oracles
// and small generators. Everything here deliberately avoids the tape's
// backward path so the checks stay independent of what they verify.

#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "vatlab/rng.hpp"
#include "vatlab/tensor.hpp"

namespace testsup {

/// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double step = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// Relative error between two gradient vectors: ||a-b|| / max(||a||, ||b||, eps).
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / denom;
}

inline vatlab::Tensor random_tensor(vatlab::Rng& rng, std::vector<std::size_t> shape,
                                    double scale = 1.0) {
    vatlab::Tensor t(std::move(shape));
    for (auto& v : t.flat()) v = scale * (2.0 * rng.next_uniform() - 1.0);
    return t;
}

/// Random probability row(s) via softmax of random logits.
inline vatlab::Tensor random_probs(vatlab::Rng& rng, std::size_t batch, std::size_t classes,
                                   double spread = 3.0) {
    vatlab::Tensor p({batch, classes});
    for (std::size_t i = 0; i < batch; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            p.at(i, j) = std::exp(spread * (2.0 * rng.next_uniform() - 1.0));
            z += p.at(i, j);
        }
        for (std::size_t j = 0; j < classes; ++j) p.at(i, j) /= z;
    }
    return p;
}

inline std::string temp_dir() {
    const char* t = std::getenv("TMPDIR");
    return t ? std::string(t) : std::string("/tmp");
}

}  // namespace testsup
