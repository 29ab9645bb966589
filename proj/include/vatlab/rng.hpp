#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "vatlab/tensor.hpp"

namespace vatlab {

/// Counter-based random number generator. Each draw hashes
/// (seed, stream, counter) through a SplitMix64-style finalizer, so any
/// number of independent streams can be derived from one seed and the
/// sequence is identical across platforms: no libm state, no hidden
/// engine internals, just integer arithmetic and IEEE-754 doubles.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    /// Independent stream derived from this one; counter starts at zero.
    Rng substream(std::uint64_t idx) const {
        return Rng(seed_, mix(stream_ + 0x9e3779b97f4a7c15ULL, idx));
    }

    std::uint64_t next_u64() { return mix(mix(seed_, stream_), counter_++); }

    /// Uniform in (0, 1]; never returns 0 so log() stays finite.
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; two uniforms per draw, no cached spare.
    double next_gaussian() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    Tensor gaussian(std::vector<std::size_t> shape, double sd = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.flat()) v = sd * next_gaussian();
        return t;
    }

    /// Unit vector drawn from the isotropic distribution on the sphere:
    /// iid Gaussian draw followed by L2 normalization.
    Tensor gaussian_unit_vector(std::size_t dim) {
        if (dim == 0) throw std::invalid_argument("gaussian_unit_vector: dim must be >= 1");
        Tensor d({dim});
        double norm = 0.0;
        // A fresh draw on the (measure-zero) chance the vector is too small to normalize.
        do {
            for (auto& v : d.flat()) v = next_gaussian();
            norm = l2_norm(d);
        } while (norm < 1e-300);
        for (auto& v : d.flat()) v /= norm;
        return d;
    }

    /// Unbiased integer in [0, n) by rejection.
    std::size_t next_below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n must be >= 1");
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    /// Fisher-Yates shuffle of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = next_below(i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace vatlab
