#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vatlab/divergences.hpp"
#include "vatlab/rng.hpp"
#include "vatlab/tape.hpp"
#include "vatlab/tensor.hpp"

namespace vatlab {

/// Architecture of a feed-forward ReLU classifier. `hidden_noise_sd > 0`
/// adds zero-mean Gaussian noise to every hidden pre-activation during
/// training passes (a stabilizer for semi-supervised runs); 0 disables it.
struct ClassifierSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    double hidden_noise_sd = 0.0;

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("ClassifierSpec: input_dim must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("ClassifierSpec: num_classes must be >= 2");
        if (hidden_noise_sd < 0.0) {
            throw std::invalid_argument("ClassifierSpec: hidden_noise_sd must be >= 0");
        }
        for (auto h : hidden_dims) {
            if (h == 0) throw std::invalid_argument("ClassifierSpec: hidden layer of width 0");
        }
    }

    std::size_t num_layers() const { return hidden_dims.size() + 1; }

    std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden_dims[l - 1]; }
    std::size_t layer_out(std::size_t l) const {
        return l == hidden_dims.size() ? num_classes : hidden_dims[l];
    }

    bool operator==(const ClassifierSpec&) const = default;
};

inline std::size_t param_count(const ClassifierSpec& spec) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        n += spec.layer_in(l) * spec.layer_out(l) + spec.layer_out(l);
    }
    return n;
}

/// Flat parameter vector plus a layout map. Weights for layer l are stored as
/// a (fan_in x fan_out) block followed by the bias row, in layer order, so
/// logits = x W + b composes directly with the matmul kernels.
struct ParamSet {
    struct Slice {
        std::string name;
        std::size_t offset;
        std::size_t rows;  // 1 for bias vectors
        std::size_t cols;
    };

    std::vector<double> theta;
    std::vector<Slice> layout;

    Tensor block(const Slice& s) const {
        Tensor t(s.rows == 1 ? std::vector<std::size_t>{s.cols}
                             : std::vector<std::size_t>{s.rows, s.cols});
        std::memcpy(t.data(), theta.data() + s.offset, s.rows * s.cols * sizeof(double));
        return t;
    }

    const Slice& slice(std::size_t layer, bool bias) const {
        return layout[2 * layer + (bias ? 1 : 0)];
    }
};

inline ParamSet make_param_layout(const ClassifierSpec& spec) {
    ParamSet p;
    p.theta.assign(param_count(spec), 0.0);
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t in = spec.layer_in(l), out = spec.layer_out(l);
        p.layout.push_back({"W" + std::to_string(l), off, in, out});
        off += in * out;
        p.layout.push_back({"b" + std::to_string(l), off, 1, out});
        off += out;
    }
    return p;
}

/// He-scaled Gaussian weights (sd = sqrt(2/fan_in)), zero biases.
inline ParamSet init_params(const ClassifierSpec& spec, Rng rng) {
    spec.validate();
    ParamSet p = make_param_layout(spec);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& w = p.slice(l, false);
        const double sd = std::sqrt(2.0 / static_cast<double>(w.rows));
        for (std::size_t i = 0; i < w.rows * w.cols; ++i) {
            p.theta[w.offset + i] = sd * rng.next_gaussian();
        }
    }
    return p;
}

/// Logits graph plus handles to the parameter leaves, so a reverse sweep can
/// be flattened back into theta order.
struct ModelGraph {
    Var input;
    Var logits;
    std::vector<Var> param_leaves;  // W0, b0, W1, b1, ...
};

/// Builds the forward graph on `tape` from an input node already on it.
/// When `training` is set and the spec carries hidden noise, each hidden
/// pre-activation receives an independent Gaussian draw from `noise_rng`
/// before the ReLU.
inline ModelGraph logits_graph(Tape& tape, const ClassifierSpec& spec, const ParamSet& params,
                               Var x, bool training = false, Rng* noise_rng = nullptr) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 2 || xv.cols() != spec.input_dim) {
        throw std::invalid_argument("logits_graph: input shape " + xv.shape_str() +
                                    " does not match input_dim " + std::to_string(spec.input_dim));
    }
    if (params.theta.size() != param_count(spec)) {
        throw std::invalid_argument("logits_graph: parameter count mismatch");
    }
    ModelGraph g;
    g.input = x;
    Var h = x;
    const bool noisy = training && spec.hidden_noise_sd > 0.0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        Var w = tape.leaf(params.block(params.slice(l, false)));
        Var b = tape.leaf(params.block(params.slice(l, true)));
        g.param_leaves.push_back(w);
        g.param_leaves.push_back(b);
        Var z = add_rowvec(matmul(h, w), b);
        if (l + 1 < spec.num_layers()) {
            if (noisy) {
                if (noise_rng == nullptr) {
                    throw std::invalid_argument("logits_graph: noise requested without an rng");
                }
                Tensor noise = noise_rng->gaussian({xv.rows(), spec.layer_out(l)},
                                                   spec.hidden_noise_sd);
                z = add(z, tape.constant(std::move(noise)));
            }
            h = relu(z);
        } else {
            h = z;
        }
    }
    g.logits = h;
    return g;
}

inline ModelGraph logits_graph(Tape& tape, const ClassifierSpec& spec, const ParamSet& params,
                               const Tensor& x, bool training = false, Rng* noise_rng = nullptr) {
    return logits_graph(tape, spec, params, tape.constant(x), training, noise_rng);
}

/// Plain forward pass without a tape. Training-mode noise is drawn from
/// `noise_rng` exactly as in the graph version.
inline Tensor logits_eval(const ClassifierSpec& spec, const ParamSet& params, const Tensor& x,
                          bool training = false, Rng* noise_rng = nullptr) {
    if (x.rank() != 2 || x.cols() != spec.input_dim) {
        throw std::invalid_argument("logits_eval: input shape " + x.shape_str() +
                                    " does not match input_dim " + std::to_string(spec.input_dim));
    }
    const bool noisy = training && spec.hidden_noise_sd > 0.0;
    Tensor h = x;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        Tensor w = params.block(params.slice(l, false));
        Tensor b = params.block(params.slice(l, true));
        Tensor z({h.rows(), w.cols()});
        gemm(h, w, z);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) z.at(i, j) += b[j];
        if (l + 1 < spec.num_layers()) {
            if (noisy) {
                if (noise_rng == nullptr) {
                    throw std::invalid_argument("logits_eval: noise requested without an rng");
                }
                for (auto& v : z.flat()) v += spec.hidden_noise_sd * noise_rng->next_gaussian();
            }
            for (auto& v : z.flat()) v = v > 0.0 ? v : 0.0;
        }
        h = std::move(z);
    }
    if (!h.all_finite()) throw std::runtime_error("logits_eval: non-finite output");
    return h;
}

/// Collects the swept parameter-leaf adjoints into a flat gradient aligned
/// with ParamSet::theta.
inline std::vector<double> flatten_param_grad(const Tape& tape, const ClassifierSpec& spec,
                                              const ModelGraph& g) {
    std::vector<double> grad(param_count(spec), 0.0);
    std::size_t off = 0;
    for (Var leaf : g.param_leaves) {
        const Tensor& a = tape.gradient(leaf);
        std::memcpy(grad.data() + off, a.data(), a.size() * sizeof(double));
        off += a.size();
    }
    return grad;
}

/// Fraction of rows whose argmax logit disagrees with the label.
inline double error_rate(const ClassifierSpec& spec, const ParamSet& params, const Tensor& x,
                         std::span<const int> labels) {
    const Tensor logits = logits_eval(spec, params, x);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        }
        if (static_cast<int>(best) != labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(logits.rows());
}

// ---------------------------------------------------------------------------
// Model file format: magic "VATM", one version byte, the spec fields, then
// the raw little-endian f64 parameter buffer. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("model file: truncated");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("model file: truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline constexpr char kModelMagic[4] = {'V', 'A', 'T', 'M'};
inline constexpr unsigned char kModelVersion = 1;

inline void save_model(const std::string& path, const ClassifierSpec& spec,
                       const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open " + path);
    os.write(kModelMagic, 4);
    os.put(static_cast<char>(kModelVersion));
    detail::write_u32(os, static_cast<std::uint32_t>(spec.input_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(spec.hidden_dims.size()));
    for (auto h : spec.hidden_dims) detail::write_u32(os, static_cast<std::uint32_t>(h));
    detail::write_u32(os, static_cast<std::uint32_t>(spec.num_classes));
    detail::write_f64(os, spec.hidden_noise_sd);
    detail::write_u32(os, static_cast<std::uint32_t>(params.theta.size()));
    for (double v : params.theta) detail::write_f64(os, v);
    if (!os) throw std::runtime_error("save_model: write failed for " + path);
}

inline std::pair<ClassifierSpec, ParamSet> load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw std::runtime_error("load_model: bad magic in " + path);
    }
    const int version = is.get();
    if (version != kModelVersion) {
        throw std::runtime_error("load_model: unsupported version " + std::to_string(version));
    }
    ClassifierSpec spec;
    spec.input_dim = detail::read_u32(is);
    const std::uint32_t nh = detail::read_u32(is);
    for (std::uint32_t i = 0; i < nh; ++i) spec.hidden_dims.push_back(detail::read_u32(is));
    spec.num_classes = detail::read_u32(is);
    spec.hidden_noise_sd = detail::read_f64(is);
    spec.validate();
    const std::uint32_t n = detail::read_u32(is);
    if (n != param_count(spec)) throw std::runtime_error("load_model: parameter count mismatch");
    ParamSet params = make_param_layout(spec);
    for (std::uint32_t i = 0; i < n; ++i) params.theta[i] = detail::read_f64(is);
    return {spec, params};
}

}  // namespace vatlab
