#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vatlab/model.hpp"

using namespace vatlab;

namespace {

// Independent parameter-count oracle: plain arithmetic over the layer list,
// no ParamSet involvement.
std::size_t count_oracle(std::size_t in, const std::vector<std::size_t>& hidden,
                         std::size_t classes) {
    std::size_t total = 0;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        total += prev * h + h;
        prev = h;
    }
    total += prev * classes + classes;
    return total;
}

}  // namespace

TEST(ParamCount, SmallSpec) {
    ClassifierSpec spec{2, {50}, 2};
    EXPECT_EQ(param_count(spec), 2u * 50 + 50 + 50 * 2 + 2);
    EXPECT_EQ(param_count(spec), 252u);
    EXPECT_EQ(param_count(spec), count_oracle(2, {50}, 2));
}

TEST(ParamCount, FourHiddenLayerArch) {
    ClassifierSpec spec{784, {1200, 600, 300, 150}, 10};
    const std::size_t expect = count_oracle(784, {1200, 600, 300, 150}, 10);
    EXPECT_EQ(expect, 1889560u);
    EXPECT_EQ(param_count(spec), expect);
}

TEST(InitParams, DeterministicGivenSeed) {
    ClassifierSpec spec{4, {8}, 3};
    ParamSet a = init_params(spec, Rng(11));
    ParamSet b = init_params(spec, Rng(11));
    EXPECT_EQ(a.theta, b.theta);
    ParamSet c = init_params(spec, Rng(12));
    EXPECT_NE(a.theta, c.theta);
}

TEST(InitParams, HeScaleAndZeroBiases) {
    ClassifierSpec spec{100, {200}, 10};
    ParamSet p = init_params(spec, Rng(3));
    const auto& w0 = p.slice(0, false);
    double ss = 0.0;
    for (std::size_t i = 0; i < w0.rows * w0.cols; ++i) {
        ss += p.theta[w0.offset + i] * p.theta[w0.offset + i];
    }
    const double sd = std::sqrt(ss / static_cast<double>(w0.rows * w0.cols));
    EXPECT_NEAR(sd, std::sqrt(2.0 / 100.0), 0.01);
    const auto& b0 = p.slice(0, true);
    for (std::size_t i = 0; i < b0.cols; ++i) EXPECT_EQ(p.theta[b0.offset + i], 0.0);
}

TEST(SpecValidation, RejectsDegenerateSpecs) {
    EXPECT_THROW((ClassifierSpec{0, {}, 2}.validate()), std::invalid_argument);
    EXPECT_THROW((ClassifierSpec{2, {}, 1}.validate()), std::invalid_argument);
    EXPECT_THROW((ClassifierSpec{2, {}, 2, -0.5}.validate()), std::invalid_argument);
    EXPECT_NO_THROW((ClassifierSpec{2, {}, 2}.validate()));  // linear model is allowed
}

TEST(Logits, ZeroParamsGiveZeroLogits) {
    ClassifierSpec spec{3, {4}, 2};
    ParamSet p = make_param_layout(spec);  // all zeros
    Rng rng(1);
    Tensor x = testsup::random_tensor(rng, {5, 3});
    Tensor out = logits_eval(spec, p, x);
    for (double v : out.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Logits, EvalModeIndependentOfRng) {
    ClassifierSpec spec{3, {4}, 2, 0.5};
    ParamSet p = init_params(spec, Rng(2));
    Rng rng(7);
    Tensor x = testsup::random_tensor(rng, {2, 3});
    Rng n1(100), n2(200);
    Tensor a = logits_eval(spec, p, x, /*training=*/false, &n1);
    Tensor b = logits_eval(spec, p, x, /*training=*/false, &n2);
    EXPECT_EQ(std::vector<double>(a.flat().begin(), a.flat().end()),
              std::vector<double>(b.flat().begin(), b.flat().end()));
}

TEST(Logits, TrainingNoiseIsLive) {
    ClassifierSpec spec{3, {4}, 2, 0.5};
    ParamSet p = init_params(spec, Rng(2));
    Rng rng(7);
    Tensor x = testsup::random_tensor(rng, {2, 3});
    Rng n1(100), n2(200);
    Tensor a = logits_eval(spec, p, x, /*training=*/true, &n1);
    Tensor b = logits_eval(spec, p, x, /*training=*/true, &n2);
    EXPECT_NE(std::vector<double>(a.flat().begin(), a.flat().end()),
              std::vector<double>(b.flat().begin(), b.flat().end()));
}

TEST(Logits, NoiseEntersBeforeTheRelu) {
    // Zero first layer: pre-activations are pure noise, so the hidden output
    // relu(noise) is non-negative; with an all-ones second layer the logits
    // must stay >= 0 for every draw. Post-relu noise would go negative.
    ClassifierSpec spec{2, {6}, 2, 1.0};
    ParamSet p = make_param_layout(spec);
    const auto& w1 = p.slice(1, false);
    for (std::size_t i = 0; i < w1.rows * w1.cols; ++i) p.theta[w1.offset + i] = 1.0;
    Tensor x({1, 2}, {0.0, 0.0});
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng noise(s);
        Tensor out = logits_eval(spec, p, x, true, &noise);
        for (double v : out.flat()) ASSERT_GE(v, 0.0);
    }
}

TEST(Logits, HandComputedTwoByTwo) {
    // One hidden layer of width 2. x = (1, 0).
    // W0 = [[1, -2], [3, 4]], b0 = (0.5, -0.25)
    // z = (1*1+0*3, 1*-2+0*4) + b0 = (1.5, -2.25); h = relu(z) = (1.5, 0)
    // W1 = [[2, 0], [1, -1]], b1 = (0, 1)
    // logits = (1.5*2 + 0*1, 1.5*0 + 0*-1) + b1 = (3.0, 1.0)
    ClassifierSpec spec{2, {2}, 2};
    ParamSet p = make_param_layout(spec);
    const double theta[] = {1, -2, 3, 4, 0.5, -0.25, 2, 0, 1, -1, 0, 1};
    for (std::size_t i = 0; i < p.theta.size(); ++i) p.theta[i] = theta[i];
    Tensor x({1, 2}, {1.0, 0.0});
    Tensor out = logits_eval(spec, p, x);
    EXPECT_NEAR(out.at(0, 0), 3.0, 1e-12);
    EXPECT_NEAR(out.at(0, 1), 1.0, 1e-12);
}

TEST(Logits, ShapeMismatchThrows) {
    ClassifierSpec spec{3, {4}, 2};
    ParamSet p = init_params(spec, Rng(2));
    Tensor x({2, 4});
    EXPECT_THROW(logits_eval(spec, p, x), std::invalid_argument);
}

TEST(Logits, GraphMatchesEval) {
    ClassifierSpec spec{5, {7, 3}, 4};
    ParamSet p = init_params(spec, Rng(21));
    Rng rng(3);
    Tensor x = testsup::random_tensor(rng, {6, 5});
    Tape t;
    ModelGraph g = logits_graph(t, spec, p, x);
    Tensor ref = logits_eval(spec, p, x);
    const Tensor& got = t.value(g.logits);
    ASSERT_TRUE(got.same_shape(ref));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_DOUBLE_EQ(got[i], ref[i]);
}

// Logits are differentiable in both the input and the parameters: the tape
// gradient of a scalar head matches central finite differences.
TEST(Logits, GradientWrtInputAndParams) {
    ClassifierSpec spec{4, {6}, 3};
    ParamSet p = init_params(spec, Rng(17));
    Rng rng(5);
    Tensor x0 = testsup::random_tensor(rng, {2, 4});
    std::vector<int> labels = {1, 2};

    Tape t;
    Var x = t.leaf(x0);
    ModelGraph g = logits_graph(t, spec, p, x);
    Var loss = nll_onehot(labels, g.logits);
    t.backward(loss);

    // wrt input
    {
        auto f = [&](const std::vector<double>& v) {
            Tensor xx({2, 4}, v);
            return nll_value(labels, logits_eval(spec, p, xx));
        };
        auto fd = testsup::fd_gradient(f, {x0.flat().begin(), x0.flat().end()});
        std::vector<double> autodiff(t.gradient(x).flat().begin(), t.gradient(x).flat().end());
        EXPECT_LT(testsup::rel_err(autodiff, fd), 1e-6);
    }
    // wrt parameters
    {
        auto f = [&](const std::vector<double>& v) {
            ParamSet pp = p;
            pp.theta = v;
            return nll_value(labels, logits_eval(spec, pp, x0));
        };
        auto fd = testsup::fd_gradient(f, p.theta);
        auto autodiff = flatten_param_grad(t, spec, g);
        EXPECT_LT(testsup::rel_err(autodiff, fd), 1e-6);
    }
}

// Noise-free logits are piecewise linear: within a fixed activation region
// the map a -> logits(a*x) is affine, so its second difference vanishes.
TEST(Logits, PiecewiseLinearInScale) {
    ClassifierSpec spec{3, {8, 5}, 2};
    ParamSet p = init_params(spec, Rng(9));
    Rng rng(13);
    Tensor x = testsup::random_tensor(rng, {1, 3});
    const double da = 1e-6;
    auto at_scale = [&](double a) {
        Tensor xs = scaled(x, a);
        return logits_eval(spec, p, xs);
    };
    Tensor up = at_scale(1.0 + da), mid = at_scale(1.0), dn = at_scale(1.0 - da);
    for (std::size_t i = 0; i < mid.size(); ++i) {
        EXPECT_NEAR(up[i] + dn[i] - 2.0 * mid[i], 0.0, 1e-9);
    }
}

TEST(ModelFile, RoundTripsBitExactly) {
    ClassifierSpec spec{4, {6, 3}, 2, 0.5};
    ParamSet p = init_params(spec, Rng(77));
    const std::string path = testsup::temp_dir() + "/vatlab_model_rt.vatm";
    save_model(path, spec, p);
    auto [spec2, p2] = load_model(path);
    EXPECT_EQ(spec, spec2);
    ASSERT_EQ(p.theta.size(), p2.theta.size());
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(p.theta[i]),
                  std::bit_cast<std::uint64_t>(p2.theta[i]));
    }
    std::remove(path.c_str());
}

TEST(ModelFile, RejectsWrongMagicAndVersion) {
    const std::string path = testsup::temp_dir() + "/vatlab_model_bad.vatm";
    {
        std::ofstream os(path, std::ios::binary);
        os.write("NOPE", 4);
    }
    EXPECT_THROW(load_model(path), std::runtime_error);
    {
        ClassifierSpec spec{2, {}, 2};
        save_model(path, spec, make_param_layout(spec));
        std::fstream fs(path, std::ios::binary | std::ios::in | std::ios::out);
        fs.seekp(4);
        fs.put(char(99));  // bogus version
    }
    EXPECT_THROW(load_model(path), std::runtime_error);
    std::remove(path.c_str());
}
