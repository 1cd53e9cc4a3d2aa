#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "latentdyn/ops.hpp"

using namespace latentdyn;
using namespace latentdyn::diff;
using latentdyn::testing::grad_check;

namespace {

Tensor random_tensor(Dims dims, std::uint64_t stream, double scale = 1.0) {
    SeededRng rng(7, stream);
    Tensor t = Tensor::zeros(std::move(dims));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

} // namespace

TEST(Tensor, RejectsInconsistentData) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor({0, 2}, {}), ShapeError);
}

TEST(Matmul, IdentityAndProjector) {
    Tape t;
    auto eye = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    auto m = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    EXPECT_EQ(matmul(eye, m).value().data, (std::vector<double>{1, 2, 3, 4}));

    auto p = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 0}));
    auto v = t.constant(Tensor::matrix(2, 1, {5, 7}));
    EXPECT_EQ(matmul(p, v).value().data, (std::vector<double>{5, 0}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    Tape t;
    auto a = t.constant(Tensor::zeros({2, 3}));
    auto b = t.constant(Tensor::zeros({2, 3}));
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    auto res = grad_check(
        [](Tape&, const std::vector<Var>& in) { return sum_all(square(matmul(in[0], in[1]))); },
        {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)});
    EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Activations, PointValues) {
    Tape t;
    auto x = t.constant(Tensor({3}, {0.0, -1.0, 2.0}));
    auto e = elu(x).value().data;
    EXPECT_DOUBLE_EQ(e[0], 0.0);
    EXPECT_NEAR(e[1], std::exp(-1.0) - 1.0, 1e-15);
    EXPECT_NEAR(e[1], -0.63212, 1e-5);
    EXPECT_DOUBLE_EQ(e[2], 2.0);

    auto z = t.constant(Tensor({1}, {0.0}));
    EXPECT_DOUBLE_EQ(tanh_act(z).value()[0], 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(z).value()[0], 0.5);

    auto big = t.constant(Tensor({2}, {800.0, -800.0}));
    auto s = sigmoid(big).value().data;
    EXPECT_DOUBLE_EQ(s[0], 1.0);
    EXPECT_GE(s[1], 0.0);
    EXPECT_TRUE(std::isfinite(s[1]));
}

TEST(Activations, EluGradientAtNegativeHalf) {
    Tape t;
    auto x = t.param(Tensor({1}, {-0.5}));
    t.backward(sum_all(elu(x)));
    EXPECT_NEAR(t.grad(x)[0], std::exp(-0.5), 1e-15);
    auto res = grad_check([](Tape&, const std::vector<Var>& in) { return sum_all(elu(in[0])); },
                          {Tensor({1}, {-0.5})});
    EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
    const auto x = random_tensor({3, 5}, 3, 1.5);
    for (auto op : {+[](Var v) { return tanh_act(v); }, +[](Var v) { return sigmoid(v); },
                    +[](Var v) { return elu(v); }, +[](Var v) { return exp_op(v); }}) {
        auto res = grad_check(
            [op](Tape& t, const std::vector<Var>& in) {
                auto w = t.constant(random_tensor({3, 5}, 4));
                return sum_all(mul(op(in[0]), w));
            },
            {x});
        EXPECT_LT(res.max_rel_err, 1e-6);
    }
}

TEST(Clamp, GradientOnlyInsideBounds) {
    Tape t;
    auto x = t.param(Tensor({3}, {-10.0, 0.5, 5.0}));
    auto y = clamp(x, -7.0, 2.0);
    EXPECT_EQ(y.value().data, (std::vector<double>{-7.0, 0.5, 2.0}));
    t.backward(sum_all(y));
    EXPECT_EQ(t.grad(x), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(ShapeOps, PadSliceConcat) {
    Tape t;
    auto x = t.constant(Tensor({2}, {1, 2}));
    EXPECT_EQ(pad(x, 0, 4).value().data, (std::vector<double>{1, 2, 0, 0}));

    auto m = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    EXPECT_EQ(slice(m, 1, 1, 2).value().data, (std::vector<double>{2, 3, 5, 6}));
    EXPECT_EQ(slice(m, 0, 1, 1).value().data, (std::vector<double>{4, 5, 6}));
    auto c = concat({m, m}, 1);
    EXPECT_EQ(c.value().dims, (Dims{2, 6}));
    EXPECT_EQ(c.value().data, (std::vector<double>{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6}));
    EXPECT_EQ(concat({m, m}, 0).value().dims, (Dims{4, 3}));

    EXPECT_THROW(slice(m, 2, 0, 1), ShapeError);
    EXPECT_THROW(reduce_sum(m, 5), ShapeError);
    EXPECT_THROW(pad(m, 3, 9), ShapeError);
}

TEST(ShapeOps, PermuteInverseIsIdentity) {
    Tape t;
    auto x = t.constant(random_tensor({2, 3, 4}, 5));
    auto y = permute(x, {2, 0, 1});
    EXPECT_EQ(y.value().dims, (Dims{4, 2, 3}));
    auto z = permute(y, {1, 2, 0});
    EXPECT_EQ(z.value().dims, x.value().dims);
    EXPECT_EQ(z.value().data, x.value().data);
    // element check: y[k, i, j] == x[i, j, k]
    EXPECT_EQ(y.value().data[(3 * 2 + 1) * 3 + 2], x.value().data[(1 * 3 + 2) * 4 + 3]);
}

TEST(ShapeOps, MeanOfOnesIsOnes) {
    Tape t;
    auto x = t.constant(Tensor::filled({3, 4, 2}, 1.0));
    for (std::size_t axis = 0; axis < 3; ++axis) {
        auto m = reduce_mean(x, axis).value();
        EXPECT_EQ(m.size(), 24u / x.value().dims[axis]);
        for (double v : m.data) EXPECT_DOUBLE_EQ(v, 1.0);
    }
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
    const auto x = random_tensor({2, 3, 4}, 6);
    auto res = grad_check(
        [](Tape& t, const std::vector<Var>& in) {
            auto p = permute(in[0], {1, 2, 0});                    // 3x4x2
            auto s = slice(p, 1, 1, 2);                            // 3x2x2
            auto q = pad(s, 2, 3);                                 // 3x2x3
            auto c = concat({q, q}, 0);                            // 6x2x3
            auto r = reduce_mean(c, 1);                            // 6x3
            auto w = t.constant(random_tensor({6, 3}, 8));
            return sum_all(mul(tanh_act(r), w));
        },
        {x});
    EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(ShapeOps, PadDropsGradientAtPaddedPositions) {
    Tape t;
    auto x = t.param(Tensor({2}, {1.0, 2.0}));
    auto p = pad(x, 0, 4);
    auto w = t.constant(Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
    t.backward(sum_all(mul(p, w)));
    EXPECT_EQ(t.grad(x), (std::vector<double>{1.0, 2.0}));
}

TEST(GatherCols, ScatterBackward) {
    Tape t;
    auto x = t.param(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    const std::vector<long> idx{2, -1, 0, 2};
    auto g = gather_cols(x, idx);
    EXPECT_EQ(g.value().data, (std::vector<double>{3, 0, 1, 3, 6, 0, 4, 6}));
    t.backward(sum_all(g));
    EXPECT_EQ(t.grad(x), (std::vector<double>{1, 0, 2, 1, 0, 2}));
}

TEST(Reparam, DegenerateSigmaReturnsMean) {
    Tape t;
    SeededRng rng(1, 2);
    auto mu = t.constant(Tensor({3}, {0.5, -1.0, 2.0}));
    auto ls = t.constant(Tensor::filled({3}, -30.0));
    auto z = reparam_sample(mu, ls, rng).value();
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(z[i], mu.value()[i], 1e-9);
}

TEST(Reparam, DeterministicForFixedSeed) {
    auto draw = [] {
        Tape t;
        SeededRng rng(42, 9);
        auto mu = t.constant(Tensor::zeros({16}));
        auto ls = t.constant(Tensor::zeros({16}));
        return reparam_sample(mu, ls, rng).value().data;
    };
    EXPECT_EQ(draw(), draw());
}

TEST(Reparam, MonteCarloMean) {
    const std::size_t n = 100000;
    Tape t;
    SeededRng rng(3, 4);
    auto mu = t.constant(Tensor::filled({n}, 1.5));
    auto ls = t.constant(Tensor::filled({n}, std::log(2.0)));
    const auto z = reparam_sample(mu, ls, rng).value();
    double mean = 0;
    for (double v : z.data) mean += v;
    mean /= n;
    EXPECT_LT(std::abs(mean - 1.5), 3.0 * 2.0 / std::sqrt(double(n)));
}

TEST(Reparam, GradientFlowsToMeanAndLogSigma) {
    auto res = grad_check(
        [](Tape&, const std::vector<Var>& in) {
            SeededRng rng(11, 0);
            return sum_all(square(reparam_sample(in[0], in[1], rng)));
        },
        {random_tensor({4, 3}, 12), random_tensor({4, 3}, 13, 0.3)});
    EXPECT_LT(res.max_rel_err, 1e-5);
}

TEST(Autodiff, ComposedChainRuleMatchesClosedForm) {
    // f(x) = tanh(sigmoid(x)^2): f' = (1 - f^2) * 2 s * s (1 - s)
    for (double x0 : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
        Tape t;
        auto x = t.param(Tensor({1}, {x0}));
        auto y = tanh_act(square(sigmoid(x)));
        t.backward(sum_all(y));
        const double s = 1.0 / (1.0 + std::exp(-x0));
        const double f = std::tanh(s * s);
        EXPECT_NEAR(t.grad(x)[0], (1 - f * f) * 2 * s * s * (1 - s), 1e-8);
    }
}

TEST(Autodiff, BackwardVisitsSharedNodesOnce) {
    Tape t;
    auto x = t.param(Tensor({1}, {3.0}));
    auto y = mul(x, x);     // x^2
    auto z = add(y, y);     // 2 x^2
    t.backward(sum_all(z)); // d/dx = 4x
    EXPECT_DOUBLE_EQ(t.grad(x)[0], 12.0);
}

TEST(Autodiff, ReplayIsBitwiseDeterministic) {
    auto run = [] {
        Tape t;
        auto a = t.param(random_tensor({5, 4}, 20));
        auto b = t.param(random_tensor({4, 3}, 21));
        SeededRng rng(5, 5);
        auto ls = t.constant(Tensor::filled({5, 3}, -1.0));
        auto z = reparam_sample(elu(matmul(a, b)), ls, rng);
        t.backward(sum_all(square(z)));
        auto g = t.grad(a);
        auto v = z.value().data;
        v.insert(v.end(), g.begin(), g.end());
        return v;
    };
    EXPECT_EQ(run(), run());
}

TEST(Autodiff, BackwardRequiresScalar) {
    Tape t;
    auto x = t.param(Tensor::zeros({2}));
    EXPECT_THROW(t.backward(x), ShapeError);
}
