#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "latentdyn/rng.hpp"
#include "latentdyn/signal.hpp"

using namespace latentdyn;
using namespace latentdyn::signal;

namespace {

// Independent dense evaluation of the double-gamma, no normalization.
double double_gamma(double t) {
    if (t <= 0) return 0;
    auto g = [t](double k) { return std::pow(t, k - 1) * std::exp(-t) / std::tgamma(k); };
    return g(6) - g(16) / 6;
}

std::vector<double> sine(std::size_t n, double tr, double hz, double phase = 0.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * hz * i * tr + phase);
    return x;
}

double rms(const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s / x.size());
}

TaskDesign single_block(double onset, double duration, double tr = 0.5, int frames = 120) {
    TaskDesign d;
    d.tr = tr;
    d.n_frames = frames;
    d.blocks.push_back({0, onset, duration});
    return d;
}

} // namespace

TEST(Hrf, StartsAtZeroAndPeaksNearFiveSeconds) {
    const auto h = canonical_hrf(0.1);
    EXPECT_EQ(h[0], 0.0);
    EXPECT_EQ(h.size(), 321u);
    // dense oracle for the true peak location
    double best_t = 0, best = -1;
    for (double t = 0; t <= 32; t += 0.001)
        if (double v = double_gamma(t); v > best) best = v, best_t = t;
    const auto argmax = std::max_element(h.begin(), h.end()) - h.begin();
    EXPECT_LE(std::abs(argmax * 0.1 - best_t), 0.1);
    EXPECT_NEAR(argmax * 0.1, 5.0, 0.2);
    EXPECT_DOUBLE_EQ(h[argmax], 1.0);
}

TEST(Hrf, HasNegativeUndershoot) {
    const auto h = canonical_hrf(0.1);
    double lowest = 1;
    for (std::size_t i = 100; i <= 200; ++i) lowest = std::min(lowest, h[i]);
    EXPECT_LT(lowest, 0.0);
}

TEST(Regressors, EmptyDesignGivesZeros) {
    TaskDesign d;
    d.n_frames = 50;
    const auto r = task_regressors(d);
    EXPECT_EQ(r.rows(), 5);
    EXPECT_EQ(r.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Regressors, BriefBlockPeaksFiveToSixSecondsAfterOnset) {
    const auto r = task_regressors(single_block(10.0, 1.0));
    Eigen::Index arg;
    r.row(0).maxCoeff(&arg);
    const double lag = arg * 0.5 - 10.0;
    EXPECT_GE(lag, 5.0);
    EXPECT_LE(lag, 6.0);
}

TEST(Regressors, TwelveSecondBlockReachesHalfMaxFiveToSixSecondsIn) {
    const auto r = task_regressors(single_block(10.0, 12.0));
    Eigen::Index t = 0;
    while (r(0, t) < 0.5) ++t;
    const double lag = t * 0.5 - 10.0;
    EXPECT_GE(lag, 5.0);
    EXPECT_LE(lag, 6.0);
}

TEST(Regressors, LinearInBlocks) {
    // unnormalized responses add; compare shapes after the max normalization
    TaskDesign a = single_block(10.0, 12.0, 0.5, 200);
    TaskDesign b = single_block(50.0, 12.0, 0.5, 200);
    TaskDesign ab = a;
    ab.blocks.push_back(b.blocks[0]);
    const auto ra = task_regressors(a), rb = task_regressors(b), rab = task_regressors(ab);
    const Eigen::RowVectorXd sum = ra.row(0) + rb.row(0);
    const Eigen::RowVectorXd expect = sum / sum.maxCoeff();
    EXPECT_LT((rab.row(0) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Regressors, DesignValidation) {
    TaskDesign d = single_block(200.0, 12.0, 1.0, 100);
    EXPECT_THROW(d.validate(), ConfigError);
    d = single_block(10.0, -1.0);
    EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Regressors, DesignJsonRoundTrip) {
    TaskDesign d = single_block(10.0, 12.0, 2.0, 64);
    d.blocks.push_back({4, 40.0, 12.0});
    const nlohmann::json j = d;
    const auto back = j.get<TaskDesign>();
    EXPECT_EQ(back.blocks.size(), 2u);
    EXPECT_EQ(back.blocks[1].subtask, 4);
    EXPECT_EQ(j["blocks"][1]["subtask"], "tongue");
}

TEST(Bandpass, PassesInBandSine) {
    const double tr = 0.72;
    const auto x = sine(284, tr, 0.05);
    const auto y = bandpass(x, tr);
    const double gain = rms(y) / rms(x);
    EXPECT_GE(gain, 0.95);
    EXPECT_LE(gain, 1.0);
}

TEST(Bandpass, RejectsOutOfBandSine) {
    const double tr = 0.72;
    const auto x = sine(284, tr, 0.30);
    EXPECT_LT(rms(bandpass(x, tr)) / rms(x), 0.05);
}

TEST(Bandpass, RemovesDc) {
    std::vector<double> x(100, 3.5);
    for (double v : bandpass(x, 1.0)) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Bandpass, PreservesPhaseOfInBandSine) {
    // frequency on an exact bin: output must equal input
    const std::size_t n = 200;
    const double tr = 1.0;
    const auto x = sine(n, tr, 10.0 / n, 0.7);
    const auto y = bandpass(x, tr);
    double sc = 0, ss = 0, xc = 0, xs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 2 * std::numbers::pi * 10.0 * i / n;
        sc += y[i] * std::cos(w), ss += y[i] * std::sin(w);
        xc += x[i] * std::cos(w), xs += x[i] * std::sin(w);
    }
    const double dphi = std::atan2(sc, ss) - std::atan2(xc, xs);
    EXPECT_LT(std::abs(dphi) * 180 / std::numbers::pi, 1.0);
}

TEST(Bandpass, Errors) {
    EXPECT_THROW(bandpass(std::vector<double>(8, 0.0), 1.0), DataError);
    // Nyquist 0.005 Hz sits below the 0.01 Hz low edge
    EXPECT_THROW(bandpass(std::vector<double>(64, 0.0), 100.0), DataError);
}

TEST(Detrend, RemovesLineAndIsIdempotent) {
    std::vector<double> x(50);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = 3.0 * t + 2.0;
    for (double v : detrend_linear(x)) EXPECT_NEAR(v, 0.0, 1e-10);

    SeededRng rng(1, 1);
    std::vector<double> y(64);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] = rng.normal() + 0.1 * t;
    const auto once = detrend_linear(y);
    const auto twice = detrend_linear(once);
    for (std::size_t t = 0; t < y.size(); ++t) EXPECT_NEAR(once[t], twice[t], 1e-12);
}

TEST(Normalize, TrainingMaxAbsIsOne) {
    RowMatrix a(3, 3), b(3, 3);
    a << 1, 0, 5, -4, 0, 1, 2, 0, 0;
    b << 0.5, 0, -8, 1, 0, 2, 0, 0, 1;
    const RowMatrix* train[] = {&a, &b};
    const auto scaler = VoxelScaler::fit(train);
    scaler.apply(a);
    scaler.apply(b);
    for (int v : {0, 2}) EXPECT_DOUBLE_EQ(std::max(a.col(v).cwiseAbs().maxCoeff(), b.col(v).cwiseAbs().maxCoeff()), 1.0);
    EXPECT_EQ(a.col(1).cwiseAbs().maxCoeff(), 0.0);

    RowMatrix unseen(1, 3);
    unseen << 10, 3, -20;
    scaler.apply(unseen);
    EXPECT_DOUBLE_EQ(unseen(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(unseen(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(unseen(0, 2), -1.0);
}
