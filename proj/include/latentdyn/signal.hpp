#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "stats.hpp"

namespace latentdyn::signal {

inline const std::array<std::string, 5> kMotorSubtasks{"left_hand", "right_hand", "left_foot", "right_foot",
                                                       "tongue"};

struct Block {
    int subtask = 0;
    double onset = 0.0;    // seconds
    double duration = 12.0; // seconds
};

/// Block design of a task run sampled every `tr` seconds for `n_frames` frames.
struct TaskDesign {
    std::vector<std::string> subtasks{kMotorSubtasks.begin(), kMotorSubtasks.end()};
    std::vector<Block> blocks;
    double tr = 2.0;
    int n_frames = 0;

    int n_subtasks() const { return static_cast<int>(subtasks.size()); }

    void validate() const {
        if (!(tr > 0)) throw ConfigError("tr", "must be positive");
        if (n_frames <= 0) throw ConfigError("n_frames", "must be positive");
        const double end = n_frames * tr;
        for (const auto& b : blocks) {
            if (b.subtask < 0 || b.subtask >= n_subtasks()) throw ConfigError("blocks.subtask", "out of range");
            if (!(b.duration > 0)) throw ConfigError("blocks.duration", "must be positive");
            if (b.onset < 0 || b.onset >= end) throw ConfigError("blocks.onset", "outside [0, T*tr)");
        }
    }

    /// Index of the block containing frame `t`, or -1.
    int block_at_frame(int t) const {
        const double time = t * tr;
        for (std::size_t i = 0; i < blocks.size(); ++i)
            if (time >= blocks[i].onset && time < blocks[i].onset + blocks[i].duration) return static_cast<int>(i);
        return -1;
    }
};

inline void to_json(nlohmann::json& j, const TaskDesign& d) {
    j = nlohmann::json{{"tr", d.tr}, {"n_frames", d.n_frames}, {"subtasks", d.subtasks}};
    auto& blocks = j["blocks"] = nlohmann::json::array();
    for (const auto& b : d.blocks)
        blocks.push_back({{"subtask", d.subtasks.at(b.subtask)}, {"onset", b.onset}, {"duration", b.duration}});
}

inline void from_json(const nlohmann::json& j, TaskDesign& d) {
    d = TaskDesign{};
    d.tr = j.at("tr").get<double>();
    d.n_frames = j.at("n_frames").get<int>();
    if (j.contains("subtasks")) d.subtasks = j.at("subtasks").get<std::vector<std::string>>();
    for (const auto& jb : j.at("blocks")) {
        Block b;
        const auto name = jb.at("subtask").get<std::string>();
        const auto it = std::find(d.subtasks.begin(), d.subtasks.end(), name);
        if (it == d.subtasks.end()) throw ConfigError("blocks.subtask", "unknown sub-task '" + name + "'");
        b.subtask = static_cast<int>(it - d.subtasks.begin());
        b.onset = jb.at("onset").get<double>();
        b.duration = jb.value("duration", 12.0);
        d.blocks.push_back(b);
    }
    d.validate();
}

namespace detail {
inline double gamma_pdf(double t, double shape, double scale) {
    if (t <= 0) return 0.0;
    return std::exp((shape - 1) * std::log(t) - t / scale - std::lgamma(shape) - shape * std::log(scale));
}
} // namespace detail

/// SPM canonical double-gamma HRF (delays 6/16 s, dispersion 1, undershoot
/// ratio 1/6) sampled every `dt` seconds over [0, duration], peak-normalized.
inline std::vector<double> canonical_hrf(double dt, double duration = 32.0) {
    if (!(dt > 0)) throw ConfigError("dt", "must be positive");
    const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        h[i] = detail::gamma_pdf(t, 6.0, 1.0) - detail::gamma_pdf(t, 16.0, 1.0) / 6.0;
    }
    const double peak = *std::max_element(h.begin(), h.end());
    for (auto& v : h) v /= peak;
    return h;
}

/// One HRF-convolved boxcar per sub-task, sampled at frame times, each scaled
/// to a maximum of 1. Returns n_subtasks x n_frames.
inline RowMatrix task_regressors(const TaskDesign& design, double dt = 0.1) {
    design.validate();
    const int T = design.n_frames;
    const double total = T * design.tr;
    const auto n_fine = static_cast<std::size_t>(std::ceil(total / dt)) + 1;
    const auto hrf = canonical_hrf(dt);
    RowMatrix out = RowMatrix::Zero(design.n_subtasks(), T);
    for (int s = 0; s < design.n_subtasks(); ++s) {
        std::vector<double> box(n_fine, 0.0);
        std::vector<std::pair<double, double>> spans;
        for (const auto& b : design.blocks)
            if (b.subtask == s) spans.emplace_back(b.onset, b.onset + b.duration);
        std::sort(spans.begin(), spans.end());
        for (std::size_t i = 1; i < spans.size(); ++i)
            if (spans[i].first < spans[i - 1].second)
                log_warning("overlapping blocks of sub-task '" + design.subtasks[s] + "' merged");
        for (const auto& [on, off] : spans)
            for (std::size_t i = 0; i < n_fine; ++i) {
                const double t = i * dt;
                if (t >= on && t < off) box[i] = 1.0;
            }
        if (spans.empty()) continue;
        // causal convolution evaluated only where frames are sampled
        double peak = 0;
        for (int f = 0; f < T; ++f) {
            const auto i = static_cast<std::size_t>(std::llround(f * design.tr / dt));
            double acc = 0;
            for (std::size_t k = 0; k < hrf.size() && k <= i; ++k) acc += hrf[k] * box[i - k];
            out(s, f) = acc * dt;
            peak = std::max(peak, std::abs(out(s, f)));
        }
        if (peak > 0) out.row(s) /= peak;
    }
    return out;
}

/// Zero-phase FFT band-pass: unit gain on [low, high] Hz with raised-cosine
/// roll-off of width `taper` outside each edge.
inline std::vector<double> bandpass(std::span<const double> x, double tr, double low = 0.01, double high = 0.15,
                                    double taper = 0.005) {
    const std::size_t n = x.size();
    if (n < 16) throw DataError("bandpass needs at least 16 samples, got " + std::to_string(n));
    const double nyquist = 0.5 / tr;
    if (!(low < high) || low >= nyquist)
        throw DataError("bandpass: band [" + std::to_string(low) + ", " + std::to_string(high) +
                        "] Hz is empty below Nyquist " + std::to_string(nyquist) + " Hz");
    const std::size_t nf = n / 2 + 1;
    std::vector<double> buf(x.begin(), x.end());
    std::vector<std::complex<double>> spec(nf);
    auto* spec_ptr = reinterpret_cast<fftw_complex*>(spec.data());
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf.data(), spec_ptr, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    for (std::size_t k = 0; k < nf; ++k) {
        const double f = k / (n * tr);
        double g = 0;
        if (f >= low && f <= high)
            g = 1.0;
        else if (f < low && f > low - taper)
            g = 0.5 * (1 - std::cos(std::numbers::pi * (f - (low - taper)) / taper));
        else if (f > high && f < high + taper)
            g = 0.5 * (1 + std::cos(std::numbers::pi * (f - high) / taper));
        if (k == 0) g = 0; // DC is always outside a band with low > 0
        spec[k] *= g;
    }
    std::vector<double> out(n);
    fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_ptr, out.data(), FFTW_ESTIMATE);
    fftw_execute(inv);
    fftw_destroy_plan(inv);
    for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

/// Subtract the least-squares line through (t, x_t).
inline std::vector<double> detrend_linear(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> out(x.begin(), x.end());
    if (n < 2) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    const double tm = 0.5 * (n - 1);
    const double xm = mean(x);
    double stt = 0, stx = 0;
    for (std::size_t t = 0; t < n; ++t) {
        stt += (t - tm) * (t - tm);
        stx += (t - tm) * (x[t] - xm);
    }
    const double slope = stx / stt;
    for (std::size_t t = 0; t < n; ++t) out[t] = x[t] - (xm + slope * (t - tm));
    return out;
}

/// Per-voxel symmetric max-abs scaling; fitted on training data only.
struct VoxelScaler {
    std::vector<double> scale; // 0 marks a constant voxel

    static VoxelScaler fit(std::span<const RowMatrix* const> training) {
        if (training.empty()) throw DataError("VoxelScaler::fit: no training data");
        VoxelScaler s;
        s.scale.assign(training.front()->cols(), 0.0);
        for (const auto* m : training) {
            if (static_cast<std::size_t>(m->cols()) != s.scale.size())
                throw ShapeError("VoxelScaler::fit: inconsistent voxel counts");
            for (Eigen::Index v = 0; v < m->cols(); ++v)
                s.scale[v] = std::max(s.scale[v], m->col(v).cwiseAbs().maxCoeff());
        }
        for (auto& v : s.scale)
            if (v < 1e-12) v = 0.0;
        return s;
    }

    /// Scale in place; values outside [-1, 1] (unseen subjects) are clipped.
    void apply(RowMatrix& m) const {
        if (static_cast<std::size_t>(m.cols()) != scale.size()) throw ShapeError("VoxelScaler::apply: voxel count");
        for (Eigen::Index v = 0; v < m.cols(); ++v) {
            if (scale[v] == 0.0)
                m.col(v).setZero();
            else
                m.col(v) = (m.col(v) / scale[v]).cwiseMax(-1.0).cwiseMin(1.0);
        }
    }
};

/// Band-pass then detrend every column of a T x V matrix.
inline void preprocess_columns(RowMatrix& m, double tr) {
    std::vector<double> col(m.rows());
    for (Eigen::Index v = 0; v < m.cols(); ++v) {
        for (Eigen::Index t = 0; t < m.rows(); ++t) col[t] = m(t, v);
        const auto filtered = detrend_linear(bandpass(col, tr));
        for (Eigen::Index t = 0; t < m.rows(); ++t) m(t, v) = filtered[t];
    }
}

} // namespace latentdyn::signal
