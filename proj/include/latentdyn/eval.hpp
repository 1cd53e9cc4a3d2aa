#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "signal.hpp"
#include "stats.hpp"

namespace latentdyn::eval {

struct SubtaskScores {
    Eigen::MatrixXd abs_corr;          // [n_subtasks x n_factors]
    std::vector<int> best_factor;      // per sub-task
    std::vector<double> best_abs_corr; // per sub-task
    double mean_abs_corr = 0;
};

/// Matches every sub-task regressor [S x T] to the factor column of `factors` [T x n]
/// with the largest |Pearson r| and averages those maxima.
inline SubtaskScores subtask_correlation(const RowMatrix& factors, const RowMatrix& regressors) {
    if (factors.rows() != regressors.cols())
        throw ShapeError("subtask_correlation: " + std::to_string(factors.rows()) + " factor frames vs " +
                         std::to_string(regressors.cols()) + " regressor frames");
    if (factors.cols() < 1 || regressors.rows() < 1) throw ShapeError("subtask_correlation: empty input");
    SubtaskScores s;
    s.abs_corr = correlation_matrix(regressors, factors).cwiseAbs();
    for (Eigen::Index i = 0; i < s.abs_corr.rows(); ++i) {
        Eigen::Index j = 0;
        s.best_abs_corr.push_back(s.abs_corr.row(i).maxCoeff(&j));
        s.best_factor.push_back(static_cast<int>(j));
    }
    s.mean_abs_corr = mean(s.best_abs_corr);
    return s;
}

/// Posterior-mean factor timecourses averaged over subjects, [T x n_factors].
inline RowMatrix mean_factor_timecourses(const model::ParamSet& params, const model::ModelConfig& cfg,
                                         const model::Geometry& g,
                                         const std::vector<const SubjectTimeseries*>& subjects) {
    if (subjects.empty()) throw DataError("mean_factor_timecourses: no subjects");
    std::vector<RowMatrix> mus(subjects.size());
    parallel_for(subjects.size(), [&](std::size_t i) { mus[i] = model::infer(params, cfg, g, subjects[i]->values).mu; });
    RowMatrix acc = mus.front();
    for (std::size_t i = 1; i < mus.size(); ++i) {
        if (mus[i].rows() != acc.rows()) throw ShapeError("mean_factor_timecourses: subjects differ in length");
        acc += mus[i];
    }
    return acc / static_cast<double>(mus.size());
}

/// Mean over voxels of the per-voxel Pearson r through time; voxels constant in `x` are skipped.
inline double subject_reconstruction_correlation(const RowMatrix& x, const RowMatrix& x_hat) {
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
        throw ShapeError("reconstruction_correlation: shapes differ");
    double s = 0;
    int used = 0;
    for (Eigen::Index v = 0; v < x.cols(); ++v) {
        const Eigen::VectorXd a = x.col(v), b = x_hat.col(v);
        if ((a.array() - a.mean()).abs().maxCoeff() == 0.0) continue;
        s += pearson(a, b);
        ++used;
    }
    return used ? s / used : 0.0;
}

struct MeanStd {
    double mean = 0;
    double std = 0; // sample standard deviation; 0 for a single subject
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    if (v.empty()) return r;
    r.mean = mean(v);
    if (v.size() > 1) {
        double ss = 0;
        for (double e : v) ss += (e - r.mean) * (e - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

/// Reconstruction correlation of the posterior-mean reconstruction, summarized over subjects.
inline MeanStd reconstruction_correlation(const model::ParamSet& params, const model::ModelConfig& cfg,
                                          const model::Geometry& g,
                                          const std::vector<const SubjectTimeseries*>& subjects) {
    std::vector<double> per(subjects.size());
    parallel_for(subjects.size(), [&](std::size_t i) {
        per[i] = subject_reconstruction_correlation(subjects[i]->values,
                                                    model::infer(params, cfg, g, subjects[i]->values).x_hat);
    });
    return mean_std(per);
}

/// Maps z rows [n x n_factors] to images [n x V].
using Decoder = std::function<RowMatrix(const RowMatrix&)>;

struct TraversalOptions {
    int n_steps = 50;
    double lo = -3.0;
    double hi = 3.0;
    double threshold = 0.1;
};

/// Per-voxel variance of decodes along each factor axis (others at 0), max-normalized and thresholded.
inline RowMatrix traversal_spatial_maps(const Decoder& decode, int n_factors, const TraversalOptions& opt = {}) {
    if (opt.n_steps < 2) throw ConfigError("n_steps", "needs at least two steps");
    RowMatrix maps;
    for (int j = 0; j < n_factors; ++j) {
        RowMatrix z = RowMatrix::Zero(opt.n_steps, n_factors);
        for (int s = 0; s < opt.n_steps; ++s) z(s, j) = opt.lo + (opt.hi - opt.lo) * s / (opt.n_steps - 1);
        const RowMatrix x = decode(z);
        if (j == 0) maps = RowMatrix::Zero(n_factors, x.cols());
        const Eigen::RowVectorXd mu = x.colwise().mean();
        const Eigen::VectorXd var = ((x.rowwise() - mu).array().square().colwise().sum() / opt.n_steps).transpose();
        maps.row(j) = normalize_and_threshold(var, opt.threshold).transpose();
    }
    return maps;
}

inline Decoder model_decoder(const model::ParamSet& params, const model::ModelConfig& cfg, const model::Geometry& g) {
    return [&params, &cfg, &g](const RowMatrix& z) { return model::decode(params, cfg, g, z); };
}

struct TsneOptions {
    double perplexity = 30.0;
    int iterations = 1000;
    int exaggeration_iters = 250;
    double exaggeration = 12.0;
    double learning_rate = 200.0;
    double momentum_start = 0.5;
    double momentum_final = 0.8;
    double perplexity_tol = 1e-4;
};

/// Row-conditional affinities p_{j|i} with per-row bandwidths matching the target perplexity.
inline Eigen::MatrixXd conditional_affinities(const RowMatrix& y, double perplexity, double tol = 1e-4) {
    const Eigen::Index n = y.rows();
    Eigen::MatrixXd d2(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (y.row(i) - y.row(j)).squaredNorm();
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) dmin = std::min(dmin, d2(i, j));
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0, weighted = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double w = std::exp(-beta * (d2(i, j) - dmin));
                p(i, j) = w;
                sum += w;
                weighted += w * (d2(i, j) - dmin);
            }
            // entropy in nats of the normalized row
            const double h = std::log(sum) + beta * weighted / sum;
            const double perp = std::exp(h);
            p.row(i) /= sum;
            if (std::abs(perp - perplexity) < tol) break;
            if (perp > perplexity) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = (beta + lo) / 2;
            }
        }
    }
    return p;
}

/// Symmetrized joint affinities, summing to 1.
inline Eigen::MatrixXd joint_affinities(const RowMatrix& y, double perplexity, double tol = 1e-4) {
    const Eigen::MatrixXd c = conditional_affinities(y, perplexity, tol);
    return (c + c.transpose()) / (2.0 * static_cast<double>(y.rows()));
}

/// Exact t-SNE to two dimensions.
inline RowMatrix tsne_embed(const RowMatrix& y, std::uint64_t seed, const TsneOptions& opt = {}) {
    const Eigen::Index n = y.rows();
    if (!(opt.perplexity > 0)) throw ConfigError("perplexity", "must be positive");
    if (static_cast<double>(n) <= 3.0 * opt.perplexity)
        throw ConfigError("perplexity", "too large for " + std::to_string(n) + " points; need more than 3x perplexity");
    Eigen::MatrixXd p = joint_affinities(y, opt.perplexity, opt.perplexity_tol).cwiseMax(1e-12);

    SeededRng rng(seed, hash_name("tsne"));
    Eigen::MatrixXd e(n, 2);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = 1e-4 * rng.normal();
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2);
    Eigen::MatrixXd num(n, n), grad(n, 2);

    for (int it = 0; it < opt.iterations; ++it) {
        const double exag = it < opt.exaggeration_iters ? opt.exaggeration : 1.0;
        const double momentum = it < opt.exaggeration_iters ? opt.momentum_start : opt.momentum_final;
        double qsum = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num(i, i) = 0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double w = 1.0 / (1.0 + (e.row(i) - e.row(j)).squaredNorm());
                num(i, j) = num(j, i) = w;
                qsum += 2 * w;
            }
        }
        grad.setZero();
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num(i, j) / qsum, 1e-12);
                grad.row(i) += 4.0 * (exag * p(i, j) - q) * num(i, j) * (e.row(i) - e.row(j));
            }
        for (Eigen::Index k = 0; k < gains.size(); ++k) {
            const bool same = (grad.data()[k] > 0) == (update.data()[k] > 0);
            gains.data()[k] = std::max(same ? gains.data()[k] * 0.8 : gains.data()[k] + 0.2, 0.01);
        }
        update = momentum * update - opt.learning_rate * gains.cwiseProduct(grad);
        e += update;
        e = e.rowwise() - e.colwise().mean();
    }
    return e;
}

struct TrajectoryPoint {
    int t = 0;
    double x = 0;
    double y = 0;
    std::string label; // sub-task name or "none"
    double opacity = 1.0;
};

/// Labels each embedded frame with its sub-task; opacity ramps 0.5 -> 1 over the first five
/// frames of a block and back over the last five.
inline std::vector<TrajectoryPoint> trajectory_export(const RowMatrix& embedding, const signal::TaskDesign& design) {
    if (embedding.cols() != 2) throw ShapeError("trajectory_export: embedding must have two columns");
    std::vector<TrajectoryPoint> out;
    const int T = static_cast<int>(embedding.rows());
    for (int t = 0; t < T; ++t) {
        TrajectoryPoint p{t, embedding(t, 0), embedding(t, 1), "none", 1.0};
        const int b = design.block_at_frame(t);
        if (b >= 0) {
            p.label = design.subtasks.at(static_cast<std::size_t>(design.blocks[b].subtask));
            int first = t, last = t;
            while (first > 0 && design.block_at_frame(first - 1) == b) --first;
            while (last + 1 < T && design.block_at_frame(last + 1) == b) ++last;
            const int into = t - first, left = last - t;
            const double ramp = 0.5 / 4.0;
            p.opacity = std::min({1.0, 0.5 + into * ramp, 0.5 + left * ramp});
        }
        out.push_back(p);
    }
    return out;
}

struct EvalReport {
    std::vector<std::string> subtasks;
    SubtaskScores scores;
    MeanStd recon_corr;
    RowMatrix spatial_maps; // [n_factors x V]
};

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json j;
    auto& st = j["subtask_scores"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.scores.best_factor.size(); ++i)
        st.push_back({{"subtask", i < r.subtasks.size() ? r.subtasks[i] : std::to_string(i)},
                      {"best_factor", r.scores.best_factor[i]},
                      {"abs_corr", r.scores.best_abs_corr[i]}});
    j["mean_abs_corr"] = r.scores.mean_abs_corr;
    j["recon_corr_mean"] = r.recon_corr.mean;
    j["recon_corr_std"] = r.recon_corr.std;
    j["n_factors"] = r.spatial_maps.rows();
    j["n_vertices"] = r.spatial_maps.cols();
    return j;
}

} // namespace latentdyn::eval
