#pragma once

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace latentdyn::ica {

struct Whitening {
    Eigen::VectorXd mean;  // per channel
    Eigen::MatrixXd matrix; // [n_components x channels]
    Eigen::VectorXd variances; // retained eigenvalues, descending
};

/// PCA whitening of samples (rows) to n_components unit-variance directions.
/// Covariances use the 1/N convention.
inline std::pair<Eigen::MatrixXd, Whitening> whiten(const Eigen::MatrixXd& x, int n_components) {
    if (n_components < 1) throw ConfigError("n_components", "must be a positive integer");
    if (n_components > x.cols())
        throw ConfigError("n_components", "exceeds channel count " + std::to_string(x.cols()));
    if (x.rows() <= n_components)
        throw DataError("whiten: need more samples than components (" + std::to_string(x.rows()) + " samples)");
    Whitening w;
    w.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd xc = x.rowwise() - w.mean.transpose();
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(x.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("whiten: eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    const double tol = std::max(ev(0), 0.0) * 1e-10 * static_cast<double>(x.cols());
    int rank = 0;
    while (rank < ev.size() && ev(rank) > tol) ++rank;
    if (rank < n_components)
        throw DataError("whiten: data has effective rank " + std::to_string(rank) + ", fewer than the " +
                        std::to_string(n_components) + " requested components");
    w.variances = ev.head(n_components);
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse().leftCols(n_components);
    w.matrix = w.variances.cwiseSqrt().cwiseInverse().asDiagonal() * vecs.transpose();
    return {xc * w.matrix.transpose(), w};
}

struct InfomaxOptions {
    double lr = 1e-3;
    double anneal_factor = 0.9;
    double anneal_degrees = 60.0;
    double tol = 1e-7;
    int max_epochs = 500;
    double blowup = 1e6;
};

struct InfomaxResult {
    Eigen::MatrixXd unmixing; // [n x n], acts on whitened samples
    int epochs = 0;
    bool converged = false;
    double final_lr = 0;
};

/// Natural-gradient InfoMax with a logistic nonlinearity on whitened samples (rows).
/// Blocks of rows are visited in a seeded random order each epoch.
inline InfomaxResult infomax_fit(const Eigen::MatrixXd& z, std::uint64_t seed, const InfomaxOptions& opt = {}) {
    const Eigen::Index n = z.cols(), N = z.rows();
    if (N < 2 || n < 1) throw DataError("infomax_fit: need at least two samples");
    const Eigen::Index block = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::sqrt(N / 3.0)));
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

    InfomaxResult res;
    res.unmixing = eye;
    double lr = opt.lr;
    Eigen::MatrixXd old_delta;
    double old_change = 0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    Eigen::MatrixXd zb(block, n);

    for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        SeededRng rng(seed, mix_stream(hash_name("infomax"), static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        const Eigen::MatrixXd before = res.unmixing;
        for (Eigen::Index start = 0; start + block <= N; start += block) {
            for (Eigen::Index r = 0; r < block; ++r) zb.row(r) = z.row(order[static_cast<std::size_t>(start + r)]);
            const Eigen::MatrixXd u = zb * res.unmixing.transpose();
            const Eigen::MatrixXd y = (1.0 - 2.0 / (1.0 + (-u.array()).exp())).matrix(); // 1 - 2 g(u)
            res.unmixing += lr * (static_cast<double>(block) * eye + y.transpose() * u) * res.unmixing;
            if (!res.unmixing.allFinite() || res.unmixing.cwiseAbs().maxCoeff() > opt.blowup)
                throw NumericalError("infomax_fit: weights diverged at epoch " + std::to_string(epoch) +
                                     "; try a lower learning rate than " + std::to_string(lr));
        }

        const Eigen::MatrixXd delta = res.unmixing - before;
        const double change = delta.squaredNorm();
        res.epochs = epoch;
        if (std::sqrt(change) < opt.tol) {
            res.converged = true;
            break;
        }
        if (epoch > 1 && old_change > 0) {
            const double cosang = (delta.array() * old_delta.array()).sum() / std::sqrt(change * old_change);
            const double deg = std::acos(std::clamp(cosang, -1.0, 1.0)) * 180.0 / std::numbers::pi;
            if (deg > opt.anneal_degrees) lr *= opt.anneal_factor;
        }
        old_delta = delta;
        old_change = change;
    }
    res.final_lr = lr;
    return res;
}

/// Amari performance index of P = W A, in [0, 1]; 0 iff P is a scaled permutation.
/// Rows are first scaled to unit max so the value ignores the scale of each row of W.
inline double amari_index(const Eigen::MatrixXd& p) {
    const Eigen::Index n = p.rows();
    if (p.cols() != n) throw ShapeError("amari_index: expects a square matrix");
    if (n < 2) return 0.0;
    Eigen::MatrixXd a = p.cwiseAbs();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = a.row(i).maxCoeff();
        if (!(mx > 0)) throw NumericalError("amari_index: zero row");
        a.row(i) /= mx;
    }
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) s += a.row(i).sum() / a.row(i).maxCoeff() - 1;
    for (Eigen::Index j = 0; j < n; ++j) s += a.col(j).sum() / a.col(j).maxCoeff() - 1;
    return s / (2.0 * static_cast<double>(n) * static_cast<double>(n - 1));
}

struct IcaModel {
    int n_components = 16;
    Eigen::VectorXd mean;      // per voxel
    Eigen::MatrixXd whitening; // [n x V]
    Eigen::MatrixXd unmixing;  // [n x n]
    Eigen::MatrixXd mixing;    // [V x n], pseudo-inverse of unmixing * whitening
    int epochs = 0;
    bool converged = false;

    /// Full unmixing from centred voxel space, [n x V].
    Eigen::MatrixXd filters() const { return unmixing * whitening; }
};

/// Temporal ICA: rows of the concatenated training data are observations, voxels are channels.
inline IcaModel fit(const std::vector<const SubjectTimeseries*>& subjects, int n_components, std::uint64_t seed,
                    const InfomaxOptions& opt = {}) {
    if (subjects.empty()) throw DataError("ica fit: no subjects");
    Eigen::Index rows = 0;
    const Eigen::Index V = subjects.front()->vertices();
    for (const auto* s : subjects) {
        if (s->vertices() != V) throw ShapeError("ica fit: subject " + s->id + " has a different vertex count");
        rows += s->frames();
    }
    Eigen::MatrixXd x(rows, V);
    Eigen::Index r = 0;
    for (const auto* s : subjects) {
        x.middleRows(r, s->frames()) = s->values;
        r += s->frames();
    }
    auto [z, w] = whiten(x, n_components);
    const auto res = infomax_fit(z, seed, opt);
    IcaModel m;
    m.n_components = n_components;
    m.mean = w.mean;
    m.whitening = w.matrix;
    m.unmixing = res.unmixing;
    m.mixing = m.filters().completeOrthogonalDecomposition().pseudoInverse();
    m.epochs = res.epochs;
    m.converged = res.converged;
    if (!res.converged) log_warning("ica: InfoMax stopped at the epoch limit before converging");
    return m;
}

/// Component timecourses [T x n] for one subject.
inline RowMatrix timecourses(const IcaModel& m, const RowMatrix& x) {
    if (x.cols() != m.mean.size()) throw ShapeError("ica timecourses: vertex count mismatch");
    const Eigen::MatrixXd xc = x.rowwise() - m.mean.transpose();
    return xc * m.filters().transpose();
}

/// Timecourses averaged over subjects.
inline RowMatrix mean_timecourses(const IcaModel& m, const std::vector<const SubjectTimeseries*>& subjects) {
    if (subjects.empty()) throw DataError("ica: no subjects to project");
    RowMatrix acc = timecourses(m, subjects.front()->values);
    for (std::size_t i = 1; i < subjects.size(); ++i) acc += timecourses(m, subjects[i]->values);
    return acc / static_cast<double>(subjects.size());
}

struct ComponentMaps {
    RowMatrix maps;                 // [n x V], sign-aligned, normalized, thresholded
    std::vector<int> matched_subtask;
    std::vector<int> sign;
};

/// Mixing columns as spatial maps, flipped by the sign of each component's
/// correlation with its best-matching sub-task regressor.
inline ComponentMaps component_maps(const IcaModel& m, const RowMatrix& mean_tc, const RowMatrix& regressors,
                                    double threshold = 0.1) {
    if (mean_tc.cols() != m.n_components) throw ShapeError("component_maps: timecourse width mismatch");
    if (regressors.cols() != mean_tc.rows()) throw ShapeError("component_maps: regressor length mismatch");
    const Eigen::MatrixXd r = correlation_matrix(regressors, mean_tc);
    ComponentMaps out;
    out.maps.resize(m.n_components, m.mixing.rows());
    for (int j = 0; j < m.n_components; ++j) {
        Eigen::Index best = 0;
        r.col(j).cwiseAbs().maxCoeff(&best);
        const int sign = r(best, j) < 0 ? -1 : 1;
        out.matched_subtask.push_back(static_cast<int>(best));
        out.sign.push_back(sign);
        out.maps.row(j) = normalize_and_threshold(sign * m.mixing.col(j), threshold).transpose();
    }
    return out;
}

} // namespace latentdyn::ica
