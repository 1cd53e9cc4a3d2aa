#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <string_view>

#include <Eigen/Core>

namespace latentdyn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double mean(std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Pearson correlation; 0 when either input has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = std::min(a.size(), b.size());
    if (n < 2) return 0.0;
    auto constant = [n](std::span<const double> v) {
        return std::all_of(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), [&](double e) { return e == v[0]; });
    };
    if (constant(a) || constant(b)) return 0.0;
    const double ma = mean(a.first(n)), mb = mean(b.first(n));
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0 || sbb <= 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return pearson(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                   std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

/// r[i][j] = pearson(rows(i), columns(j)); rows is [r x T], columns is [T x n].
inline Eigen::MatrixXd correlation_matrix(const RowMatrix& rows, const RowMatrix& columns) {
    Eigen::MatrixXd r(rows.rows(), columns.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = 0; j < columns.cols(); ++j)
            r(i, j) = pearson(Eigen::VectorXd(rows.row(i).transpose()), Eigen::VectorXd(columns.col(j)));
    return r;
}

/// Divides by the largest magnitude, then zeroes entries with |v| < threshold.
inline Eigen::VectorXd normalize_and_threshold(Eigen::VectorXd v, double threshold) {
    const double mx = v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
    if (mx <= 0) return Eigen::VectorXd::Zero(v.size());
    v /= mx;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (std::abs(v(i)) < threshold) v(i) = 0.0;
    return v;
}

/// Jaccard index of the non-zero supports; 1 when both are empty.
inline double support_jaccard(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    std::size_t inter = 0, uni = 0;
    for (Eigen::Index i = 0; i < std::min(a.size(), b.size()); ++i) {
        const bool x = a(i) != 0.0, y = b(i) != 0.0;
        inter += x && y;
        uni += x || y;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size());
}

inline void log_warning(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }
/// Progress messages are off unless a caller (the CLI) turns them on.
inline bool& verbose() {
    static bool on = false;
    return on;
}

inline void log_info(std::string_view msg) {
    if (verbose()) std::cerr << msg << '\n';
}

} // namespace latentdyn
