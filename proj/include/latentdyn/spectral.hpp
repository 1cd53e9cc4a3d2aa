#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "surface.hpp"

namespace latentdyn::spectral {

using surface::AdjacencyKind;
using surface::AdjacencyMatrix;
using surface::Hemisphere;

enum class DegreeKind {
    vertex_count, // D = n I
    row_sum,      // D = diag(sum_j a_ij)
};

inline Eigen::MatrixXd graph_laplacian(const AdjacencyMatrix& adj, DegreeKind degree = DegreeKind::vertex_count) {
    const auto n = adj.size();
    Eigen::MatrixXd L = -adj.values;
    if (degree == DegreeKind::vertex_count) {
        L.diagonal().array() += static_cast<double>(n);
    } else {
        L.diagonal() += adj.values.rowwise().sum();
    }
    return L;
}

struct EigenDecomposition {
    Eigen::VectorXd values;  // ascending
    Eigen::MatrixXd vectors; // column i pairs with values(i)
};

/// Full decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Stops once the off-diagonal Frobenius norm is below tol * max(1, ||A||_F).
inline EigenDecomposition jacobi_eigen(const Eigen::MatrixXd& input, double tol = 1e-10, int max_sweeps = 100) {
    const auto n = input.rows();
    if (input.cols() != n) throw ShapeError("jacobi_eigen: matrix is not square");
    const double scale = std::max(1.0, input.norm());
    if ((input - input.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw ShapeError("jacobi_eigen: matrix is not symmetric");
    Eigen::MatrixXd a = 0.5 * (input + input.transpose());
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

    auto off_norm = [&] {
        double s = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    int sweep = 0;
    for (; sweep < max_sweeps && off_norm() >= tol * scale; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                const double app = a(p, p) - t * apq, aqq = a(q, q) + t * apq;
                double* cp = a.col(p).data();
                double* cq = a.col(q).data();
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double x = cp[k], y = cq[k];
                    cp[k] = c * x - s * y;
                    cq[k] = s * x + c * y;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    a(p, k) = cp[k];
                    a(q, k) = cq[k];
                }
                a(p, p) = app;
                a(q, q) = aqq;
                a(p, q) = a(q, p) = 0.0;
                double* vp = v.col(p).data();
                double* vq = v.col(q).data();
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double x = vp[k], y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
    }
    if (off_norm() >= tol * scale)
        throw NumericalError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) < a(y, y); });
    EigenDecomposition out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = a(order[i], order[i]);
        out.vectors.col(i) = v.col(order[i]);
    }
    return out;
}

/// Orthonormal eigenvectors of the k algebraically smallest eigenvalues, ascending.
inline Eigen::MatrixXd smallest_eigenvectors(const Eigen::MatrixXd& L, int k) {
    if (k < 1 || k > L.rows()) throw ShapeError("smallest_eigenvectors: k out of range");
    return jacobi_eigen(L).vectors.leftCols(k);
}

struct KMeansResult {
    std::vector<int> labels;
    double inertia = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index j) {
    return (x.row(i) - c.row(j)).squaredNorm();
}

/// One k-means++ seeded Lloyd run; empty labels when a cluster empties.
inline KMeansResult lloyd(const Eigen::MatrixXd& x, int k, SeededRng& rng, int max_iter) {
    const auto n = x.rows();
    Eigen::MatrixXd centers(k, x.cols());
    centers.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(x, i, centers, c - 1));
            total += d2[i];
        }
        Eigen::Index pick = n - 1;
        if (total > 0) {
            double r = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2[i];
                if (r < 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centers.row(c) = x.row(pick);
    }

    KMeansResult res;
    res.labels.assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(x, i, centers, 0);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(x, i, centers, c);
                if (d < best_d) best_d = d, best = c;
            }
            if (res.labels[i] != best) changed = true;
            res.labels[i] = best;
            inertia += best_d;
        }
        res.inertia = inertia;
        std::vector<int> count(k, 0);
        centers.setZero();
        for (Eigen::Index i = 0; i < n; ++i) {
            centers.row(res.labels[i]) += x.row(i);
            ++count[res.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (count[c] == 0) return {};
            centers.row(c) /= count[c];
        }
        if (!changed) break;
    }
    return res;
}

} // namespace detail

/// k-means++ with `restarts` independent Lloyd runs; lowest inertia wins.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts = 100,
                           int max_iter = 300) {
    if (k < 1 || k > x.rows()) throw ShapeError("kmeans: k must be in [1, n]");
    KMeansResult best;
    for (int r = 0; r < restarts; ++r) {
        SeededRng rng(seed, mix_stream(hash_name("kmeans"), static_cast<std::uint64_t>(r)));
        auto res = detail::lloyd(x, k, rng, max_iter);
        if (!res.labels.empty() && res.inertia < best.inertia) best = std::move(res);
    }
    if (best.labels.empty())
        throw NumericalError("kmeans: every restart produced an empty cluster (k=" + std::to_string(k) + ")");
    return best;
}

/// Renumber labels by first occurrence so equal partitions compare equal.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
        out[i] = it->second;
    }
    return out;
}

/// Per-vertex cluster ids; ids are dense in [0, k) within each hemisphere.
struct ClusterAssignment {
    int k = 128;
    std::vector<int> assignment;
    AdjacencyKind mode = AdjacencyKind::structural;
    std::uint64_t seed = 0;
    int max_cluster_size = 0;

    /// Cluster sizes for the vertices selected by `vertex_ids`.
    std::vector<int> sizes(const std::vector<int>& vertex_ids) const {
        std::vector<int> s(k, 0);
        for (int v : vertex_ids) ++s.at(assignment.at(v));
        return s;
    }
};

/// Clusters one hemisphere's adjacency; assignment is indexed like adj.vertex_ids.
inline ClusterAssignment spectral_cluster(const AdjacencyMatrix& adj, int k, std::uint64_t seed,
                                          DegreeKind degree = DegreeKind::vertex_count) {
    if (k < 1 || k >= adj.size())
        throw ConfigError("k", "must be in [1, n) for n = " + std::to_string(adj.size()) + " vertices, got " +
                                   std::to_string(k));
    const Eigen::MatrixXd u = smallest_eigenvectors(graph_laplacian(adj, degree), k);
    const auto km = kmeans(u, k, seed);
    ClusterAssignment ca;
    ca.k = k;
    ca.assignment = canonical_labels(km.labels);
    ca.mode = adj.kind;
    ca.seed = seed;
    const auto s = ca.sizes([&] {
        std::vector<int> ids(ca.assignment.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        return ids;
    }());
    ca.max_cluster_size = *std::max_element(s.begin(), s.end());
    return ca;
}

inline void to_json(nlohmann::json& j, const ClusterAssignment& c) {
    j = nlohmann::json{{"k", c.k},
                       {"mode", surface::to_string(c.mode)},
                       {"seed", c.seed},
                       {"assignment", c.assignment},
                       {"max_cluster_size", c.max_cluster_size}};
}

inline void from_json(const nlohmann::json& j, ClusterAssignment& c) {
    c.k = j.at("k").get<int>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "structural" && mode != "functional")
        throw ConfigError("mode", "must be \"structural\" or \"functional\", got \"" + mode + "\"");
    c.mode = mode == "structural" ? AdjacencyKind::structural : AdjacencyKind::functional;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.assignment = j.at("assignment").get<std::vector<int>>();
    c.max_cluster_size = j.at("max_cluster_size").get<int>();
}

/// Gather tables mapping vertices to patch slots, left hemisphere first.
struct PatchLayout {
    int k = 0;
    int max_cluster_size = 0;
    std::size_t n_vertices = 0;
    std::array<std::vector<long>, 2> patch_index; // per hemisphere, k*m vertex ids (-1 = pad)
    std::vector<long> vertex_index;               // per vertex, slot in the concatenated [2*k*m] layout

    long hemisphere_width() const { return static_cast<long>(k) * max_cluster_size; }

    static PatchLayout build(const surface::Mesh& mesh, const ClusterAssignment& ca) {
        if (ca.assignment.size() != mesh.vertex_count())
            throw ShapeError("patch layout: assignment covers " + std::to_string(ca.assignment.size()) +
                             " vertices, mesh has " + std::to_string(mesh.vertex_count()));
        PatchLayout p;
        p.k = ca.k;
        p.n_vertices = mesh.vertex_count();
        std::array<std::vector<std::vector<int>>, 2> members;
        for (int h = 0; h < 2; ++h) members[h].assign(ca.k, {});
        for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
            const int c = ca.assignment[v];
            if (c < 0 || c >= ca.k)
                throw DataError("cluster id " + std::to_string(c) + " at vertex " + std::to_string(v) +
                                " outside [0, " + std::to_string(ca.k) + ")");
            members[mesh.hemisphere[v] == Hemisphere::left ? 0 : 1][c].push_back(static_cast<int>(v));
        }
        for (int h = 0; h < 2; ++h)
            for (int c = 0; c < ca.k; ++c) {
                if (members[h][c].empty())
                    throw DataError(std::string("cluster ") + std::to_string(c) + " of hemisphere " + (h ? 'R' : 'L') +
                                    " is empty");
                p.max_cluster_size = std::max(p.max_cluster_size, static_cast<int>(members[h][c].size()));
            }
        const long m = p.max_cluster_size;
        p.vertex_index.assign(mesh.vertex_count(), -1);
        for (int h = 0; h < 2; ++h) {
            p.patch_index[h].assign(static_cast<std::size_t>(ca.k * m), -1);
            for (int c = 0; c < ca.k; ++c)
                for (std::size_t s = 0; s < members[h][c].size(); ++s) {
                    const long slot = c * m + static_cast<long>(s);
                    p.patch_index[h][slot] = members[h][c][s];
                    p.vertex_index[members[h][c][s]] = h * p.hemisphere_width() + slot;
                }
        }
        return p;
    }
};

/// [k x m] patch matrix per hemisphere from one vertex vector.
inline std::array<RowMatrix, 2> patchify(const Eigen::VectorXd& x, const PatchLayout& layout) {
    if (static_cast<std::size_t>(x.size()) != layout.n_vertices)
        throw ShapeError("patchify: vector has " + std::to_string(x.size()) + " entries, layout covers " +
                         std::to_string(layout.n_vertices));
    std::array<RowMatrix, 2> out;
    for (int h = 0; h < 2; ++h) {
        out[h] = RowMatrix::Zero(layout.k, layout.max_cluster_size);
        for (long i = 0; i < layout.hemisphere_width(); ++i)
            if (const long v = layout.patch_index[h][i]; v >= 0) out[h].data()[i] = x(v);
    }
    return out;
}

inline Eigen::VectorXd unpatchify(const std::array<RowMatrix, 2>& patches, const PatchLayout& layout) {
    for (const auto& p : patches)
        if (p.rows() != layout.k || p.cols() != layout.max_cluster_size)
            throw ShapeError("unpatchify: patch matrix shape does not match layout");
    Eigen::VectorXd x(static_cast<Eigen::Index>(layout.n_vertices));
    const long w = layout.hemisphere_width();
    for (std::size_t v = 0; v < layout.n_vertices; ++v) {
        const long slot = layout.vertex_index[v];
        x(static_cast<Eigen::Index>(v)) = patches[slot / w].data()[slot % w];
    }
    return x;
}

/// Clusters both hemispheres of a mesh with the given adjacency builder.
template <class AdjacencyFn>
ClusterAssignment cluster_hemispheres(const surface::Mesh& mesh, int k, std::uint64_t seed, AdjacencyFn&& adjacency,
                                      DegreeKind degree = DegreeKind::vertex_count) {
    ClusterAssignment out;
    out.k = k;
    out.seed = seed;
    out.assignment.assign(mesh.vertex_count(), -1);
    for (auto h : {Hemisphere::left, Hemisphere::right}) {
        const AdjacencyMatrix adj = adjacency(h);
        out.mode = adj.kind;
        const auto ca = spectral_cluster(adj, k, seed, degree);
        for (std::size_t i = 0; i < adj.vertex_ids.size(); ++i) out.assignment[adj.vertex_ids[i]] = ca.assignment[i];
        out.max_cluster_size = std::max(out.max_cluster_size, ca.max_cluster_size);
        auto sizes = ca.sizes([&] {
            std::vector<int> ids(ca.assignment.size());
            for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
            return ids;
        }());
        std::sort(sizes.begin(), sizes.end());
        log_info(std::string("cluster sizes ") + to_char(h) + ": max " + std::to_string(sizes.back()) + ", median " +
                 std::to_string(sizes[sizes.size() / 2]) + ", max/median " +
                 std::to_string(static_cast<double>(sizes.back()) / sizes[sizes.size() / 2]));
    }
    return out;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ShapeError("adjusted_rand_index: label vectors differ in length");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    auto c2 = [](double n) { return n * (n - 1) / 2; };
    double sum_joint = 0, sum_a = 0, sum_b = 0;
    for (const auto& [key, n] : joint) sum_joint += c2(n);
    for (const auto& [key, n] : ra) sum_a += c2(n);
    for (const auto& [key, n] : rb) sum_b += c2(n);
    const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (sum_joint - expected) / (max_index - expected);
}

} // namespace latentdyn::spectral
