#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "stats.hpp"

namespace latentdyn::surface {

enum class Hemisphere { left, right };

inline char to_char(Hemisphere h) { return h == Hemisphere::left ? 'L' : 'R'; }

/// Hemisphere-labelled triangle surface; positions in mm.
struct Mesh {
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Hemisphere> hemisphere;

    std::size_t vertex_count() const { return vertices.size(); }

    std::vector<int> vertex_ids(Hemisphere h) const {
        std::vector<int> ids;
        for (std::size_t v = 0; v < hemisphere.size(); ++v)
            if (hemisphere[v] == h) ids.push_back(static_cast<int>(v));
        return ids;
    }

    void validate() const {
        if (hemisphere.size() != vertices.size())
            throw DataError("mesh: " + std::to_string(hemisphere.size()) + " hemisphere labels for " +
                            std::to_string(vertices.size()) + " vertices");
        const int n = static_cast<int>(vertices.size());
        for (std::size_t f = 0; f < triangles.size(); ++f) {
            const auto& tri = triangles[f];
            for (int v : tri)
                if (v < 0 || v >= n) throw DataError("mesh: triangle " + std::to_string(f) + " index out of range");
            if (hemisphere[tri[0]] != hemisphere[tri[1]] || hemisphere[tri[0]] != hemisphere[tri[2]])
                throw DataError("mesh: triangle " + std::to_string(f) + " spans hemispheres");
        }
    }

    /// Unique undirected edges with Euclidean lengths, as adjacency lists.
    std::vector<std::vector<std::pair<int, double>>> edge_graph() const {
        std::vector<std::vector<std::pair<int, double>>> adj(vertices.size());
        auto add = [&](int a, int b) {
            for (const auto& [nb, w] : adj[a])
                if (nb == b) return;
            double d2 = 0;
            for (int k = 0; k < 3; ++k) d2 += (vertices[a][k] - vertices[b][k]) * (vertices[a][k] - vertices[b][k]);
            const double len = std::sqrt(d2);
            adj[a].emplace_back(b, len);
            adj[b].emplace_back(a, len);
        };
        for (const auto& t : triangles) {
            add(t[0], t[1]);
            add(t[1], t[2]);
            add(t[2], t[0]);
        }
        return adj;
    }
};

inline void to_json(nlohmann::json& j, const Mesh& m) {
    j = nlohmann::json::object();
    j["vertices"] = m.vertices;
    j["triangles"] = m.triangles;
    auto& h = j["hemisphere"] = nlohmann::json::array();
    for (auto l : m.hemisphere) h.push_back(std::string(1, to_char(l)));
}

inline void from_json(const nlohmann::json& j, Mesh& m) {
    m.vertices = j.at("vertices").get<std::vector<std::array<double, 3>>>();
    m.triangles = j.at("triangles").get<std::vector<std::array<int, 3>>>();
    m.hemisphere.clear();
    for (const auto& s : j.at("hemisphere")) {
        const auto l = s.get<std::string>();
        if (l != "L" && l != "R") throw ConfigError("hemisphere", "labels must be \"L\" or \"R\", got \"" + l + "\"");
        m.hemisphere.push_back(l == "L" ? Hemisphere::left : Hemisphere::right);
    }
    m.validate();
}

/// Square matrix over an ordered subset of mesh vertices.
struct DistanceMatrix {
    std::vector<int> vertex_ids;
    Eigen::MatrixXd values;
};

/// Single-source shortest paths over the edge graph restricted to `allowed`
/// (a local-index map, -1 for excluded vertices).
inline std::vector<double> dijkstra(const std::vector<std::vector<std::pair<int, double>>>& graph,
                                    const std::vector<int>& local, int source) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(graph.size(), inf);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[source] = 0;
    queue.emplace(0.0, source);
    while (!queue.empty()) {
        auto [d, v] = queue.top();
        queue.pop();
        if (d > dist[v]) continue;
        for (const auto& [nb, w] : graph[v]) {
            if (local[nb] < 0) continue;
            if (d + w < dist[nb]) {
                dist[nb] = d + w;
                queue.emplace(dist[nb], nb);
            }
        }
    }
    return dist;
}

/// All-pairs edge-weighted shortest-path distances within one hemisphere.
inline DistanceMatrix geodesic_distances(const Mesh& mesh, Hemisphere h) {
    mesh.validate();
    DistanceMatrix out;
    out.vertex_ids = mesh.vertex_ids(h);
    const auto n = out.vertex_ids.size();
    if (n == 0) throw DataError(std::string("hemisphere ") + to_char(h) + " has no vertices");
    std::vector<int> local(mesh.vertex_count(), -1);
    for (std::size_t i = 0; i < n; ++i) local[out.vertex_ids[i]] = static_cast<int>(i);
    const auto graph = mesh.edge_graph();

    out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    parallel_for(n, [&](std::size_t i) {
        const auto d = dijkstra(graph, local, out.vertex_ids[i]);
        for (std::size_t j = 0; j < n; ++j) out.values(i, j) = d[out.vertex_ids[j]];
    });
    std::size_t reachable = 0;
    for (std::size_t j = 0; j < n; ++j)
        if (std::isfinite(out.values(0, j))) ++reachable;
    if (reachable != n)
        throw DataError(std::string("hemisphere ") + to_char(h) + " is disconnected: component of size " +
                        std::to_string(reachable) + " out of " + std::to_string(n) + " vertices");
    // remove summation-order asymmetry
    out.values = 0.5 * (out.values + out.values.transpose()).eval();
    out.values.diagonal().setZero();
    return out;
}

enum class AdjacencyKind { structural, functional };

inline const char* to_string(AdjacencyKind k) { return k == AdjacencyKind::structural ? "structural" : "functional"; }

/// Symmetric affinity in [0, 1] with zero diagonal over one hemisphere.
struct AdjacencyMatrix {
    AdjacencyKind kind = AdjacencyKind::structural;
    Eigen::MatrixXd values;
    std::vector<int> vertex_ids;

    Eigen::Index size() const { return values.rows(); }
};

/// a_ij = 1 - d_ij / max(d), diagonal zero.
inline AdjacencyMatrix structural_adjacency(const DistanceMatrix& dist) {
    const double dmax = dist.values.maxCoeff();
    if (!(dmax > 0)) throw DataError("structural_adjacency: degenerate mesh (all distances zero)");
    AdjacencyMatrix a;
    a.kind = AdjacencyKind::structural;
    a.vertex_ids = dist.vertex_ids;
    a.values = (1.0 - dist.values.array() / dmax).matrix();
    a.values.diagonal().setZero();
    return a;
}

/// Subject-averaged Pearson correlation between vertex timecourses, mapped
/// to [0, 1] by (r + 1) / 2. Only train/val subjects are accepted.
inline AdjacencyMatrix functional_adjacency(const std::vector<const SubjectTimeseries*>& subjects,
                                            const std::vector<int>& vertex_ids) {
    if (subjects.empty()) throw DataError("functional_adjacency: no subjects");
    const auto n = static_cast<Eigen::Index>(vertex_ids.size());
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(n, n);
    std::size_t flat_voxels = 0;
    for (const auto* s : subjects) {
        if (s->split != "train" && s->split != "val")
            throw DataError("functional_adjacency: subject '" + s->id + "' has split '" + s->split +
                            "'; only train/val subjects may define the graph");
        const auto T = s->frames();
        if (T < 2) throw DataError("functional_adjacency: subject '" + s->id + "' has fewer than 2 timepoints");
        Eigen::MatrixXd z(T, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            Eigen::VectorXd c = s->values.col(vertex_ids[j]);
            c.array() -= c.mean();
            const double norm = c.norm();
            if (norm < 1e-12) {
                ++flat_voxels;
                z.col(j).setZero();
            } else {
                z.col(j) = c / norm;
            }
        }
        corr.noalias() += z.transpose() * z;
    }
    if (flat_voxels > 0)
        log_warning("functional_adjacency: " + std::to_string(flat_voxels) +
                    " zero-variance vertex timecourses; their correlations set to 0");
    corr /= static_cast<double>(subjects.size());
    AdjacencyMatrix a;
    a.kind = AdjacencyKind::functional;
    a.vertex_ids = vertex_ids;
    a.values = ((corr.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
    a.values = 0.5 * (a.values + a.values.transpose()).eval();
    a.values.diagonal().setZero();
    return a;
}

} // namespace latentdyn::surface
