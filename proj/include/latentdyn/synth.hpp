#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "signal.hpp"
#include "surface.hpp"

namespace latentdyn::synth {

using surface::Hemisphere;
using surface::Mesh;

enum class Mixing { linear, tanh };

inline const char* to_string(Mixing m) { return m == Mixing::linear ? "linear" : "tanh"; }

/// Motor block design: every sub-task twice, never the same one back to back,
/// blocks separated by `rest` seconds of fixation.
inline signal::TaskDesign make_motor_design(double tr, int n_frames, std::uint64_t seed, double block = 12.0,
                                            double rest = 12.0, double lead = 10.0, int repeats = 2) {
    signal::TaskDesign d;
    d.tr = tr;
    d.n_frames = n_frames;
    const int n_tasks = d.n_subtasks();
    SeededRng rng(seed, hash_name("design"));
    std::vector<int> order;
    // rejection-sample a shuffled order with no immediate repeats
    for (int attempt = 0; attempt < 1000; ++attempt) {
        order.clear();
        for (int r = 0; r < repeats; ++r)
            for (int s = 0; s < n_tasks; ++s) order.push_back(s);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        bool ok = true;
        for (std::size_t i = 1; i < order.size(); ++i) ok = ok && order[i] != order[i - 1];
        if (ok) break;
    }
    for (std::size_t i = 0; i < order.size(); ++i)
        d.blocks.push_back({order[i], lead + static_cast<double>(i) * (block + rest), block});
    d.validate();
    return d;
}

struct SynthConfig {
    int vertices_per_hemisphere = 642;
    int n_sources = 5;
    double blob_radius = 12.0; // geodesic mm
    double noise_sigma = 0.5;
    double ar1_coeff = 0.4;
    Mixing mixing = Mixing::linear;
    std::uint64_t seed = 42;
    int n_subjects = 60;
    double amplitude_jitter = 0.2;
    double tr = 2.0;
    int n_frames = 128;
    signal::TaskDesign design; // empty blocks: generated from (tr, n_frames, seed)

    void validate() const {
        if (n_sources < 1 || n_sources > 5) throw ConfigError("n_sources", "must be in [1, 5]");
        if (noise_sigma < 0) throw ConfigError("noise_sigma", "must be non-negative");
        if (!(blob_radius > 0)) throw ConfigError("blob_radius", "must be positive");
        if (ar1_coeff <= -1 || ar1_coeff >= 1) throw ConfigError("ar1_coeff", "must be in (-1, 1)");
        if (n_subjects < 3) throw ConfigError("n_subjects", "need at least 3 subjects for a train/val/test split");
        if (amplitude_jitter < 0 || amplitude_jitter >= 1) throw ConfigError("amplitude_jitter", "must be in [0, 1)");
        int level = 0;
        while (10 * (1 << (2 * level)) + 2 < vertices_per_hemisphere) ++level;
        if (10 * (1 << (2 * level)) + 2 != vertices_per_hemisphere)
            throw ConfigError("vertices_per_hemisphere", "must be an icosphere count 10*4^L+2 (12, 42, 162, 642, ...)");
    }

    int icosphere_level() const {
        int level = 0;
        while (10 * (1 << (2 * level)) + 2 < vertices_per_hemisphere) ++level;
        return level;
    }

    signal::TaskDesign resolved_design() const {
        if (!design.blocks.empty()) return design;
        return make_motor_design(tr, n_frames, seed);
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"vertices_per_hemisphere", c.vertices_per_hemisphere},
                       {"n_sources", c.n_sources},
                       {"blob_radius", c.blob_radius},
                       {"noise_sigma", c.noise_sigma},
                       {"ar1_coeff", c.ar1_coeff},
                       {"mixing", to_string(c.mixing)},
                       {"seed", c.seed},
                       {"n_subjects", c.n_subjects},
                       {"amplitude_jitter", c.amplitude_jitter},
                       {"tr", c.tr},
                       {"n_frames", c.n_frames}};
    if (!c.design.blocks.empty()) j["design"] = c.design;
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    const SynthConfig d;
    c.vertices_per_hemisphere = j.value("vertices_per_hemisphere", d.vertices_per_hemisphere);
    c.n_sources = j.value("n_sources", d.n_sources);
    c.blob_radius = j.value("blob_radius", d.blob_radius);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.ar1_coeff = j.value("ar1_coeff", d.ar1_coeff);
    const auto mixing = j.value("mixing", std::string("linear"));
    if (mixing != "linear" && mixing != "tanh") throw ConfigError("mixing", "must be \"linear\" or \"tanh\"");
    c.mixing = mixing == "tanh" ? Mixing::tanh : Mixing::linear;
    c.seed = j.value("seed", d.seed);
    c.n_subjects = j.value("n_subjects", d.n_subjects);
    c.amplitude_jitter = j.value("amplitude_jitter", d.amplitude_jitter);
    c.tr = j.value("tr", d.tr);
    c.n_frames = j.value("n_frames", d.n_frames);
    if (j.contains("design") && !j.at("design").is_null()) c.design = j.at("design").get<signal::TaskDesign>();
    c.validate();
}

/// Unit icosphere with outward-oriented triangles.
inline std::pair<std::vector<std::array<double, 3>>, std::vector<std::array<int, 3>>> icosphere(int level) {
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<std::array<double, 3>> v{{-1, p, 0}, {1, p, 0},  {-1, -p, 0}, {1, -p, 0}, {0, -1, p},  {0, 1, p},
                                         {0, -1, -p}, {0, 1, -p}, {p, 0, -1},  {p, 0, 1},  {-p, 0, -1}, {-p, 0, 1}};
    std::vector<std::array<int, 3>> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    auto normalize = [](std::array<double, 3> a) {
        const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        return std::array<double, 3>{a[0] / n, a[1] / n, a[2] / n};
    };
    for (auto& x : v) x = normalize(x);
    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
            v.push_back(normalize({(v[a][0] + v[b][0]) / 2, (v[a][1] + v[b][1]) / 2, (v[a][2] + v[b][2]) / 2}));
            const int id = static_cast<int>(v.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(f.size() * 4);
        for (const auto& t : f) {
            const int a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
            next.push_back({t[0], a, c});
            next.push_back({t[1], b, a});
            next.push_back({t[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    return {v, f};
}

inline constexpr double kSphereRadius = 50.0;
inline constexpr double kMidlineGap = 15.0;

/// Two icospheres of radius 50 mm whose medial poles sit 15 mm either side of x = 0.
inline Mesh make_hemisphere_meshes(const SynthConfig& cfg) {
    cfg.validate();
    const auto [verts, faces] = icosphere(cfg.icosphere_level());
    Mesh mesh;
    for (int h = 0; h < 2; ++h) {
        const double cx = (h == 0 ? -1.0 : 1.0) * (kSphereRadius + kMidlineGap);
        const int base = static_cast<int>(mesh.vertices.size());
        for (const auto& p : verts) {
            mesh.vertices.push_back({cx + kSphereRadius * p[0], kSphereRadius * p[1], kSphereRadius * p[2]});
            mesh.hemisphere.push_back(h == 0 ? Hemisphere::left : Hemisphere::right);
        }
        for (const auto& t : faces) mesh.triangles.push_back({base + t[0], base + t[1], base + t[2]});
    }
    return mesh;
}

/// Where each motor source sits: hemisphere and direction from the sphere centre.
struct SourceSite {
    Hemisphere hemisphere;
    std::array<double, 3> direction;
};

/// Contralateral hands/feet, bilateral tongue.
inline std::vector<std::vector<SourceSite>> motor_sites() {
    const double s = std::sqrt(0.5);
    return {
        {{Hemisphere::right, {s, 0.2, s}}},                                  // left hand
        {{Hemisphere::left, {-s, 0.2, s}}},                                  // right hand
        {{Hemisphere::right, {-s, -0.2, s}}},                                // left foot
        {{Hemisphere::left, {s, -0.2, s}}},                                  // right foot
        {{Hemisphere::left, {-0.8, 0.0, -0.6}}, {Hemisphere::right, {0.8, 0.0, -0.6}}}, // tongue
    };
}

/// Vertex of hemisphere `h` closest to the ray from its sphere centre along `dir`.
inline int nearest_vertex(const Mesh& mesh, Hemisphere h, std::array<double, 3> dir) {
    const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    const double cx = (h == Hemisphere::left ? -1.0 : 1.0) * (kSphereRadius + kMidlineGap);
    const std::array<double, 3> target{cx + kSphereRadius * dir[0] / n, kSphereRadius * dir[1] / n,
                                       kSphereRadius * dir[2] / n};
    int best = -1;
    double best_d = 1e300;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        if (mesh.hemisphere[v] != h) continue;
        double d = 0;
        for (int k = 0; k < 3; ++k) d += (mesh.vertices[v][k] - target[k]) * (mesh.vertices[v][k] - target[k]);
        if (d < best_d) best_d = d, best = static_cast<int>(v);
    }
    return best;
}

struct PlantedSources {
    RowMatrix maps;                     // n_sources x V, each max 1
    std::vector<std::vector<int>> seeds; // seed vertices per source
};

/// Gaussian blobs exp(-d^2 / (2 r^2)) in geodesic distance d around each seed.
inline PlantedSources plant_sources(const Mesh& mesh, const SynthConfig& cfg) {
    const auto graph = mesh.edge_graph();
    const auto sites = motor_sites();
    PlantedSources out;
    out.maps = RowMatrix::Zero(cfg.n_sources, static_cast<Eigen::Index>(mesh.vertex_count()));
    for (int s = 0; s < cfg.n_sources; ++s) {
        std::vector<int> seeds;
        for (const auto& site : sites[s]) {
            const int seed = nearest_vertex(mesh, site.hemisphere, site.direction);
            seeds.push_back(seed);
            std::vector<int> local(mesh.vertex_count(), -1);
            for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
                if (mesh.hemisphere[v] == site.hemisphere) local[v] = 1;
            const auto d = surface::dijkstra(graph, local, seed);
            for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
                if (std::isfinite(d[v]))
                    out.maps(s, v) = std::max(out.maps(s, v),
                                              std::exp(-d[v] * d[v] / (2 * cfg.blob_radius * cfg.blob_radius)));
        }
        out.seeds.push_back(seeds);
        out.maps.row(s) /= out.maps.row(s).maxCoeff();
    }
    return out;
}

struct GroundTruth {
    std::vector<std::string> names;
    RowMatrix maps;        // n_sources x V
    RowMatrix timecourses; // n_sources x T (design regressors)
};

struct SyntheticDataset {
    Mesh mesh;
    signal::TaskDesign design;
    std::vector<SubjectTimeseries> subjects;
    GroundTruth truth;
    signal::VoxelScaler scaler;
};

/// Seeded 70/10/20 train/val/test assignment.
inline std::vector<std::string> split_subjects(int n, std::uint64_t seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(seed, hash_name("split"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const int n_train = static_cast<int>(std::lround(0.7 * n));
    const int n_val = std::max(1, static_cast<int>(std::lround(0.1 * n)));
    std::vector<std::string> split(n);
    for (int i = 0; i < n; ++i) split[order[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    return split;
}

inline SyntheticDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    SyntheticDataset ds;
    ds.mesh = make_hemisphere_meshes(cfg);
    ds.design = cfg.resolved_design();
    const auto planted = plant_sources(ds.mesh, cfg);
    const RowMatrix regressors = signal::task_regressors(ds.design);
    const int T = ds.design.n_frames;
    const auto V = static_cast<Eigen::Index>(ds.mesh.vertex_count());

    ds.truth.maps = planted.maps;
    ds.truth.timecourses = regressors.topRows(cfg.n_sources);
    for (int s = 0; s < cfg.n_sources; ++s) ds.truth.names.push_back(ds.design.subtasks[s]);

    const auto split = split_subjects(cfg.n_subjects, cfg.seed);
    ds.subjects.resize(cfg.n_subjects);
    parallel_for(static_cast<std::size_t>(cfg.n_subjects), [&](std::size_t i) {
        SeededRng rng(cfg.seed, mix_stream(hash_name("subject"), i));
        RowMatrix tc(T, cfg.n_sources);
        for (int s = 0; s < cfg.n_sources; ++s) {
            const double amp = rng.uniform(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);
            tc.col(s) = amp * ds.truth.timecourses.row(s).transpose();
        }
        RowMatrix x = tc * planted.maps;
        if (cfg.mixing == Mixing::tanh) x = (1.5 * x.array()).tanh().matrix();
        if (cfg.noise_sigma > 0) {
            const double phi = cfg.ar1_coeff;
            const double stationary = cfg.noise_sigma / std::sqrt(1 - phi * phi);
            for (Eigen::Index v = 0; v < V; ++v) {
                double n = stationary * rng.normal();
                for (int t = 0; t < T; ++t) {
                    if (t > 0) n = phi * n + cfg.noise_sigma * rng.normal();
                    x(t, v) += n;
                }
            }
        }
        signal::preprocess_columns(x, ds.design.tr);
        auto& subj = ds.subjects[i];
        subj.id = "sub-" + std::string(i < 9 ? "00" : (i < 99 ? "0" : "")) + std::to_string(i + 1);
        subj.split = split[i];
        subj.values = std::move(x);
    });

    std::vector<const RowMatrix*> train;
    for (const auto& s : ds.subjects)
        if (s.split == "train") train.push_back(&s.values);
    ds.scaler = signal::VoxelScaler::fit(train);
    for (auto& s : ds.subjects) ds.scaler.apply(s.values);
    return ds;
}

} // namespace latentdyn::synth
