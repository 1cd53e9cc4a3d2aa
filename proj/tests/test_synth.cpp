#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "latentdyn/stats.hpp"
#include "latentdyn/synth.hpp"

using namespace latentdyn;
using namespace latentdyn::synth;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.vertices_per_hemisphere = 162;
    cfg.n_subjects = 6;
    return cfg;
}

} // namespace

TEST(Icosphere, EulerCharacteristic) {
    for (int level = 0; level <= 3; ++level) {
        const auto [v, f] = icosphere(level);
        std::set<std::pair<int, int>> edges;
        for (const auto& t : f)
            for (int k = 0; k < 3; ++k) edges.insert(std::minmax(t[k], t[(k + 1) % 3]));
        EXPECT_EQ(static_cast<long>(v.size()) - static_cast<long>(edges.size()) + static_cast<long>(f.size()), 2);
        EXPECT_EQ(v.size(), 10u * (1u << (2 * level)) + 2);
    }
}

TEST(Meshes, Level3Counts) {
    const auto mesh = make_hemisphere_meshes(SynthConfig{});
    EXPECT_EQ(mesh.vertex_count(), 2u * 642u);
    EXPECT_EQ(mesh.triangles.size(), 2u * 1280u);
    EXPECT_EQ(mesh.vertex_ids(surface::Hemisphere::left).size(), 642u);
}

TEST(Meshes, OutwardOrientation) {
    const auto mesh = make_hemisphere_meshes(small_config());
    for (const auto& t : mesh.triangles) {
        const auto& a = mesh.vertices[t[0]];
        const auto& b = mesh.vertices[t[1]];
        const auto& c = mesh.vertices[t[2]];
        const double cx = mesh.hemisphere[t[0]] == surface::Hemisphere::left ? -(kSphereRadius + kMidlineGap)
                                                                              : kSphereRadius + kMidlineGap;
        const std::array<double, 3> u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        const std::array<double, 3> w{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        const std::array<double, 3> n{u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]};
        const double out = n[0] * (a[0] - cx) + n[1] * a[1] + n[2] * a[2];
        EXPECT_GT(out, 0.0);
    }
}

TEST(Meshes, HemispheresDisconnected) {
    const auto mesh = make_hemisphere_meshes(small_config());
    const auto graph = mesh.edge_graph();
    for (std::size_t v = 0; v < graph.size(); ++v)
        for (const auto& [nb, w] : graph[v]) EXPECT_EQ(mesh.hemisphere[v], mesh.hemisphere[nb]);
    EXPECT_NO_THROW(surface::geodesic_distances(mesh, surface::Hemisphere::left));
    EXPECT_NO_THROW(surface::geodesic_distances(mesh, surface::Hemisphere::right));
}

TEST(Config, RejectsNonIcosphereCount) {
    SynthConfig cfg;
    cfg.vertices_per_hemisphere = 500;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.noise_sigma = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.n_sources = 6;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    SynthConfig cfg = small_config();
    cfg.mixing = Mixing::tanh;
    cfg.noise_sigma = 0.3;
    const nlohmann::json j = cfg;
    const auto back = j.get<SynthConfig>();
    EXPECT_EQ(back.mixing, Mixing::tanh);
    EXPECT_EQ(back.vertices_per_hemisphere, 162);
    EXPECT_DOUBLE_EQ(back.noise_sigma, 0.3);
    EXPECT_THROW((nlohmann::json{{"mixing", "relu"}}.get<SynthConfig>()), ConfigError);
}

TEST(Design, TwoBlocksEachNoImmediateRepeat) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto d = make_motor_design(2.0, 128, seed);
        std::vector<int> count(5, 0);
        for (std::size_t i = 0; i < d.blocks.size(); ++i) {
            ++count[d.blocks[i].subtask];
            if (i > 0) {
                EXPECT_NE(d.blocks[i].subtask, d.blocks[i - 1].subtask);
            }
        }
        for (int c : count) EXPECT_EQ(c, 2);
        EXPECT_LE(d.blocks.back().onset + d.blocks.back().duration, 128 * 2.0);
    }
}

TEST(Design, RegressorsNearOrthogonal) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = signal::task_regressors(make_motor_design(2.0, 128, seed));
        for (int a = 0; a < 5; ++a)
            for (int b = a + 1; b < 5; ++b) {
                const Eigen::VectorXd x = r.row(a).transpose(), y = r.row(b).transpose();
                EXPECT_LT(std::abs(pearson(x, y)), 0.3) << "seed " << seed << " pair " << a << "," << b;
            }
    }
}

TEST(Plant, SeedValueAndRadius) {
    const auto cfg = SynthConfig{};
    const auto mesh = make_hemisphere_meshes(cfg);
    const auto planted = plant_sources(mesh, cfg);
    const auto graph = mesh.edge_graph();
    for (int s = 0; s < cfg.n_sources; ++s) {
        ASSERT_FALSE(planted.seeds[s].empty());
        for (int seed : planted.seeds[s]) EXPECT_DOUBLE_EQ(planted.maps(s, seed), 1.0);
        EXPECT_DOUBLE_EQ(planted.maps.row(s).maxCoeff(), 1.0);
        // value follows the Gaussian profile in geodesic distance from the nearest seed
        const int seed = planted.seeds[s][0];
        std::vector<int> local(mesh.vertex_count(), -1);
        for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
            if (mesh.hemisphere[v] == mesh.hemisphere[seed]) local[v] = 1;
        const auto d = surface::dijkstra(graph, local, seed);
        for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
            if (std::isfinite(d[v]) && std::abs(d[v] - cfg.blob_radius) < 2.0) {
                EXPECT_NEAR(planted.maps(s, v), std::exp(-d[v] * d[v] / (2 * cfg.blob_radius * cfg.blob_radius)),
                            1e-12);
            }
    }
    EXPECT_NEAR(std::exp(-0.5), 0.6065, 1e-4);
}

TEST(Plant, HandsOnOppositeHemispheres) {
    const auto cfg = SynthConfig{};
    const auto mesh = make_hemisphere_meshes(cfg);
    const auto planted = plant_sources(mesh, cfg);
    EXPECT_EQ(planted.maps.row(0).cwiseProduct(planted.maps.row(1)).cwiseAbs().maxCoeff(), 0.0);
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        if (mesh.hemisphere[v] == surface::Hemisphere::left) {
            EXPECT_EQ(planted.maps(0, v), 0.0);
        } else {
            EXPECT_EQ(planted.maps(1, v), 0.0);
        }
    }
    // tongue is bilateral
    EXPECT_EQ(planted.seeds[4].size(), 2u);
    EXPECT_NE(mesh.hemisphere[planted.seeds[4][0]], mesh.hemisphere[planted.seeds[4][1]]);
}

TEST(Generate, NoiselessPeakTracksRegressor) {
    auto cfg = small_config();
    cfg.noise_sigma = 0;
    cfg.amplitude_jitter = 0.2;
    const auto ds = generate(cfg);
    const auto planted = plant_sources(ds.mesh, cfg);
    // compare against the regressor passed through the same preprocessing
    RowMatrix reg = ds.truth.timecourses.transpose();
    signal::preprocess_columns(reg, ds.design.tr);
    for (const auto& subj : ds.subjects)
        for (int s = 0; s < cfg.n_sources; ++s) {
            const int seed = planted.seeds[s][0];
            const Eigen::VectorXd x = subj.values.col(seed);
            const Eigen::VectorXd r = reg.col(s);
            EXPECT_GT(std::abs(pearson(x, r)), 0.99) << subj.id << " source " << s;
        }
}

TEST(Generate, HeavyNoiseWashesOutCorrelation) {
    auto cfg = small_config();
    cfg.noise_sigma = 1e4;
    const auto ds = generate(cfg);
    const auto planted = plant_sources(ds.mesh, cfg);
    double total = 0;
    int n = 0;
    for (const auto& subj : ds.subjects)
        for (int s = 0; s < cfg.n_sources; ++s) {
            const Eigen::VectorXd x = subj.values.col(planted.seeds[s][0]);
            const Eigen::VectorXd r = ds.truth.timecourses.row(s).transpose();
            total += std::abs(pearson(x, r));
            ++n;
        }
    EXPECT_LT(total / n, 0.15);
}

TEST(Generate, DeterministicAndInRange) {
    auto cfg = small_config();
    const auto a = generate(cfg);
    const auto b = generate(cfg);
    ASSERT_EQ(a.subjects.size(), b.subjects.size());
    for (std::size_t i = 0; i < a.subjects.size(); ++i) {
        EXPECT_EQ(a.subjects[i].id, b.subjects[i].id);
        EXPECT_EQ(a.subjects[i].split, b.subjects[i].split);
        EXPECT_TRUE((a.subjects[i].values.array() == b.subjects[i].values.array()).all());
        EXPECT_LE(a.subjects[i].values.cwiseAbs().maxCoeff(), 1.0);
    }
    cfg.seed = 43;
    const auto c = generate(cfg);
    EXPECT_FALSE((a.subjects[0].values.array() == c.subjects[0].values.array()).all());
}

TEST(Generate, TanhMixingBoundsSignal) {
    auto cfg = small_config();
    cfg.noise_sigma = 0;
    cfg.mixing = Mixing::tanh;
    cfg.n_subjects = 3;
    EXPECT_NO_THROW(generate(cfg));
}

TEST(Split, SeventyTenTwenty) {
    const auto split = split_subjects(60, 42);
    EXPECT_EQ(std::count(split.begin(), split.end(), "train"), 42);
    EXPECT_EQ(std::count(split.begin(), split.end(), "val"), 6);
    EXPECT_EQ(std::count(split.begin(), split.end(), "test"), 12);
    EXPECT_EQ(split, split_subjects(60, 42));
}
