#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "gradcheck.hpp"
#include "latentdyn/ops.hpp"
#include "latentdyn/spectral.hpp"
#include "latentdyn/synth.hpp"

using namespace latentdyn;
using namespace latentdyn::spectral;

namespace {

AdjacencyMatrix from_values(Eigen::MatrixXd v) {
    AdjacencyMatrix a;
    a.values = std::move(v);
    for (Eigen::Index i = 0; i < a.values.rows(); ++i) a.vertex_ids.push_back(static_cast<int>(i));
    return a;
}

Eigen::MatrixXd random_symmetric(int n, std::uint64_t seed) {
    SeededRng rng(seed, 0);
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
    return m;
}

} // namespace

TEST(Laplacian, CompleteGraphOfThree) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);
    a.diagonal().setZero();
    const auto L = graph_laplacian(from_values(a));
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(3);
    EXPECT_LT((L * one - one).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Laplacian, EmptyGraphIsNTimesIdentity) {
    const auto L = graph_laplacian(from_values(Eigen::MatrixXd::Zero(4, 4)));
    EXPECT_EQ((L - 4 * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Laplacian, Symmetric) {
    Eigen::MatrixXd a = random_symmetric(15, 2).cwiseAbs();
    a.diagonal().setZero();
    for (auto kind : {DegreeKind::vertex_count, DegreeKind::row_sum}) {
        const auto L = graph_laplacian(from_values(a), kind);
        EXPECT_LE((L - L.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Jacobi, DiagonalInput) {
    Eigen::MatrixXd L = Eigen::Vector3d(3, 1, 2).asDiagonal();
    const auto d = jacobi_eigen(L);
    EXPECT_DOUBLE_EQ(d.values(0), 1);
    EXPECT_DOUBLE_EQ(d.values(1), 2);
    const auto u = smallest_eigenvectors(L, 2);
    EXPECT_DOUBLE_EQ(std::abs(u(1, 0)), 1.0);
    EXPECT_DOUBLE_EQ(std::abs(u(2, 1)), 1.0);
}

TEST(Jacobi, ReconstructsRandomSymmetric) {
    const auto m = random_symmetric(20, 5);
    const auto d = jacobi_eigen(m);
    const Eigen::MatrixXd rec = d.vectors * d.values.asDiagonal() * d.vectors.transpose();
    EXPECT_LT((rec - m).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((d.vectors.transpose() * d.vectors - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
    EXPECT_LT((ref.eigenvalues() - d.values).cwiseAbs().maxCoeff(), 1e-9);
    for (int i = 1; i < 20; ++i) EXPECT_LE(d.values(i - 1), d.values(i));
}

TEST(Jacobi, RejectsNonSymmetric) {
    Eigen::MatrixXd m = random_symmetric(5, 1);
    m(0, 1) += 1;
    EXPECT_THROW(jacobi_eigen(m), ShapeError);
}

TEST(Jacobi, TwoComponentsGiveIndicatorSpan) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(7, 7);
    a.topLeftCorner(3, 3).setOnes();
    a.bottomRightCorner(4, 4).setOnes();
    a.diagonal().setZero();
    const auto adj = from_values(a);
    const auto d = jacobi_eigen(graph_laplacian(adj, DegreeKind::row_sum));
    EXPECT_NEAR(d.values(0), 0, 1e-12);
    EXPECT_NEAR(d.values(1), 0, 1e-12);
    EXPECT_GT(d.values(2), 1e-6);
    // both indicators lie in the span of the first two eigenvectors
    const Eigen::MatrixXd u = d.vectors.leftCols(2);
    Eigen::VectorXd ind = Eigen::VectorXd::Zero(7);
    ind.head(3).setOnes();
    EXPECT_LT((u * (u.transpose() * ind) - ind).norm(), 1e-10);
}

TEST(Jacobi, ZeroEigenvaluesCountComponents) {
    SeededRng rng(17, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const int comps = 1 + static_cast<int>(rng.below(4));
        std::vector<int> sizes;
        int n = 0;
        for (int c = 0; c < comps; ++c) n += sizes.emplace_back(2 + static_cast<int>(rng.below(5)));
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        int off = 0;
        for (int s : sizes) {
            for (int i = 0; i < s; ++i)
                for (int j = i + 1; j < s; ++j) a(off + i, off + j) = a(off + j, off + i) = rng.uniform(0.1, 1.0);
            off += s;
        }
        const auto d = jacobi_eigen(graph_laplacian(from_values(a), DegreeKind::row_sum));
        int zeros = 0;
        for (Eigen::Index i = 0; i < d.values.size(); ++i) zeros += std::abs(d.values(i)) < 1e-9;
        EXPECT_EQ(zeros, comps);
    }
}

TEST(Cluster, TwoCliques) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(10, 10);
    a.topLeftCorner(4, 4).setOnes();
    a.bottomRightCorner(6, 6).setOnes();
    a.diagonal().setZero();
    const auto ca = spectral_cluster(from_values(a), 2, 1);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(ca.assignment, {0, 0, 0, 0, 1, 1, 1, 1, 1, 1}), 1.0);
    EXPECT_EQ(ca.max_cluster_size, 6);
}

TEST(Cluster, ThreeBlobsOnALine) {
    SeededRng rng(4, 0);
    std::vector<double> x;
    std::vector<int> truth;
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 20; ++i) {
            x.push_back(10.0 * b + rng.normal());
            truth.push_back(b);
        }
    const int n = static_cast<int>(x.size());
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = std::exp(-(x[i] - x[j]) * (x[i] - x[j]) / 8.0);
    a.diagonal().setZero();
    const auto ca = spectral_cluster(from_values(a), 3, 7);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(ca.assignment, truth), 1.0);
}

TEST(Cluster, DeterministicAndDenseIds) {
    synth::SynthConfig cfg;
    cfg.vertices_per_hemisphere = 162;
    const auto mesh = synth::make_hemisphere_meshes(cfg);
    auto structural = [&](Hemisphere h) {
        return surface::structural_adjacency(surface::geodesic_distances(mesh, h));
    };
    const auto a = cluster_hemispheres(mesh, 8, 42, structural);
    const auto b = cluster_hemispheres(mesh, 8, 42, structural);
    EXPECT_EQ(a.assignment, b.assignment);
    for (auto h : {Hemisphere::left, Hemisphere::right}) {
        const auto sizes = a.sizes(mesh.vertex_ids(h));
        ASSERT_EQ(sizes.size(), 8u);
        for (int s : sizes) EXPECT_GT(s, 0);
        EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()), a.max_cluster_size);
    }
}

TEST(Cluster, RejectsKAtLeastN) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);
    a.diagonal().setZero();
    EXPECT_THROW(spectral_cluster(from_values(a), 3, 0), ConfigError);
}

TEST(Cluster, JsonRoundTrip) {
    ClusterAssignment ca;
    ca.k = 2;
    ca.assignment = {0, 1, 1, 0};
    ca.mode = AdjacencyKind::functional;
    ca.seed = 9;
    ca.max_cluster_size = 2;
    const nlohmann::json j = ca;
    EXPECT_EQ(j["mode"], "functional");
    const auto back = j.get<ClusterAssignment>();
    EXPECT_EQ(back.assignment, ca.assignment);
    EXPECT_EQ(back.mode, ca.mode);
    EXPECT_EQ(back.seed, 9u);
}

TEST(AdjustedRand, PermutationInvariantAndChanceNearZero) {
    EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1, 2}, {2, 2, 0, 0, 1}), 1.0);
    SeededRng rng(2, 0);
    std::vector<int> a(2000), b(2000);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<int>(rng.below(4)), b[i] = static_cast<int>(rng.below(4));
    EXPECT_NEAR(adjusted_rand_index(a, b), 0.0, 0.01);
}

namespace {

// clusters {0:[v0,v1,v2], 1:[v3,v4]} on the left, {0:[v5], 1:[v6]} on the right
std::pair<surface::Mesh, ClusterAssignment> small_layout() {
    surface::Mesh mesh;
    mesh.vertices.assign(7, {0, 0, 0});
    mesh.hemisphere = {Hemisphere::left,  Hemisphere::left,  Hemisphere::left, Hemisphere::left,
                       Hemisphere::left,  Hemisphere::right, Hemisphere::right};
    ClusterAssignment ca;
    ca.k = 2;
    ca.assignment = {0, 0, 0, 1, 1, 0, 1};
    return {mesh, ca};
}

} // namespace

TEST(Patch, ExampleLayout) {
    const auto [mesh, ca] = small_layout();
    const auto layout = PatchLayout::build(mesh, ca);
    Eigen::VectorXd x(7);
    x << 1, 2, 3, 4, 5, 6, 7;
    const auto p = patchify(x, layout);
    RowMatrix expect(2, 3);
    expect << 1, 2, 3, 4, 5, 0;
    EXPECT_EQ(p[0], expect);
    RowMatrix right(2, 3);
    right << 6, 0, 0, 7, 0, 0;
    EXPECT_EQ(p[1], right);
}

TEST(Patch, RoundTripExact) {
    synth::SynthConfig cfg;
    cfg.vertices_per_hemisphere = 42;
    const auto mesh = synth::make_hemisphere_meshes(cfg);
    auto structural = [&](Hemisphere h) {
        return surface::structural_adjacency(surface::geodesic_distances(mesh, h));
    };
    const auto ca = cluster_hemispheres(mesh, 5, 3, structural);
    const auto layout = PatchLayout::build(mesh, ca);
    SeededRng rng(1, 0);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(mesh.vertex_count()));
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
        EXPECT_EQ(unpatchify(patchify(x, layout), layout), x);
    }
}

TEST(Patch, LengthMismatchThrows) {
    const auto [mesh, ca] = small_layout();
    const auto layout = PatchLayout::build(mesh, ca);
    EXPECT_THROW(patchify(Eigen::VectorXd::Zero(6), layout), ShapeError);
    auto bad = ca;
    bad.assignment.pop_back();
    EXPECT_THROW(PatchLayout::build(mesh, bad), ShapeError);
}

TEST(Patch, GradientOnlyAtRealVertices) {
    const auto [mesh, ca] = small_layout();
    const auto layout = PatchLayout::build(mesh, ca);
    SeededRng rng(3, 0);
    diff::Tensor x = diff::Tensor::zeros({2, 7});
    for (auto& v : x.data) v = rng.normal();
    diff::Tensor w = diff::Tensor::zeros({2, 6});
    for (auto& v : w.data) v = rng.normal();
    const auto idx = layout.patch_index[0];
    auto f = [&](diff::Tape&, const std::vector<diff::Var>& in) {
        return diff::sum_all(diff::square(diff::mul(diff::gather_cols(in[0], idx), in[1])));
    };
    const auto res = latentdyn::testing::grad_check(f, {x, w});
    EXPECT_LT(res.max_rel_err, 1e-6);

    diff::Tape tape;
    auto xv = tape.param(x);
    tape.backward(f(tape, {xv, tape.constant(w)}));
    const auto g = tape.grad(xv);
    for (int r = 0; r < 2; ++r) {
        EXPECT_EQ(g[r * 7 + 5], 0.0); // right-hemisphere vertices are not in the left layout
        EXPECT_EQ(g[r * 7 + 6], 0.0);
        for (int c = 0; c < 5; ++c) EXPECT_NE(g[r * 7 + c], 0.0);
    }

    // pad slots of a patch tensor receive no gradient through unpatchify
    diff::Tape t2;
    diff::Tensor patches = diff::Tensor::zeros({1, static_cast<std::size_t>(2 * layout.hemisphere_width())});
    for (auto& v : patches.data) v = rng.normal();
    auto pv = t2.param(patches);
    t2.backward(diff::sum_all(diff::square(diff::gather_cols(pv, layout.vertex_index))));
    const auto gp = t2.grad(pv);
    for (int h = 0; h < 2; ++h)
        for (long i = 0; i < layout.hemisphere_width(); ++i)
            if (layout.patch_index[h][i] < 0) {
                EXPECT_EQ(gp[h * layout.hemisphere_width() + i], 0.0);
            }
}
