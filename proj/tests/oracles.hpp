#pragma once

// Independent reference computations shared by unit tests and the acceptance suite.

#include <cmath>
#include <vector>

#include "latentdyn/loss.hpp"
#include "latentdyn/rng.hpp"

namespace latentdyn::testing {

/// TC estimate for fixed posterior parameters and samples, evaluated on a fresh tape.
inline double tc_value(const diff::Tensor& mu, const diff::Tensor& log_sigma, const diff::Tensor& z) {
    diff::Tape tape;
    return loss::total_correlation(tape.constant(mu), tape.constant(log_sigma), tape.constant(z)).value()[0];
}

/// Every timestep posterior is N(0, 1); z drawn from it.
inline double tc_factorized_case(std::size_t T, std::size_t F, std::uint64_t seed) {
    SeededRng rng(seed, 1);
    diff::Tensor mu = diff::Tensor::zeros({T, F}), ls = diff::Tensor::zeros({T, F}), z = diff::Tensor::zeros({T, F});
    for (auto& v : z.data) v = rng.normal();
    return tc_value(mu, ls, z);
}

/// Means on the line mu_2 = mu_1 spread over time, narrow posteriors.
inline double tc_correlated_case(std::size_t T, std::uint64_t seed, double sigma = 0.1) {
    SeededRng rng(seed, 2);
    diff::Tensor mu = diff::Tensor::zeros({T, 2}), ls = diff::Tensor::filled({T, 2}, std::log(sigma)),
                 z = diff::Tensor::zeros({T, 2});
    for (std::size_t t = 0; t < T; ++t) {
        const double m = rng.normal();
        mu.at(t, 0) = mu.at(t, 1) = m;
        z.at(t, 0) = m + sigma * rng.normal();
        z.at(t, 1) = m + sigma * rng.normal();
    }
    return tc_value(mu, ls, z);
}

/// Toy discrete model: x uniform over n_x items, z = (z1, z2) with K levels each,
/// arbitrary (non-factorized) q(z|x), factorized prior p(z) = p1(z1) p2(z2).
struct DiscreteToy {
    int n_x = 6;
    int K = 4;
    std::vector<double> q;      // q[x][z1][z2]
    std::vector<double> prior1; // p1(z1)
    std::vector<double> prior2; // p2(z2)

    double qzx(int x, int a, int b) const { return q[(x * K + a) * K + b]; }

    static DiscreteToy make(std::uint64_t seed) {
        DiscreteToy toy;
        SeededRng rng(seed, 3);
        toy.q.resize(static_cast<std::size_t>(toy.n_x * toy.K * toy.K));
        for (int x = 0; x < toy.n_x; ++x) {
            double s = 0;
            for (int i = 0; i < toy.K * toy.K; ++i) {
                // peaked, correlated conditionals
                const int a = i / toy.K, b = i % toy.K;
                const double w = std::exp(-0.7 * std::abs(a - b) - 0.5 * std::abs(a - x % toy.K)) * rng.uniform(0.5, 1.5);
                toy.q[x * toy.K * toy.K + i] = w;
                s += w;
            }
            for (int i = 0; i < toy.K * toy.K; ++i) toy.q[x * toy.K * toy.K + i] /= s;
        }
        auto normalized = [&](std::vector<double> v) {
            double s = 0;
            for (double e : v) s += e;
            for (double& e : v) e /= s;
            return v;
        };
        toy.prior1 = normalized({0.1, 0.2, 0.3, 0.4});
        toy.prior2 = normalized({0.25, 0.25, 0.3, 0.2});
        return toy;
    }

    double qz(int a, int b) const {
        double s = 0;
        for (int x = 0; x < n_x; ++x) s += qzx(x, a, b);
        return s / n_x;
    }
    double qz1(int a) const {
        double s = 0;
        for (int b = 0; b < K; ++b) s += qz(a, b);
        return s;
    }
    double qz2(int b) const {
        double s = 0;
        for (int a = 0; a < K; ++a) s += qz(a, b);
        return s;
    }
};

struct Decomposition {
    double expected_kl = 0;    // E_x KL(q(z|x) || p(z))
    double index_code_mi = 0;  // I(x; z)
    double total_corr = 0;     // KL(q(z) || q(z1) q(z2))
    double dimwise_kl = 0;     // sum_j KL(q(z_j) || p(z_j))
    double sum() const { return index_code_mi + total_corr + dimwise_kl; }
};

/// All four quantities by exhaustive enumeration.
inline Decomposition exact_decomposition(const DiscreteToy& toy) {
    Decomposition d;
    for (int x = 0; x < toy.n_x; ++x)
        for (int a = 0; a < toy.K; ++a)
            for (int b = 0; b < toy.K; ++b) {
                const double w = toy.qzx(x, a, b) / toy.n_x;
                if (w == 0) continue;
                d.expected_kl += w * std::log(toy.qzx(x, a, b) / (toy.prior1[a] * toy.prior2[b]));
                d.index_code_mi += w * std::log(toy.qzx(x, a, b) / toy.qz(a, b));
                d.total_corr += w * std::log(toy.qz(a, b) / (toy.qz1(a) * toy.qz2(b)));
                d.dimwise_kl += w * (std::log(toy.qz1(a) / toy.prior1[a]) + std::log(toy.qz2(b) / toy.prior2[b]));
            }
    return d;
}

/// Sample-average estimate of each term from (x, z) ~ q(x) q(z|x).
inline Decomposition monte_carlo_decomposition(const DiscreteToy& toy, std::size_t samples, std::uint64_t seed) {
    SeededRng rng(seed, 4);
    Decomposition d;
    for (std::size_t n = 0; n < samples; ++n) {
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(toy.n_x)));
        double r = rng.uniform();
        int a = toy.K - 1, b = toy.K - 1;
        for (int i = 0; i < toy.K * toy.K; ++i) {
            r -= toy.qzx(x, i / toy.K, i % toy.K);
            if (r < 0) {
                a = i / toy.K;
                b = i % toy.K;
                break;
            }
        }
        d.expected_kl += std::log(toy.qzx(x, a, b) / (toy.prior1[a] * toy.prior2[b]));
        d.index_code_mi += std::log(toy.qzx(x, a, b) / toy.qz(a, b));
        d.total_corr += std::log(toy.qz(a, b) / (toy.qz1(a) * toy.qz2(b)));
        d.dimwise_kl += std::log(toy.qz1(a) / toy.prior1[a]) + std::log(toy.qz2(b) / toy.prior2[b]);
    }
    const double inv = 1.0 / static_cast<double>(samples);
    d.expected_kl *= inv;
    d.index_code_mi *= inv;
    d.total_corr *= inv;
    d.dimwise_kl *= inv;
    return d;
}

} // namespace latentdyn::testing
