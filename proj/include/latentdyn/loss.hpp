#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "ops.hpp"
#include "tape.hpp"

namespace latentdyn::loss {

using diff::Tape;
using diff::Tensor;
using diff::Var;

/// sum_t mean_v (x - x_hat)^2 for [T x V] inputs; x is a constant target.
inline Var reconstruction_loss(const Tensor& x, Var x_hat) {
    const Tensor& y = x_hat.value();
    if (x.dims != y.dims || x.rank() != 2)
        throw ShapeError("reconstruction_loss: target " + diff::shape_string(x.dims) + " vs prediction " +
                         diff::shape_string(y.dims));
    const double inv_v = 1.0 / static_cast<double>(x.dims[1]);
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
    return x_hat.tape->record(
        Tensor::scalar(s * inv_v), {x_hat.id},
        [xi = x_hat.id, target = x.data, inv_v](Tape& t, std::size_t self) {
            const double g = t.out_grad(self)[0];
            const auto& yv = t.value(xi).data;
            if (auto* gy = t.accumulate(xi))
                for (std::size_t i = 0; i < yv.size(); ++i) (*gy)[i] += g * 2 * (yv[i] - target[i]) * inv_v;
        },
        "reconstruction_loss");
}

/// KL(N(mu, sigma^2) || N(0, 1)) averaged over all timesteps and factors.
inline Var kl_to_standard_normal(Var mu, Var log_sigma) {
    const Tensor& m = mu.value();
    const Tensor& l = log_sigma.value();
    if (m.dims != l.dims) throw ShapeError("kl_to_standard_normal: mu and log_sigma shapes differ");
    const double inv_n = 1.0 / static_cast<double>(m.size());
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        s += 0.5 * (m.data[i] * m.data[i] + std::exp(2 * l.data[i]) - 1 - 2 * l.data[i]);
    return mu.tape->record(
        Tensor::scalar(s * inv_n), {mu.id, log_sigma.id},
        [mi = mu.id, li = log_sigma.id, inv_n](Tape& t, std::size_t self) {
            const double g = t.out_grad(self)[0] * inv_n;
            if (auto* gm = t.accumulate(mi)) {
                const auto& mv = t.value(mi).data;
                for (std::size_t i = 0; i < mv.size(); ++i) (*gm)[i] += g * mv[i];
            }
            if (auto* gl = t.accumulate(li)) {
                const auto& lv = t.value(li).data;
                for (std::size_t i = 0; i < lv.size(); ++i) (*gl)[i] += g * (std::exp(2 * lv[i]) - 1);
            }
        },
        "kl_to_standard_normal");
}

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n, double* softmax) {
    const double mx = *std::max_element(v, v + n);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
    const double lse = mx + std::log(s);
    if (softmax)
        for (std::size_t i = 0; i < n; ++i) softmax[i] = std::exp(v[i] - lse);
    return lse;
}

} // namespace detail

/// Total correlation of one subject's sampled factors, with the aggregate
/// posterior estimated over the subject's own T timestep posteriors.
inline Var total_correlation(Var mu, Var log_sigma, Var z) {
    const Tensor& M = mu.value();
    const Tensor& L = log_sigma.value();
    const Tensor& Z = z.value();
    if (M.rank() != 2 || M.dims != L.dims || M.dims != Z.dims)
        throw ShapeError("total_correlation: mu, log_sigma and z must share a [T x F] shape");
    const std::size_t T = M.dims[0], F = M.dims[1];
    if (T < 2) throw ShapeError("total_correlation: needs at least 2 timesteps, got " + std::to_string(T));
    const double log_t = std::log(static_cast<double>(T));
    const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);

    // l[t][s][j] = log N(z_tj; mu_sj, sigma_sj)
    std::vector<double> l(T * T * F);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < T; ++s)
            for (std::size_t j = 0; j < F; ++j) {
                const double u = (Z.data[t * F + j] - M.data[s * F + j]) * std::exp(-L.data[s * F + j]);
                l[(t * T + s) * F + j] = -half_log_2pi - L.data[s * F + j] - 0.5 * u * u;
            }

    // G[t][s][j] = dTC / dl_tsj = (softmax_s(sum_j l)_ts - softmax_s(l_tsj)) / T
    std::vector<double> G(T * T * F);
    std::vector<double> joint(T), col(T), p(T), q(T);
    double tc = 0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t s = 0; s < T; ++s) {
            double acc = 0;
            for (std::size_t j = 0; j < F; ++j) acc += l[(t * T + s) * F + j];
            joint[s] = acc;
        }
        tc += detail::log_sum_exp(joint.data(), T, p.data()) - log_t;
        for (std::size_t j = 0; j < F; ++j) {
            for (std::size_t s = 0; s < T; ++s) col[s] = l[(t * T + s) * F + j];
            tc -= detail::log_sum_exp(col.data(), T, q.data()) - log_t;
            for (std::size_t s = 0; s < T; ++s) G[(t * T + s) * F + j] = (p[s] - q[s]) / static_cast<double>(T);
        }
    }
    tc /= static_cast<double>(T);

    return mu.tape->record(
        Tensor::scalar(tc), {mu.id, log_sigma.id, z.id},
        [mi = mu.id, li = log_sigma.id, zi = z.id, T, F, G = std::move(G)](Tape& tape, std::size_t self) {
            const double g = tape.out_grad(self)[0];
            const auto& Mv = tape.value(mi).data;
            const auto& Lv = tape.value(li).data;
            const auto& Zv = tape.value(zi).data;
            auto* gm = tape.accumulate(mi);
            auto* gl = tape.accumulate(li);
            auto* gz = tape.accumulate(zi);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t s = 0; s < T; ++s)
                    for (std::size_t j = 0; j < F; ++j) {
                        const double w = g * G[(t * T + s) * F + j];
                        if (w == 0.0) continue;
                        const double inv_var = std::exp(-2 * Lv[s * F + j]);
                        const double d = Zv[t * F + j] - Mv[s * F + j];
                        if (gz) (*gz)[t * F + j] -= w * d * inv_var;
                        if (gm) (*gm)[s * F + j] += w * d * inv_var;
                        if (gl) (*gl)[s * F + j] += w * (d * d * inv_var - 1);
                    }
        },
        "total_correlation");
}

struct LossBreakdown {
    double recon = 0;
    double kl = 0;
    double tc = 0;
    double beta = 0;
    double total = 0;
};

struct Objective {
    Var total;
    LossBreakdown parts;
};

/// recon + kl + beta * tc for one subject.
inline Objective objective(const Tensor& x, Var mu, Var log_sigma, Var z, Var x_hat, double beta) {
    if (beta < 0 || !std::isfinite(beta)) throw ConfigError("beta", "must be a non-negative number");
    Var recon = reconstruction_loss(x, x_hat);
    Var kl = kl_to_standard_normal(mu, log_sigma);
    Var tc = total_correlation(mu, log_sigma, z);
    Var total = diff::add(diff::add(recon, kl), diff::scale(tc, beta));
    LossBreakdown parts{recon.value()[0], kl.value()[0], tc.value()[0], beta, total.value()[0]};
    return {total, parts};
}

} // namespace latentdyn::loss
