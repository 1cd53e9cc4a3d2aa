#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace latentdyn::trainer {

using model::ParamSet;

struct TrainConfig {
    int batch_size = 8;
    double lr = 5e-3;
    double weight_decay = 1e-4;
    bool decoupled_weight_decay = true;
    double adam_eps = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int epochs = 150;
    std::uint64_t seed = 42;
    double plateau_factor = 0.95;
    int plateau_patience = 6;
    double plateau_threshold = 1e-6;
    double min_lr = 1e-5;
    double gru_l2 = 1e-4;
    double clip_norm = 100.0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size", "must be a positive integer");
        if (epochs < 1) throw ConfigError("epochs", "must be a positive integer");
        if (plateau_patience < 1) throw ConfigError("plateau_patience", "must be a positive integer");
        auto positive = [](double v, const char* field) {
            if (!(v > 0) || !std::isfinite(v)) throw ConfigError(field, "must be positive");
        };
        positive(lr, "lr");
        positive(adam_eps, "adam_eps");
        positive(min_lr, "min_lr");
        positive(clip_norm, "clip_norm");
        if (weight_decay < 0) throw ConfigError("weight_decay", "must be non-negative");
        if (gru_l2 < 0) throw ConfigError("gru_l2", "must be non-negative");
        if (plateau_threshold < 0) throw ConfigError("plateau_threshold", "must be non-negative");
        if (!(adam_beta1 >= 0 && adam_beta1 < 1)) throw ConfigError("adam_betas", "beta1 must lie in [0, 1)");
        if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ConfigError("adam_betas", "beta2 must lie in [0, 1)");
        if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau_factor", "must lie in (0, 1)");
        if (lr < min_lr) throw ConfigError("lr", "must be at least min_lr");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"decoupled_weight_decay", c.decoupled_weight_decay},
                       {"adam_eps", c.adam_eps},
                       {"adam_betas", {c.adam_beta1, c.adam_beta2}},
                       {"epochs", c.epochs},
                       {"seed", c.seed},
                       {"plateau_factor", c.plateau_factor},
                       {"plateau_patience", c.plateau_patience},
                       {"plateau_threshold", c.plateau_threshold},
                       {"min_lr", c.min_lr},
                       {"gru_l2", c.gru_l2},
                       {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.decoupled_weight_decay = j.value("decoupled_weight_decay", d.decoupled_weight_decay);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    if (j.contains("adam_betas")) {
        const auto& b = j.at("adam_betas");
        if (!b.is_array() || b.size() != 2) throw ConfigError("adam_betas", "expects [beta1, beta2]");
        c.adam_beta1 = b[0].get<double>();
        c.adam_beta2 = b[1].get<double>();
    }
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
    c.plateau_factor = j.value("plateau_factor", d.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", d.plateau_patience);
    c.plateau_threshold = j.value("plateau_threshold", d.plateau_threshold);
    c.min_lr = j.value("min_lr", d.min_lr);
    c.gru_l2 = j.value("gru_l2", d.gru_l2);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.validate();
}

/// Gradient buffers laid out like a ParamSet.
using Gradients = std::vector<std::vector<double>>;

inline Gradients zero_gradients(const ParamSet& p) {
    Gradients g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i].assign(p.tensor(i).size(), 0.0);
    return g;
}

inline double global_norm(const Gradients& g) {
    double s = 0;
    for (const auto& v : g)
        for (double e : v) s += e * e;
    return std::sqrt(s);
}

/// Rescales g in place so its global norm is at most max_norm; returns the norm before clipping.
inline double clip_global_norm(Gradients& g, double max_norm) {
    const double n = global_norm(g);
    if (n > max_norm) {
        const double s = max_norm / n;
        for (auto& v : g)
            for (double& e : v) e *= s;
    }
    return n;
}

struct AdamState {
    long step = 0;
    Gradients m;
    Gradients v;

    bool operator==(const AdamState&) const = default;
};

inline AdamState adam_init(const ParamSet& p) { return {0, zero_gradients(p), zero_gradients(p)}; }

/// One Adam update with bias correction; eps sits outside the square root.
inline void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, const TrainConfig& cfg, double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ShapeError("adam_step: gradient/state layout does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params.tensor(i).data;
        if (grads[i].size() != theta.size()) throw ShapeError("adam_step: gradient size mismatch for " + params.name(i));
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            double g = grads[i][k];
            if (!cfg.decoupled_weight_decay) g += cfg.weight_decay * theta[k];
            m[k] = cfg.adam_beta1 * m[k] + (1 - cfg.adam_beta1) * g;
            v[k] = cfg.adam_beta2 * v[k] + (1 - cfg.adam_beta2) * g * g;
            const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
            const double decay = cfg.decoupled_weight_decay ? cfg.weight_decay * theta[k] : 0.0;
            theta[k] -= lr * (update + decay);
        }
    }
}

/// Reduce-on-plateau on the validation loss.
class PlateauScheduler {
  public:
    explicit PlateauScheduler(const TrainConfig& cfg)
        : lr_(cfg.lr), factor_(cfg.plateau_factor), patience_(cfg.plateau_patience),
          threshold_(cfg.plateau_threshold), min_lr_(cfg.min_lr) {}

    /// Records one epoch's validation loss and returns the learning rate for the next epoch.
    double step(double val_loss) {
        if (val_loss < best_ - threshold_) {
            best_ = val_loss;
            bad_epochs_ = 0;
        } else if (++bad_epochs_ >= patience_) {
            // the streak is not reset: every further stalled epoch reduces again
            lr_ = std::max(lr_ * factor_, min_lr_);
        }
        return lr_;
    }

    double lr() const { return lr_; }

  private:
    double lr_;
    double factor_;
    int patience_;
    double threshold_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_recon = 0;
    double train_kl = 0;
    double train_tc = 0;
    double train_total = 0;
    double val_total = 0;
};

inline const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols{"epoch",    "lr",          "train_recon", "train_kl",
                                               "train_tc", "train_total", "val_total"};
    return cols;
}

struct TrainResult {
    ParamSet params;
    std::vector<EpochMetrics> history;
};

/// sum of squares of the recurrent matrices, and its gradient added into `grads`.
inline double recurrent_penalty(const ParamSet& p, double coeff, Gradients* grads) {
    double s = 0;
    for (const auto& name : model::recurrent_weight_names()) {
        if (!p.contains(name)) continue;
        const auto& w = p.at(name).data;
        std::size_t idx = 0;
        while (p.name(idx) != name) ++idx;
        for (std::size_t k = 0; k < w.size(); ++k) {
            s += w[k] * w[k];
            if (grads) (*grads)[idx][k] += 2 * coeff * w[k];
        }
    }
    return coeff * s;
}

struct SubjectPass {
    loss::LossBreakdown parts;
    Gradients grads;
};

/// Objective and parameter gradients for one subject; z drawn with `rng`.
inline SubjectPass subject_gradient(const ParamSet& params, const model::ModelConfig& cfg, const model::Geometry& g,
                                    const RowMatrix& x, SeededRng& rng) {
    diff::Tape tape;
    model::Bound b(tape, params, true);
    const auto xt = model::to_tensor(x);
    const auto out = model::forward(b, cfg, g, tape.constant(xt), &rng);
    auto obj = loss::objective(xt, out.mu, out.log_sigma, out.z, out.x_hat, cfg.beta);
    SubjectPass pass{obj.parts, {}};
    if (!std::isfinite(obj.parts.total)) return pass;
    tape.backward(obj.total);
    pass.grads.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) pass.grads[i] = tape.grad(b[params.name(i)]);
    return pass;
}

/// Objective evaluated at the posterior means (no sampling, no updates).
inline loss::LossBreakdown evaluate_subject(const ParamSet& params, const model::ModelConfig& cfg,
                                            const model::Geometry& g, const RowMatrix& x) {
    diff::Tape tape;
    model::Bound b(tape, params, false);
    const auto xt = model::to_tensor(x);
    const auto out = model::forward(b, cfg, g, tape.constant(xt), nullptr);
    return loss::objective(xt, out.mu, out.log_sigma, out.z, out.x_hat, cfg.beta).parts;
}

inline double mean_validation_loss(const ParamSet& params, const model::ModelConfig& cfg, const model::Geometry& g,
                                   const std::vector<const SubjectTimeseries*>& subjects) {
    std::vector<double> totals(subjects.size());
    parallel_for(subjects.size(),
                 [&](std::size_t i) { totals[i] = evaluate_subject(params, cfg, g, subjects[i]->values).total; });
    return std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(totals.size());
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training; the returned parameters are those after the final epoch.
inline TrainResult train(const std::vector<const SubjectTimeseries*>& train_set,
                         const std::vector<const SubjectTimeseries*>& val_set, const model::Geometry& geom,
                         const model::ModelConfig& mcfg, const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
    mcfg.validate();
    tcfg.validate();
    if (train_set.empty()) throw DataError("train: no training subjects");
    for (const auto* s : train_set)
        if (static_cast<std::size_t>(s->vertices()) != geom.n_vertices)
            throw ShapeError("train: subject " + s->id + " has " + std::to_string(s->vertices()) +
                             " vertices, model expects " + std::to_string(geom.n_vertices));
    if (val_set.empty()) log_warning("train: no validation subjects; the scheduler follows the training loss");

    TrainResult result{model::init_params(mcfg, model::ParamShapes::of(geom), tcfg.seed), {}};
    ParamSet& params = result.params;
    AdamState adam = adam_init(params);
    PlateauScheduler scheduler(tcfg);
    double lr = tcfg.lr;

    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        SeededRng shuffle(tcfg.seed, mix_stream(hash_name("shuffle"), static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(tcfg.batch_size));
            std::vector<SubjectPass> passes(n);
            parallel_for(n, [&](std::size_t i) {
                const std::size_t subject = order[start + i];
                SeededRng rng(tcfg.seed, mix_stream(mix_stream(hash_name("reparam"), static_cast<std::uint64_t>(epoch)),
                                                    static_cast<std::uint64_t>(subject)));
                passes[i] = subject_gradient(params, mcfg, geom, train_set[subject]->values, rng);
            });

            Gradients grads = zero_gradients(params);
            loss::LossBreakdown batch;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& p = passes[i];
                if (!std::isfinite(p.parts.total)) {
                    std::ostringstream msg;
                    msg << "non-finite loss at epoch " << epoch << ", batch starting at " << start << ", subject "
                        << train_set[order[start + i]]->id << ": recon " << p.parts.recon << ", kl " << p.parts.kl
                        << ", tc " << p.parts.tc << ", lr " << lr << ", gradient norm before this batch "
                        << (adam.step ? std::to_string(global_norm(adam.m)) : std::string("n/a"));
                    throw NumericalError(msg.str());
                }
                for (std::size_t k = 0; k < grads.size(); ++k)
                    for (std::size_t e = 0; e < grads[k].size(); ++e) grads[k][e] += p.grads[k][e] / static_cast<double>(n);
                batch.recon += p.parts.recon;
                batch.kl += p.parts.kl;
                batch.tc += p.parts.tc;
                batch.total += p.parts.total;
            }
            recurrent_penalty(params, tcfg.gru_l2, &grads);
            clip_global_norm(grads, tcfg.clip_norm);
            adam_step(params, grads, adam, tcfg, lr);

            em.train_recon += batch.recon;
            em.train_kl += batch.kl;
            em.train_tc += batch.tc;
            em.train_total += batch.total;
        }
        const double inv = 1.0 / static_cast<double>(train_set.size());
        em.train_recon *= inv;
        em.train_kl *= inv;
        em.train_tc *= inv;
        em.train_total *= inv;
        em.val_total = val_set.empty() ? em.train_total : mean_validation_loss(params, mcfg, geom, val_set);
        if (!std::isfinite(em.val_total))
            throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        lr = scheduler.step(em.val_total);

        result.history.push_back(em);
        if (on_epoch) on_epoch(em);
        log_info("epoch " + std::to_string(epoch) + " train " + std::to_string(em.train_total) + " val " +
                 std::to_string(em.val_total) + " lr " + std::to_string(em.lr));
    }
    return result;
}

} // namespace latentdyn::trainer
