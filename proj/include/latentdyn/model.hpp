#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "spectral.hpp"
#include "surface.hpp"
#include "tape.hpp"

namespace latentdyn::model {

using diff::Tape;
using diff::Tensor;
using diff::Var;

enum class Architecture { mixer, dense };

inline const char* to_string(Architecture a) { return a == Architecture::mixer ? "mixer" : "dense"; }

inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 2.0;
inline constexpr double kInitLogSigma = -3.0;
inline constexpr double kOutputInitScale = 0.1;

struct ModelConfig {
    Architecture arch = Architecture::mixer;
    int n_factors = 16;
    int encoder_output = 128;
    int k_clusters = 128;
    int embed_dim = 128;
    std::vector<int> encoder_feature_sizes{64, 32, 16, 8, 4, 1};
    std::vector<int> decoder_feature_sizes{4, 8, 16, 32, 64, 128};
    int patch_hidden = 0; // 0: same as k_clusters
    int gru_hidden = 128;
    int dense_hidden = 128; // per-hemisphere width of the dense baseline
    double beta = 0.0;

    int patch_width() const { return patch_hidden > 0 ? patch_hidden : k_clusters; }
    int mixer_count() const { return static_cast<int>(encoder_feature_sizes.size()) / 2; }
    int encoder_final_features() const { return encoder_feature_sizes.back(); }

    void validate() const {
        auto positive = [](int v, const char* field) {
            if (v < 1) throw ConfigError(field, "must be a positive integer, got " + std::to_string(v));
        };
        positive(n_factors, "n_factors");
        positive(encoder_output, "encoder_output");
        positive(k_clusters, "k_clusters");
        positive(embed_dim, "embed_dim");
        positive(gru_hidden, "gru_hidden");
        positive(dense_hidden, "dense_hidden");
        if (patch_hidden < 0) throw ConfigError("patch_hidden", "must be non-negative");
        if (beta < 0 || !std::isfinite(beta)) throw ConfigError("beta", "must be a non-negative number");
        if (encoder_feature_sizes.empty() || encoder_feature_sizes.size() % 2 != 0)
            throw ConfigError("encoder_feature_sizes", "needs (hidden, out) pairs, one per mixer layer");
        for (int v : encoder_feature_sizes) positive(v, "encoder_feature_sizes");
        // the decoder walks the encoder's feature chain backwards
        std::vector<int> chain{embed_dim};
        chain.insert(chain.end(), encoder_feature_sizes.begin(), encoder_feature_sizes.end() - 1);
        std::reverse(chain.begin(), chain.end());
        if (decoder_feature_sizes != chain)
            throw ConfigError("decoder_feature_sizes", "must mirror the encoder chain (embed_dim, encoder sizes)");
    }

    /// Small configuration for single-core benchmark runs.
    static ModelConfig desk_scale() {
        ModelConfig c;
        c.n_factors = 16;
        c.encoder_output = 32;
        c.k_clusters = 32;
        c.embed_dim = 32;
        c.encoder_feature_sizes = {16, 8, 8, 4, 2, 1};
        c.decoder_feature_sizes = {2, 4, 8, 8, 16, 32};
        c.gru_hidden = 32;
        c.dense_hidden = 32;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"arch", to_string(c.arch)},
                       {"n_factors", c.n_factors},
                       {"encoder_output", c.encoder_output},
                       {"k_clusters", c.k_clusters},
                       {"embed_dim", c.embed_dim},
                       {"encoder_feature_sizes", c.encoder_feature_sizes},
                       {"decoder_feature_sizes", c.decoder_feature_sizes},
                       {"patch_hidden", c.patch_hidden},
                       {"gru_hidden", c.gru_hidden},
                       {"dense_hidden", c.dense_hidden},
                       {"beta", c.beta}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    const ModelConfig d;
    const auto arch = j.value("arch", std::string("mixer"));
    if (arch != "mixer" && arch != "dense") throw ConfigError("arch", "must be \"mixer\" or \"dense\"");
    c.arch = arch == "mixer" ? Architecture::mixer : Architecture::dense;
    c.n_factors = j.value("n_factors", d.n_factors);
    c.encoder_output = j.value("encoder_output", d.encoder_output);
    c.k_clusters = j.value("k_clusters", d.k_clusters);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.encoder_feature_sizes = j.value("encoder_feature_sizes", d.encoder_feature_sizes);
    c.decoder_feature_sizes = j.value("decoder_feature_sizes", d.decoder_feature_sizes);
    c.patch_hidden = j.value("patch_hidden", d.patch_hidden);
    c.gru_hidden = j.value("gru_hidden", d.gru_hidden);
    c.dense_hidden = j.value("dense_hidden", d.dense_hidden);
    c.beta = j.value("beta", d.beta);
    c.validate();
}

/// Vertex bookkeeping shared by both architectures.
struct Geometry {
    std::size_t n_vertices = 0;
    int k = 0;
    int m = 0; // max cluster size
    std::array<std::vector<long>, 2> patch_index;
    std::vector<long> vertex_index;
    std::array<std::vector<long>, 2> hemi_index; // vertex ids per hemisphere
    std::vector<long> hemi_inverse;              // per vertex, column in [left | right]

    std::size_t hemi_size(int h) const { return hemi_index[h].size(); }

    static Geometry build(const surface::Mesh& mesh, const spectral::ClusterAssignment& ca) {
        const auto layout = spectral::PatchLayout::build(mesh, ca);
        Geometry g;
        g.n_vertices = mesh.vertex_count();
        g.k = layout.k;
        g.m = layout.max_cluster_size;
        g.patch_index = layout.patch_index;
        g.vertex_index = layout.vertex_index;
        g.hemi_inverse.assign(g.n_vertices, -1);
        for (int h = 0; h < 2; ++h)
            for (int v : mesh.vertex_ids(h == 0 ? surface::Hemisphere::left : surface::Hemisphere::right))
                g.hemi_index[h].push_back(v);
        for (int h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < g.hemi_index[h].size(); ++i)
                g.hemi_inverse[g.hemi_index[h][i]] = static_cast<long>(h == 0 ? i : g.hemi_index[0].size() + i);
        return g;
    }
};

/// Sizes that determine the parameter shapes.
struct ParamShapes {
    int k = 0;
    int m = 0;
    std::size_t v_left = 0;
    std::size_t v_right = 0;

    static ParamShapes of(const Geometry& g) { return {g.k, g.m, g.hemi_size(0), g.hemi_size(1)}; }
};

/// Named parameter tensors in creation order.
class ParamSet {
  public:
    void add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
        index_.emplace(name, tensors_.size());
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return tensors_[it->second];
    }
    const Tensor& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::size_t count_parameters(const ParamSet& p) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) n += p.tensor(i).size();
    return n;
}

namespace detail {

inline Tensor uniform_tensor(diff::Dims dims, double bound, std::uint64_t seed, const std::string& name) {
    SeededRng rng(seed, hash_name(name));
    Tensor t = Tensor::zeros(std::move(dims));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

enum class Feeds { linear, elu };

/// x W + b layer; weight [in x out] from U(-sqrt(c/in), sqrt(c/in)) with c = 6 before an ELU and 3 otherwise,
/// bias zero.
inline void add_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                       Feeds next = Feeds::linear) {
    const double bound = std::sqrt((next == Feeds::elu ? 6.0 : 3.0) / static_cast<double>(in));
    p.add(name + ".w", uniform_tensor({in, out}, bound, seed, name + ".w"));
    p.add(name + ".b", Tensor::zeros({out}));
}

inline void add_mixers(ParamSet& p, const std::string& prefix, const ModelConfig& cfg, int in_features,
                       const std::vector<int>& sizes, std::uint64_t seed) {
    int f = in_features;
    const auto k = static_cast<std::size_t>(cfg.k_clusters);
    const auto ph = static_cast<std::size_t>(cfg.patch_width());
    for (std::size_t i = 0; i + 1 < sizes.size(); i += 2) {
        const std::string name = prefix + ".mix" + std::to_string(i / 2);
        add_linear(p, name + ".feat1", f, sizes[i], seed, Feeds::elu);
        add_linear(p, name + ".feat2", sizes[i], sizes[i + 1], seed);
        add_linear(p, name + ".patch1", k, ph, seed, Feeds::elu);
        add_linear(p, name + ".patch2", ph, k, seed);
        f = sizes[i + 1];
    }
}

inline void add_temporal(ParamSet& p, const ModelConfig& cfg, std::uint64_t seed) {
    const auto e = static_cast<std::size_t>(cfg.encoder_output);
    const auto h = static_cast<std::size_t>(cfg.gru_hidden);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    p.add("gru.w_in", uniform_tensor({e, 3 * h}, bound, seed, "gru.w_in"));
    p.add("gru.b_in", uniform_tensor({3 * h}, bound, seed, "gru.b_in"));
    p.add("gru.u_ru", uniform_tensor({h, 2 * h}, bound, seed, "gru.u_ru"));
    p.add("gru.u_c", uniform_tensor({h, h}, bound, seed, "gru.u_c"));
    add_linear(p, "head.mu", h, cfg.n_factors, seed);
    add_linear(p, "head.log_sigma", h, cfg.n_factors, seed);
    p.tensor(p.size() - 1) = Tensor::filled({static_cast<std::size_t>(cfg.n_factors)}, kInitLogSigma);
}

/// Starts the decoder's last layers inside the linear range of the output tanh.
inline void shrink_output(ParamSet& p) {
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.name(i) == "dec.out.L.w" || p.name(i) == "dec.out.R.w")
            for (auto& v : p.tensor(i).data) v *= kOutputInitScale;
}

} // namespace detail

/// Names of the recurrent (hidden-to-hidden) weight matrices.
inline const std::vector<std::string>& recurrent_weight_names() {
    static const std::vector<std::string> names{"gru.u_ru", "gru.u_c"};
    return names;
}

inline ParamSet init_params(const ModelConfig& cfg, const ParamShapes& shapes, std::uint64_t seed) {
    cfg.validate();
    ParamSet p;
    const auto k = static_cast<std::size_t>(cfg.k_clusters);
    if (cfg.arch == Architecture::mixer) {
        if (shapes.k != cfg.k_clusters)
            throw ConfigError("k_clusters", "model expects " + std::to_string(cfg.k_clusters) +
                                                " clusters per hemisphere, cluster file has " + std::to_string(shapes.k));
        const auto m = static_cast<std::size_t>(shapes.m);
        const auto fe = static_cast<std::size_t>(cfg.encoder_final_features());
        detail::add_linear(p, "enc.embed.L", m, cfg.embed_dim, seed);
        detail::add_linear(p, "enc.embed.R", m, cfg.embed_dim, seed);
        detail::add_mixers(p, "enc", cfg, cfg.embed_dim, cfg.encoder_feature_sizes, seed);
        detail::add_linear(p, "enc.out", 2 * k * fe, cfg.encoder_output, seed, detail::Feeds::elu);
        detail::add_temporal(p, cfg, seed);
        detail::add_linear(p, "dec.in", cfg.n_factors, 2 * k * fe, seed, detail::Feeds::elu);
        detail::add_mixers(p, "dec", cfg, static_cast<int>(fe), cfg.decoder_feature_sizes, seed);
        detail::add_linear(p, "dec.out.L", cfg.embed_dim, m, seed);
        detail::add_linear(p, "dec.out.R", cfg.embed_dim, m, seed);
        detail::shrink_output(p);
    } else {
        const auto w = static_cast<std::size_t>(cfg.dense_hidden);
        detail::add_linear(p, "enc.dense.L", shapes.v_left, w, seed, detail::Feeds::elu);
        detail::add_linear(p, "enc.dense.R", shapes.v_right, w, seed, detail::Feeds::elu);
        detail::add_linear(p, "enc.out", 2 * w, cfg.encoder_output, seed, detail::Feeds::elu);
        detail::add_temporal(p, cfg, seed);
        detail::add_linear(p, "dec.in", cfg.n_factors, 2 * w, seed, detail::Feeds::elu);
        detail::add_linear(p, "dec.out.L", w, shapes.v_left, seed);
        detail::add_linear(p, "dec.out.R", w, shapes.v_right, seed);
        detail::shrink_output(p);
    }
    return p;
}

/// Dense baseline with the same temporal model.
inline ParamSet baseline_model(ModelConfig cfg, const ParamShapes& shapes, std::uint64_t seed) {
    cfg.arch = Architecture::dense;
    return init_params(cfg, shapes, seed);
}

/// Parameters recorded on a tape.
class Bound {
  public:
    Bound(Tape& tape, const ParamSet& params, bool trainable) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            vars_.emplace(params.name(i),
                          trainable ? tape.param(params.tensor(i)) : tape.constant(params.tensor(i)));
            order_.push_back(params.name(i));
        }
    }

    /// Binds already-recorded vars, one per parameter in `params` order.
    Bound(const ParamSet& params, const std::vector<Var>& vars) {
        if (vars.size() != params.size()) throw std::invalid_argument("Bound: one var per parameter required");
        for (std::size_t i = 0; i < params.size(); ++i) {
            vars_.emplace(params.name(i), vars[i]);
            order_.push_back(params.name(i));
        }
    }

    Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw std::out_of_range("parameter " + name + " not bound");
        return it->second;
    }

    const std::vector<std::string>& names() const { return order_; }

  private:
    std::unordered_map<std::string, Var> vars_;
    std::vector<std::string> order_;
};

inline Var dense(const Bound& b, const std::string& name, Var x) {
    return diff::linear(x, b[name + ".w"], b[name + ".b"]);
}

/// Two-layer perceptron with ELU after the first layer only.
inline Var mlp(const Bound& b, const std::string& first, const std::string& second, Var x) {
    return dense(b, second, diff::elu(dense(b, first, x)));
}

/// One mixer layer on n stacked [k x f] patch matrices given as [(n k) x f].
inline Var mixer_layer(const Bound& b, const std::string& name, Var x, std::size_t n, std::size_t k) {
    Var f = mlp(b, name + ".feat1", name + ".feat2", x);
    const std::size_t out = f.dims()[1];
    Var p = diff::reshape(diff::permute(diff::reshape(f, {n, k, out}), {0, 2, 1}), {n * out, k});
    p = mlp(b, name + ".patch1", name + ".patch2", p);
    return diff::reshape(diff::permute(diff::reshape(p, {n, out, k}), {0, 2, 1}), {n * k, out});
}

inline Var mixer_stack(const Bound& b, const std::string& prefix, Var x, int layers, std::size_t n, std::size_t k) {
    for (int i = 0; i < layers; ++i) x = mixer_layer(b, prefix + ".mix" + std::to_string(i), x, n, k);
    return x;
}

/// Spatial encoder over all timesteps of x [T x V]; returns [T x encoder_output].
inline Var spatial_encode(const Bound& b, const ModelConfig& cfg, const Geometry& g, Var x) {
    const std::size_t T = x.dims()[0];
    if (x.dims()[1] != g.n_vertices)
        throw ShapeError("spatial_encode: input has " + std::to_string(x.dims()[1]) + " vertices, geometry has " +
                         std::to_string(g.n_vertices));
    if (cfg.arch == Architecture::dense) {
        Var l = diff::elu(dense(b, "enc.dense.L", diff::gather_cols(x, g.hemi_index[0])));
        Var r = diff::elu(dense(b, "enc.dense.R", diff::gather_cols(x, g.hemi_index[1])));
        return diff::elu(dense(b, "enc.out", diff::concat({l, r}, 1)));
    }
    const auto k = static_cast<std::size_t>(g.k), m = static_cast<std::size_t>(g.m);
    std::vector<Var> hemis;
    for (int h = 0; h < 2; ++h) {
        Var patches = diff::reshape(diff::gather_cols(x, g.patch_index[h]), {T * k, m});
        hemis.push_back(dense(b, h == 0 ? "enc.embed.L" : "enc.embed.R", patches));
    }
    Var y = mixer_stack(b, "enc", diff::concat(hemis, 0), cfg.mixer_count(), 2 * T, k);
    const std::size_t f = y.dims()[1];
    Var l = diff::reshape(diff::slice(y, 0, 0, T * k), {T, k * f});
    Var r = diff::reshape(diff::slice(y, 0, T * k, T * k), {T, k * f});
    return diff::elu(dense(b, "enc.out", diff::concat({l, r}, 1)));
}

/// One GRU update from a pre-projected input row xp_t = e_t W_in + b_in [1 x 3H].
inline Var gru_cell(Var xp_t, Var h, Var u_ru, Var u_c) {
    const std::size_t H = h.dims()[1];
    Var ru = diff::sigmoid(diff::add(diff::slice(xp_t, 1, 0, 2 * H), diff::matmul(h, u_ru)));
    Var r = diff::slice(ru, 1, 0, H);
    Var u = diff::slice(ru, 1, H, H);
    Var c = diff::tanh_act(diff::add(diff::slice(xp_t, 1, 2 * H, H), diff::matmul(diff::mul(r, h), u_c)));
    // (1 - u) h + u c
    return diff::add(h, diff::mul(u, diff::sub(c, h)));
}

inline Var gru_step(const Bound& b, Var e_t, Var h_prev) {
    return gru_cell(diff::linear(e_t, b["gru.w_in"], b["gru.b_in"]), h_prev, b["gru.u_ru"], b["gru.u_c"]);
}

/// Runs the GRU over all rows of e [T x E] from h0 = 0; returns hidden states [T x H].
inline Var gru_sequence(const Bound& b, Var e, std::size_t hidden) {
    Var xp = diff::linear(e, b["gru.w_in"], b["gru.b_in"]);
    Var h = e.tape->constant(Tensor::zeros({1, hidden}));
    std::vector<Var> states;
    const std::size_t T = e.dims()[0];
    states.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        h = gru_cell(diff::slice(xp, 0, t, 1), h, b["gru.u_ru"], b["gru.u_c"]);
        states.push_back(h);
    }
    return diff::concat(states, 0);
}

struct Heads {
    Var mu;
    Var log_sigma;
};

inline Heads factor_heads(const Bound& b, Var h) {
    return {dense(b, "head.mu", h), diff::clamp(dense(b, "head.log_sigma", h), kLogSigmaMin, kLogSigmaMax)};
}

/// Spatial decoder from factors z [T x n_factors] to vertex values [T x V].
inline Var spatial_decode(const Bound& b, const ModelConfig& cfg, const Geometry& g, Var z) {
    const std::size_t T = z.dims()[0];
    if (cfg.arch == Architecture::dense) {
        const auto w = static_cast<std::size_t>(cfg.dense_hidden);
        Var y = diff::elu(dense(b, "dec.in", z));
        Var l = diff::tanh_act(dense(b, "dec.out.L", diff::slice(y, 1, 0, w)));
        Var r = diff::tanh_act(dense(b, "dec.out.R", diff::slice(y, 1, w, w)));
        return diff::gather_cols(diff::concat({l, r}, 1), g.hemi_inverse);
    }
    const auto k = static_cast<std::size_t>(g.k), m = static_cast<std::size_t>(g.m);
    const auto f = static_cast<std::size_t>(cfg.encoder_final_features());
    Var y = diff::elu(dense(b, "dec.in", z));
    Var l = diff::reshape(diff::slice(y, 1, 0, k * f), {T * k, f});
    Var r = diff::reshape(diff::slice(y, 1, k * f, k * f), {T * k, f});
    Var mixed = mixer_stack(b, "dec", diff::concat({l, r}, 0), cfg.mixer_count(), 2 * T, k);
    std::vector<Var> hemis;
    for (int h = 0; h < 2; ++h) {
        Var rows = diff::slice(mixed, 0, h * T * k, T * k);
        Var out = diff::tanh_act(dense(b, h == 0 ? "dec.out.L" : "dec.out.R", rows));
        hemis.push_back(diff::reshape(out, {T, k * m}));
    }
    return diff::gather_cols(diff::concat(hemis, 1), g.vertex_index);
}

struct ForwardResult {
    Var mu;
    Var log_sigma;
    Var z;
    Var x_hat;
};

/// Encodes, runs the GRU, samples z with `rng` (posterior means when null) and decodes.
inline ForwardResult forward(const Bound& b, const ModelConfig& cfg, const Geometry& g, Var x, SeededRng* rng) {
    Var e = spatial_encode(b, cfg, g, x);
    Var h = gru_sequence(b, e, static_cast<std::size_t>(cfg.gru_hidden));
    auto heads = factor_heads(b, h);
    Var z = rng ? diff::reparam_sample(heads.mu, heads.log_sigma, *rng) : heads.mu;
    return {heads.mu, heads.log_sigma, z, spatial_decode(b, cfg, g, z)};
}

inline Tensor to_tensor(const RowMatrix& m) {
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  std::vector<double>(m.data(), m.data() + m.size()));
}

inline RowMatrix to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("to_matrix: expects rank 2, got " + diff::shape_string(t.dims));
    RowMatrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
    std::copy(t.data.begin(), t.data.end(), m.data());
    return m;
}

struct Posterior {
    RowMatrix mu;
    RowMatrix log_sigma;
    RowMatrix x_hat; // decoded from mu
};

/// Deterministic inference (posterior means) on one subject.
inline Posterior infer(const ParamSet& params, const ModelConfig& cfg, const Geometry& g, const RowMatrix& x) {
    Tape tape;
    Bound b(tape, params, false);
    const auto out = forward(b, cfg, g, tape.constant(to_tensor(x)), nullptr);
    return {to_matrix(out.mu.value()), to_matrix(out.log_sigma.value()), to_matrix(out.x_hat.value())};
}

/// Decodes factor rows z [n x n_factors] without recording gradients.
inline RowMatrix decode(const ParamSet& params, const ModelConfig& cfg, const Geometry& g, const RowMatrix& z) {
    Tape tape;
    Bound b(tape, params, false);
    return to_matrix(spatial_decode(b, cfg, g, tape.constant(to_tensor(z))).value());
}

} // namespace latentdyn::model
