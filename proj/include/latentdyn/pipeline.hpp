#pragma once

// Dataset directories, checkpoints and the train/ica/eval steps shared by the
// command-line tool and the acceptance suite.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "eval.hpp"
#include "ica.hpp"
#include "io.hpp"
#include "model.hpp"
#include "plots.hpp"
#include "spectral.hpp"
#include "surface.hpp"
#include "synth.hpp"
#include "trainer.hpp"

namespace latentdyn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kMeshFile = "mesh.json";
inline constexpr const char* kDesignFile = "design.json";
inline constexpr const char* kTruthFile = "truth.json";
inline constexpr const char* kScalerFile = "scaler.json";
inline constexpr const char* kSynthConfigFile = "synth_config.json";
inline constexpr const char* kTimeseriesFile = "timeseries.fts";

// ---- matrices in JSON ----

inline json matrix_json(const RowMatrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.row(r).data(), m.row(r).data() + m.cols());
        rows.push_back(row);
    }
    return rows;
}

inline RowMatrix matrix_from_json(const json& j, const std::string& field) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    RowMatrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) throw ConfigError(field, "ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

// ---- dataset directory ----

struct Dataset {
    surface::Mesh mesh;
    signal::TaskDesign design;
    std::vector<SubjectTimeseries> subjects;
    std::optional<synth::GroundTruth> truth;
    std::vector<double> scale; // per-voxel scaler, empty if absent
    std::string config_hash;

    std::vector<const SubjectTimeseries*> split(const std::string& name) const { return select_split(subjects, name); }

    /// Train and validation subjects, the only ones allowed to shape the clustering.
    std::vector<const SubjectTimeseries*> fitting_subjects() const {
        std::vector<const SubjectTimeseries*> out;
        for (const auto& s : subjects)
            if (s.split == "train" || s.split == "val") out.push_back(&s);
        return out;
    }
};

inline Dataset from_synthetic(synth::SyntheticDataset ds, const synth::SynthConfig& cfg) {
    Dataset d;
    d.mesh = std::move(ds.mesh);
    d.design = std::move(ds.design);
    d.subjects = std::move(ds.subjects);
    d.truth = std::move(ds.truth);
    d.scale = ds.scaler.scale;
    d.config_hash = io::config_hash(json(cfg));
    return d;
}

/// Writes every dataset file into `dir`; returns the paths written.
inline std::vector<std::string> write_dataset(const fs::path& dir, const Dataset& d, const synth::SynthConfig& cfg) {
    auto tagged = [&](json j) {
        j["config_hash"] = d.config_hash;
        return j;
    };
    io::write_json(dir / kMeshFile, tagged(json(d.mesh)));
    io::write_json(dir / kDesignFile, tagged(json(d.design)));
    io::write_json(dir / kSynthConfigFile, tagged(json(cfg)));
    io::write_json(dir / kScalerFile, tagged({{"scale", d.scale}}));
    std::vector<std::string> out{(dir / kMeshFile).string(), (dir / kDesignFile).string(),
                                 (dir / kSynthConfigFile).string(), (dir / kScalerFile).string()};
    if (d.truth) {
        io::write_json(dir / kTruthFile, tagged({{"names", d.truth->names},
                                                 {"maps", matrix_json(d.truth->maps)},
                                                 {"timecourses", matrix_json(d.truth->timecourses)}}));
        out.push_back((dir / kTruthFile).string());
    }
    io::write_timeseries(dir / kTimeseriesFile, {d.subjects, d.design.tr}, d.config_hash);
    out.push_back((dir / kTimeseriesFile).string());
    out.push_back(io::sidecar_path(dir / kTimeseriesFile).string());
    return out;
}

inline Dataset load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FileError(dir.string(), "dataset directory not found");
    Dataset d;
    d.mesh = config::parse<surface::Mesh>(io::read_json(dir / kMeshFile), "mesh");
    d.design = config::parse<signal::TaskDesign>(io::read_json(dir / kDesignFile), "design");
    auto ts = io::read_timeseries(dir / kTimeseriesFile);
    d.subjects = std::move(ts.subjects);
    const auto side = io::read_json(io::sidecar_path(dir / kTimeseriesFile));
    d.config_hash = side.value("config_hash", std::string());
    if (fs::exists(dir / kTruthFile)) {
        const auto j = io::read_json(dir / kTruthFile);
        synth::GroundTruth t;
        t.names = j.at("names").get<std::vector<std::string>>();
        t.maps = matrix_from_json(j.at("maps"), "truth.maps");
        t.timecourses = matrix_from_json(j.at("timecourses"), "truth.timecourses");
        d.truth = std::move(t);
    }
    if (fs::exists(dir / kScalerFile)) d.scale = io::read_json(dir / kScalerFile).at("scale").get<std::vector<double>>();
    for (const auto& s : d.subjects)
        if (static_cast<std::size_t>(s.vertices()) != d.mesh.vertex_count())
            throw ShapeError("dataset: subject " + s.id + " has " + std::to_string(s.vertices()) +
                             " vertices, mesh has " + std::to_string(d.mesh.vertex_count()));
    return d;
}

// ---- clustering ----

struct ClusterOptions {
    std::string mode = "structural";
    int k = 128;
    std::uint64_t seed = 42;
};

inline void to_json(json& j, const ClusterOptions& o) { j = json{{"mode", o.mode}, {"k", o.k}, {"seed", o.seed}}; }

inline void from_json(const json& j, ClusterOptions& o) {
    o.mode = j.at("mode").get<std::string>();
    o.k = j.at("k").get<int>();
    o.seed = j.at("seed").get<std::uint64_t>();
    if (o.mode != "structural" && o.mode != "functional")
        throw ConfigError("mode", "must be \"structural\" or \"functional\", got \"" + o.mode + "\"");
    if (o.k < 1) throw ConfigError("k", "must be a positive integer");
}

inline spectral::ClusterAssignment cluster(const Dataset& d, const ClusterOptions& o) {
    if (o.mode == "structural")
        return spectral::cluster_hemispheres(d.mesh, o.k, o.seed, [&](surface::Hemisphere h) {
            return surface::structural_adjacency(surface::geodesic_distances(d.mesh, h));
        });
    if (o.mode != "functional") throw ConfigError("mode", "must be \"structural\" or \"functional\"");
    const auto subjects = d.fitting_subjects();
    return spectral::cluster_hemispheres(d.mesh, o.k, o.seed, [&](surface::Hemisphere h) {
        return surface::functional_adjacency(subjects, d.mesh.vertex_ids(h));
    });
}

// ---- model checkpoints ----

struct TrainedModel {
    model::ModelConfig cfg;
    trainer::TrainConfig train_cfg;
    spectral::ClusterAssignment clusters;
    model::ParamSet params;
};

inline json model_meta(const TrainedModel& m, const std::string& hash) {
    return {{"model", m.cfg}, {"train", m.train_cfg}, {"clusters", m.clusters}, {"config_hash", hash}};
}

inline void write_model(const fs::path& path, const TrainedModel& m, const std::string& hash) {
    io::write_checkpoint(path, io::to_named(m.params), "svae", model_meta(m, hash));
}

inline TrainedModel model_from_checkpoint(const io::Checkpoint& c, const std::string& path) {
    if (c.kind != "svae") throw FileError(path, "not a model checkpoint (kind '" + c.kind + "')");
    TrainedModel m;
    m.cfg = config::parse<model::ModelConfig>(c.meta.at("model"), "model");
    m.train_cfg = config::parse<trainer::TrainConfig>(c.meta.at("train"), "train");
    m.clusters = config::parse<spectral::ClusterAssignment>(c.meta.at("clusters"), "clusters");
    m.params = io::to_params(c.tensors);
    return m;
}

inline void write_ica(const fs::path& path, const ica::IcaModel& m, std::uint64_t seed, const std::string& hash) {
    std::vector<io::NamedTensor> ts;
    io::NamedTensor mean{"ica.mean", {static_cast<std::uint32_t>(m.mean.size())}, {}};
    mean.data.assign(m.mean.data(), m.mean.data() + m.mean.size());
    ts.push_back(std::move(mean));
    ts.push_back(io::matrix_tensor("ica.whitening", m.whitening));
    ts.push_back(io::matrix_tensor("ica.unmixing", m.unmixing));
    ts.push_back(io::matrix_tensor("ica.mixing", m.mixing));
    io::write_checkpoint(path, ts, "ica",
                         {{"n_components", m.n_components},
                          {"seed", seed},
                          {"epochs", m.epochs},
                          {"converged", m.converged},
                          {"config_hash", hash}});
}

inline ica::IcaModel ica_from_checkpoint(const io::Checkpoint& c, const std::string& path) {
    if (c.kind != "ica") throw FileError(path, "not an ICA checkpoint (kind '" + c.kind + "')");
    ica::IcaModel m;
    m.n_components = c.meta.at("n_components").get<int>();
    m.epochs = c.meta.value("epochs", 0);
    m.converged = c.meta.value("converged", false);
    const auto& mean = io::find_tensor(c.tensors, "ica.mean", path);
    m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data.data(), static_cast<Eigen::Index>(mean.data.size()));
    m.whitening = io::tensor_matrix(io::find_tensor(c.tensors, "ica.whitening", path));
    m.unmixing = io::tensor_matrix(io::find_tensor(c.tensors, "ica.unmixing", path));
    m.mixing = io::tensor_matrix(io::find_tensor(c.tensors, "ica.mixing", path));
    return m;
}

// ---- training ----

inline TrainedModel train_model(const Dataset& d, const spectral::ClusterAssignment& clusters,
                                const model::ModelConfig& mcfg, const trainer::TrainConfig& tcfg,
                                std::vector<trainer::EpochMetrics>* history = nullptr,
                                const trainer::EpochCallback& on_epoch = {}) {
    if (mcfg.k_clusters != clusters.k)
        throw ConfigError("model.k_clusters", "is " + std::to_string(mcfg.k_clusters) + " but the clusters file has k = " +
                                                  std::to_string(clusters.k));
    const auto g = model::Geometry::build(d.mesh, clusters);
    auto res = trainer::train(d.split("train"), d.split("val"), g, mcfg, tcfg, on_epoch);
    if (history) *history = res.history;
    return {mcfg, tcfg, clusters, std::move(res.params)};
}

inline void write_metrics(const fs::path& path, const std::vector<trainer::EpochMetrics>& history) {
    std::vector<std::vector<io::Cell>> rows;
    for (const auto& m : history)
        rows.push_back({static_cast<long long>(m.epoch), m.lr, m.train_recon, m.train_kl, m.train_tc, m.train_total,
                        m.val_total});
    io::write_csv(path, trainer::metrics_columns(), rows);
}

// ---- evaluation ----

/// Planted source map as the evaluated method should see it: divided by the
/// voxel scaler, squared for variance-based traversal maps, then normalized
/// and thresholded.
inline Eigen::VectorXd planted_reference(const Dataset& d, int source, bool squared, double threshold = 0.1) {
    Eigen::VectorXd m = d.truth->maps.row(source).transpose();
    if (d.scale.size() == static_cast<std::size_t>(m.size()))
        for (Eigen::Index v = 0; v < m.size(); ++v) m(v) = d.scale[v] > 0 ? m(v) / d.scale[v] : 0.0;
    if (squared) m = m.array().square();
    return normalize_and_threshold(m, threshold);
}

struct Evaluation {
    std::string kind; // "svae" or "ica"
    eval::EvalReport report;
    RowMatrix factor_timecourses;    // [T x n], averaged over test subjects
    std::vector<double> map_jaccard; // per planted source, when ground truth exists

    double mean_map_jaccard() const { return map_jaccard.empty() ? 0.0 : mean(map_jaccard); }
};

inline std::vector<const SubjectTimeseries*> test_subjects(const Dataset& d) {
    auto s = d.split("test");
    if (s.empty()) throw DataError("eval: dataset has no test subjects");
    return s;
}

inline void attach_truth(const Dataset& d, Evaluation& e, bool squared) {
    if (!d.truth) return;
    const auto& best = e.report.scores.best_factor;
    for (Eigen::Index s = 0; s < d.truth->maps.rows() && s < static_cast<Eigen::Index>(best.size()); ++s) {
        const Eigen::VectorXd map = e.report.spatial_maps.row(best[s]).transpose();
        e.map_jaccard.push_back(support_jaccard(map, planted_reference(d, static_cast<int>(s), squared)));
    }
}

inline Evaluation evaluate_model(const Dataset& d, const TrainedModel& m) {
    const auto g = model::Geometry::build(d.mesh, m.clusters);
    const auto subjects = test_subjects(d);
    Evaluation e;
    e.kind = "svae";
    e.report.subtasks = d.design.subtasks;
    e.factor_timecourses = eval::mean_factor_timecourses(m.params, m.cfg, g, subjects);
    e.report.scores = eval::subtask_correlation(e.factor_timecourses, signal::task_regressors(d.design));
    e.report.recon_corr = eval::reconstruction_correlation(m.params, m.cfg, g, subjects);
    e.report.spatial_maps = eval::traversal_spatial_maps(eval::model_decoder(m.params, m.cfg, g), m.cfg.n_factors);
    attach_truth(d, e, true);
    return e;
}

inline Evaluation evaluate_ica(const Dataset& d, const ica::IcaModel& m) {
    const auto subjects = test_subjects(d);
    const RowMatrix regressors = signal::task_regressors(d.design);
    Evaluation e;
    e.kind = "ica";
    e.report.subtasks = d.design.subtasks;
    e.factor_timecourses = ica::mean_timecourses(m, subjects);
    e.report.scores = eval::subtask_correlation(e.factor_timecourses, regressors);
    std::vector<double> per(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const RowMatrix tc = ica::timecourses(m, subjects[i]->values);
        RowMatrix x_hat = tc * m.mixing.transpose();
        x_hat.rowwise() += m.mean.transpose();
        per[i] = eval::subject_reconstruction_correlation(subjects[i]->values, x_hat);
    }
    e.report.recon_corr = eval::mean_std(per);
    e.report.spatial_maps = ica::component_maps(m, e.factor_timecourses, regressors).maps;
    attach_truth(d, e, false);
    return e;
}

inline Evaluation evaluate_checkpoint(const Dataset& d, const fs::path& path) {
    const auto c = io::read_checkpoint(path);
    if (c.kind == "ica") return evaluate_ica(d, ica_from_checkpoint(c, path.string()));
    return evaluate_model(d, model_from_checkpoint(c, path.string()));
}

/// Per-vertex CSV: vertex, hemisphere, then one column per map row.
inline void write_vertex_maps(const fs::path& path, const surface::Mesh& mesh, const RowMatrix& maps,
                              const std::string& prefix) {
    if (static_cast<std::size_t>(maps.cols()) != mesh.vertex_count()) throw ShapeError("maps: vertex count mismatch");
    std::vector<std::string> header{"vertex", "hemisphere"};
    for (Eigen::Index j = 0; j < maps.rows(); ++j) header.push_back(prefix + std::to_string(j));
    std::vector<std::vector<io::Cell>> rows;
    for (Eigen::Index v = 0; v < maps.cols(); ++v) {
        std::vector<io::Cell> row{static_cast<long long>(v), std::string(1, surface::to_char(mesh.hemisphere[v]))};
        for (Eigen::Index j = 0; j < maps.rows(); ++j) row.emplace_back(maps(j, v));
        rows.push_back(std::move(row));
    }
    io::write_csv(path, header, rows);
}

inline json evaluation_json(const Evaluation& e, const std::string& hash) {
    json j = eval::report_json(e.report);
    j["kind"] = e.kind;
    j["config_hash"] = hash;
    if (!e.map_jaccard.empty()) {
        j["map_jaccard"] = e.map_jaccard;
        j["mean_map_jaccard"] = e.mean_map_jaccard();
    }
    return j;
}

/// report.json, subtask_scores.csv, subtask_corr.csv, spatial_maps.csv and subtask_scores.svg.
inline std::vector<std::string> write_evaluation(const fs::path& dir, const Dataset& d, const Evaluation& e,
                                                 const std::string& hash) {
    io::write_json(dir / "report.json", evaluation_json(e, hash));
    const auto& s = e.report.scores;
    std::vector<std::vector<io::Cell>> rows;
    for (std::size_t i = 0; i < s.best_factor.size(); ++i)
        rows.push_back({d.design.subtasks.at(i), static_cast<long long>(s.best_factor[i]), s.best_abs_corr[i]});
    io::write_csv(dir / "subtask_scores.csv", {"subtask", "best_factor", "abs_corr"}, rows);

    std::vector<std::string> header{"subtask"};
    for (Eigen::Index j = 0; j < s.abs_corr.cols(); ++j) header.push_back("factor" + std::to_string(j));
    rows.clear();
    for (Eigen::Index i = 0; i < s.abs_corr.rows(); ++i) {
        std::vector<io::Cell> row{d.design.subtasks.at(static_cast<std::size_t>(i))};
        for (Eigen::Index j = 0; j < s.abs_corr.cols(); ++j) row.emplace_back(s.abs_corr(i, j));
        rows.push_back(std::move(row));
    }
    io::write_csv(dir / "subtask_corr.csv", header, rows);
    write_vertex_maps(dir / "spatial_maps.csv", d.mesh, e.report.spatial_maps, "map");
    io::write_atomic(dir / "subtask_scores.svg", plots::subtask_bars_svg(s, d.design.subtasks, e.kind + " sub-task |r|"));
    std::vector<std::string> out;
    for (const char* f : {"report.json", "subtask_scores.csv", "subtask_corr.csv", "spatial_maps.csv", "subtask_scores.svg"})
        out.push_back((dir / f).string());
    return out;
}

// ---- trajectories ----

inline std::vector<eval::TrajectoryPoint> trajectory(const Dataset& d, const RowMatrix& factor_timecourses,
                                                     std::uint64_t seed, const eval::TsneOptions& opt = {}) {
    return eval::trajectory_export(eval::tsne_embed(factor_timecourses, seed, opt), d.design);
}

inline void write_trajectory(const fs::path& dir, const std::vector<eval::TrajectoryPoint>& pts, const std::string& title) {
    std::vector<std::vector<io::Cell>> rows;
    for (const auto& p : pts) rows.push_back({static_cast<long long>(p.t), p.x, p.y, p.label, p.opacity});
    io::write_csv(dir / "trajectory.csv", {"t", "x", "y", "task_label", "opacity"}, rows);
    io::write_atomic(dir / "trajectory.svg", plots::trajectory_svg(pts, title));
}

// ---- beta sweep ----

inline const std::vector<double>& paper_betas() {
    static const std::vector<double> b{0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0};
    return b;
}

inline std::string beta_label(double beta) { return "beta_" + io::format_double(beta); }

struct SweepPoint {
    std::string label;
    double mean_abs_corr = 0;
    double recon_mean = 0;
    double recon_std = 0;
};

inline void write_sweep(const fs::path& dir, const std::vector<SweepPoint>& points) {
    std::vector<std::vector<io::Cell>> rows;
    for (const auto& p : points) rows.push_back({p.label, p.mean_abs_corr, p.recon_mean, p.recon_std});
    io::write_csv(dir / "sweep.csv", {"run", "mean_abs_corr", "recon_corr_mean", "recon_corr_std"}, rows);
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& p : points) {
        labels.push_back(p.label);
        values.push_back(p.mean_abs_corr);
    }
    io::write_atomic(dir / "sweep.svg", plots::bars_svg(labels, values, "mean sub-task |r| per run"));
}

} // namespace latentdyn::pipeline
