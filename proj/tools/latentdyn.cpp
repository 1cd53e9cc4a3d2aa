#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "latentdyn/pipeline.hpp"

using namespace latentdyn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitMissingFile = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumerical = 4;

json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    return io::read_json(path);
}

template <class T>
void set_flag(json& j, const std::string& key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

/// defaults, then the config file, then flags.
json layered(const json& defaults, const json& file, const json& flags) {
    return config::overlay(config::overlay(defaults, file), flags);
}

void write_manifest(const fs::path& dir, io::RunManifest m) {
    io::write_json(dir / ("manifest." + m.command + ".json"), m.to_json());
}

struct Paths {
    std::string data;
    std::string out;
    std::string config;
    std::string clusters;
    std::string checkpoint;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(what, "path is required");
    if (!fs::exists(path)) throw FileError(path, std::string(what) + " not found");
}

// ---- synth ----

struct SynthFlags {
    std::optional<std::uint64_t> seed;
    std::optional<int> subjects, vertices, frames, sources;
    std::optional<double> noise;
    std::optional<std::string> mixing;
};

void run_synth(const Paths& p, const SynthFlags& f) {
    json defaults = synth::SynthConfig{};
    defaults["design"] = nullptr;
    json flags = json::object();
    set_flag(flags, "seed", f.seed);
    set_flag(flags, "n_subjects", f.subjects);
    set_flag(flags, "vertices_per_hemisphere", f.vertices);
    set_flag(flags, "n_frames", f.frames);
    set_flag(flags, "n_sources", f.sources);
    set_flag(flags, "noise_sigma", f.noise);
    set_flag(flags, "mixing", f.mixing);
    const auto merged = layered(defaults, read_config(p.config), flags);
    const auto cfg = config::parse<synth::SynthConfig>(merged, "synth");

    io::RunManifest m{"synth", json(cfg), cfg.seed};
    const auto d = pipeline::from_synthetic(synth::generate(cfg), cfg);
    m.outputs = pipeline::write_dataset(p.out, d, cfg);
    write_manifest(p.out, m);
    std::cout << "wrote " << d.subjects.size() << " subjects, " << d.mesh.vertex_count() << " vertices to " << p.out
              << "\n";
}

// ---- cluster ----

struct ClusterFlags {
    std::optional<std::string> mode;
    std::optional<int> k;
    std::optional<std::uint64_t> seed;
};

void run_cluster(Paths p, const ClusterFlags& f) {
    json flags = json::object();
    set_flag(flags, "mode", f.mode);
    set_flag(flags, "k", f.k);
    set_flag(flags, "seed", f.seed);
    const auto merged = layered(pipeline::ClusterOptions{}, read_config(p.config), flags);
    const auto opt = config::parse<pipeline::ClusterOptions>(merged, "cluster");
    const auto d = pipeline::load_dataset(p.data);
    if (p.out.empty())
        p.out = (fs::path(p.data) / ("clusters_" + opt.mode + "_k" + std::to_string(opt.k) + ".json")).string();

    io::RunManifest m{"cluster", {{"cluster", merged}, {"data_hash", d.config_hash}}, opt.seed};
    m.inputs = {p.data};
    const auto ca = pipeline::cluster(d, opt);
    json j = ca;
    j["config_hash"] = m.hash();
    io::write_json(p.out, j);
    m.outputs = {p.out};
    write_manifest(fs::path(p.out).parent_path(), m);
    std::cout << "wrote " << opt.mode << " clusters (k=" << ca.k << ", max size " << ca.max_cluster_size << ") to "
              << p.out << "\n";
}

// ---- train ----

struct TrainFlags {
    std::optional<double> beta, lr;
    std::optional<int> epochs, batch_size;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    bool quiet = false;
};

json train_defaults(const std::string& preset) {
    if (preset != "paper" && preset != "desk") throw ConfigError("preset", "must be \"paper\" or \"desk\"");
    return {{"preset", preset},
            {"model", preset == "desk" ? model::ModelConfig::desk_scale() : model::ModelConfig{}},
            {"train", trainer::TrainConfig{}}};
}

struct TrainSetup {
    json merged;
    model::ModelConfig mcfg;
    trainer::TrainConfig tcfg;
};

/// Merges model/train sections; k_clusters follows the clusters file unless set explicitly.
TrainSetup train_setup(const json& file, const TrainFlags& f, const spectral::ClusterAssignment& ca) {
    std::string preset = f.preset.value_or(file.value("preset", std::string("paper")));
    json flags = {{"model", json::object()}, {"train", json::object()}};
    if (f.preset) flags["preset"] = *f.preset;
    set_flag(flags["model"], "beta", f.beta);
    set_flag(flags["train"], "lr", f.lr);
    set_flag(flags["train"], "epochs", f.epochs);
    set_flag(flags["train"], "batch_size", f.batch_size);
    set_flag(flags["train"], "seed", f.seed);
    TrainSetup s;
    s.merged = layered(train_defaults(preset), file, flags);
    const bool explicit_k = file.contains("model") && file["model"].is_object() && file["model"].contains("k_clusters");
    if (!explicit_k) s.merged["model"]["k_clusters"] = ca.k;
    s.mcfg = config::parse<model::ModelConfig>(s.merged["model"], "model");
    s.tcfg = config::parse<trainer::TrainConfig>(s.merged["train"], "train");
    return s;
}

spectral::ClusterAssignment load_clusters(const std::string& path) {
    require_file(path, "clusters");
    return config::parse<spectral::ClusterAssignment>(io::read_json(path), "clusters");
}

trainer::EpochCallback progress(bool quiet) {
    if (quiet) return {};
    return [](const trainer::EpochMetrics& m) {
        std::ostringstream os;
        os << "epoch " << m.epoch << " lr " << m.lr << " recon " << m.train_recon << " kl " << m.train_kl << " tc "
           << m.train_tc << " total " << m.train_total << " val " << m.val_total << "\n";
        std::cerr << os.str();
    };
}

void run_train(const Paths& p, const TrainFlags& f) {
    const auto ca = load_clusters(p.clusters);
    const auto s = train_setup(read_config(p.config), f, ca);
    const auto d = pipeline::load_dataset(p.data);
    io::RunManifest m{"train", {{"train", s.merged}, {"data_hash", d.config_hash}}, s.tcfg.seed};
    m.inputs = {p.data, p.clusters};

    std::vector<trainer::EpochMetrics> history;
    const auto trained = pipeline::train_model(d, ca, s.mcfg, s.tcfg, &history, progress(f.quiet));
    const fs::path out(p.out);
    pipeline::write_model(out / "model.svae", trained, m.hash());
    pipeline::write_metrics(out / "metrics.csv", history);
    m.outputs = {(out / "model.svae").string(), io::sidecar_path(out / "model.svae").string(),
                 (out / "metrics.csv").string()};
    write_manifest(out, m);
    std::cout << "trained " << model::count_parameters(trained.params) << " parameters for " << s.tcfg.epochs
              << " epochs; checkpoint " << (out / "model.svae").string() << "\n";
}

// ---- ica ----

struct IcaFlags {
    std::optional<int> n_components;
    std::optional<std::uint64_t> seed;
};

json ica_defaults() {
    const ica::InfomaxOptions o;
    return {{"n_components", 16},
            {"seed", 42},
            {"infomax",
             {{"lr", o.lr},
              {"anneal_factor", o.anneal_factor},
              {"anneal_degrees", o.anneal_degrees},
              {"tol", o.tol},
              {"max_epochs", o.max_epochs}}}};
}

void run_ica(const Paths& p, const IcaFlags& f) {
    json flags = json::object();
    set_flag(flags, "n_components", f.n_components);
    set_flag(flags, "seed", f.seed);
    const auto merged = layered(ica_defaults(), read_config(p.config), flags);
    ica::InfomaxOptions opt;
    const auto& im = merged["infomax"];
    opt.lr = im["lr"].get<double>();
    opt.anneal_factor = im["anneal_factor"].get<double>();
    opt.anneal_degrees = im["anneal_degrees"].get<double>();
    opt.tol = im["tol"].get<double>();
    opt.max_epochs = im["max_epochs"].get<int>();
    if (!(opt.lr > 0)) throw ConfigError("infomax.lr", "must be positive");
    const int n = merged["n_components"].get<int>();
    const auto seed = merged["seed"].get<std::uint64_t>();

    const auto d = pipeline::load_dataset(p.data);
    io::RunManifest m{"ica", {{"ica", merged}, {"data_hash", d.config_hash}}, seed};
    m.inputs = {p.data};
    const auto model = ica::fit(d.split("train"), n, seed, opt);
    const fs::path out = fs::path(p.out) / "ica.svae";
    pipeline::write_ica(out, model, seed, m.hash());
    m.outputs = {out.string(), io::sidecar_path(out).string()};
    write_manifest(p.out, m);
    std::cout << "ICA with " << n << " components, " << model.epochs << " epochs"
              << (model.converged ? "" : " (not converged)") << "; checkpoint " << out.string() << "\n";
}

// ---- eval / traverse / tsne ----

void run_eval(const Paths& p) {
    require_file(p.checkpoint, "checkpoint");
    const auto d = pipeline::load_dataset(p.data);
    const auto c = io::read_checkpoint(p.checkpoint);
    io::RunManifest m{"eval", {{"checkpoint_hash", c.meta.value("config_hash", "")}, {"data_hash", d.config_hash}}, 0};
    m.inputs = {p.data, p.checkpoint};
    const auto e = pipeline::evaluate_checkpoint(d, p.checkpoint);
    m.outputs = pipeline::write_evaluation(p.out, d, e, m.hash());
    write_manifest(p.out, m);
    std::cout << "mean sub-task |r| " << e.report.scores.mean_abs_corr << ", reconstruction r "
              << e.report.recon_corr.mean << " +- " << e.report.recon_corr.std << "\n";
}

struct TraverseFlags {
    std::optional<int> n_steps;
    std::optional<double> threshold;
};

void run_traverse(const Paths& p, const TraverseFlags& f) {
    require_file(p.checkpoint, "checkpoint");
    json flags = json::object();
    set_flag(flags, "n_steps", f.n_steps);
    set_flag(flags, "threshold", f.threshold);
    const eval::TraversalOptions dflt;
    const auto merged = layered({{"n_steps", dflt.n_steps}, {"lo", dflt.lo}, {"hi", dflt.hi}, {"threshold", dflt.threshold}},
                                read_config(p.config), flags);
    eval::TraversalOptions opt{merged["n_steps"].get<int>(), merged["lo"].get<double>(), merged["hi"].get<double>(),
                               merged["threshold"].get<double>()};
    const auto d = pipeline::load_dataset(p.data);
    const auto c = io::read_checkpoint(p.checkpoint);
    const auto tm = pipeline::model_from_checkpoint(c, p.checkpoint);
    const auto g = model::Geometry::build(d.mesh, tm.clusters);
    const RowMatrix maps = eval::traversal_spatial_maps(eval::model_decoder(tm.params, tm.cfg, g), tm.cfg.n_factors, opt);

    io::RunManifest m{"traverse", {{"traverse", merged}, {"checkpoint_hash", c.meta.value("config_hash", "")}}, 0};
    m.inputs = {p.data, p.checkpoint};
    const fs::path out = fs::path(p.out) / "traversal_maps.csv";
    pipeline::write_vertex_maps(out, d.mesh, maps, "factor");
    m.outputs = {out.string()};
    write_manifest(p.out, m);
    std::cout << "wrote " << maps.rows() << " traversal maps to " << out.string() << "\n";
}

struct TsneFlags {
    std::optional<std::uint64_t> seed;
    std::optional<double> perplexity;
    std::optional<int> iterations;
    std::string subject;
};

void run_tsne(const Paths& p, const TsneFlags& f) {
    require_file(p.checkpoint, "checkpoint");
    json flags = json::object();
    set_flag(flags, "seed", f.seed);
    set_flag(flags, "perplexity", f.perplexity);
    set_flag(flags, "iterations", f.iterations);
    const eval::TsneOptions dflt;
    const auto merged = layered({{"seed", 42}, {"perplexity", dflt.perplexity}, {"iterations", dflt.iterations}},
                                read_config(p.config), flags);
    eval::TsneOptions opt;
    opt.perplexity = merged["perplexity"].get<double>();
    opt.iterations = merged["iterations"].get<int>();
    const auto seed = merged["seed"].get<std::uint64_t>();

    const auto d = pipeline::load_dataset(p.data);
    const auto c = io::read_checkpoint(p.checkpoint);
    std::vector<const SubjectTimeseries*> subjects = pipeline::test_subjects(d);
    if (!f.subject.empty()) {
        subjects.clear();
        for (const auto& s : d.subjects)
            if (s.id == f.subject) subjects.push_back(&s);
        if (subjects.empty()) throw ConfigError("subject", "no subject with id '" + f.subject + "'");
    }
    RowMatrix tc;
    if (c.kind == "ica") {
        tc = ica::mean_timecourses(pipeline::ica_from_checkpoint(c, p.checkpoint), subjects);
    } else {
        const auto tm = pipeline::model_from_checkpoint(c, p.checkpoint);
        tc = eval::mean_factor_timecourses(tm.params, tm.cfg, model::Geometry::build(d.mesh, tm.clusters), subjects);
    }
    const auto pts = pipeline::trajectory(d, tc, seed, opt);
    io::RunManifest m{"tsne", {{"tsne", merged}, {"subject", f.subject}, {"checkpoint_hash", c.meta.value("config_hash", "")}}, seed};
    m.inputs = {p.data, p.checkpoint};
    pipeline::write_trajectory(p.out, pts, f.subject.empty() ? "test-set mean trajectory" : f.subject);
    m.outputs = {(fs::path(p.out) / "trajectory.csv").string(), (fs::path(p.out) / "trajectory.svg").string()};
    write_manifest(p.out, m);
    std::cout << "wrote " << pts.size() << " trajectory points to " << p.out << "\n";
}

// ---- sweep ----

struct SweepFlags {
    TrainFlags train;
    std::vector<double> betas;
    bool with_ica = false;
};

void run_sweep(const Paths& p, const SweepFlags& f) {
    const auto ca = load_clusters(p.clusters);
    json file = read_config(p.config);
    std::vector<double> betas = pipeline::paper_betas();
    if (file.contains("betas")) {
        betas = file["betas"].get<std::vector<double>>();
        file.erase("betas");
    }
    if (!f.betas.empty()) betas = f.betas;
    const auto d = pipeline::load_dataset(p.data);
    const fs::path out(p.out);
    std::vector<pipeline::SweepPoint> points;
    for (double beta : betas) {
        TrainFlags tf = f.train;
        tf.beta = beta;
        const auto s = train_setup(file, tf, ca);
        io::RunManifest m{"train", {{"train", s.merged}, {"data_hash", d.config_hash}}, s.tcfg.seed};
        const fs::path dir = out / pipeline::beta_label(beta);
        std::cerr << "sweep: beta " << beta << "\n";
        std::vector<trainer::EpochMetrics> history;
        const auto trained = pipeline::train_model(d, ca, s.mcfg, s.tcfg, &history, progress(f.train.quiet));
        pipeline::write_model(dir / "model.svae", trained, m.hash());
        pipeline::write_metrics(dir / "metrics.csv", history);
        const auto e = pipeline::evaluate_model(d, trained);
        m.outputs = pipeline::write_evaluation(dir, d, e, m.hash());
        m.outputs.push_back((dir / "model.svae").string());
        m.outputs.push_back((dir / "metrics.csv").string());
        write_manifest(dir, m);
        points.push_back({pipeline::beta_label(beta), e.report.scores.mean_abs_corr, e.report.recon_corr.mean,
                          e.report.recon_corr.std});
    }
    if (f.with_ica) {
        const auto seed = f.train.seed.value_or(42);
        const auto model = ica::fit(d.split("train"), 16, seed);
        const auto e = pipeline::evaluate_ica(d, model);
        pipeline::write_ica(out / "ica" / "ica.svae", model, seed, d.config_hash);
        pipeline::write_evaluation(out / "ica", d, e, d.config_hash);
        points.push_back({"ica", e.report.scores.mean_abs_corr, e.report.recon_corr.mean, e.report.recon_corr.std});
    }
    pipeline::write_sweep(out, points);
    for (const auto& pt : points) std::cout << pt.label << " mean |r| " << pt.mean_abs_corr << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent dynamics of surface fMRI: synthetic data, training and evaluation"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log progress details to stderr");

    Paths paths;
    auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", paths.config, "JSON config file"); };

    SynthFlags synth_flags;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset directory");
    add_config(synth_cmd);
    synth_cmd->add_option("-o,--out", paths.out, "Output dataset directory")->required();
    synth_cmd->add_option("--seed", synth_flags.seed);
    synth_cmd->add_option("--subjects", synth_flags.subjects);
    synth_cmd->add_option("--vertices", synth_flags.vertices, "Vertices per hemisphere (icosphere count)");
    synth_cmd->add_option("--frames", synth_flags.frames);
    synth_cmd->add_option("--sources", synth_flags.sources);
    synth_cmd->add_option("--noise", synth_flags.noise, "AR(1) innovation sigma");
    synth_cmd->add_option("--mixing", synth_flags.mixing, "linear or tanh");

    ClusterFlags cluster_flags;
    auto* cluster_cmd = app.add_subcommand("cluster", "Spectral clustering of each hemisphere");
    add_config(cluster_cmd);
    cluster_cmd->add_option("-d,--data", paths.data, "Dataset directory")->required();
    cluster_cmd->add_option("-o,--out", paths.out, "Clusters JSON (default: inside the dataset)");
    cluster_cmd->add_option("--mode", cluster_flags.mode, "structural or functional");
    cluster_cmd->add_option("--k", cluster_flags.k, "Clusters per hemisphere");
    cluster_cmd->add_option("--seed", cluster_flags.seed);

    TrainFlags train_flags;
    auto add_train_flags = [&](CLI::App* sub, TrainFlags& tf) {
        add_config(sub);
        sub->add_option("-d,--data", paths.data, "Dataset directory")->required();
        sub->add_option("--clusters", paths.clusters, "Clusters JSON")->required();
        sub->add_option("-o,--out", paths.out, "Output directory")->required();
        sub->add_option("--epochs", tf.epochs);
        sub->add_option("--seed", tf.seed);
        sub->add_option("--lr", tf.lr);
        sub->add_option("--batch-size", tf.batch_size);
        sub->add_option("--preset", tf.preset, "paper or desk model dimensions");
        sub->add_flag("-q,--quiet", tf.quiet, "No per-epoch progress");
    };
    auto* train_cmd = app.add_subcommand("train", "Train the sequential VAE");
    add_train_flags(train_cmd, train_flags);
    train_cmd->add_option("--beta", train_flags.beta, "Total-correlation weight");

    IcaFlags ica_flags;
    auto* ica_cmd = app.add_subcommand("ica", "Fit the temporal ICA baseline");
    add_config(ica_cmd);
    ica_cmd->add_option("-d,--data", paths.data, "Dataset directory")->required();
    ica_cmd->add_option("-o,--out", paths.out, "Output directory")->required();
    ica_cmd->add_option("--n-components", ica_flags.n_components);
    ica_cmd->add_option("--seed", ica_flags.seed);

    auto add_eval_paths = [&](CLI::App* sub) {
        sub->add_option("-d,--data", paths.data, "Dataset directory")->required();
        sub->add_option("--checkpoint", paths.checkpoint, "Model or ICA checkpoint")->required();
        sub->add_option("-o,--out", paths.out, "Output directory")->required();
    };
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the test subjects");
    add_eval_paths(eval_cmd);

    TraverseFlags traverse_flags;
    auto* traverse_cmd = app.add_subcommand("traverse", "Latent traversal spatial maps");
    add_config(traverse_cmd);
    add_eval_paths(traverse_cmd);
    traverse_cmd->add_option("--steps", traverse_flags.n_steps);
    traverse_cmd->add_option("--threshold", traverse_flags.threshold);

    TsneFlags tsne_flags;
    auto* tsne_cmd = app.add_subcommand("tsne", "t-SNE trajectory of the factor timecourses");
    add_config(tsne_cmd);
    add_eval_paths(tsne_cmd);
    tsne_cmd->add_option("--seed", tsne_flags.seed);
    tsne_cmd->add_option("--perplexity", tsne_flags.perplexity);
    tsne_cmd->add_option("--iterations", tsne_flags.iterations);
    tsne_cmd->add_option("--subject", tsne_flags.subject, "Single subject id instead of the test-set mean");

    SweepFlags sweep_flags;
    auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate over a grid of beta values");
    add_train_flags(sweep_cmd, sweep_flags.train);
    sweep_cmd->add_option("--betas", sweep_flags.betas, "Beta values (default: the paper grid)")->delimiter(',');
    sweep_cmd->add_flag("--with-ica", sweep_flags.with_ica, "Add a 16-component ICA reference bar");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
    latentdyn::verbose() = verbose;

    try {
        if (*synth_cmd) run_synth(paths, synth_flags);
        else if (*cluster_cmd) run_cluster(paths, cluster_flags);
        else if (*train_cmd) run_train(paths, train_flags);
        else if (*ica_cmd) run_ica(paths, ica_flags);
        else if (*eval_cmd) run_eval(paths);
        else if (*traverse_cmd) run_traverse(paths, traverse_flags);
        else if (*tsne_cmd) run_tsne(paths, tsne_flags);
        else if (*sweep_cmd) run_sweep(paths, sweep_flags);
    } catch (const FileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingFile;
    } catch (const ConfigError& e) {
        std::cerr << "config error in field '" << e.field() << "': " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
