#include "nvdiff/config.hpp"
#include "nvdiff/errors.hpp"
#include "nvdiff/eval.hpp"
#include "nvdiff/json_io.hpp"
#include "nvdiff/manifest.hpp"
#include "nvdiff/nvdiff_e.hpp"
#include "nvdiff/sampling.hpp"
#include "nvdiff/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace nvdiff;
namespace fs = std::filesystem;

namespace {

// Relative output paths land under $NVDIFF_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("NVDIFF_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
    return path;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ExperimentConfig config_from_arg(const std::string& arg) {
    if (fs::exists(arg)) return load_experiment_config(arg);
    for (const auto& name : preset_names())
        if (arg == name) return preset_config(name);
    throw IoError("config not found: " + arg + " (not a file or preset name)");
}

Corpus load_corpus(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("missing corpus file " + p.string());
    return deserialize_corpus(p);
}

// Training/test corpora: an explicit data directory, the config's corpus file, or the generator.
Split resolve_data(const ExperimentConfig& cfg, const std::string& data_dir) {
    if (!data_dir.empty()) {
        Split s;
        s.train = load_corpus(fs::path(data_dir) / "train.bin");
        if (fs::exists(fs::path(data_dir) / "test.bin")) s.test = load_corpus(fs::path(data_dir) / "test.bin");
        return s;
    }
    Rng rng = keyed_rng(cfg.seed, 0x5b117);
    const Corpus all = cfg.corpus.empty() ? generate_dataset(cfg.dataset) : load_corpus(cfg.corpus);
    return split_corpus(all, cfg.train_fraction, rng);
}

std::vector<int> parse_sizes(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad size '" + tok + "' in --sizes");
        }
        if (out.back() < 1) throw ConfigError("sizes must be positive");
    }
    if (out.size() < 2) throw ConfigError("--sizes needs at least two values");
    return out;
}

int cmd_gen_data(const std::string& spec_arg, const std::string& out, int count, std::int64_t seed, double frac) {
    DatasetSpec spec;
    if (fs::exists(spec_arg)) {
        spec = load_experiment_config(spec_arg).dataset;
    } else {
        spec = DatasetSpec::preset(dataset_from_string(spec_arg));
    }
    if (count >= 0) spec.count = count;
    if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
    if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("--train-fraction must be in (0, 1)");
    spec.validate();
    const Corpus all = generate_dataset(spec);
    Rng rng = keyed_rng(spec.seed, 0x5b117);
    const Split split = split_corpus(all, frac, rng);
    const fs::path dir = output_path(out);
    fs::create_directories(dir);
    serialize_corpus(split.train, dir / "train.bin");
    serialize_corpus(split.test, dir / "test.bin");
    nlohmann::json echo = spec;
    echo["train_fraction"] = frac;
    write_text(dir / "dataset.json", echo.dump(2) + "\n");
    write_manifest(dir);
    std::cout << "gen-data dataset=" << to_string(spec.name) << " train=" << split.train.size()
              << " test=" << split.test.size() << " dir=" << dir.string() << "\n";
    return 0;
}

int cmd_train(const std::string& cfg_arg, const std::string& data_dir, std::int64_t max_steps, const std::string& out,
              std::int64_t seed) {
    ExperimentConfig cfg = config_from_arg(cfg_arg);
    if (seed >= 0) cfg.seed = cfg.train.seed = static_cast<std::uint64_t>(seed);
    if (max_steps >= 0) cfg.train.max_steps = max_steps;
    if (!out.empty()) cfg.output_dir = out;
    cfg.validate();
    const fs::path dir = output_path(cfg.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");

    const Split data = resolve_data(cfg, data_dir);
    serialize_corpus(data.train, dir / "train.bin");
    if (!data.test.empty()) serialize_corpus(data.test, dir / "test.bin");

    TrainHooks hooks;
    hooks.checkpoint_path = dir / "model.ckpt";
    hooks.metrics_csv = dir / "metrics.csv";
    StepStats last;
    hooks.on_step = [&](const StepStats& st) { last = st; };
    const Checkpoint ck = train(data.train, cfg.model, cfg.train, hooks);
    write_manifest(dir);
    std::cout << "train steps=" << ck.step << " loss_vae=" << fmt(last.loss_vae) << " loss_sgm=" << fmt(last.loss_sgm)
              << " checkpoint=" << (dir / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_train_nvdiffe(const std::string& cfg_arg, const std::string& data_dir, int steps, const std::string& out,
                      std::int64_t seed) {
    ExperimentConfig cfg = config_from_arg(cfg_arg);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out.empty()) cfg.output_dir = out;
    cfg.validate();
    const fs::path dir = output_path(cfg.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    const Split data = resolve_data(cfg, data_dir);

    EnaTrainConfig tc;
    tc.steps = steps;
    tc.batch_size = cfg.train.batch_size;
    tc.lr = cfg.train.lr_sgm;
    tc.weight_decay = cfg.train.weight_decay;
    tc.grad_clip_norm = cfg.train.grad_clip_norm;
    tc.seed = cfg.seed;
    std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + (dir / "metrics.csv").string());
    metrics << "step,loss\n";
    metrics.precision(17);
    double last = 0.0;
    const EnaModel model = train_nvdiffe(data.train, cfg.ena, cfg.model.sde, tc, [&](int s, double l) {
        metrics << s << ',' << l << '\n';
        last = l;
    });
    metrics.close();
    save_ena_checkpoint(model, dir / "ena.ckpt");
    write_manifest(dir);
    std::cout << "train-nvdiffe steps=" << steps << " loss=" << fmt(last) << " checkpoint=" << (dir / "ena.ckpt").string()
              << "\n";
    return 0;
}

SolverConfig solver_from(const std::string& kind, int steps, double tol) {
    SolverConfig s;
    if (kind == "ode") s.kind = SolverKind::ProbabilityFlowOde;
    else if (kind == "em") s.kind = SolverKind::EulerMaruyama;
    else throw ConfigError("--solver must be ode or em");
    s.num_steps = steps;
    s.abs_tol = s.rel_tol = tol;
    s.validate();
    return s;
}

int cmd_sample(const std::string& ckpt, int count, const std::string& solver, int steps, double tol,
               std::uint64_t seed, const std::string& out, const std::string& traj, int grid, const std::string& mode) {
    if (count < 1) throw ConfigError("--count must be >= 1");
    if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt);
    const Checkpoint ck = load_checkpoint(ckpt);
    SampleOptions opts;
    opts.solver = solver_from(solver, steps, tol);
    if (mode == "argmax") opts.mode = DecodeMode::Argmax;
    else if (mode == "sample") opts.mode = DecodeMode::Sample;
    else throw ConfigError("--mode must be argmax or sample");
    if (!traj.empty()) {
        if (grid < 2) throw ConfigError("--grid must be >= 2");
        opts.trajectory_grid = uniform_time_grid(opts.solver.end_time(ck.model.config.sde), grid);
    }
    Rng rng(seed);
    const auto t0 = std::chrono::steady_clock::now();
    const SampleOutput res = sample_graphs(ck.model, count, opts, rng);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path path = output_path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    serialize_corpus(res.graphs, path);
    if (!traj.empty()) write_trajectory_csv(res.trajectory, output_path(traj));
    std::cout << "sample count=" << res.graphs.size() << " seconds=" << fmt(secs) << " out=" << path.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& samples_path, const std::string& test_path, const std::string& train_path,
             bool largest, const std::string& out, const std::string& csv) {
    const Corpus samples = load_corpus(samples_path);
    const Corpus test = load_corpus(test_path);
    Corpus train_corpus;
    if (!train_path.empty()) train_corpus = load_corpus(train_path);
    EvalOptions opts;
    opts.largest_component_only = largest;
    const EvalReport r = evaluate(samples, test, train_path.empty() ? nullptr : &train_corpus, opts);
    if (!out.empty()) write_text(output_path(out), r.to_json());
    if (!csv.empty()) write_text(output_path(csv), r.to_csv());
    std::cout << "eval mmd_degree=" << fmt(r.mmd_degree) << " mmd_cluster=" << fmt(r.mmd_cluster)
              << " mmd_orbit=" << fmt(r.mmd_orbit) << " uniqueness=" << fmt(r.uniqueness);
    if (r.novelty) std::cout << " novelty=" << fmt(*r.novelty);
    std::cout << "\n";
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& corpus_path, const std::string& task, int points,
              std::uint64_t seed, const std::string& out) {
    if (points < 2) throw ConfigError("--grid-points must be >= 2");
    const ProbeTask pt = parse_probe_task(task);
    const Checkpoint ck = load_checkpoint(ckpt);
    const Corpus corpus = load_corpus(corpus_path);
    std::vector<double> grid;
    for (int i = 0; i < points; ++i) grid.push_back(static_cast<double>(i) / (points - 1));
    ProbeOptions opts;
    opts.seed = seed;
    const auto curve = probe_contextual(ck.model, corpus, grid, pt, opts);
    std::ostringstream csv;
    csv.precision(17);
    csv << "t,metric,baseline,skipped\n";
    for (const auto& p : curve) csv << p.t << ',' << p.metric << ',' << p.baseline << ',' << (p.skipped ? 1 : 0) << '\n';
    write_text(output_path(out), csv.str());
    std::cout << "probe task=" << task << " points=" << curve.size() << " first=" << fmt(curve.front().metric)
              << " last=" << fmt(curve.back().metric) << " out=" << output_path(out).string() << "\n";
    return 0;
}

// "preset:NAME" builds untrained networks sized like that preset.
Model nv_model(const std::string& arg, std::uint64_t seed) {
    if (arg.rfind("preset:", 0) == 0) {
        const ExperimentConfig cfg = preset_config(arg.substr(7));
        Rng rng(seed);
        Model m(cfg.model, rng);
        m.train_sizes = {cfg.dataset.min_nodes, cfg.dataset.max_nodes};
        return m;
    }
    if (!fs::exists(arg)) throw IoError("missing checkpoint " + arg);
    return load_checkpoint(arg).model;
}

EnaModel nve_model(const std::string& arg, std::uint64_t seed) {
    if (arg.rfind("preset:", 0) == 0) {
        const ExperimentConfig cfg = preset_config(arg.substr(7));
        Rng rng(seed);
        return EnaModel(cfg.ena, cfg.model.sde, rng);
    }
    if (!fs::exists(arg)) throw IoError("missing checkpoint " + arg);
    return load_ena_checkpoint(arg);
}

int cmd_bench(const std::string& nv, const std::string& nve, const std::string& sizes_arg, int repeats,
              std::uint64_t seed, const std::string& out) {
    if (repeats < 1) throw ConfigError("--repeats must be >= 1");
    const auto sizes = parse_sizes(sizes_arg);
    const Model m = nv_model(nv, seed);
    const EnaModel e = nve_model(nve, seed);
    std::vector<double> x, a, b;
    std::ostringstream csv;
    csv.precision(17);
    csv << "N,seconds_nvdiff,seconds_nvdiffe\n";
    Rng rng(seed);
    for (int n : sizes) {
        const double ta = time_reverse_step(m, n, repeats, rng);
        const double tb = time_reverse_step_nvdiffe(e, n, repeats, rng);
        x.push_back(n);
        a.push_back(ta);
        b.push_back(tb);
        csv << n << ',' << ta << ',' << tb << '\n';
    }
    const double sa = loglog_slope(x, a), sb = loglog_slope(x, b);
    csv << "# slope_nvdiff=" << sa << " slope_nvdiffe=" << sb << '\n';
    write_text(output_path(out), csv.str());
    std::cout << "bench-speed slope_nvdiff=" << fmt(sa) << " slope_nvdiffe=" << fmt(sb) << " out=" << output_path(out).string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nvdiff: graph generation by diffusing latent node vectors"};
    app.require_subcommand(1);

    std::string a1, a2, a3, out, data, csv, traj, solver = "ode", mode = "sample", task = "cycle_detect";
    std::string sizes = "50,100,200,400";
    std::int64_t max_steps = -1, seed_opt = -1;
    int count = -1, steps = 1000, grid = 11, points = 21, repeats = 5, ena_steps = 1000;
    double tol = 1e-5, frac = 0.8;
    std::uint64_t seed = 0;
    bool largest = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and its train/test split");
    gen->add_option("spec", a1, "dataset name or experiment config")->required();
    gen->add_option("-o,--out", out, "output directory")->required();
    gen->add_option("--count", count, "number of graphs");
    gen->add_option("--seed", seed_opt, "generator seed");
    gen->add_option("--train-fraction", frac, "train share of the split");

    auto* tr = app.add_subcommand("train", "train the latent-diffusion model");
    tr->add_option("config", a1, "experiment config file or preset name")->required();
    tr->add_option("--data", data, "directory holding train.bin (and test.bin)");
    tr->add_option("--max-steps", max_steps, "cap on main-phase steps");
    tr->add_option("-o,--out", out, "run directory");
    tr->add_option("--seed", seed_opt, "seed override");

    auto* tre = app.add_subcommand("train-nvdiffe", "train the data-space baseline");
    tre->add_option("config", a1, "experiment config file or preset name")->required();
    tre->add_option("--data", data, "directory holding train.bin");
    tre->add_option("--steps", ena_steps, "optimizer steps");
    tre->add_option("-o,--out", out, "run directory");
    tre->add_option("--seed", seed_opt, "seed override");

    auto* sm = app.add_subcommand("sample", "sample graphs from a checkpoint");
    sm->add_option("checkpoint", a1, "model checkpoint")->required();
    sm->add_option("--count", count, "number of graphs")->required();
    sm->add_option("--solver", solver, "ode or em");
    sm->add_option("--steps", steps, "Euler-Maruyama steps");
    sm->add_option("--tol", tol, "ODE absolute and relative tolerance");
    sm->add_option("--seed", seed, "sampling seed");
    sm->add_option("--mode", mode, "argmax or sample");
    sm->add_option("-o,--out", out, "output corpus file")->required();
    sm->add_option("--trajectory", traj, "latent trajectory CSV");
    sm->add_option("--grid", grid, "trajectory grid points");

    auto* ev = app.add_subcommand("eval", "MMD and uniqueness/novelty of samples against a test corpus");
    ev->add_option("samples", a1, "sample corpus")->required();
    ev->add_option("test", a2, "reference corpus")->required();
    ev->add_option("--train", a3, "training corpus for novelty");
    ev->add_flag("--largest-component", largest, "keep only each sample's largest component");
    ev->add_option("-o,--out", out, "report JSON");
    ev->add_option("--csv", csv, "report CSV");

    auto* pr = app.add_subcommand("probe", "contextual-vector probe curve over t");
    pr->add_option("checkpoint", a1, "model checkpoint")->required();
    pr->add_option("corpus", a2, "graphs to probe")->required();
    pr->add_option("--task", task, "cycle_detect, diameter or degree_class_count");
    pr->add_option("--grid-points", points, "evenly spaced t values in [0, 1]");
    pr->add_option("--seed", seed, "probe seed");
    pr->add_option("-o,--out", out, "curve CSV")->required();

    auto* bs = app.add_subcommand("bench-speed", "per-step reverse-integration time against graph size");
    bs->add_option("nvdiff", a1, "checkpoint or preset:NAME")->required();
    bs->add_option("nvdiffe", a2, "data-space checkpoint or preset:NAME")->required();
    bs->add_option("--sizes", sizes, "comma-separated graph sizes");
    bs->add_option("--repeats", repeats, "timed calls per size (median)");
    bs->add_option("--seed", seed, "seed");
    bs->add_option("-o,--out", out, "CSV output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen_data(a1, out, count, seed_opt, frac);
        if (*tr) return cmd_train(a1, data, max_steps, out, seed_opt);
        if (*tre) return cmd_train_nvdiffe(a1, data, ena_steps, out, seed_opt);
        if (*sm) return cmd_sample(a1, count, solver, steps, tol, seed, out, traj, grid, mode);
        if (*ev) return cmd_eval(a1, a2, a3, largest, out, csv);
        if (*pr) return cmd_probe(a1, a2, task, points, seed, out);
        if (*bs) return cmd_bench(a1, a2, sizes, repeats, seed, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const ParseError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
