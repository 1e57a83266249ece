#include "nvdiff/config.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/json_io.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace nvdiff {

namespace {

struct Column {
    const char* name;
    int node_types, edge_types;
    int latent;
    int enc_layers, enc_hidden;
    double post_var;
    int dec_layers, dec_hidden;
    int finetune_epochs;
    double finetune_var;
    int score_layers, score_hidden, heads;
    double lr, kl;
    int epochs, batch, samples;
    double ode_tol;
    const char* dataset;  // nullptr: no bundled generator
    bool largest_component;
};

// One row per hyperparameter-table column.
constexpr Column kColumns[] = {
    {"qm9", 4, 3, 16, 3, 64, 0.01, 3, 64, 200, 1e-4, 3, 64, 4, 1e-4, 0.7, 1000, 256, 10000, 1e-4, nullptr, false},
    {"zinc250k", 9, 3, 32, 5, 64, 0.0025, 3, 64, 200, 0.025, 5, 64, 4, 1e-4, 0.7, 2000, 256, 10000, 1e-4, nullptr, false},
    {"community", 1, 1, 8, 3, 64, 0.01, 1, 64, 0, 0.0, 3, 32, 2, 1e-4, 1.0, 15000, 4, 128, 1e-4, "community", false},
    {"ego", 1, 1, 4, 3, 64, 0.01, 1, 64, 0, 0.0, 3, 32, 4, 1e-4, 1.0, 15000, 4, 128, 1e-4, "ego", true},
    {"community-small", 1, 1, 4, 3, 32, 0.01, 1, 32, 0, 0.0, 3, 16, 2, 1e-3, 1.0, 4000, 8, 128, 1e-5, "community-small", false},
    {"ego-small", 1, 1, 4, 3, 32, 0.01, 1, 32, 0, 0.0, 3, 16, 4, 1e-3, 1.0, 4000, 8, 128, 1e-5, "ego-small", true},
};

const Column* find_column(const std::string& name) {
    for (const auto& c : kColumns)
        if (name == c.name) return &c;
    return nullptr;
}

void collect(std::vector<std::string>& errors, const std::function<void()>& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        errors.emplace_back(e.what());
    }
}

void find_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix,
                  std::vector<std::string>& out) {
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (prefix.empty() && it.key() == "preset") continue;
        if (!known.contains(it.key())) {
            out.push_back("unknown key '" + key + "'");
            continue;
        }
        if (it->is_object() && known.at(it.key()).is_object()) find_unknown(*it, known.at(it.key()), key, out);
    }
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& c : kColumns) out.emplace_back(c.name);
    return out;
}

ExperimentConfig preset_config(const std::string& name) {
    const Column* c = find_column(name);
    if (!c) {
        std::string known;
        for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (" + known + ")");
    }
    ExperimentConfig e;
    e.preset = c->name;
    if (c->dataset) e.dataset = DatasetSpec::preset(dataset_from_string(c->dataset));
    e.model.vae.num_node_types = c->node_types;
    e.model.vae.num_edge_types = c->edge_types;
    e.model.vae.latent_dim = c->latent;
    e.model.vae.encoder_layers = c->enc_layers;
    e.model.vae.encoder_hidden = c->enc_hidden;
    e.model.vae.noise_dim = 8;
    e.model.vae.posterior_var = c->post_var;
    e.model.vae.decoder_layers = c->dec_layers;
    e.model.vae.decoder_hidden = c->dec_hidden;
    e.model.score.num_layers = c->score_layers;
    e.model.score.hidden_dim = c->score_hidden;
    e.model.score.num_heads = c->heads;
    e.model.score.time_emb_dim = 16;
    e.model.score.latent_dim = c->latent;
    e.train.epochs = c->epochs;
    e.train.batch_size = c->batch;
    e.train.lr_vae = e.train.lr_sgm = c->lr;
    e.train.weight_decay = 1e-4;
    e.train.kl_target = c->kl;
    e.train.finetune_epochs = c->finetune_epochs;
    e.train.finetune_noise_var = c->finetune_var;
    e.solver.abs_tol = e.solver.rel_tol = c->ode_tol;
    e.eval.largest_component_only = c->largest_component;
    e.ena.num_layers = c->score_layers;
    e.ena.hidden_dim = c->score_hidden;
    e.ena.num_heads = c->heads;
    e.ena.time_emb_dim = 16;
    e.ena.num_node_types = c->node_types;
    e.ena.num_edge_types = c->edge_types;
    e.num_samples = c->samples;
    e.output_dir = std::string("runs/") + c->name;
    return e;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> errors;
    if (corpus.empty()) {
        if (!preset.empty() && find_column(preset) && !find_column(preset)->dataset)
            errors.push_back("corpus: preset '" + preset + "' has no bundled generator; set \"corpus\" to a corpus file");
        else
            collect(errors, [&] { dataset.validate(); });
    }
    collect(errors, [&] { model.validate(); });
    collect(errors, [&] { train.validate(); });
    collect(errors, [&] { solver.validate(); });
    collect(errors, [&] { ena.validate(); });
    if (ena.num_node_types != model.vae.num_node_types || ena.num_edge_types != model.vae.num_edge_types)
        errors.push_back("ena node/edge type counts must match model.vae");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) errors.push_back("train_fraction must be in (0, 1)");
    if (num_samples < 1) errors.push_back("num_samples must be >= 1");
    if (output_dir.empty()) errors.push_back("output_dir must be nonempty");
    if (!(eval.sigma_degree > 0.0 && eval.sigma_cluster > 0.0 && eval.sigma_orbit > 0.0))
        errors.push_back("eval sigmas must be positive");
    if (!errors.empty()) {
        std::string msg;
        for (const auto& s : errors) msg += (msg.empty() ? "" : "; ") + s;
        throw ConfigError(msg);
    }
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["preset"] = c.preset;
    j["dataset"] = c.dataset;
    j["corpus"] = c.corpus;
    j["train_fraction"] = c.train_fraction;
    j["model"] = c.model;
    j["train"] = c.train;
    j["solver"] = c.solver;
    j["eval"] = c.eval;
    j["ena"] = c.ena;
    j["num_samples"] = c.num_samples;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    return j;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    const std::string preset = j.value("preset", std::string("community-small"));
    ExperimentConfig base = preset_config(preset);
    nlohmann::json merged = to_json(base);
    std::vector<std::string> unknown;
    find_unknown(j, merged, "", unknown);
    if (!unknown.empty()) {
        std::string msg;
        for (const auto& s : unknown) msg += (msg.empty() ? "" : "; ") + s;
        throw ConfigError(msg);
    }
    // switching the generator without giving a range picks up the new generator's range
    if (j.contains("dataset") && j["dataset"].is_object() && j["dataset"].contains("name")) {
        if (!j["dataset"].contains("min_nodes")) merged["dataset"].erase("min_nodes");
        if (!j["dataset"].contains("max_nodes")) merged["dataset"].erase("max_nodes");
    }
    merged.merge_patch(j);
    ExperimentConfig out;
    try {
        out.preset = preset;
        out.dataset = merged.at("dataset").get<DatasetSpec>();
        out.corpus = merged.at("corpus").get<std::string>();
        out.train_fraction = merged.at("train_fraction").get<double>();
        out.model = merged.at("model").get<ModelConfig>();
        out.train = merged.at("train").get<TrainConfig>();
        out.solver = merged.at("solver").get<SolverConfig>();
        out.eval = merged.at("eval").get<EvalOptions>();
        out.ena = merged.at("ena").get<EnaConfig>();
        out.num_samples = merged.at("num_samples").get<int>();
        out.output_dir = merged.at("output_dir").get<std::string>();
        out.seed = merged.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    out.validate();
    return out;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace nvdiff
