#include "nvdiff/config.hpp"
#include "nvdiff/errors.hpp"
#include "nvdiff/manifest.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace nvdiff;

TEST_CASE("presets carry the hyperparameter table") {
    const auto cs = preset_config("community-small");
    CHECK(cs.model.vae.latent_dim == 4);
    CHECK(cs.model.vae.noise_dim == 8);
    CHECK(cs.model.vae.posterior_var == 0.01);
    CHECK(cs.model.vae.encoder_hidden == 32);
    CHECK(cs.model.score.num_layers == 3);
    CHECK(cs.model.score.hidden_dim == 16);
    CHECK(cs.model.score.num_heads == 2);
    CHECK(cs.model.score.time_emb_dim == 16);
    CHECK(preset_config("qm9").model.score.time_emb_dim == 16);
    CHECK(cs.train.lr_vae == 1e-3);
    CHECK(cs.train.weight_decay == 1e-4);
    CHECK(cs.train.kl_target == 1.0);
    CHECK(cs.train.epochs == 4000);
    CHECK(cs.train.batch_size == 8);
    CHECK(cs.train.finetune_epochs == 0);
    CHECK(cs.solver.abs_tol == 1e-5);
    CHECK(cs.dataset.min_nodes == 12);
    CHECK(cs.dataset.max_nodes == 20);

    const auto zinc = preset_config("zinc250k");
    CHECK(zinc.model.vae.num_node_types == 9);
    CHECK(zinc.model.vae.latent_dim == 32);
    CHECK(zinc.model.vae.posterior_var == 0.0025);
    CHECK(zinc.train.finetune_noise_var == 0.025);
    CHECK(zinc.train.kl_target == 0.7);

    const auto ego = preset_config("ego");
    CHECK(ego.eval.largest_component_only);
    CHECK(ego.model.score.num_heads == 4);
    CHECK(ego.train.epochs == 15000);

    CHECK(preset_names().size() == 6);
    for (const auto& name : preset_names()) {
        const auto c = preset_config(name);
        CHECK(c.ena.num_node_types == c.model.vae.num_node_types);
        CHECK(c.model.score.latent_dim == c.model.vae.latent_dim);
    }
    CHECK_THROWS_AS(preset_config("cora"), ConfigError);
}

TEST_CASE("experiment config: inheritance and overrides") {
    const auto c = parse_experiment_config(nlohmann::json::parse(R"({"preset": "ego-small", "train": {"epochs": 12}})"));
    CHECK(c.train.epochs == 12);
    CHECK(c.train.batch_size == 8);
    CHECK(c.eval.largest_component_only);
    CHECK(c.preset == "ego-small");

    const auto d = parse_experiment_config(nlohmann::json::object());
    CHECK(d.preset == "community-small");

    // switching generators without a range adopts the new generator's range
    const auto e = parse_experiment_config(nlohmann::json::parse(R"({"dataset": {"name": "ego-small"}})"));
    CHECK(e.dataset.min_nodes == 4);
    CHECK(e.dataset.max_nodes == 18);

    // round trip through the echo
    const auto back = parse_experiment_config(to_json(c));
    CHECK(to_json(back) == to_json(c));
}

TEST_CASE("experiment config: unknown keys and every violated field are reported") {
    try {
        parse_experiment_config(nlohmann::json::parse(R"({"train": {"epoch": 3}, "bogus": 1})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train.epoch") != std::string::npos);
        CHECK(msg.find("bogus") != std::string::npos);
    }
    try {
        parse_experiment_config(nlohmann::json::parse(
            R"({"train": {"batch_size": 0}, "model": {"score": {"hidden_dim": 15}}, "num_samples": 0, "train_fraction": 1.5})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("batch_size") != std::string::npos);
        CHECK(msg.find("hidden_dim") != std::string::npos);
        CHECK(msg.find("num_samples") != std::string::npos);
        CHECK(msg.find("train_fraction") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_experiment_config(nlohmann::json::parse(R"({"preset": "qm9"})")), ConfigError);
    const auto q = parse_experiment_config(nlohmann::json::parse(R"({"preset": "qm9", "corpus": "qm9.bin"})"));
    CHECK(q.model.vae.num_node_types == 4);
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
}

// expected ids from `git hash-object`
TEST_CASE("manifest hashes match git blob ids") {
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_sha1("hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");

    const auto dir = std::filesystem::temp_directory_path() / "nvdiff_manifest_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir / "sub");
    std::ofstream(dir / "a.txt") << "hello world\n";
    std::ofstream(dir / "sub" / "b.txt") << "";
    write_manifest(dir);
    std::ifstream in(dir / "manifest.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["files"]["a.txt"]["sha1"] == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
    CHECK(j["files"]["a.txt"]["bytes"] == 12);
    CHECK(j["files"]["sub/b.txt"]["sha1"] == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK_FALSE(j["files"].contains("manifest.json"));
    std::filesystem::remove_all(dir);
}
