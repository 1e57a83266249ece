#include "test_util.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/sampling.hpp"
#include "nvdiff/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace nvdiff;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.vae.latent_dim = 3;
    c.vae.encoder_layers = 2;
    c.vae.encoder_hidden = 8;
    c.vae.noise_dim = 2;
    c.vae.decoder_hidden = 8;
    c.score.num_layers = 1;
    c.score.hidden_dim = 8;
    c.score.num_heads = 2;
    c.score.time_emb_dim = 8;
    c.score.latent_dim = 3;
    return c;
}

Corpus small_corpus(int count, std::uint64_t seed) {
    auto spec = DatasetSpec::preset(DatasetName::CommunitySmall, seed);
    spec.count = count;
    return generate_dataset(spec);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

bool same_params(Model& a, Model& b) {
    auto pa = a.all_params(), pb = b.all_params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->value != pb[i]->value) return false;
    return a.norm.mean == b.norm.mean && a.norm.std == b.norm.std;
}

}  // namespace

TEST_CASE("kl_schedule ramps linearly then holds") {
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.kl_warmup_fraction = 0.2;
    cfg.kl_target = 0.7;
    CHECK(kl_schedule(cfg, 0.0) == 0.0);
    CHECK(kl_schedule(cfg, 10.0) == doctest::Approx(0.35));
    CHECK(kl_schedule(cfg, 20.0) == 0.7);
    CHECK(kl_schedule(cfg, 95.0) == 0.7);
    CHECK_THROWS_AS(kl_schedule(cfg, -1.0), RangeError);
    cfg.kl_warmup_fraction = 0.0;
    CHECK(kl_schedule(cfg, 0.0) == 0.7);
}

TEST_CASE("train config defaults and validation") {
    const TrainConfig d;
    CHECK(d.epochs == 4000);
    CHECK(d.batch_size == 8);
    CHECK(d.lr_vae == 1e-3);
    CHECK(d.weight_decay == 1e-4);
    CHECK(d.kl_target == 1.0);
    CHECK(d.finetune_epochs == 0);
    CHECK(d.grad_clip_norm == 1.0);

    TrainConfig bad;
    bad.batch_size = 0;
    bad.kl_target = 1.5;
    bad.lr_sgm = -1.0;
    try {
        bad.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("batch_size") != std::string::npos);
        CHECK(msg.find("kl_target") != std::string::npos);
        CHECK(msg.find("lr_sgm") != std::string::npos);
    }
}

TEST_CASE("vae objective: lambda 0, fixed prior, gradients") {
    Rng rng(1);
    Model model(tiny_model(), rng);
    const Corpus corpus = small_corpus(2, 3);
    const Batch batch{&corpus[0], &corpus[1]};
    Rng nr(5);
    const auto noise = draw_noise(batch, model.config, nr);

    // lambda = 0 is the plain reconstruction term
    const auto obj0 = vae_objective(ad::Binder::frozen(), model, batch, noise, 0.0);
    double recon = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Mat mean = encode_mean(ad::Binder::frozen(), model.vae.encoder, model.config.vae, *batch[k], noise[k].input)->value();
        const Mat z = mean + model.config.vae.posterior_std() * noise[k].posterior;
        recon -= log_likelihood(model.vae.decoder, model.config.vae, *batch[k], z);
    }
    CHECK(obj0.loss->value()(0, 0) == doctest::Approx(recon / 2.0).epsilon(1e-12));

    // standard-normal KL written out independently
    const auto objk = vae_objective(ad::Binder::frozen(), model, batch, noise, 0.5, true);
    double kl = 0.0;
    const double s2 = model.config.vae.posterior_var;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Mat mean = encode_mean(ad::Binder::frozen(), model.vae.encoder, model.config.vae, *batch[k], noise[k].input)->value();
        for (Eigen::Index i = 0; i < mean.size(); ++i) kl += 0.5 * (mean.data()[i] * mean.data()[i] + s2 - 1.0 - std::log(s2));
    }
    CHECK(objk.loss->value()(0, 0) == doctest::Approx((recon + 0.5 * kl) / 2.0).epsilon(1e-12));

    // the score term only adds
    const auto obj1 = vae_objective(ad::Binder::frozen(), model, batch, noise, 1.0);
    CHECK(obj1.loss->value()(0, 0) >= obj0.loss->value()(0, 0));

    auto params = model.vae_params();
    ad::Tape tape;
    auto tracked = vae_objective(ad::Binder(&tape, true), model, batch, noise, 0.8);
    tape.backward(tracked.loss);
    const auto grads = nn::gradients(tape, params);
    tracked.loss.reset();
    auto f = [&] { return vae_objective(ad::Binder::frozen(), model, batch, noise, 0.8).loss->value()(0, 0); };
    CHECK(testutil::fd_check(params, f, grads) <= 1e-3);

    CHECK_THROWS_AS(vae_objective(ad::Binder::frozen(), model, batch, noise, 1.5), RangeError);
}

TEST_CASE("vae objective reports the offending graph on non-finite loss") {
    Rng rng(2);
    Model model(tiny_model(), rng);
    const Corpus corpus = small_corpus(2, 4);
    const Batch batch{&corpus[0], &corpus[1]};
    Rng nr(5);
    auto noise = draw_noise(batch, model.config, nr);
    noise[1].weight = std::numeric_limits<double>::infinity();
    try {
        vae_objective(ad::Binder::frozen(), model, batch, noise, 0.5);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("index 1") != std::string::npos);
    }
}

TEST_CASE("sgm objective: nonnegative and gradient matches finite differences") {
    Rng rng(3);
    Model model(tiny_model(), rng);
    const Corpus corpus = small_corpus(2, 5);
    const Batch batch{&corpus[0], &corpus[1]};
    Rng nr(8);
    const auto noise = draw_noise(batch, model.config, nr);
    const auto obj = vae_objective(ad::Binder::frozen(), model, batch, noise, 0.0);

    auto params = model.score_params();
    ad::Tape tape;
    auto loss = sgm_objective(ad::Binder(&tape, true), model, obj.diffused, noise);
    CHECK(loss->value()(0, 0) >= 0.0);
    tape.backward(loss);
    const auto grads = nn::gradients(tape, params);
    auto f = [&] { return sgm_objective(ad::Binder::frozen(), model, obj.diffused, noise)->value()(0, 0); };
    CHECK(testutil::fd_check(params, f, grads) <= 1e-3);

    Rng lr(4);
    for (int i = 0; i < 5; ++i) CHECK(sgm_loss(batch, model, lr).loss >= 0.0);
}

TEST_CASE("finetune objective with zero noise equals reconstruction") {
    Rng rng(4);
    Model model(tiny_model(), rng);
    const Corpus corpus = small_corpus(3, 6);
    const Batch batch{&corpus[0], &corpus[1], &corpus[2]};
    Rng nr(1);
    const auto noise = draw_noise(batch, model.config, nr);
    std::vector<Mat> extra;
    for (const auto* g : batch) extra.push_back(testutil::random_mat(g->num_nodes(), 3, nr));
    const double ft = finetune_objective(ad::Binder::frozen(), model, batch, noise, extra, 0.0)->value()(0, 0);
    const double rec = vae_objective(ad::Binder::frozen(), model, batch, noise, 0.0).loss->value()(0, 0);
    CHECK(ft == doctest::Approx(rec).epsilon(1e-12));
    CHECK(finetune_objective(ad::Binder::frozen(), model, batch, noise, extra, 0.05)->value()(0, 0) != ft);
    CHECK_THROWS_AS(finetune_objective(ad::Binder::frozen(), model, batch, noise, extra, -1.0), RangeError);
}

TEST_CASE("trainer smoke run: finite losses and the alternation contract") {
    TrainConfig tc;
    tc.epochs = 25;
    tc.batch_size = 8;
    tc.seed = 3;
    Trainer trainer(tiny_model(), tc, small_corpus(16, 1));
    CHECK(trainer.total_steps() == 50);
    int steps = 0;
    while (!trainer.done()) {
        const StepStats st = trainer.step();
        CHECK(std::isfinite(st.loss_vae));
        CHECK(std::isfinite(st.loss_sgm));
        CHECK(st.alternation_ok);
        ++steps;
    }
    CHECK(steps == 50);
    CHECK(trainer.model().norm.initialized);
    CHECK(trainer.model().norm.std.minCoeff() > 0.0);
}

TEST_CASE("parameter hash tracks single-bit changes") {
    Rng rng(6);
    Model model(tiny_model(), rng);
    auto params = model.score_params();
    const auto h0 = nn::hash_params(params);
    CHECK(nn::hash_params(params) == h0);
    double& v = params[0]->value(0, 0);
    const double orig = v;
    v = std::nextafter(v, 1e9);
    CHECK(nn::hash_params(params) != h0);
    v = orig;
    CHECK(nn::hash_params(params) == h0);
}

TEST_CASE("training is deterministic and resumes bit-exactly") {
    TempDir dir("nvdiff_train_resume_test");
    const Corpus corpus = small_corpus(6, 2);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 11;
    tc.finetune_epochs = 1;
    tc.finetune_noise_var = 1e-3;

    TrainHooks ha, hb;
    ha.checkpoint_path = dir.path / "a.ckpt";
    hb.checkpoint_path = dir.path / "b.ckpt";
    const Checkpoint a = train(corpus, tiny_model(), tc, ha);
    const Checkpoint b = train(corpus, tiny_model(), tc, hb);
    CHECK(slurp(dir.path / "a.ckpt") == slurp(dir.path / "b.ckpt"));
    CHECK(slurp(dir.path / "a.ckpt.json") == slurp(dir.path / "b.ckpt.json"));

    // stop partway, go through disk, continue; the finetune phase is crossed after resuming
    Trainer first(tiny_model(), tc, corpus);
    for (int i = 0; i < 4; ++i) first.step();
    save_checkpoint(first.checkpoint(), dir.path / "mid.ckpt");
    const Checkpoint mid = load_checkpoint(dir.path / "mid.ckpt");
    CHECK(mid.step == 4);
    Model roundtrip = mid.model;
    CHECK(same_params(roundtrip, first.model()));
    CHECK(mid.vae_opt.m == first.checkpoint().vae_opt.m);
    CHECK(mid.rng_state == first.checkpoint().rng_state);

    Trainer resumed(mid, corpus);
    while (!resumed.done()) resumed.step();
    Model straight = a.model;
    CHECK(same_params(resumed.model(), straight));
    save_checkpoint(resumed.checkpoint(), dir.path / "c.ckpt");
    CHECK(slurp(dir.path / "a.ckpt") == slurp(dir.path / "c.ckpt"));
}

TEST_CASE("finetune phase only moves the decoder and lowers its loss") {
    const Corpus corpus = small_corpus(2, 7);
    TrainConfig tc;
    tc.epochs = 300;
    tc.batch_size = 2;
    tc.lr_vae = 3e-3;
    tc.finetune_epochs = 200;
    tc.finetune_noise_var = 1e-4;
    tc.seed = 5;
    Trainer trainer(tiny_model(), tc, corpus);
    while (trainer.steps_done() < trainer.main_steps()) trainer.step();

    Model before = trainer.model();
    std::vector<double> losses;
    while (!trainer.done()) {
        const StepStats st = trainer.step();
        CHECK(st.finetune);
        CHECK(st.alternation_ok);
        losses.push_back(st.loss_vae);
    }
    REQUIRE(losses.size() == 200);
    CHECK(nn::hash_params(before.encoder_params()) == nn::hash_params(trainer.model().encoder_params()));
    CHECK(nn::hash_params(before.score_params()) == nn::hash_params(trainer.model().score_params()));
    CHECK(nn::hash_params(before.decoder_params()) != nn::hash_params(trainer.model().decoder_params()));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 50; ++i) {
        head += losses[static_cast<std::size_t>(i)];
        tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail <= head);
}

TEST_CASE("importance-sampled likelihood is stable across seeds on an overfit model") {
    const Corpus corpus{GraphSample::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}})};
    TrainConfig tc;
    tc.epochs = 1500;
    tc.batch_size = 1;
    tc.lr_vae = 3e-3;
    tc.lr_sgm = 3e-3;
    tc.seed = 2;
    const Checkpoint ck = train(corpus, tiny_model(), tc);
    Rng r1(101), r2(202);
    const double a = nll_importance(ck.model, corpus[0], 64, r1);
    const double b = nll_importance(ck.model, corpus[0], 64, r2);
    MESSAGE("log-likelihood estimates " << a << " and " << b);
    CHECK(std::isfinite(a));
    CHECK(std::abs(a - b) < 0.5);
}
