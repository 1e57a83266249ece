#include "test_util.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/graph.hpp"
#include "nvdiff/score_net.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace nvdiff;

TEST_CASE("time_embedding") {
    Mat pe0 = time_embedding(0.0, 16);
    REQUIRE(pe0.cols() == 16);
    for (int k = 0; k < 8; ++k) {
        CHECK(pe0(0, 2 * k) == 0.0);
        CHECK(pe0(0, 2 * k + 1) == 1.0);
    }
    // w_0 = 1, so the first pair has period 2 pi.
    Mat a = time_embedding(0.3, 16), b = time_embedding(0.3 + 2.0 * M_PI, 16);
    CHECK(a(0, 0) == doctest::Approx(b(0, 0)).epsilon(1e-12));
    CHECK(a(0, 1) == doctest::Approx(b(0, 1)).epsilon(1e-12));
    Mat c = time_embedding(0.77, 16);
    CHECK(c.cwiseAbs().maxCoeff() <= 1.0);
    CHECK_THROWS_AS(time_embedding(0.5, 7), DimensionError);
}

TEST_CASE("score_forward: shapes, errors, determinism") {
    Rng rng(1);
    ScoreNetConfig cfg;
    ScoreNetParams p(cfg, rng);
    auto one = score_forward(p, cfg, testutil::random_mat(1, 4, rng), 0.5);
    CHECK(one.epsilon_hat.rows() == 1);
    CHECK(one.epsilon_hat.cols() == 4);
    CHECK(one.epsilon_hat.allFinite());
    CHECK(one.context.cols() == cfg.hidden_dim);

    Mat z = testutil::random_mat(7, 4, rng);
    CHECK(score_forward(p, cfg, z, 0.3).epsilon_hat == score_forward(p, cfg, z, 0.3).epsilon_hat);
    CHECK_THROWS_AS(score_forward(p, cfg, testutil::random_mat(3, 5, rng), 0.3), DimensionError);
    z(2, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(score_forward(p, cfg, z, 0.3), DimensionError);
    CHECK(p.context_seed.value.cols() == cfg.hidden_dim);

    ScoreNetConfig bad = cfg;
    bad.num_heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("score_forward: row equivariance and context invariance") {
    Rng rng(2);
    ScoreNetConfig cfg;
    ScoreNetParams p(cfg, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 19;
        Mat z = testutil::random_mat(n, 4, rng);
        const double t = rng.uniform();
        auto perm = Permutation::random(n, rng);
        auto base = score_forward(p, cfg, z, t);
        auto moved = score_forward(p, cfg, perm.apply_rows(z), t);
        CHECK((moved.epsilon_hat - perm.apply_rows(base.epsilon_hat)).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((moved.context - base.context).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("score_forward: parameter gradients match finite differences") {
    Rng rng(3);
    ScoreNetConfig cfg{.num_layers = 1, .hidden_dim = 8, .num_heads = 2, .time_emb_dim = 4, .latent_dim = 2};
    ScoreNetParams p(cfg, rng);
    nn::ParamList params;
    p.collect(params);
    const Mat z = testutil::random_mat(3, 2, rng);
    const Mat target = testutil::random_mat(3, 2, rng);
    auto loss = [&](const ad::Binder& B) {
        auto out = score_forward(B, p, cfg, ad::constant(z), 0.4);
        return ad::squared_norm(ad::sub(out.epsilon_hat, ad::constant(target)));
    };
    ad::Tape tape;
    auto out = loss(ad::Binder(&tape, true));
    tape.backward(out);
    auto grads = nn::gradients(tape, params);
    CHECK(testutil::fd_check(params, [&] { return loss(ad::Binder::frozen())->value()(0, 0); }, grads) < 1e-3);
}
