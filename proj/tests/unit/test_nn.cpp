#include "test_util.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/nn.hpp"

#include <doctest.h>

using namespace nvdiff;
using ad::Mat;
using ad::Var;

TEST_CASE("nn: attention block gradient matches finite differences") {
    Rng rng(3);
    nn::AttentionBlock block(8, 2, "blk", rng);
    nn::Linear head(8, 1, "head", rng);
    nn::ParamList params;
    block.collect(params);
    head.collect(params);
    const Mat x = testutil::random_mat(4, 8, rng);
    auto loss = [&](const ad::Binder& B) { return ad::sum(head(B, block(B, ad::constant(x)))); };
    ad::Tape tape;
    Var out = loss(ad::Binder(&tape, true));
    tape.backward(out);
    auto grads = nn::gradients(tape, params);
    double err = testutil::fd_check(params, [&] { return loss(ad::Binder::frozen())->value()(0, 0); }, grads);
    CHECK(err < 1e-3);
}

TEST_CASE("nn: attention heads must divide width") {
    Rng rng(0);
    CHECK_THROWS_AS(nn::MultiHeadAttention(10, 4, "m", rng), DimensionError);
}

TEST_CASE("nn: adam first step moves each weight by about lr") {
    ad::Param p{"p", Mat::Constant(1, 3, 1.0)};
    nn::Adam opt({&p}, {.lr = 0.1});
    Mat g(1, 3);
    g << 2.0, -0.5, 1e-3;
    opt.step({g});
    CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(1.1).epsilon(1e-6));
    CHECK(p.value(0, 2) == doctest::Approx(0.9).epsilon(1e-4));
    CHECK(opt.steps() == 1);
}

TEST_CASE("nn: global norm clipping") {
    std::vector<Mat> g{Mat::Constant(1, 1, 3.0), Mat::Constant(1, 1, 4.0)};
    double before = nn::clip_global_norm(g, 1.0);
    CHECK(before == doctest::Approx(5.0));
    CHECK(nn::global_norm(g) == doctest::Approx(1.0));
    std::vector<Mat> small{Mat::Constant(1, 1, 0.5)};
    nn::clip_global_norm(small, 1.0);
    CHECK(small[0](0, 0) == 0.5);
}

TEST_CASE("nn: parameter hash changes with any byte") {
    ad::Param p{"p", Mat::Zero(2, 2)};
    const auto h0 = nn::hash_params({&p});
    p.value(1, 1) = 1e-300;
    CHECK(nn::hash_params({&p}) != h0);
}
