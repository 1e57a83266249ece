#include "nvdiff/score_net.hpp"

#include "nvdiff/errors.hpp"

#include <cmath>
#include <string>

namespace nvdiff {

void ScoreNetConfig::validate() const {
    if (num_layers < 1) throw ConfigError("score_net.num_layers must be >= 1");
    if (hidden_dim < 1 || num_heads < 1) throw ConfigError("score_net.hidden_dim and num_heads must be >= 1");
    if (hidden_dim % num_heads != 0) throw ConfigError("score_net.hidden_dim must be divisible by num_heads");
    if (time_emb_dim < 2 || time_emb_dim % 2 != 0) throw ConfigError("score_net.time_emb_dim must be even and >= 2");
    if (latent_dim < 1) throw ConfigError("score_net.latent_dim must be >= 1");
}

ScoreNetParams::ScoreNetParams(const ScoreNetConfig& cfg, Rng& rng) {
    cfg.validate();
    input = nn::Mlp(cfg.latent_dim + cfg.time_emb_dim, cfg.hidden_dim, cfg.hidden_dim, "score.in", rng);
    for (int l = 0; l < cfg.num_layers; ++l) {
        blocks.emplace_back(cfg.hidden_dim, cfg.num_heads, "score.block" + std::to_string(l), rng);
    }
    output_norm = nn::LayerNorm(cfg.hidden_dim, "score.out_norm");
    output = nn::Mlp(cfg.hidden_dim, cfg.hidden_dim, cfg.latent_dim, "score.out", rng);
    context_seed.name = "score.g0";
    context_seed.value.resize(1, cfg.hidden_dim);
    for (Eigen::Index i = 0; i < context_seed.value.size(); ++i) context_seed.value.data()[i] = 0.02 * rng.normal();
}

void ScoreNetParams::collect(nn::ParamList& out) {
    input.collect(out);
    for (auto& b : blocks) b.collect(out);
    output_norm.collect(out);
    output.collect(out);
    out.push_back(&context_seed);
}

Mat time_embedding(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw DimensionError("time_embedding: dim must be even and >= 2, got " + std::to_string(dim));
    Mat pe(1, dim);
    for (int k = 0; k < dim / 2; ++k) {
        const double w = std::pow(1000.0, 2.0 * k / dim);
        pe(0, 2 * k) = std::sin(t * w);
        pe(0, 2 * k + 1) = std::cos(t * w);
    }
    return pe;
}

ScoreVars score_forward(const ad::Binder& bind, const ScoreNetParams& params, const ScoreNetConfig& cfg,
                        const ad::Var& z_t, double t) {
    const Mat& z = z_t->value();
    if (z.cols() != cfg.latent_dim || z.rows() < 1) {
        throw DimensionError("score_forward: expected N x " + std::to_string(cfg.latent_dim) + " latents, got " +
                             std::to_string(z.rows()) + "x" + std::to_string(z.cols()));
    }
    if (!z.allFinite()) throw DimensionError("score_forward: non-finite latent input");
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("score_forward: t outside [0,1]");

    const Mat pe = time_embedding(t, cfg.time_emb_dim).replicate(z.rows(), 1);
    ad::Var h = params.input(bind, ad::concat_cols({z_t, ad::constant(pe)}));
    ad::Var tokens = ad::concat_rows({bind(params.context_seed), h});
    for (const auto& block : params.blocks) tokens = block(bind, tokens);

    ad::Var context = ad::slice_rows(tokens, 0, 1);
    ad::Var nodes = ad::slice_rows(tokens, 1, z.rows());
    ad::Var eps = params.output(bind, params.output_norm(bind, nodes));
    return {eps, context};
}

ScoreResult score_forward(const ScoreNetParams& params, const ScoreNetConfig& cfg, const Mat& z_t, double t) {
    auto out = score_forward(ad::Binder::frozen(), params, cfg, ad::constant_ref(z_t), t);
    return {out.epsilon_hat->value(), out.context->value()};
}

}  // namespace nvdiff
