#pragma once

#include "nvdiff/autodiff.hpp"
#include "nvdiff/nn.hpp"
#include "nvdiff/rng.hpp"

#include <vector>

namespace nvdiff {

using ad::Mat;

struct ScoreNetConfig {
    int num_layers = 3;
    int hidden_dim = 16;
    int num_heads = 2;
    int time_emb_dim = 16;
    int latent_dim = 4;

    void validate() const;
};

// Noise-prediction network over a set of node vectors. A learnable global token g
// is prepended to the node tokens and carried through every attention block.
struct ScoreNetParams {
    nn::Mlp input;                          // [z ; pe(t)] -> hidden
    std::vector<nn::AttentionBlock> blocks;
    nn::LayerNorm output_norm;
    nn::Mlp output;                         // hidden -> d
    ad::Param context_seed;                 // g0, 1 x hidden

    ScoreNetParams() = default;
    ScoreNetParams(const ScoreNetConfig& cfg, Rng& rng);
    void collect(nn::ParamList& out);
};

// Component 2k = sin(t w_k), 2k+1 = cos(t w_k), w_k = 1000^(2k/dim).
Mat time_embedding(double t, int dim);

struct ScoreVars {
    ad::Var epsilon_hat;  // N x d
    ad::Var context;      // 1 x hidden
};

ScoreVars score_forward(const ad::Binder& bind, const ScoreNetParams& params, const ScoreNetConfig& cfg,
                        const ad::Var& z_t, double t);

struct ScoreResult {
    Mat epsilon_hat;
    Mat context;
};

ScoreResult score_forward(const ScoreNetParams& params, const ScoreNetConfig& cfg, const Mat& z_t, double t);

}  // namespace nvdiff
