#pragma once

#include "nvdiff/graph.hpp"
#include "nvdiff/score_net.hpp"
#include "nvdiff/sde.hpp"
#include "nvdiff/vae.hpp"

#include <vector>

namespace nvdiff {

struct ModelConfig {
    VaeConfig vae;
    ScoreNetConfig score;
    sde::VpsdeConfig sde;
    sde::TimeSampling time_sampling = sde::TimeSampling::Importance;

    // Throws ConfigError listing every violated constraint.
    void validate() const;
};

// Running per-dimension mean/std of encoder latents. The diffusion prior is trained
// on normalized latents; samples are mapped back before decoding.
struct LatentNorm {
    Mat mean;  // 1 x d
    Mat std;   // 1 x d
    double momentum = 0.99;
    bool initialized = false;

    explicit LatentNorm(int dim = 0);
    void update(const std::vector<Mat>& latents);
    Mat normalize(const Mat& z) const;
    Mat denormalize(const Mat& z) const;
};

struct Model {
    ModelConfig config;
    VaeParams vae;
    ScoreNetParams score;
    LatentNorm norm;
    std::vector<int> train_sizes;  // graph sizes seen in training, for the size prior

    Model() = default;
    Model(const ModelConfig& cfg, Rng& rng);

    nn::ParamList encoder_params();
    nn::ParamList decoder_params();
    nn::ParamList vae_params();    // encoder then decoder
    nn::ParamList score_params();
    nn::ParamList all_params();
};

}  // namespace nvdiff
