#include "nvdiff/model.hpp"

#include "nvdiff/errors.hpp"

#include <cmath>
#include <string>

namespace nvdiff {

namespace {

template <class F>
void collect_error(std::vector<std::string>& out, F&& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        out.emplace_back(e.what());
    }
}

}  // namespace

void ModelConfig::validate() const {
    std::vector<std::string> errors;
    collect_error(errors, [&] { vae.validate(); });
    collect_error(errors, [&] { score.validate(); });
    collect_error(errors, [&] { sde.validate(); });
    if (vae.latent_dim != score.latent_dim) {
        errors.push_back("latent_dim mismatch: vae " + std::to_string(vae.latent_dim) + " vs score_net " +
                         std::to_string(score.latent_dim));
    }
    if (!errors.empty()) {
        std::string msg;
        for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
        throw ConfigError(msg);
    }
}

LatentNorm::LatentNorm(int dim) : mean(Mat::Zero(1, dim)), std(Mat::Ones(1, dim)) {}

void LatentNorm::update(const std::vector<Mat>& latents) {
    if (latents.empty()) return;
    const Eigen::Index d = latents.front().cols();
    Mat sum = Mat::Zero(1, d), sq = Mat::Zero(1, d);
    double count = 0.0;
    for (const Mat& z : latents) {
        if (z.cols() != d) throw DimensionError("LatentNorm::update: inconsistent latent widths");
        sum += z.colwise().sum();
        sq += z.array().square().matrix().colwise().sum();
        count += static_cast<double>(z.rows());
    }
    const Mat m = sum / count;
    Mat s = (sq / count - m.cwiseProduct(m)).cwiseMax(0.0).cwiseSqrt();
    s = s.cwiseMax(1e-6);
    if (!initialized) {
        mean = m;
        std = s;
        initialized = true;
        return;
    }
    mean = momentum * mean + (1.0 - momentum) * m;
    std = momentum * std + (1.0 - momentum) * s;
}

Mat LatentNorm::normalize(const Mat& z) const {
    return (z.rowwise() - mean.row(0)).array().rowwise() / std.row(0).array();
}

Mat LatentNorm::denormalize(const Mat& z) const {
    Mat out = z.array().rowwise() * std.row(0).array();
    out.rowwise() += mean.row(0);
    return out;
}

Model::Model(const ModelConfig& cfg, Rng& rng)
    : config(cfg), vae(cfg.vae, rng), score(cfg.score, rng), norm(cfg.vae.latent_dim) {
    cfg.validate();
}

nn::ParamList Model::encoder_params() {
    nn::ParamList out;
    vae.collect_encoder(out);
    return out;
}

nn::ParamList Model::decoder_params() {
    nn::ParamList out;
    vae.collect_decoder(out);
    return out;
}

nn::ParamList Model::vae_params() {
    nn::ParamList out;
    vae.collect_encoder(out);
    vae.collect_decoder(out);
    return out;
}

nn::ParamList Model::score_params() {
    nn::ParamList out;
    score.collect(out);
    return out;
}

nn::ParamList Model::all_params() {
    auto out = vae_params();
    score.collect(out);
    return out;
}

}  // namespace nvdiff
