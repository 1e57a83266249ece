#pragma once

#include "nvdiff/graph.hpp"
#include "nvdiff/model.hpp"
#include "nvdiff/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nvdiff {

struct TrainConfig {
    int epochs = 4000;
    int batch_size = 8;
    double lr_vae = 1e-3;
    double lr_sgm = 1e-3;
    double weight_decay = 1e-4;
    double kl_target = 1.0;           // lambda*
    double kl_warmup_fraction = 0.1;  // of all epochs
    double grad_clip_norm = 1.0;
    int finetune_epochs = 0;
    double finetune_noise_var = 1e-4;
    // Use a standard-normal KL instead of the diffusion prior during KL warmup.
    bool fixed_prior_pretrain = true;
    std::uint64_t seed = 0;
    std::int64_t max_steps = -1;      // caps the main phase when >= 0
    std::int64_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints

    void validate() const;
};

// Linear ramp from 0 to kl_target over kl_warmup_fraction * epochs, then constant.
double kl_schedule(const TrainConfig& cfg, double epoch);

using Batch = std::vector<const GraphSample*>;

// All randomness of one graph's contribution to a training step.
struct GraphNoise {
    Mat input;      // encoder symmetry-breaking noise, N x noise_dim
    Mat posterior;  // reparameterization noise, N x d
    Mat diffusion;  // epsilon of the forward kernel, N x d
    double t = 0.0;
    double weight = 1.0;  // time importance weight
};

std::vector<GraphNoise> draw_noise(const Batch& batch, const ModelConfig& cfg, Rng& rng);

struct VaeObjective {
    ad::Var loss;                   // batch mean
    std::vector<double> per_graph;  // for diagnostics
    std::vector<Mat> latents;       // Z0 samples (unnormalized)
    std::vector<Mat> diffused;      // Z^t built from normalized latents
};

// Per graph: -log p(G|Z0) + lambda * w(t) * g(t)^2/2 * ||eps - eps_theta(Z^t, t)||^2.
// `vae` decides whether encoder/decoder weights are tracked; the score net is always
// used as a constant. With `fixed_prior` the score term is replaced by KL(q || N(0, I)).
VaeObjective vae_objective(const ad::Binder& vae, Model& model, const Batch& batch,
                           const std::vector<GraphNoise>& noise, double lambda, bool fixed_prior = false);

// Per graph: w(t) * g(t)/2 * ||eps - eps_theta(Z^t, t)||^2 with Z^t treated as data.
ad::Var sgm_objective(const ad::Binder& score, const Model& model, const std::vector<Mat>& diffused,
                      const std::vector<GraphNoise>& noise);

// Per graph: -log p(G | Z + eps~), eps~ ~ N(0, sigma1^2 I), Z sampled from the frozen encoder.
ad::Var finetune_objective(const ad::Binder& decoder, Model& model, const Batch& batch,
                           const std::vector<GraphNoise>& noise, const std::vector<Mat>& extra_noise,
                           double noise_var);

struct LossAndGrads {
    double loss;
    std::vector<Mat> grads;  // aligned with the parameter group that owns the step
};

// Convenience wrappers that draw noise from rng and return gradients for their group.
LossAndGrads vae_loss(const Batch& batch, Model& model, double lambda, Rng& rng);
LossAndGrads sgm_loss(const Batch& batch, Model& model, Rng& rng);
LossAndGrads finetune_step(const Batch& batch, Model& model, double noise_var, Rng& rng);

struct OptimizerState {
    std::int64_t steps = 0;
    std::vector<Mat> m, v;
};

struct Checkpoint {
    Model model;
    TrainConfig train;
    std::int64_t step = 0;  // completed main + finetune steps
    OptimizerState vae_opt, sgm_opt, finetune_opt;
    std::string rng_state;
};

// Binary tensor container (magic "NVCK", version, named little-endian float64 tensors)
// plus a JSON sidecar at path + ".json" holding configs, counters and normalization stats.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

using TensorMap = std::map<std::string, Mat>;
void write_tensors(const std::filesystem::path& path, const std::vector<const ad::Param*>& tensors);
TensorMap read_tensors(const std::filesystem::path& path);

struct StepStats {
    std::int64_t step = 0;
    bool finetune = false;
    double loss_vae = 0.0;
    double loss_sgm = 0.0;
    double lambda = 0.0;
    double grad_norm = 0.0;    // pre-clip norm of the VAE (or decoder) group
    bool alternation_ok = true;  // VAE step left theta alone, SGM step left (phi, psi) alone
};

class Trainer {
public:
    Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, Corpus train);
    Trainer(const Checkpoint& ckpt, Corpus train);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    StepStats step();
    bool done() const { return step_ >= total_steps(); }
    std::int64_t steps_done() const { return step_; }
    std::int64_t main_steps() const;
    std::int64_t total_steps() const;
    std::int64_t steps_per_epoch() const;

    Checkpoint checkpoint() const;
    Model& model() { return *model_; }
    const Model& model() const { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    const Corpus& corpus() const { return train_; }

private:
    void init_optimizers();
    Batch batch_for(std::int64_t step) const;
    StepStats main_step();
    StepStats finetune_step_();

    TrainConfig cfg_;
    Corpus train_;
    std::unique_ptr<Model> model_;
    nn::Adam vae_opt_, sgm_opt_, ft_opt_;
    std::int64_t step_ = 0;
    Rng rng_;
};

struct TrainHooks {
    std::function<void(const StepStats&)> on_step;
    std::optional<std::filesystem::path> checkpoint_path;  // periodic + final checkpoint
    std::optional<std::filesystem::path> metrics_csv;
};

// Runs a Trainer to completion. On divergence the last periodic checkpoint stays on disk
// and DivergenceError propagates.
Checkpoint train(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

// Stream seeded by (seed, a, b); used to make every step's randomness a pure function
// of the step index.
Rng keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace nvdiff
