#pragma once

// JSON conversions for configuration structs. Missing keys keep their defaults.

#include "nvdiff/eval.hpp"
#include "nvdiff/model.hpp"
#include "nvdiff/nvdiff_e.hpp"
#include "nvdiff/sampling.hpp"
#include "nvdiff/training.hpp"

#include <json.hpp>

namespace nvdiff {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VaeConfig, num_node_types, num_edge_types, latent_dim,
                                                encoder_layers, encoder_hidden, noise_dim, posterior_var,
                                                decoder_layers, decoder_hidden)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScoreNetConfig, num_layers, hidden_dim, num_heads, time_emb_dim,
                                                latent_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, batch_size, lr_vae, lr_sgm, weight_decay,
                                                kl_target, kl_warmup_fraction, grad_clip_norm, finetune_epochs,
                                                finetune_noise_var, fixed_prior_pretrain, seed, max_steps,
                                                checkpoint_every)

namespace sde {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VpsdeConfig, beta0, beta1, eps_t, sigma0)
NLOHMANN_JSON_SERIALIZE_ENUM(TimeSampling, {{TimeSampling::Uniform, "uniform"},
                                            {TimeSampling::Importance, "importance"}})
}  // namespace sde

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, vae, score, sde, time_sampling)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnaConfig, num_layers, hidden_dim, num_heads, time_emb_dim,
                                                num_node_types, num_edge_types)

NLOHMANN_JSON_SERIALIZE_ENUM(SolverKind, {{SolverKind::EulerMaruyama, "em"},
                                          {SolverKind::ProbabilityFlowOde, "ode"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SolverConfig, kind, num_steps, abs_tol, rel_tol, t_end)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalOptions, sigma_degree, sigma_cluster, sigma_orbit,
                                                largest_component_only)

inline void to_json(nlohmann::json& j, const DatasetSpec& d) {
    j = {{"name", to_string(d.name)}, {"count", d.count}, {"min_nodes", d.min_nodes}, {"max_nodes", d.max_nodes},
         {"seed", d.seed}};
}
// Missing range fields default to the named generator's range.
inline void from_json(const nlohmann::json& j, DatasetSpec& d) {
    const DatasetSpec base = DatasetSpec::preset(dataset_from_string(j.value("name", to_string(d.name))), d.seed);
    d.name = base.name;
    d.count = j.value("count", d.count);
    d.min_nodes = j.value("min_nodes", base.min_nodes);
    d.max_nodes = j.value("max_nodes", base.max_nodes);
    d.seed = j.value("seed", d.seed);
}

}  // namespace nvdiff
