#pragma once

// Data-space variant: diffuses the one-hot edge tensor and node matrix directly and
// scores them with edge-node attention blocks. Its state is O(N^2), which is what the
// speed comparison against the node-vector model measures.

#include "nvdiff/graph.hpp"
#include "nvdiff/nn.hpp"
#include "nvdiff/sampling.hpp"
#include "nvdiff/sde.hpp"

#include <cstddef>
#include <filesystem>
#include <vector>

namespace nvdiff {

struct EnaConfig {
    int num_layers = 3;
    int hidden_dim = 16;
    int num_heads = 2;
    int time_emb_dim = 16;
    int num_node_types = 1;
    int num_edge_types = 1;

    void validate() const;
    int edge_channels() const { return num_edge_types + 1; }
};

struct EnaBlock {
    nn::AttentionBlock attn;     // over [g; H^v]
    nn::Linear edge_to_node;     // W^v
    nn::LayerNorm agg_norm;
    nn::Linear node_to_edge;     // W^e
    nn::Mlp edge_mlp;            // [W^e h_i + W^e h_j ; h_ij] -> hidden

    EnaBlock() = default;
    EnaBlock(int hidden, int heads, const std::string& name, Rng& rng);
    void collect(nn::ParamList& out);
};

struct EnaParams {
    nn::Mlp input_edge;   // [A^t ; pe(t)] -> hidden, per pair
    nn::Mlp input_node;   // [X^t ; pe(t)] -> hidden, per node
    std::vector<EnaBlock> blocks;
    nn::Mlp output_edge;
    nn::Mlp output_node;
    ad::Param context_seed;  // 1 x hidden

    EnaParams() = default;
    EnaParams(const EnaConfig& cfg, Rng& rng);
    void collect(nn::ParamList& out);
};

// Sizes of the largest node and pair state tensors seen during a forward pass.
struct EnaMemory {
    std::size_t node_state_bytes = 0;
    std::size_t edge_state_bytes = 0;
};

struct EnaVars {
    ad::Var eps_edge;  // (N*N) x (Ke+1), symmetric, zero on the diagonal
    ad::Var eps_node;  // N x Kv
    ad::Var context;   // 1 x hidden
};

// a_t is the flattened (N*N) x (Ke+1) pair tensor and must be symmetric.
EnaVars ena_score_forward(const ad::Binder& bind, const EnaParams& params, const EnaConfig& cfg, const ad::Var& a_t,
                          const ad::Var& x_t, double t, EnaMemory* mem = nullptr);

struct EnaResult {
    Mat eps_edge;
    Mat eps_node;
};

EnaResult ena_score_forward(const EnaParams& params, const EnaConfig& cfg, const Mat& a_t, const Mat& x_t, double t,
                            EnaMemory* mem = nullptr);

struct EnaModel {
    EnaConfig config;
    sde::VpsdeConfig sde;
    EnaParams params;
    std::vector<int> train_sizes;

    EnaModel() = default;
    EnaModel(const EnaConfig& cfg, const sde::VpsdeConfig& sde_cfg, Rng& rng);
};

// Noise with the same pair symmetry as the edge tensor: (N*N) x C.
Mat symmetric_pair_noise(int n, int channels, Rng& rng);

// Averages (i,j) and (j,i), takes the per-slice argmax, forces the diagonal to non-edge,
// and takes the per-row argmax of the node block.
GraphSample discretize_data_space(const Mat& a0, const Mat& x0, int num_node_types, int num_edge_types);

// Reverse integration from (A^1, X^1) ~ N(0, I) in the joint pair/node space, then argmax.
GraphSample sample_nvdiffe(const EnaModel& model, int n, Rng& rng, const SolverConfig& solver);

struct EnaTrainConfig {
    int steps = 1000;
    int batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 0;
};

// Per graph: w(t) * mean over off-diagonal pairs and nodes of ||eps - eps_theta||^2.
ad::Var ena_loss(const ad::Binder& bind, const EnaModel& model, const std::vector<const GraphSample*>& batch,
                 Rng& rng);

// Returns the trained model; `on_step(step, loss)` is called after every update when set.
EnaModel train_nvdiffe(const Corpus& corpus, const EnaConfig& cfg, const sde::VpsdeConfig& sde_cfg,
                       const EnaTrainConfig& train, const std::function<void(int, double)>& on_step = {});

// Same NVCK tensor container as the main checkpoint; the sidecar carries "model": "nvdiff-e".
void save_ena_checkpoint(const EnaModel& model, const std::filesystem::path& path);
EnaModel load_ena_checkpoint(const std::filesystem::path& path);

// Seconds for one reverse-ODE drift evaluation (score network + update) at size n,
// median over `repeats` calls.
double time_reverse_step_nvdiffe(const EnaModel& model, int n, int repeats, Rng& rng);

}  // namespace nvdiff
