#pragma once

#include "nvdiff/autodiff.hpp"
#include "nvdiff/graph.hpp"
#include "nvdiff/nn.hpp"
#include "nvdiff/rng.hpp"

#include <vector>

namespace nvdiff {

struct VaeConfig {
    int num_node_types = 1;
    int num_edge_types = 1;
    int latent_dim = 4;

    int encoder_layers = 3;
    int encoder_hidden = 32;
    int noise_dim = 8;
    double posterior_var = 0.01;  // fixed, not learned

    int decoder_layers = 1;
    int decoder_hidden = 32;

    void validate() const;
    double posterior_std() const;
};

// Pre-norm message passing: states and summed messages are layer-normalized before
// entering the MLPs, otherwise sums over N-1 neighbours blow up the residual stream.
struct EncoderLayer {
    nn::LayerNorm state_norm;
    nn::LayerNorm agg_norm;
    ad::Param pair_proj;  // W, shared by both endpoints
    nn::Mlp edge_mlp;     // [a_ij ; W m_i + W m_j] -> hidden
    nn::Mlp node_mlp;     // [m_i ; sum_j msg_ij] -> hidden
};

struct EncoderParams {
    nn::Linear input;                 // [x ; eps_in] -> hidden
    std::vector<EncoderLayer> layers;
    nn::LayerNorm output_norm;
    nn::Linear output;                // hidden -> d

    EncoderParams() = default;
    EncoderParams(const VaeConfig& cfg, Rng& rng);
    void collect(nn::ParamList& out);
};

struct DecoderLayer {
    ad::Param node_to_edge;  // W^e
    ad::Param edge_to_node;  // W^v
    nn::LayerNorm agg_norm;
    nn::Mlp edge_mlp;
    nn::Mlp node_mlp;
};

struct DecoderParams {
    std::vector<DecoderLayer> layers;
    nn::Mlp noedge_head;     // 1 logit: non-edge
    nn::Mlp edge_type_head;  // K^e logits (absent when K^e == 1)
    nn::Mlp node_head;       // K^v logits

    DecoderParams() = default;
    DecoderParams(const VaeConfig& cfg, Rng& rng);
    void collect(nn::ParamList& out);
};

struct VaeParams {
    EncoderParams encoder;
    DecoderParams decoder;

    VaeParams() = default;
    VaeParams(const VaeConfig& cfg, Rng& rng) : encoder(cfg, rng), decoder(cfg, rng) {}
    void collect_encoder(nn::ParamList& out) { encoder.collect(out); }
    void collect_decoder(nn::ParamList& out) { decoder.collect(out); }
};

// --- encoder -----------------------------------------------------------------

struct Encoding {
    Mat mean;
    double std;
};

// Encoder mean for a fixed symmetry-breaking noise matrix (N x noise_dim).
ad::Var encode_mean(const ad::Binder& bind, const EncoderParams& params, const VaeConfig& cfg, const GraphSample& g,
                    const Mat& input_noise);
// Draws fresh input noise from rng.
Encoding encode(const EncoderParams& params, const VaeConfig& cfg, const GraphSample& g, Rng& rng);
Mat draw_input_noise(const VaeConfig& cfg, int n, Rng& rng);

Mat reparameterize(const Mat& mean, double std, const Mat& noise);
ad::Var reparameterize(const ad::Var& mean, double std, const Mat& noise);

// --- decoder -----------------------------------------------------------------

// Flattened N*N x d tensor of (z_i - z_j)^2.
Mat pair_features(const Mat& z);

struct DecoderLogits {
    ad::Var noedge;      // (N*N) x 1, symmetrized
    ad::Var edge_type;   // (N*N) x K^e, symmetrized; null when K^e == 1
    ad::Var node_type;   // N x K^v
};

DecoderLogits decoder_forward(const ad::Binder& bind, const DecoderParams& params, const VaeConfig& cfg,
                              const ad::Var& z);

struct DecodedDistributions {
    int num_nodes = 0;
    Mat p_noedge;    // N x N
    Mat p_edgetype;  // (N*N) x K^e
    Mat p_nodetype;  // N x K^v
};

DecodedDistributions decode_distributions(const DecoderParams& params, const VaeConfig& cfg, const Mat& z);

// Sum of log p(x_i | s_i) plus, over pairs j < i, log p(edge exists or not) and, where
// the true edge exists, log p(edge type).
ad::Var log_likelihood(const ad::Binder& bind, const DecoderParams& params, const VaeConfig& cfg,
                       const GraphSample& g, const ad::Var& z);
double log_likelihood(const DecoderParams& params, const VaeConfig& cfg, const GraphSample& g, const Mat& z);
// Same quantity evaluated from already-computed logits.
ad::Var log_likelihood_from_logits(const DecoderLogits& logits, const GraphSample& g);

enum class DecodeMode { Argmax, Sample };

GraphSample discretize(const DecodedDistributions& dist, DecodeMode mode, Rng& rng);
GraphSample sample_graph(const DecoderParams& params, const VaeConfig& cfg, const Mat& z, DecodeMode mode, Rng& rng);

// Fraction of unordered node pairs whose existence bit is recovered by argmax decoding.
double edge_existence_accuracy(const DecoderParams& params, const VaeConfig& cfg, const GraphSample& g,
                               const Mat& z);

}  // namespace nvdiff
