#include "nvdiff/vae.hpp"

#include "nvdiff/errors.hpp"

#include <cmath>
#include <string>

namespace nvdiff {

namespace {

ad::Param weight(int in, int out, const std::string& name, Rng& rng) {
    return {name, nn::xavier_uniform(in, out, rng)};
}

void require_finite(const Mat& z, const char* fn) {
    if (!z.allFinite()) throw DimensionError(std::string(fn) + ": non-finite latent input");
}

}  // namespace

void VaeConfig::validate() const {
    if (num_node_types < 1 || num_edge_types < 1) throw ConfigError("vae: node/edge type counts must be >= 1");
    if (num_edge_types > 254 || num_node_types > 255) throw ConfigError("vae: too many types for the corpus format");
    if (latent_dim < 1) throw ConfigError("vae.latent_dim must be >= 1");
    if (encoder_layers < 1 || encoder_hidden < 1) throw ConfigError("vae: encoder layers/hidden must be >= 1");
    if (noise_dim < 0) throw ConfigError("vae.noise_dim must be >= 0");
    if (!(posterior_var > 0.0)) throw ConfigError("vae.posterior_var must be > 0");
    if (decoder_layers < 1 || decoder_hidden < 1) throw ConfigError("vae: decoder layers/hidden must be >= 1");
}

double VaeConfig::posterior_std() const { return std::sqrt(posterior_var); }

EncoderParams::EncoderParams(const VaeConfig& cfg, Rng& rng) {
    cfg.validate();
    const int h = cfg.encoder_hidden;
    const int edge_channels = cfg.num_edge_types + 1;
    input = nn::Linear(cfg.num_node_types + cfg.noise_dim, h, "enc.in", rng);
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string p = "enc.layer" + std::to_string(l);
        EncoderLayer layer;
        layer.state_norm = nn::LayerNorm(h, p + ".ln_state");
        layer.agg_norm = nn::LayerNorm(h, p + ".ln_agg");
        layer.pair_proj = weight(h, h, p + ".W", rng);
        layer.edge_mlp = nn::Mlp(edge_channels + h, h, h, p + ".mlp_e", rng);
        layer.node_mlp = nn::Mlp(2 * h, h, h, p + ".mlp_v", rng);
        layers.push_back(std::move(layer));
    }
    output_norm = nn::LayerNorm(h, "enc.ln_out");
    output = nn::Linear(h, cfg.latent_dim, "enc.out", rng);
}

void EncoderParams::collect(nn::ParamList& out) {
    input.collect(out);
    for (auto& l : layers) {
        l.state_norm.collect(out);
        l.agg_norm.collect(out);
        out.push_back(&l.pair_proj);
        l.edge_mlp.collect(out);
        l.node_mlp.collect(out);
    }
    output_norm.collect(out);
    output.collect(out);
}

DecoderParams::DecoderParams(const VaeConfig& cfg, Rng& rng) {
    cfg.validate();
    const int h = cfg.decoder_hidden;
    int s_dim = cfg.latent_dim;
    int r_dim = cfg.latent_dim;
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        const std::string p = "dec.layer" + std::to_string(l);
        DecoderLayer layer;
        layer.node_to_edge = weight(s_dim, h, p + ".We", rng);
        layer.edge_mlp = nn::Mlp(h + r_dim, h, h, p + ".mlp_e", rng);
        layer.edge_to_node = weight(h, h, p + ".Wv", rng);
        layer.agg_norm = nn::LayerNorm(h, p + ".ln_agg");
        layer.node_mlp = nn::Mlp(h + s_dim, h, h, p + ".mlp_v", rng);
        layers.push_back(std::move(layer));
        s_dim = h;
        r_dim = h;
    }
    noedge_head = nn::Mlp(h, h, 1, "dec.head_b", rng);
    if (cfg.num_edge_types > 1) edge_type_head = nn::Mlp(h, h, cfg.num_edge_types, "dec.head_e", rng);
    node_head = nn::Mlp(h, h, cfg.num_node_types, "dec.head_n", rng);
}

void DecoderParams::collect(nn::ParamList& out) {
    for (auto& l : layers) {
        out.push_back(&l.node_to_edge);
        l.edge_mlp.collect(out);
        out.push_back(&l.edge_to_node);
        l.agg_norm.collect(out);
        l.node_mlp.collect(out);
    }
    noedge_head.collect(out);
    if (edge_type_head.first.weight.value.size() > 0) edge_type_head.collect(out);
    node_head.collect(out);
}

Mat draw_input_noise(const VaeConfig& cfg, int n, Rng& rng) {
    Mat e(n, cfg.noise_dim);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
    return e;
}

ad::Var encode_mean(const ad::Binder& bind, const EncoderParams& params, const VaeConfig& cfg, const GraphSample& g,
                    const Mat& input_noise) {
    const int n = g.num_nodes();
    if (n < 1) throw DimensionError("encode: empty graph");
    if (g.num_node_types() != cfg.num_node_types || g.num_edge_types() != cfg.num_edge_types) {
        throw DimensionError("encode: graph type counts do not match the model");
    }
    if (input_noise.rows() != n || input_noise.cols() != cfg.noise_dim) {
        throw DimensionError("encode: input noise must be N x noise_dim");
    }
    Mat m0(n, cfg.num_node_types + cfg.noise_dim);
    m0 << g.node_features(), input_noise;
    ad::Var edges = ad::constant(g.edge_tensor());
    ad::Var m = params.input(bind, ad::constant(std::move(m0)));
    for (const auto& layer : params.layers) {
        ad::Var h = layer.state_norm(bind, m);
        ad::Var proj = ad::matmul(h, bind(layer.pair_proj));
        ad::Var msg = layer.edge_mlp(bind, ad::concat_cols({edges, ad::pair_sum(proj)}));
        ad::Var agg = layer.agg_norm(bind, ad::sum_offdiag(msg, n));
        m = ad::add(m, layer.node_mlp(bind, ad::concat_cols({h, agg})));
    }
    return params.output(bind, params.output_norm(bind, m));
}

Encoding encode(const EncoderParams& params, const VaeConfig& cfg, const GraphSample& g, Rng& rng) {
    if (g.num_nodes() < 1) throw DimensionError("encode: empty graph");
    const Mat noise = draw_input_noise(cfg, g.num_nodes(), rng);
    return {encode_mean(ad::Binder::frozen(), params, cfg, g, noise)->value(), cfg.posterior_std()};
}

Mat reparameterize(const Mat& mean, double std, const Mat& noise) {
    if (noise.rows() != mean.rows() || noise.cols() != mean.cols()) {
        throw DimensionError("reparameterize: noise shape does not match mean");
    }
    return mean + std * noise;
}

ad::Var reparameterize(const ad::Var& mean, double std, const Mat& noise) {
    const Mat& m = mean->value();
    if (noise.rows() != m.rows() || noise.cols() != m.cols()) {
        throw DimensionError("reparameterize: noise shape does not match mean");
    }
    return ad::add(mean, ad::constant(std * noise));
}

Mat pair_features(const Mat& z) {
    require_finite(z, "pair_features");
    return ad::pair_sqdiff_value(z);
}

DecoderLogits decoder_forward(const ad::Binder& bind, const DecoderParams& params, const VaeConfig& cfg,
                              const ad::Var& z) {
    const Mat& zv = z->value();
    if (zv.cols() != cfg.latent_dim || zv.rows() < 1) throw DimensionError("decode: expected N x latent_dim input");
    require_finite(zv, "decode");
    const Eigen::Index n = zv.rows();

    ad::Var s = z;
    ad::Var r = ad::pair_sqdiff(z);
    for (const auto& layer : params.layers) {
        ad::Var ends = ad::pair_sum(ad::matmul(s, bind(layer.node_to_edge)));
        r = layer.edge_mlp(bind, ad::concat_cols({ends, r}));
        // sum_j W^v r_ij == W^v sum_j r_ij
        ad::Var agg = layer.agg_norm(bind, ad::matmul(ad::sum_offdiag(r, n), bind(layer.edge_to_node)));
        s = layer.node_mlp(bind, ad::concat_cols({agg, s}));
    }
    DecoderLogits out;
    out.noedge = ad::symmetrize_pairs(params.noedge_head(bind, r), n);
    if (cfg.num_edge_types > 1) out.edge_type = ad::symmetrize_pairs(params.edge_type_head(bind, r), n);
    out.node_type = params.node_head(bind, s);
    return out;
}

DecodedDistributions decode_distributions(const DecoderParams& params, const VaeConfig& cfg, const Mat& z) {
    auto logits = decoder_forward(ad::Binder::frozen(), params, cfg, ad::constant_ref(z));
    const Eigen::Index n = z.rows();
    DecodedDistributions d;
    d.num_nodes = static_cast<int>(n);
    const Mat pn = ad::sigmoid(logits.noedge)->value();
    d.p_noedge = Eigen::Map<const Mat>(pn.data(), n, n);
    if (logits.edge_type) {
        d.p_edgetype = ad::softmax_rows(logits.edge_type)->value();
    } else {
        d.p_edgetype = Mat::Ones(n * n, 1);
    }
    d.p_nodetype = ad::softmax_rows(logits.node_type)->value();
    return d;
}

ad::Var log_likelihood_from_logits(const DecoderLogits& logits, const GraphSample& g) {
    const int n = g.num_nodes();
    const int ke = g.num_edge_types();
    Mat node_w = g.node_features();
    ad::Var ll = ad::weighted_sum(ad::log_softmax_rows(logits.node_type), node_w);
    if (n < 2) return ll;

    Mat w_noedge = Mat::Zero(n * n, 1);
    Mat w_edge = Mat::Zero(n * n, 1);
    Mat w_type = Mat::Zero(n * n, ke);
    for (int i = 1; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            const int row = i * n + j;
            const int type = g.edge_type(i, j);
            if (type == 0) {
                w_noedge(row, 0) = 1.0;
            } else {
                w_edge(row, 0) = 1.0;
                w_type(row, type - 1) = 1.0;
            }
        }
    }
    ll = ad::add(ll, ad::weighted_sum(ad::log_sigmoid(logits.noedge), w_noedge));
    ll = ad::add(ll, ad::weighted_sum(ad::log_sigmoid(ad::scale(logits.noedge, -1.0)), w_edge));
    if (logits.edge_type) ll = ad::add(ll, ad::weighted_sum(ad::log_softmax_rows(logits.edge_type), w_type));
    return ll;
}

ad::Var log_likelihood(const ad::Binder& bind, const DecoderParams& params, const VaeConfig& cfg,
                       const GraphSample& g, const ad::Var& z) {
    if (z->value().rows() != g.num_nodes()) throw DimensionError("log_likelihood: latent rows != graph size");
    return log_likelihood_from_logits(decoder_forward(bind, params, cfg, z), g);
}

double log_likelihood(const DecoderParams& params, const VaeConfig& cfg, const GraphSample& g, const Mat& z) {
    return log_likelihood(ad::Binder::frozen(), params, cfg, g, ad::constant_ref(z))->value()(0, 0);
}

namespace {

int categorical(const Eigen::Ref<const Eigen::RowVectorXd>& p, DecodeMode mode, Rng& rng) {
    Eigen::Index best = 0;
    if (mode == DecodeMode::Argmax) {
        p.maxCoeff(&best);
        return static_cast<int>(best);
    }
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        acc += p(k);
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(p.size() - 1);
}

}  // namespace

GraphSample discretize(const DecodedDistributions& dist, DecodeMode mode, Rng& rng) {
    const int n = dist.num_nodes;
    const int kv = static_cast<int>(dist.p_nodetype.cols());
    const int ke = static_cast<int>(dist.p_edgetype.cols());
    std::vector<int> nodes(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) nodes[static_cast<std::size_t>(i)] = categorical(dist.p_nodetype.row(i), mode, rng);
    std::vector<std::uint8_t> edges(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
    for (int i = 1; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            const double p_exist = 1.0 - dist.p_noedge(i, j);
            const bool exists = mode == DecodeMode::Argmax ? p_exist > 0.5 : rng.bernoulli(p_exist);
            if (!exists) continue;
            const int type = 1 + categorical(dist.p_edgetype.row(i * n + j), mode, rng);
            edges[static_cast<std::size_t>(i * n + j)] = static_cast<std::uint8_t>(type);
            edges[static_cast<std::size_t>(j * n + i)] = static_cast<std::uint8_t>(type);
        }
    }
    return GraphSample(kv, ke, std::move(nodes), std::move(edges));
}

GraphSample sample_graph(const DecoderParams& params, const VaeConfig& cfg, const Mat& z, DecodeMode mode,
                         Rng& rng) {
    return discretize(decode_distributions(params, cfg, z), mode, rng);
}

double edge_existence_accuracy(const DecoderParams& params, const VaeConfig& cfg, const GraphSample& g,
                               const Mat& z) {
    const int n = g.num_nodes();
    if (n < 2) return 1.0;
    const auto d = decode_distributions(params, cfg, z);
    int correct = 0, total = 0;
    for (int i = 1; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            correct += ((1.0 - d.p_noedge(i, j)) > 0.5) == g.has_edge(i, j);
            ++total;
        }
    }
    return static_cast<double>(correct) / total;
}

}  // namespace nvdiff
