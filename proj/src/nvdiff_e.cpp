#include "nvdiff/nvdiff_e.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/json_io.hpp"
#include "nvdiff/score_net.hpp"
#include "nvdiff/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nvdiff {

void EnaConfig::validate() const {
    std::string err;
    if (num_layers < 1) err += "ena.num_layers must be >= 1; ";
    if (hidden_dim < 1 || num_heads < 1 || hidden_dim % std::max(1, num_heads) != 0)
        err += "ena.hidden_dim must be a positive multiple of num_heads; ";
    if (time_emb_dim < 2 || time_emb_dim % 2 != 0) err += "ena.time_emb_dim must be even and >= 2; ";
    if (num_node_types < 1) err += "ena.num_node_types must be >= 1; ";
    if (num_edge_types < 1) err += "ena.num_edge_types must be >= 1; ";
    if (!err.empty()) throw ConfigError(err.substr(0, err.size() - 2));
}

EnaBlock::EnaBlock(int hidden, int heads, const std::string& name, Rng& rng)
    : attn(hidden, heads, name + ".attn", rng),
      edge_to_node(hidden, hidden, name + ".wv", rng),
      agg_norm(hidden, name + ".agg_norm"),
      node_to_edge(hidden, hidden, name + ".we", rng),
      edge_mlp(2 * hidden, hidden, hidden, name + ".edge", rng) {}

void EnaBlock::collect(nn::ParamList& out) {
    attn.collect(out);
    edge_to_node.collect(out);
    agg_norm.collect(out);
    node_to_edge.collect(out);
    edge_mlp.collect(out);
}

EnaParams::EnaParams(const EnaConfig& cfg, Rng& rng) {
    cfg.validate();
    const int h = cfg.hidden_dim;
    input_edge = nn::Mlp(cfg.edge_channels() + cfg.time_emb_dim, h, h, "ena.in_edge", rng);
    input_node = nn::Mlp(cfg.num_node_types + cfg.time_emb_dim, h, h, "ena.in_node", rng);
    for (int l = 0; l < cfg.num_layers; ++l) blocks.emplace_back(h, cfg.num_heads, "ena.block" + std::to_string(l), rng);
    output_edge = nn::Mlp(h, h, cfg.edge_channels(), "ena.out_edge", rng);
    output_node = nn::Mlp(h, h, cfg.num_node_types, "ena.out_node", rng);
    context_seed.name = "ena.g0";
    context_seed.value.resize(1, h);
    for (Eigen::Index i = 0; i < h; ++i) context_seed.value.data()[i] = 0.02 * rng.normal();
}

void EnaParams::collect(nn::ParamList& out) {
    input_edge.collect(out);
    input_node.collect(out);
    for (auto& b : blocks) b.collect(out);
    output_edge.collect(out);
    output_node.collect(out);
    out.push_back(&context_seed);
}

namespace {

Mat diagonal_mask(Eigen::Index n, Eigen::Index channels) {
    Mat m = Mat::Ones(n * n, channels);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i * n + i).setZero();
    return m;
}

void track(EnaMemory* mem, const Mat& node, const Mat& edge) {
    if (!mem) return;
    mem->node_state_bytes = std::max(mem->node_state_bytes, static_cast<std::size_t>(node.size()) * sizeof(double));
    mem->edge_state_bytes = std::max(mem->edge_state_bytes, static_cast<std::size_t>(edge.size()) * sizeof(double));
}

}  // namespace

EnaVars ena_score_forward(const ad::Binder& bind, const EnaParams& params, const EnaConfig& cfg, const ad::Var& a_t,
                          const ad::Var& x_t, double t, EnaMemory* mem) {
    const Mat& a = a_t->value();
    const Mat& x = x_t->value();
    const Eigen::Index n = x.rows();
    if (n < 1 || x.cols() != cfg.num_node_types)
        throw DimensionError("ena_score_forward: node block must be N x " + std::to_string(cfg.num_node_types));
    if (a.rows() != n * n || a.cols() != cfg.edge_channels())
        throw DimensionError("ena_score_forward: pair block must be (N*N) x " + std::to_string(cfg.edge_channels()));
    if (!a.allFinite() || !x.allFinite()) throw DimensionError("ena_score_forward: non-finite input");
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("ena_score_forward: t outside [0,1]");
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if ((a.row(i * n + j) - a.row(j * n + i)).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + a.row(i * n + j).cwiseAbs().maxCoeff()))
                throw DimensionError("ena_score_forward: pair tensor is not symmetric at (" + std::to_string(i) + "," +
                                     std::to_string(j) + ")");

    const Mat pe = time_embedding(t, cfg.time_emb_dim);
    ad::Var he = params.input_edge(bind, ad::concat_cols({a_t, ad::constant(pe.replicate(n * n, 1))}));
    ad::Var hv = params.input_node(bind, ad::concat_cols({x_t, ad::constant(pe.replicate(n, 1))}));
    ad::Var g = bind(params.context_seed);
    track(mem, hv->value(), he->value());

    for (const auto& blk : params.blocks) {
        ad::Var tokens = ad::concat_rows({g, hv});
        ad::Var delta = blk.attn.delta(bind, tokens);
        g = ad::add(g, ad::slice_rows(delta, 0, 1));
        ad::Var hv_prime = ad::add(hv, ad::slice_rows(delta, 1, n));
        // previous edge states flow into their endpoints; self-pairs are skipped
        ad::Var agg = blk.agg_norm(bind, ad::sum_offdiag(blk.edge_to_node(bind, he), n));
        hv = ad::add(hv_prime, agg);
        ad::Var pair = ad::pair_sum(blk.node_to_edge(bind, hv));
        he = blk.edge_mlp(bind, ad::concat_cols({pair, he}));
        he = ad::symmetrize_pairs(he, n);
        track(mem, hv->value(), he->value());
    }

    ad::Var eps_e = ad::symmetrize_pairs(params.output_edge(bind, he), n);
    eps_e = ad::mul(eps_e, ad::constant(diagonal_mask(n, cfg.edge_channels())));
    ad::Var eps_v = params.output_node(bind, hv);
    return {eps_e, eps_v, g};
}

EnaResult ena_score_forward(const EnaParams& params, const EnaConfig& cfg, const Mat& a_t, const Mat& x_t, double t,
                            EnaMemory* mem) {
    auto out = ena_score_forward(ad::Binder::frozen(), params, cfg, ad::constant_ref(a_t), ad::constant_ref(x_t), t, mem);
    return {out.eps_edge->value(), out.eps_node->value()};
}

EnaModel::EnaModel(const EnaConfig& cfg, const sde::VpsdeConfig& sde_cfg, Rng& rng)
    : config(cfg), sde(sde_cfg), params(cfg, rng) {
    sde_cfg.validate();
}

Mat symmetric_pair_noise(int n, int channels, Rng& rng) {
    Mat m(static_cast<Eigen::Index>(n) * n, channels);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
            for (int c = 0; c < channels; ++c) {
                const double v = rng.normal();
                m(i * n + j, c) = v;
                m(j * n + i, c) = v;
            }
    return m;
}

GraphSample discretize_data_space(const Mat& a0, const Mat& x0, int num_node_types, int num_edge_types) {
    const Eigen::Index n = x0.rows();
    if (x0.cols() != num_node_types || a0.rows() != n * n || a0.cols() != num_edge_types + 1)
        throw DimensionError("discretize_data_space: shape mismatch");
    std::vector<int> nodes(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index k;
        x0.row(i).maxCoeff(&k);
        nodes[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    std::vector<std::uint8_t> edges(static_cast<std::size_t>(n * n), 0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            Eigen::Index k;
            (0.5 * (a0.row(i * n + j) + a0.row(j * n + i))).maxCoeff(&k);
            edges[static_cast<std::size_t>(i * n + j)] = static_cast<std::uint8_t>(k);
            edges[static_cast<std::size_t>(j * n + i)] = static_cast<std::uint8_t>(k);
        }
    return GraphSample(num_node_types, num_edge_types, std::move(nodes), std::move(edges));
}

namespace {

// The joint state is a single column: the pair block (row-major) followed by the node block.
struct Packing {
    Eigen::Index n, ce, cv;
    Eigen::Index pair_size() const { return n * n * ce; }

    Mat pack(const Mat& a, const Mat& x) const {
        Mat s(pair_size() + n * cv, 1);
        std::copy(a.data(), a.data() + a.size(), s.data());
        std::copy(x.data(), x.data() + x.size(), s.data() + pair_size());
        return s;
    }
    void unpack(const Mat& s, Mat& a, Mat& x) const {
        a.resize(n * n, ce);
        x.resize(n, cv);
        std::copy(s.data(), s.data() + pair_size(), a.data());
        std::copy(s.data() + pair_size(), s.data() + s.size(), x.data());
    }
};

ScoreFn ena_score_fn(const EnaModel& model, const Packing& pk) {
    return [&model, pk](const Mat& s, double t) -> Mat {
        const double sigma = sde::marginal_params(model.sde, t).sigma;
        if (!(sigma > 0.0)) throw RangeError("nvdiff-e score: sigma_t is zero");
        Mat a, x;
        pk.unpack(s, a, x);
        EnaResult r = ena_score_forward(model.params, model.config, a, x, t);
        return -pk.pack(r.eps_edge, r.eps_node) / sigma;
    };
}

}  // namespace

GraphSample sample_nvdiffe(const EnaModel& model, int n, Rng& rng, const SolverConfig& solver) {
    if (n < 1) throw RangeError("sample_nvdiffe: n must be >= 1");
    solver.validate();
    const EnaConfig& cfg = model.config;
    const Packing pk{n, cfg.edge_channels(), cfg.num_node_types};
    const ScoreFn score = ena_score_fn(model, pk);
    Mat a1 = symmetric_pair_noise(n, cfg.edge_channels(), rng);
    Mat x1(n, cfg.num_node_types);
    for (Eigen::Index i = 0; i < x1.size(); ++i) x1.data()[i] = rng.normal();
    sde::DiffusionState state{pk.pack(a1, x1), 1.0};
    const double end = solver.end_time(model.sde);

    if (solver.kind == SolverKind::EulerMaruyama) {
        // integrate_em draws i.i.d. noise; the pair block needs symmetric noise instead
        const double dt = (1.0 - end) / solver.num_steps;
        for (int k = 0; k < solver.num_steps; ++k) {
            Mat xn(n, cfg.num_node_types);
            for (Eigen::Index i = 0; i < xn.size(); ++i) xn.data()[i] = rng.normal();
            const Mat noise = pk.pack(symmetric_pair_noise(n, cfg.edge_channels(), rng), xn);
            state = reverse_sde_step(state, score(state.latent, state.time), model.sde, dt, noise);
            if (k == solver.num_steps - 1) state.time = end;
        }
    } else {
        state = solve_ode(state, score, model.sde, solver, end);
    }
    if (!state.latent.allFinite()) throw DivergenceError("sample_nvdiffe: non-finite final state");
    Mat a0, x0;
    pk.unpack(state.latent, a0, x0);
    return discretize_data_space(a0, x0, cfg.num_node_types, cfg.num_edge_types);
}

ad::Var ena_loss(const ad::Binder& bind, const EnaModel& model, const std::vector<const GraphSample*>& batch,
                 Rng& rng) {
    if (batch.empty()) throw RangeError("ena_loss: empty batch");
    const EnaConfig& cfg = model.config;
    std::vector<ad::Var> terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const GraphSample& g = *batch[b];
        if (g.num_node_types() != cfg.num_node_types || g.num_edge_types() != cfg.num_edge_types)
            throw DimensionError("ena_loss: graph label counts differ from the model config");
        const int n = g.num_nodes();
        const auto ts = sde::sample_time(model.sde, rng, sde::TimeSampling::Uniform);
        const Mat ea = symmetric_pair_noise(n, cfg.edge_channels(), rng);
        Mat ex(n, cfg.num_node_types);
        for (Eigen::Index i = 0; i < ex.size(); ++i) ex.data()[i] = rng.normal();
        const Mat at = sde::sample_transition(model.sde, g.edge_tensor(), ts.t, ea);
        const Mat xt = sde::sample_transition(model.sde, g.node_features(), ts.t, ex);
        EnaVars out = ena_score_forward(bind, model.params, cfg, ad::constant(at), ad::constant(xt), ts.t);
        const Mat mask = diagonal_mask(n, cfg.edge_channels());
        const double count = mask.sum() + static_cast<double>(ex.size());
        ad::Var re = ad::sub(out.eps_edge, ad::constant(ea.cwiseProduct(mask)));
        ad::Var rv = ad::sub(out.eps_node, ad::constant(ex));
        ad::Var se = ad::weighted_sum(ad::mul(re, re), mask);
        ad::Var sv = ad::squared_norm(rv);
        ad::Var term = ad::scale(ad::add(se, sv), ts.weight / count);
        if (!std::isfinite(term->value()(0, 0)))
            throw DivergenceError("ena_loss: non-finite loss for graph " + std::to_string(b));
        terms.push_back(term);
    }
    ad::Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

EnaModel train_nvdiffe(const Corpus& corpus, const EnaConfig& cfg, const sde::VpsdeConfig& sde_cfg,
                       const EnaTrainConfig& train, const std::function<void(int, double)>& on_step) {
    if (corpus.empty()) throw RangeError("train_nvdiffe: empty corpus");
    if (train.steps < 0 || train.batch_size < 1 || !(train.lr > 0.0))
        throw ConfigError("train_nvdiffe: steps >= 0, batch_size >= 1 and lr > 0 required");
    Rng init = keyed_rng(train.seed, 0x1417);
    EnaModel model(cfg, sde_cfg, init);
    for (const auto& g : corpus) model.train_sizes.push_back(g.num_nodes());
    nn::ParamList params;
    model.params.collect(params);
    nn::Adam opt(params, {.lr = train.lr, .weight_decay = train.weight_decay});
    const std::int64_t per_epoch = (static_cast<std::int64_t>(corpus.size()) + train.batch_size - 1) / train.batch_size;
    std::vector<std::size_t> order;
    for (int step = 0; step < train.steps; ++step) {
        const std::int64_t epoch = step / per_epoch;
        const std::int64_t slot = step % per_epoch;
        if (slot == 0) {
            order.resize(corpus.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng shuffle = keyed_rng(train.seed, static_cast<std::uint64_t>(epoch), 0xba7c);
            std::shuffle(order.begin(), order.end(), shuffle.engine());
        }
        std::vector<const GraphSample*> batch;
        for (std::int64_t k = slot * train.batch_size;
             k < std::min<std::int64_t>((slot + 1) * train.batch_size, static_cast<std::int64_t>(order.size())); ++k)
            batch.push_back(&corpus[order[static_cast<std::size_t>(k)]]);
        Rng noise = keyed_rng(train.seed, static_cast<std::uint64_t>(step), 0xe0a);
        ad::Tape tape;
        ad::Var loss = ena_loss(ad::Binder(&tape, true), model, batch, noise);
        tape.backward(loss);
        auto grads = nn::gradients(tape, params);
        if (train.grad_clip_norm > 0.0) nn::clip_global_norm(grads, train.grad_clip_norm);
        opt.step(grads);
        if (on_step) on_step(step, loss->value()(0, 0));
    }
    return model;
}

namespace {

std::filesystem::path ena_sidecar(const std::filesystem::path& p) { return p.string() + ".json"; }

}  // namespace

void save_ena_checkpoint(const EnaModel& model, const std::filesystem::path& path) {
    EnaModel copy = model;
    nn::ParamList params;
    copy.params.collect(params);
    write_tensors(path, std::vector<const ad::Param*>(params.begin(), params.end()));
    nlohmann::json meta;
    meta["format"] = "nvdiff-checkpoint";
    meta["version"] = 1;
    meta["model"] = "nvdiff-e";
    meta["ena_config"] = model.config;
    meta["sde"] = model.sde;
    meta["train_sizes"] = model.train_sizes;
    std::ofstream os(ena_sidecar(path));
    os << meta.dump(2) << "\n";
    if (!os) throw IoError("cannot write " + ena_sidecar(path).string());
}

EnaModel load_ena_checkpoint(const std::filesystem::path& path) {
    const TensorMap tensors = read_tensors(path);
    std::ifstream is(ena_sidecar(path));
    if (!is) throw IoError("cannot read " + ena_sidecar(path).string());
    std::stringstream ss;
    ss << is.rdbuf();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what(), e.byte);
    }
    if (meta.value("model", "") != "nvdiff-e") throw ParseError("checkpoint metadata does not describe an nvdiff-e model", 0);
    EnaModel model;
    try {
        Rng dummy(0);
        model = EnaModel(meta.at("ena_config").get<EnaConfig>(), meta.at("sde").get<sde::VpsdeConfig>(), dummy);
        model.train_sizes = meta.at("train_sizes").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what(), 0);
    }
    nn::ParamList params;
    model.params.collect(params);
    for (ad::Param* p : params) {
        auto it = tensors.find(p->name);
        if (it == tensors.end()) throw ParseError("checkpoint missing tensor " + p->name, 0);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw ParseError("checkpoint tensor " + p->name + " has the wrong shape", 0);
        p->value = it->second;
    }
    return model;
}

double time_reverse_step_nvdiffe(const EnaModel& model, int n, int repeats, Rng& rng) {
    const EnaConfig& cfg = model.config;
    const Packing pk{n, cfg.edge_channels(), cfg.num_node_types};
    const ScoreFn score = ena_score_fn(model, pk);
    Mat x(n, cfg.num_node_types);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Mat z = pk.pack(symmetric_pair_noise(n, cfg.edge_channels(), rng), x);
    std::vector<double> secs;
    for (int r = 0; r < std::max(1, repeats); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const double t = 0.5;
        Mat drift = probability_flow_drift(z, score(z, t), model.sde, t);
        Mat next = z - 1e-3 * drift;
        const auto t1 = std::chrono::steady_clock::now();
        if (!next.allFinite()) throw DivergenceError("time_reverse_step_nvdiffe: non-finite step");
        secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::nth_element(secs.begin(), secs.begin() + static_cast<std::ptrdiff_t>(secs.size() / 2), secs.end());
    return secs[secs.size() / 2];
}

}  // namespace nvdiff
