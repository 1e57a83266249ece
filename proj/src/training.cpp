#include "nvdiff/training.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/json_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nvdiff {

static_assert(std::endian::native == std::endian::little, "tensor files are written in host order");

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Mat normal_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

void require_finite(double v, const std::string& what, std::size_t index) {
    if (!std::isfinite(v)) {
        throw DivergenceError(what + ": non-finite loss at batch graph index " + std::to_string(index));
    }
}

// Row-broadcast affine map (z - mean) / std as a differentiable op.
ad::Var normalize_var(const ad::Var& z, const LatentNorm& norm) {
    Mat inv = norm.std.cwiseInverse().transpose().asDiagonal();
    return ad::matmul(ad::add_row(z, ad::constant(-norm.mean)), ad::constant(std::move(inv)));
}

}  // namespace

Rng keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL)));
}

void TrainConfig::validate() const {
    std::vector<std::string> e;
    if (epochs < 0) e.emplace_back("train.epochs must be >= 0");
    if (batch_size < 1) e.emplace_back("train.batch_size must be >= 1");
    if (!(lr_vae > 0.0)) e.emplace_back("train.lr_vae must be > 0");
    if (!(lr_sgm > 0.0)) e.emplace_back("train.lr_sgm must be > 0");
    if (weight_decay < 0.0) e.emplace_back("train.weight_decay must be >= 0");
    if (!(kl_target > 0.0 && kl_target <= 1.0)) e.emplace_back("train.kl_target must be in (0, 1]");
    if (!(kl_warmup_fraction >= 0.0 && kl_warmup_fraction <= 1.0)) e.emplace_back("train.kl_warmup_fraction must be in [0, 1]");
    if (!(grad_clip_norm > 0.0)) e.emplace_back("train.grad_clip_norm must be > 0");
    if (finetune_epochs < 0) e.emplace_back("train.finetune_epochs must be >= 0");
    if (finetune_noise_var < 0.0) e.emplace_back("train.finetune_noise_var must be >= 0");
    if (checkpoint_every < 0) e.emplace_back("train.checkpoint_every must be >= 0");
    if (!e.empty()) {
        std::string msg;
        for (const auto& s : e) msg += (msg.empty() ? "" : "; ") + s;
        throw ConfigError(msg);
    }
}

double kl_schedule(const TrainConfig& cfg, double epoch) {
    if (epoch < 0.0) throw RangeError("kl_schedule: negative epoch");
    const double warm = cfg.kl_warmup_fraction * cfg.epochs;
    if (warm <= 0.0 || epoch >= warm) return cfg.kl_target;
    return cfg.kl_target * epoch / warm;
}

std::vector<GraphNoise> draw_noise(const Batch& batch, const ModelConfig& cfg, Rng& rng) {
    std::vector<GraphNoise> out;
    out.reserve(batch.size());
    const int d = cfg.vae.latent_dim;
    for (const GraphSample* g : batch) {
        const int n = g->num_nodes();
        GraphNoise gn;
        gn.input = draw_input_noise(cfg.vae, n, rng);
        gn.posterior = normal_mat(n, d, rng);
        gn.diffusion = normal_mat(n, d, rng);
        const auto ts = sde::sample_time(cfg.sde, rng, cfg.time_sampling);
        gn.t = ts.t;
        gn.weight = ts.weight;
        out.push_back(std::move(gn));
    }
    return out;
}

VaeObjective vae_objective(const ad::Binder& vae, Model& model, const Batch& batch,
                           const std::vector<GraphNoise>& noise, double lambda, bool fixed_prior) {
    if (noise.size() != batch.size()) throw DimensionError("vae_objective: noise/batch size mismatch");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw RangeError("vae_objective: lambda outside [0,1]");
    const auto& cfg = model.config;
    const double post_std = cfg.vae.posterior_std();
    VaeObjective out;
    ad::Var total = ad::scalar(0.0);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const GraphSample& g = *batch[k];
        const GraphNoise& nz = noise[k];
        ad::Var mean = encode_mean(vae, model.vae.encoder, cfg.vae, g, nz.input);
        ad::Var z0 = reparameterize(mean, post_std, nz.posterior);
        ad::Var term = ad::scale(log_likelihood(vae, model.vae.decoder, cfg.vae, g, z0), -1.0);

        const auto kernel = sde::marginal_params(cfg.sde, nz.t);
        ad::Var zt = ad::add(ad::scale(normalize_var(z0, model.norm), kernel.mean_scale),
                             ad::constant(kernel.sigma * nz.diffusion));
        if (fixed_prior) {
            // KL(N(mu, s^2 I) || N(0, I)) = 1/2 sum(mu^2 + s^2 - 1 - log s^2)
            const double per_entry = 0.5 * (post_std * post_std - 1.0 - std::log(post_std * post_std));
            const double count = static_cast<double>(mean->value().size());
            ad::Var kl = ad::add(ad::scale(ad::squared_norm(mean), 0.5), ad::scalar(per_entry * count));
            term = ad::add(term, ad::scale(kl, lambda));
        } else if (lambda > 0.0) {
            const double g2 = sde::beta(cfg.sde, nz.t);
            ad::Var eps_hat = score_forward(ad::Binder::frozen(), model.score, cfg.score, zt, nz.t).epsilon_hat;
            ad::Var resid = ad::squared_norm(ad::sub(ad::constant(nz.diffusion), eps_hat));
            term = ad::add(term, ad::scale(resid, lambda * nz.weight * 0.5 * g2));
        }
        const double v = term->value()(0, 0);
        require_finite(v, "vae_loss", k);
        out.per_graph.push_back(v);
        out.latents.push_back(z0->value());
        out.diffused.push_back(zt->value());
        total = ad::add(total, term);
    }
    out.loss = ad::scale(total, 1.0 / static_cast<double>(std::max<std::size_t>(batch.size(), 1)));
    return out;
}

ad::Var sgm_objective(const ad::Binder& score, const Model& model, const std::vector<Mat>& diffused,
                      const std::vector<GraphNoise>& noise) {
    if (noise.size() != diffused.size()) throw DimensionError("sgm_objective: noise/batch size mismatch");
    const auto& cfg = model.config;
    ad::Var total = ad::scalar(0.0);
    for (std::size_t k = 0; k < diffused.size(); ++k) {
        const GraphNoise& nz = noise[k];
        const double g = sde::diffusion_coeff(cfg.sde, nz.t);
        ad::Var eps_hat = score_forward(score, model.score, cfg.score, ad::constant_ref(diffused[k]), nz.t).epsilon_hat;
        ad::Var resid = ad::squared_norm(ad::sub(ad::constant(nz.diffusion), eps_hat));
        ad::Var term = ad::scale(resid, nz.weight * 0.5 * g);
        require_finite(term->value()(0, 0), "sgm_loss", k);
        total = ad::add(total, term);
    }
    return ad::scale(total, 1.0 / static_cast<double>(std::max<std::size_t>(diffused.size(), 1)));
}

ad::Var finetune_objective(const ad::Binder& decoder, Model& model, const Batch& batch,
                           const std::vector<GraphNoise>& noise, const std::vector<Mat>& extra_noise,
                           double noise_var) {
    if (noise.size() != batch.size() || extra_noise.size() != batch.size()) {
        throw DimensionError("finetune_objective: noise/batch size mismatch");
    }
    if (noise_var < 0.0) throw RangeError("finetune_objective: negative noise variance");
    const auto& cfg = model.config;
    ad::Var total = ad::scalar(0.0);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const GraphSample& g = *batch[k];
        const Mat mean = encode_mean(ad::Binder::frozen(), model.vae.encoder, cfg.vae, g, noise[k].input)->value();
        const Mat z = reparameterize(mean, cfg.vae.posterior_std(), noise[k].posterior) +
                      std::sqrt(noise_var) * extra_noise[k];
        ad::Var term = ad::scale(log_likelihood(decoder, model.vae.decoder, cfg.vae, g, ad::constant(z)), -1.0);
        require_finite(term->value()(0, 0), "finetune_loss", k);
        total = ad::add(total, term);
    }
    return ad::scale(total, 1.0 / static_cast<double>(std::max<std::size_t>(batch.size(), 1)));
}

LossAndGrads vae_loss(const Batch& batch, Model& model, double lambda, Rng& rng) {
    auto noise = draw_noise(batch, model.config, rng);
    ad::Tape tape;
    auto obj = vae_objective(ad::Binder(&tape, true), model, batch, noise, lambda);
    tape.backward(obj.loss);
    return {obj.loss->value()(0, 0), nn::gradients(tape, model.vae_params())};
}

LossAndGrads sgm_loss(const Batch& batch, Model& model, Rng& rng) {
    auto noise = draw_noise(batch, model.config, rng);
    auto obj = vae_objective(ad::Binder::frozen(), model, batch, noise, 0.0);
    ad::Tape tape;
    auto loss = sgm_objective(ad::Binder(&tape, true), model, obj.diffused, noise);
    tape.backward(loss);
    return {loss->value()(0, 0), nn::gradients(tape, model.score_params())};
}

LossAndGrads finetune_step(const Batch& batch, Model& model, double noise_var, Rng& rng) {
    auto noise = draw_noise(batch, model.config, rng);
    std::vector<Mat> extra;
    for (const GraphSample* g : batch) extra.push_back(normal_mat(g->num_nodes(), model.config.vae.latent_dim, rng));
    ad::Tape tape;
    auto loss = finetune_objective(ad::Binder(&tape, true), model, batch, noise, extra, noise_var);
    tape.backward(loss);
    return {loss->value()(0, 0), nn::gradients(tape, model.decoder_params())};
}

// --- tensor container ---------------------------------------------------------

namespace {

constexpr char kTensorMagic[4] = {'N', 'V', 'C', 'K'};
constexpr std::uint8_t kTensorVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("tensor file truncated", pos);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const std::vector<const ad::Param*>& tensors) {
    std::string out(kTensorMagic, 4);
    out.push_back(static_cast<char>(kTensorVersion));
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const ad::Param* p : tensors) {
        put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out += p->name;
        put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
        put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
        const auto* bytes = reinterpret_cast<const char*>(p->value.data());
        out.append(bytes, static_cast<std::size_t>(p->value.size()) * sizeof(double));
    }
    write_file(path, out);
}

TensorMap read_tensors(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    Reader r{buf};
    r.need(5);
    if (std::memcmp(buf.data(), kTensorMagic, 4) != 0) throw ParseError("bad tensor file magic", 0);
    if (static_cast<std::uint8_t>(buf[4]) != kTensorVersion) throw ParseError("unsupported tensor file version", 4);
    r.pos = 5;
    const std::uint32_t count = r.u32();
    TensorMap out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t len = r.u32();
        r.need(len);
        std::string name = buf.substr(r.pos, len);
        r.pos += len;
        const std::uint32_t rows = r.u32(), cols = r.u32();
        const std::size_t bytes = static_cast<std::size_t>(rows) * cols * sizeof(double);
        r.need(bytes);
        Mat m(rows, cols);
        if (bytes > 0) std::memcpy(m.data(), buf.data() + r.pos, bytes);
        r.pos += bytes;
        if (!out.emplace(std::move(name), std::move(m)).second) throw ParseError("duplicate tensor name", r.pos);
    }
    if (r.pos != buf.size()) throw ParseError("trailing bytes after tensors", r.pos);
    return out;
}

// --- checkpoints --------------------------------------------------------------

namespace {

std::vector<ad::Param> moment_tensors(const std::string& prefix, const OptimizerState& s) {
    std::vector<ad::Param> out;
    for (std::size_t i = 0; i < s.m.size(); ++i) out.push_back({prefix + ".m." + std::to_string(i), s.m[i]});
    for (std::size_t i = 0; i < s.v.size(); ++i) out.push_back({prefix + ".v." + std::to_string(i), s.v[i]});
    return out;
}

OptimizerState load_moments(const TensorMap& t, const std::string& prefix, std::int64_t steps, std::size_t count) {
    OptimizerState s;
    s.steps = steps;
    if (steps == 0) return s;
    for (std::size_t i = 0; i < count; ++i) {
        auto m = t.find(prefix + ".m." + std::to_string(i));
        auto v = t.find(prefix + ".v." + std::to_string(i));
        if (m == t.end() || v == t.end()) throw ParseError("checkpoint missing optimizer moments " + prefix, i);
        s.m.push_back(m->second);
        s.v.push_back(v->second);
    }
    return s;
}

void assign_params(const TensorMap& t, const nn::ParamList& params) {
    for (ad::Param* p : params) {
        auto it = t.find(p->name);
        if (it == t.end()) throw ParseError("checkpoint missing tensor " + p->name, 0);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
            throw ParseError("checkpoint tensor " + p->name + " has the wrong shape", 0);
        }
        p->value = it->second;
    }
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Model model = ckpt.model;
    std::vector<ad::Param> extra;
    extra.push_back({"norm.mean", model.norm.mean});
    extra.push_back({"norm.std", model.norm.std});
    for (auto* group : {&ckpt.vae_opt, &ckpt.sgm_opt, &ckpt.finetune_opt}) {
        const char* prefix = group == &ckpt.vae_opt ? "opt.vae" : group == &ckpt.sgm_opt ? "opt.sgm" : "opt.finetune";
        auto t = moment_tensors(prefix, *group);
        extra.insert(extra.end(), t.begin(), t.end());
    }
    std::vector<const ad::Param*> all;
    for (ad::Param* p : model.all_params()) all.push_back(p);
    for (const auto& p : extra) all.push_back(&p);
    write_tensors(path, all);

    nlohmann::json meta;
    meta["format"] = "nvdiff-checkpoint";
    meta["version"] = 1;
    meta["model"] = "nvdiff";
    meta["model_config"] = model.config;
    meta["train_config"] = ckpt.train;
    meta["step"] = ckpt.step;
    meta["optimizer_steps"] = {{"vae", ckpt.vae_opt.steps}, {"sgm", ckpt.sgm_opt.steps}, {"finetune", ckpt.finetune_opt.steps}};
    meta["rng_state"] = ckpt.rng_state;
    meta["train_sizes"] = model.train_sizes;
    meta["norm"] = {{"initialized", model.norm.initialized}, {"momentum", model.norm.momentum}};
    write_file(sidecar(path), meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const TensorMap tensors = read_tensors(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(sidecar(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what(), e.byte);
    }
    if (meta.value("format", "") != "nvdiff-checkpoint" || meta.value("model", "") != "nvdiff") {
        throw ParseError("checkpoint metadata does not describe an nvdiff model", 0);
    }
    Checkpoint ck;
    try {
        const ModelConfig cfg = meta.at("model_config").get<ModelConfig>();
        Rng dummy(0);
        ck.model = Model(cfg, dummy);
        ck.train = meta.at("train_config").get<TrainConfig>();
        ck.step = meta.at("step").get<std::int64_t>();
        ck.rng_state = meta.at("rng_state").get<std::string>();
        ck.model.train_sizes = meta.at("train_sizes").get<std::vector<int>>();
        ck.model.norm.initialized = meta.at("norm").at("initialized").get<bool>();
        ck.model.norm.momentum = meta.at("norm").at("momentum").get<double>();
        const auto& os = meta.at("optimizer_steps");
        const std::size_t nv = ck.model.vae_params().size();
        const std::size_t ns = ck.model.score_params().size();
        const std::size_t nd = ck.model.decoder_params().size();
        ck.vae_opt = load_moments(tensors, "opt.vae", os.at("vae").get<std::int64_t>(), nv);
        ck.sgm_opt = load_moments(tensors, "opt.sgm", os.at("sgm").get<std::int64_t>(), ns);
        ck.finetune_opt = load_moments(tensors, "opt.finetune", os.at("finetune").get<std::int64_t>(), nd);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what(), 0);
    }
    assign_params(tensors, ck.model.all_params());
    ck.model.norm.mean = tensors.at("norm.mean");
    ck.model.norm.std = tensors.at("norm.std");
    return ck;
}

// --- trainer ------------------------------------------------------------------

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, Corpus train)
    : cfg_(cfg), train_(std::move(train)), rng_(cfg.seed) {
    cfg_.validate();
    model_cfg.validate();
    if (train_.empty()) throw DimensionError("train: empty corpus");
    Rng init = keyed_rng(cfg_.seed, 0x1417);
    model_ = std::make_unique<Model>(model_cfg, init);
    for (const auto& g : train_) model_->train_sizes.push_back(g.num_nodes());
    init_optimizers();
}

Trainer::Trainer(const Checkpoint& ckpt, Corpus train)
    : cfg_(ckpt.train), train_(std::move(train)), model_(std::make_unique<Model>(ckpt.model)), step_(ckpt.step) {
    if (train_.empty()) throw DimensionError("train: empty corpus");
    rng_.set_state(ckpt.rng_state);
    init_optimizers();
    if (ckpt.vae_opt.steps > 0) vae_opt_.restore(ckpt.vae_opt.steps, ckpt.vae_opt.m, ckpt.vae_opt.v);
    if (ckpt.sgm_opt.steps > 0) sgm_opt_.restore(ckpt.sgm_opt.steps, ckpt.sgm_opt.m, ckpt.sgm_opt.v);
    if (ckpt.finetune_opt.steps > 0) {
        ft_opt_.restore(ckpt.finetune_opt.steps, ckpt.finetune_opt.m, ckpt.finetune_opt.v);
    }
}

void Trainer::init_optimizers() {
    vae_opt_ = nn::Adam(model_->vae_params(), {.lr = cfg_.lr_vae, .weight_decay = cfg_.weight_decay});
    sgm_opt_ = nn::Adam(model_->score_params(), {.lr = cfg_.lr_sgm, .weight_decay = cfg_.weight_decay});
    ft_opt_ = nn::Adam(model_->decoder_params(), {.lr = cfg_.lr_vae, .weight_decay = cfg_.weight_decay});
}

std::int64_t Trainer::steps_per_epoch() const {
    const auto n = static_cast<std::int64_t>(train_.size());
    return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::int64_t Trainer::main_steps() const {
    const std::int64_t full = static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch();
    return cfg_.max_steps >= 0 ? std::min(full, cfg_.max_steps) : full;
}

std::int64_t Trainer::total_steps() const {
    return main_steps() + static_cast<std::int64_t>(cfg_.finetune_epochs) * steps_per_epoch();
}

Batch Trainer::batch_for(std::int64_t step) const {
    const std::int64_t spe = steps_per_epoch();
    const std::int64_t epoch = step / spe;
    const std::int64_t pos = step % spe;
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = keyed_rng(cfg_.seed, static_cast<std::uint64_t>(epoch), 0xba7c);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<int>(i - 1)))]);
    }
    Batch b;
    const auto begin = static_cast<std::size_t>(pos * cfg_.batch_size);
    const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
    for (std::size_t i = begin; i < end; ++i) b.push_back(&train_[order[i]]);
    return b;
}

StepStats Trainer::step() {
    if (done()) throw std::logic_error("Trainer::step called after training finished");
    return step_ < main_steps() ? main_step() : finetune_step_();
}

StepStats Trainer::main_step() {
    StepStats st;
    st.step = step_;
    const double epoch = static_cast<double>(step_) / static_cast<double>(steps_per_epoch());
    st.lambda = kl_schedule(cfg_, epoch);
    const bool fixed_prior = cfg_.fixed_prior_pretrain && epoch < cfg_.kl_warmup_fraction * cfg_.epochs;

    const Batch batch = batch_for(step_);
    Rng step_rng = rng_.split(static_cast<std::uint64_t>(step_));
    const auto noise = draw_noise(batch, model_->config, step_rng);
    if (!model_->norm.initialized) {
        auto warm = vae_objective(ad::Binder::frozen(), *model_, batch, noise, 0.0);
        model_->norm.update(warm.latents);
    }

    auto vae_group = model_->vae_params();
    auto score_group = model_->score_params();
    const auto theta_before = nn::hash_params(score_group);

    VaeObjective obj;
    {
        ad::Tape tape;
        obj = vae_objective(ad::Binder(&tape, true), *model_, batch, noise, st.lambda, fixed_prior);
        tape.backward(obj.loss);
        auto grads = nn::gradients(tape, vae_group);
        st.grad_norm = nn::clip_global_norm(grads, cfg_.grad_clip_norm);
        if (!std::isfinite(st.grad_norm)) throw DivergenceError("vae step: non-finite gradient at step " + std::to_string(step_));
        vae_opt_.step(grads);
        st.loss_vae = obj.loss->value()(0, 0);
        obj.loss.reset();
    }
    const auto theta_after_vae = nn::hash_params(score_group);
    const auto phi_psi_after_vae = nn::hash_params(vae_group);
    {
        ad::Tape tape;
        auto loss = sgm_objective(ad::Binder(&tape, true), *model_, obj.diffused, noise);
        tape.backward(loss);
        auto grads = nn::gradients(tape, score_group);
        const double gn = nn::clip_global_norm(grads, cfg_.grad_clip_norm);
        if (!std::isfinite(gn)) throw DivergenceError("sgm step: non-finite gradient at step " + std::to_string(step_));
        sgm_opt_.step(grads);
        st.loss_sgm = loss->value()(0, 0);
    }
    st.alternation_ok = theta_before == theta_after_vae && phi_psi_after_vae == nn::hash_params(vae_group);
    model_->norm.update(obj.latents);
    ++step_;
    return st;
}

StepStats Trainer::finetune_step_() {
    StepStats st;
    st.step = step_;
    st.finetune = true;
    const Batch batch = batch_for(step_ - main_steps());
    Rng step_rng = rng_.split(static_cast<std::uint64_t>(step_));
    const auto noise = draw_noise(batch, model_->config, step_rng);
    std::vector<Mat> extra;
    for (const GraphSample* g : batch) extra.push_back(normal_mat(g->num_nodes(), model_->config.vae.latent_dim, step_rng));

    auto dec_group = model_->decoder_params();
    auto enc_group = model_->encoder_params();
    auto score_group = model_->score_params();
    const auto frozen_before = nn::hash_params(enc_group) ^ (nn::hash_params(score_group) * 31);
    ad::Tape tape;
    auto loss = finetune_objective(ad::Binder(&tape, true), *model_, batch, noise, extra, cfg_.finetune_noise_var);
    tape.backward(loss);
    auto grads = nn::gradients(tape, dec_group);
    st.grad_norm = nn::clip_global_norm(grads, cfg_.grad_clip_norm);
    if (!std::isfinite(st.grad_norm)) throw DivergenceError("finetune step: non-finite gradient at step " + std::to_string(step_));
    ft_opt_.step(grads);
    st.loss_vae = loss->value()(0, 0);
    st.alternation_ok = frozen_before == (nn::hash_params(enc_group) ^ (nn::hash_params(score_group) * 31));
    ++step_;
    return st;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.model = *model_;
    ck.train = cfg_;
    ck.step = step_;
    ck.vae_opt = {vae_opt_.steps(), vae_opt_.first_moments(), vae_opt_.second_moments()};
    ck.sgm_opt = {sgm_opt_.steps(), sgm_opt_.first_moments(), sgm_opt_.second_moments()};
    ck.finetune_opt = {ft_opt_.steps(), ft_opt_.first_moments(), ft_opt_.second_moments()};
    ck.rng_state = rng_.state();
    return ck;
}

Checkpoint train(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainHooks& hooks) {
    Trainer trainer(model_cfg, cfg, corpus);
    std::ofstream metrics;
    if (hooks.metrics_csv) {
        if (hooks.metrics_csv->has_parent_path()) std::filesystem::create_directories(hooks.metrics_csv->parent_path());
        metrics.open(*hooks.metrics_csv, std::ios::trunc);
        if (!metrics) throw IoError("cannot write " + hooks.metrics_csv->string());
        metrics << "step,loss_vae,loss_sgm,lambda,grad_norm\n";
        metrics.precision(17);
    }
    while (!trainer.done()) {
        const StepStats st = trainer.step();
        if (metrics.is_open()) {
            metrics << st.step << ',' << st.loss_vae << ',' << st.loss_sgm << ',' << st.lambda << ',' << st.grad_norm << '\n';
        }
        if (hooks.on_step) hooks.on_step(st);
        if (hooks.checkpoint_path && cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0) {
            save_checkpoint(trainer.checkpoint(), *hooks.checkpoint_path);
        }
    }
    Checkpoint ck = trainer.checkpoint();
    if (hooks.checkpoint_path) save_checkpoint(ck, *hooks.checkpoint_path);
    return ck;
}

}  // namespace nvdiff
