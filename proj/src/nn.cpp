#include "nvdiff/nn.hpp"

#include "nvdiff/errors.hpp"

#include <cmath>
#include <cstring>

namespace nvdiff::nn {

Mat xavier_uniform(int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Mat w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    return w;
}

Linear::Linear(int in, int out, const std::string& name, Rng& rng) {
    weight = {name + ".weight", xavier_uniform(in, out, rng)};
    bias = {name + ".bias", Mat::Zero(1, out)};
}

Var Linear::operator()(const Binder& bind, const Var& x) const {
    return ad::add_row(ad::matmul(x, bind(weight)), bind(bias));
}

void Linear::collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Mlp::Mlp(int in, int hidden, int out, const std::string& name, Rng& rng)
    : first(in, hidden, name + ".0", rng), second(hidden, out, name + ".1", rng) {}

Var Mlp::operator()(const Binder& bind, const Var& x) const { return second(bind, ad::silu(first(bind, x))); }

void Mlp::collect(ParamList& out) {
    first.collect(out);
    second.collect(out);
}

LayerNorm::LayerNorm(int dim, const std::string& name) {
    gamma = {name + ".gamma", Mat::Ones(1, dim)};
    beta = {name + ".beta", Mat::Zero(1, dim)};
}

Var LayerNorm::operator()(const Binder& bind, const Var& x) const {
    return ad::layer_norm_rows(x, bind(gamma), bind(beta));
}

void LayerNorm::collect(ParamList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, const std::string& name, Rng& rng)
    : query(dim, dim, name + ".q", rng),
      key(dim, dim, name + ".k", rng),
      value(dim, dim, name + ".v", rng),
      output(dim, dim, name + ".o", rng),
      num_heads(heads) {
    if (heads <= 0 || dim % heads != 0) {
        throw DimensionError("attention width " + std::to_string(dim) + " not divisible by " +
                             std::to_string(heads) + " heads");
    }
}

Var MultiHeadAttention::operator()(const Binder& bind, const Var& x) const {
    const Var q = query(bind, x);
    const Var k = key(bind, x);
    const Var v = value(bind, x);
    const Var merged = ad::multi_head_attention(q, k, v, num_heads);
    return output(bind, merged);
}

void MultiHeadAttention::collect(ParamList& out) {
    query.collect(out);
    key.collect(out);
    value.collect(out);
    output.collect(out);
}

AttentionBlock::AttentionBlock(int dim, int heads, const std::string& name, Rng& rng)
    : norm_attn(dim, name + ".ln_attn"),
      attn(dim, heads, name + ".attn", rng),
      norm_ffn(dim, name + ".ln_ffn"),
      ffn(dim, 2 * dim, dim, name + ".ffn", rng) {}

Var AttentionBlock::delta(const Binder& bind, const Var& x) const {
    const Var a = attn(bind, norm_attn(bind, x));
    const Var f = ffn(bind, norm_ffn(bind, ad::add(x, a)));
    return ad::add(a, f);
}

Var AttentionBlock::operator()(const Binder& bind, const Var& x) const { return ad::add(x, delta(bind, x)); }

void AttentionBlock::collect(ParamList& out) {
    norm_attn.collect(out);
    attn.collect(out);
    norm_ffn.collect(out);
    ffn.collect(out);
}

Adam::Adam(ParamList params, Options opts) : params_(std::move(params)), opts_(opts) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(const std::vector<Mat>& grads) {
    if (grads.size() != params_.size()) throw DimensionError("Adam::step: gradient count mismatch");
    ++steps_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Mat& w = params_[i]->value;
        Mat g = grads[i];
        if (opts_.weight_decay != 0.0) g += opts_.weight_decay * w;
        m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
        v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
        const double lr = opts_.lr;
        const double eps = opts_.eps;
        w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
    }
}

void Adam::restore(std::int64_t steps, std::vector<Mat> m, std::vector<Mat> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw DimensionError("Adam::restore: moment count mismatch");
    }
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

double global_norm(const std::vector<Mat>& grads) {
    double s = 0.0;
    for (const Mat& g : grads) s += g.squaredNorm();
    return std::sqrt(s);
}

double clip_global_norm(std::vector<Mat>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / (norm + 1e-12);
        for (Mat& g : grads) g *= f;
    }
    return norm;
}

std::vector<Mat> gradients(const ad::Tape& tape, const ParamList& params) {
    std::vector<Mat> out;
    out.reserve(params.size());
    for (const Param* p : params) out.push_back(tape.gradient(*p));
    return out;
}

std::uint64_t hash_params(const ParamList& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const Param* p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace nvdiff::nn
