#pragma once

#include "nvdiff/autodiff.hpp"
#include "nvdiff/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nvdiff::nn {

using ad::Binder;
using ad::Mat;
using ad::Param;
using ad::Var;

// Ordered list of parameter pointers; the order fixes checkpoint layout and
// optimizer state alignment.
using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

Mat xavier_uniform(int fan_in, int fan_out, Rng& rng);

struct Linear {
    Param weight;  // in x out
    Param bias;    // 1 x out

    Linear() = default;
    Linear(int in, int out, const std::string& name, Rng& rng);
    Var operator()(const Binder& bind, const Var& x) const;
    void collect(ParamList& out);
    int in_dim() const { return static_cast<int>(weight.value.rows()); }
    int out_dim() const { return static_cast<int>(weight.value.cols()); }
};

// Two affine layers with a SiLU in between.
struct Mlp {
    Linear first;
    Linear second;

    Mlp() = default;
    Mlp(int in, int hidden, int out, const std::string& name, Rng& rng);
    Var operator()(const Binder& bind, const Var& x) const;
    void collect(ParamList& out);
};

struct LayerNorm {
    Param gamma;
    Param beta;

    LayerNorm() = default;
    LayerNorm(int dim, const std::string& name);
    Var operator()(const Binder& bind, const Var& x) const;
    void collect(ParamList& out);
};

struct MultiHeadAttention {
    Linear query, key, value, output;
    int num_heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(int dim, int heads, const std::string& name, Rng& rng);
    // Full self-attention over the rows of x.
    Var operator()(const Binder& bind, const Var& x) const;
    void collect(ParamList& out);
};

// Pre-norm transformer block: x + mha(ln(x)), then + ffn(ln(.)) with a 2x wide feed-forward.
struct AttentionBlock {
    LayerNorm norm_attn;
    MultiHeadAttention attn;
    LayerNorm norm_ffn;
    Mlp ffn;

    AttentionBlock() = default;
    AttentionBlock(int dim, int heads, const std::string& name, Rng& rng);
    // Returns only the block's increment (attention + feed-forward contributions), so
    // callers decide how to form residuals.
    Var delta(const Binder& bind, const Var& x) const;
    Var operator()(const Binder& bind, const Var& x) const;
    void collect(ParamList& out);
};

// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    Adam() = default;
    Adam(ParamList params, Options opts);

    void step(const std::vector<Mat>& grads);
    std::int64_t steps() const { return steps_; }
    const Options& options() const { return opts_; }
    void set_lr(double lr) { opts_.lr = lr; }

    const std::vector<Mat>& first_moments() const { return m_; }
    const std::vector<Mat>& second_moments() const { return v_; }
    void restore(std::int64_t steps, std::vector<Mat> m, std::vector<Mat> v);

private:
    ParamList params_;
    Options opts_;
    std::vector<Mat> m_, v_;
    std::int64_t steps_ = 0;
};

double global_norm(const std::vector<Mat>& grads);
// Rescales grads in place so the global norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::vector<Mat>& grads, double max_norm);

std::vector<Mat> gradients(const ad::Tape& tape, const ParamList& params);
// FNV-1a over parameter bytes; used to assert which parameter groups a step touched.
std::uint64_t hash_params(const ParamList& params);

}  // namespace nvdiff::nn
