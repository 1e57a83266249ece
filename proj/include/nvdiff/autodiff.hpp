#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Var is a shared node holding a value. Nodes created from at least one
// tape-tracked input are recorded on that tape together with a backward
// closure; everything else is a plain constant and is freed as soon as the
// last Var referencing it goes away. Pairwise tensors of shape N x N x C are
// stored flattened as (N*N) x C with row index i*N + j.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace nvdiff::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Param {
    std::string name;
    Mat value;
};

class Tape;

struct Node {
    Mat storage;
    const Mat* external = nullptr;
    Mat grad;
    Tape* tape = nullptr;
    std::function<void()> backward;

    const Mat& value() const { return external ? *external : storage; }
    bool tracked() const { return tape != nullptr; }
    Mat& grad_ref();
};

using Var = std::shared_ptr<Node>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to a parameter. Binding the same parameter twice returns the same leaf.
    Var watch(const Param& p);
    // Tracked leaf that is not a parameter (e.g. to take gradients w.r.t. an input).
    Var input(Mat v);

    void record(const Var& v);
    // Seeds d(out)/d(out) = 1 for a 1x1 output and runs all closures in reverse.
    void backward(const Var& out);

    // Gradient accumulated for a watched parameter; zeros if it never reached the loss.
    Mat gradient(const Param& p) const;
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Var> nodes_;
    std::unordered_map<const Param*, Var> leaves_;
};

// Decides whether module parameters are tracked on a tape or used as constants.
class Binder {
public:
    Binder() = default;
    Binder(Tape* tape, bool trainable) : tape_(tape), trainable_(trainable) {}
    static Binder frozen() { return {}; }

    Var operator()(const Param& p) const;
    Tape* tape() const { return tape_; }
    bool trainable() const { return trainable_; }

private:
    Tape* tape_ = nullptr;
    bool trainable_ = false;
};

Var constant(Mat v);
Var constant_ref(const Mat& v);
Var scalar(double s);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);    // broadcast 1 x m over rows
Var mul_col(const Var& a, const Var& col);    // broadcast n x 1 over columns

// Nonlinearities.
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

// Scaled dot-product self-attention with `heads` column blocks:
// out[:, h] = softmax(q_h k_h^T / sqrt(dh)) v_h.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads);

// Structure.
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

// Pairwise tensors over n nodes.
Var pair_sum(const Var& a);            // row i*n+j = a_i + a_j
Var pair_sqdiff(const Var& a);         // row i*n+j = (a_i - a_j)^2
Var sum_offdiag(const Var& e, Eigen::Index n);  // row i = sum_{j != i} e_{ij}
Var symmetrize_pairs(const Var& e, Eigen::Index n);  // (e_ij + e_ji) / 2

// Reductions to 1x1.
Var sum(const Var& a);
Var weighted_sum(const Var& a, const Mat& weights);
Var squared_norm(const Var& a);

// Plain-matrix helpers shared with non-differentiable code paths.
Mat pair_sqdiff_value(const Mat& a);
Mat symmetrize_pairs_value(const Mat& e, Eigen::Index n);

}  // namespace nvdiff::ad
