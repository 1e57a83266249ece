#include "nvdiff/autodiff.hpp"

#include "nvdiff/errors.hpp"

#include <cmath>
#include <string>

namespace nvdiff::ad {

namespace {

std::string shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->value().rows() != b->value().rows() || a->value().cols() != b->value().cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape(a->value()) + " vs " +
                             shape(b->value()));
    }
}

Tape* tape_of(std::initializer_list<const Var*> inputs) {
    for (const Var* v : inputs) {
        if ((*v)->tape) return (*v)->tape;
    }
    return nullptr;
}

// Creates a result node; it is recorded only when some input is tracked.
Var make(Mat value, Tape* tape) {
    auto n = std::make_shared<Node>();
    n->storage = std::move(value);
    if (tape) {
        n->tape = tape;
        tape->record(n);
    }
    return n;
}

Mat pair_sum_value(const Mat& a) {
    const Eigen::Index n = a.rows();
    Mat out(n * n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = a.row(i) + a.row(j);
    }
    return out;
}

Mat sum_offdiag_value(const Mat& e, Eigen::Index n) {
    Mat out = Mat::Zero(n, e.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) out.row(i) += e.row(i * n + j);
        }
    }
    return out;
}

double stable_log_sigmoid(double x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Mat& Node::grad_ref() {
    if (grad.size() == 0) grad = Mat::Zero(value().rows(), value().cols());
    return grad;
}

Var Tape::watch(const Param& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    auto n = std::make_shared<Node>();
    n->external = &p.value;
    n->tape = this;
    record(n);
    leaves_.emplace(&p, n);
    return n;
}

Var Tape::input(Mat v) {
    auto n = std::make_shared<Node>();
    n->storage = std::move(v);
    n->tape = this;
    record(n);
    return n;
}

void Tape::record(const Var& v) { nodes_.push_back(v); }

void Tape::backward(const Var& out) {
    if (out->value().rows() != 1 || out->value().cols() != 1) {
        throw DimensionError("backward: output must be 1x1, got " + shape(out->value()));
    }
    if (!out->tape) return;
    out->grad_ref()(0, 0) += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.backward && n.grad.size() != 0) n.backward();
    }
}

Mat Tape::gradient(const Param& p) const {
    auto it = leaves_.find(&p);
    if (it == leaves_.end() || it->second->grad.size() == 0) {
        return Mat::Zero(p.value.rows(), p.value.cols());
    }
    return it->second->grad;
}

Var Binder::operator()(const Param& p) const {
    if (tape_ && trainable_) return tape_->watch(p);
    return constant_ref(p.value);
}

Var constant(Mat v) { return make(std::move(v), nullptr); }

Var constant_ref(const Mat& v) {
    auto n = std::make_shared<Node>();
    n->external = &v;
    return n;
}

Var scalar(double s) {
    Mat m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
}

Var matmul(const Var& a, const Var& b) {
    if (a->value().cols() != b->value().rows()) {
        throw DimensionError("matmul: " + shape(a->value()) + " * " + shape(b->value()));
    }
    Var r = make(a->value() * b->value(), tape_of({&a, &b}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, b, self] {
            if (a->tracked()) a->grad_ref().noalias() += self->grad * b->value().transpose();
            if (b->tracked()) b->grad_ref().noalias() += a->value().transpose() * self->grad;
        };
    }
    return r;
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a->value().cols() != b->value().cols()) {
        throw DimensionError("matmul_nt: " + shape(a->value()) + " * T(" + shape(b->value()) + ")");
    }
    Var r = make(a->value() * b->value().transpose(), tape_of({&a, &b}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, b, self] {
            if (a->tracked()) a->grad_ref().noalias() += self->grad * b->value();
            if (b->tracked()) b->grad_ref().noalias() += self->grad.transpose() * a->value();
        };
    }
    return r;
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Var r = make(a->value() + b->value(), tape_of({&a, &b}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, b, self] {
            if (a->tracked()) a->grad_ref() += self->grad;
            if (b->tracked()) b->grad_ref() += self->grad;
        };
    }
    return r;
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Var r = make(a->value() - b->value(), tape_of({&a, &b}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, b, self] {
            if (a->tracked()) a->grad_ref() += self->grad;
            if (b->tracked()) b->grad_ref() -= self->grad;
        };
    }
    return r;
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Var r = make(a->value().cwiseProduct(b->value()), tape_of({&a, &b}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, b, self] {
            if (a->tracked()) a->grad_ref() += self->grad.cwiseProduct(b->value());
            if (b->tracked()) b->grad_ref() += self->grad.cwiseProduct(a->value());
        };
    }
    return r;
}

Var scale(const Var& a, double s) {
    Var r = make(a->value() * s, tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, s, self] { a->grad_ref() += self->grad * s; };
    }
    return r;
}

Var add_row(const Var& a, const Var& row) {
    if (row->value().rows() != 1 || row->value().cols() != a->value().cols()) {
        throw DimensionError("add_row: " + shape(a->value()) + " + " + shape(row->value()));
    }
    Mat v = a->value();
    v.rowwise() += row->value().row(0);
    Var r = make(std::move(v), tape_of({&a, &row}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, row, self] {
            if (a->tracked()) a->grad_ref() += self->grad;
            if (row->tracked()) row->grad_ref() += self->grad.colwise().sum();
        };
    }
    return r;
}

Var mul_col(const Var& a, const Var& col) {
    if (col->value().cols() != 1 || col->value().rows() != a->value().rows()) {
        throw DimensionError("mul_col: " + shape(a->value()) + " * " + shape(col->value()));
    }
    Mat v = a->value().array().colwise() * col->value().col(0).array();
    Var r = make(std::move(v), tape_of({&a, &col}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, col, self] {
            if (a->tracked()) {
                a->grad_ref().array() += self->grad.array().colwise() * col->value().col(0).array();
            }
            if (col->tracked()) {
                col->grad_ref().col(0) += self->grad.cwiseProduct(a->value()).rowwise().sum();
            }
        };
    }
    return r;
}

Var silu(const Var& a) {
    const Mat& x = a->value();
    Mat sig = x.unaryExpr([](double v) { return stable_sigmoid(v); });
    Var r = make(x.cwiseProduct(sig), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, sig = std::move(sig), self] {
            const Mat& x = a->value();
            a->grad_ref().array() +=
                self->grad.array() * sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
        };
    }
    return r;
}

Var sigmoid(const Var& a) {
    Var r = make(a->value().unaryExpr([](double v) { return stable_sigmoid(v); }), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            const Mat& y = self->value();
            a->grad_ref().array() += self->grad.array() * y.array() * (1.0 - y.array());
        };
    }
    return r;
}

Var log_sigmoid(const Var& a) {
    Var r = make(a->value().unaryExpr([](double v) { return stable_log_sigmoid(v); }), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            // d/dx log(sigmoid(x)) = sigmoid(-x)
            a->grad_ref() +=
                self->grad.cwiseProduct(a->value().unaryExpr([](double v) { return stable_sigmoid(-v); }));
        };
    }
    return r;
}

Var softmax_rows(const Var& a) {
    Mat y = a->value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        y.row(i).array() -= y.row(i).maxCoeff();
        y.row(i) = y.row(i).array().exp();
        y.row(i) /= y.row(i).sum();
    }
    Var r = make(std::move(y), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            const Mat& y = self->value();
            Eigen::VectorXd dot = self->grad.cwiseProduct(y).rowwise().sum();
            Mat g = self->grad;
            g.colwise() -= dot;
            a->grad_ref() += g.cwiseProduct(y);
        };
    }
    return r;
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads) {
    const Mat& Q = q->value();
    const Mat& K = k->value();
    const Mat& V = v->value();
    if (heads < 1 || Q.cols() % heads != 0 || K.rows() != Q.rows() || V.rows() != Q.rows() || K.cols() != Q.cols() ||
        V.cols() != Q.cols()) {
        throw DimensionError("multi_head_attention: q/k/v must share shape with columns divisible by heads");
    }
    const Eigen::Index n = Q.rows();
    const Eigen::Index dh = Q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tape* tape = tape_of({&q, &k, &v});
    auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(heads));
    Mat out(n, Q.cols());
    if (!tape) {
        // Inference: walk query rows in blocks so each probability block stays in cache.
        constexpr Eigen::Index kBlock = 32;
        Mat p(std::min(n, kBlock), n);
        for (int h = 0; h < heads; ++h) {
            const Mat kh = K.middleCols(h * dh, dh).transpose();
            const Mat vh = V.middleCols(h * dh, dh);
            for (Eigen::Index r0 = 0; r0 < n; r0 += kBlock) {
                const Eigen::Index rows = std::min(kBlock, n - r0);
                auto pb = p.topRows(rows);
                pb.noalias() = (Q.block(r0, h * dh, rows, dh) * scale) * kh;
                for (Eigen::Index i = 0; i < rows; ++i) {
                    auto row = pb.row(i).array();
                    row = (row - row.maxCoeff()).exp();
                    row /= row.sum();
                }
                out.block(r0, h * dh, rows, dh).noalias() = pb * vh;
            }
        }
        return make(std::move(out), nullptr);
    }
    Mat p(n, n);
    for (int h = 0; h < heads; ++h) {
        p.noalias() = (Q.middleCols(h * dh, dh) * scale) * K.middleCols(h * dh, dh).transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            auto row = p.row(i).array();
            row = (row - row.maxCoeff()).exp();
            row /= row.sum();
        }
        out.middleCols(h * dh, dh).noalias() = p * V.middleCols(h * dh, dh);
        (*probs)[static_cast<std::size_t>(h)] = p;
    }
    Var r = make(std::move(out), tape);
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [q, k, v, probs, heads, dh, scale, self] {
            const Mat& Q = q->value();
            const Mat& K = k->value();
            const Mat& V = v->value();
            for (int h = 0; h < heads; ++h) {
                const Mat& P = (*probs)[static_cast<std::size_t>(h)];
                const auto gout = self->grad.middleCols(h * dh, dh);
                if (v->tracked()) v->grad_ref().middleCols(h * dh, dh).noalias() += P.transpose() * gout;
                Mat dp = gout * V.middleCols(h * dh, dh).transpose();
                const Eigen::VectorXd dot = dp.cwiseProduct(P).rowwise().sum();
                dp.colwise() -= dot;
                dp = dp.cwiseProduct(P) * scale;
                if (q->tracked()) q->grad_ref().middleCols(h * dh, dh).noalias() += dp * K.middleCols(h * dh, dh);
                if (k->tracked()) k->grad_ref().middleCols(h * dh, dh).noalias() += dp.transpose() * Q.middleCols(h * dh, dh);
            }
        };
    }
    return r;
}

Var log_softmax_rows(const Var& a) {
    Mat y = a->value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double m = y.row(i).maxCoeff();
        const double lse = m + std::log((y.row(i).array() - m).exp().sum());
        y.row(i).array() -= lse;
    }
    Var r = make(std::move(y), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            Mat p = self->value().array().exp();
            Eigen::VectorXd gs = self->grad.rowwise().sum();
            p.array().colwise() *= gs.array();
            a->grad_ref() += self->grad - p;
        };
    }
    return r;
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
    const Mat& x = a->value();
    const Eigen::Index n = x.rows(), m = x.cols();
    if (gamma->value().cols() != m || beta->value().cols() != m) {
        throw DimensionError("layer_norm_rows: affine width mismatch");
    }
    Mat xhat(n, m);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
    }
    Mat y = xhat;
    y.array().rowwise() *= gamma->value().row(0).array();
    y.rowwise() += beta->value().row(0);
    Var r = make(std::move(y), tape_of({&a, &gamma, &beta}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, gamma, beta, self, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
            const Mat& g = self->grad;
            if (gamma->tracked()) gamma->grad_ref() += g.cwiseProduct(xhat).colwise().sum();
            if (beta->tracked()) beta->grad_ref() += g.colwise().sum();
            if (a->tracked()) {
                Mat gx = g;
                gx.array().rowwise() *= gamma->value().row(0).array();
                const double m = static_cast<double>(gx.cols());
                Eigen::VectorXd mean_g = gx.rowwise().sum() / m;
                Eigen::VectorXd mean_gx = gx.cwiseProduct(xhat).rowwise().sum() / m;
                Mat dx = gx;
                dx.colwise() -= mean_g;
                dx.array() -= xhat.array().colwise() * mean_gx.array();
                dx.array().colwise() *= inv_std.array();
                a->grad_ref() += dx;
            }
        };
    }
    return r;
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const Eigen::Index n = parts.front()->value().rows();
    Eigen::Index total = 0;
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (p->value().rows() != n) throw DimensionError("concat_cols: row count mismatch");
        total += p->value().cols();
        if (!tape && p->tape) tape = p->tape;
    }
    Mat v(n, total);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p->value().cols()) = p->value();
        off += p->value().cols();
    }
    Var r = make(std::move(v), tape);
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [parts, self] {
            Eigen::Index off = 0;
            for (const auto& p : parts) {
                const Eigen::Index c = p->value().cols();
                if (p->tracked()) p->grad_ref() += self->grad.middleCols(off, c);
                off += c;
            }
        };
    }
    return r;
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const Eigen::Index m = parts.front()->value().cols();
    Eigen::Index total = 0;
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (p->value().cols() != m) throw DimensionError("concat_rows: column count mismatch");
        total += p->value().rows();
        if (!tape && p->tape) tape = p->tape;
    }
    Mat v(total, m);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleRows(off, p->value().rows()) = p->value();
        off += p->value().rows();
    }
    Var r = make(std::move(v), tape);
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [parts, self] {
            Eigen::Index off = 0;
            for (const auto& p : parts) {
                const Eigen::Index c = p->value().rows();
                if (p->tracked()) p->grad_ref() += self->grad.middleRows(off, c);
                off += c;
            }
        };
    }
    return r;
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a->value().rows()) {
        throw DimensionError("slice_rows: out of range");
    }
    Var r = make(a->value().middleRows(start, count), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, start, count, self] { a->grad_ref().middleRows(start, count) += self->grad; };
    }
    return r;
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a->value().cols()) {
        throw DimensionError("slice_cols: out of range");
    }
    Var r = make(a->value().middleCols(start, count), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, start, count, self] { a->grad_ref().middleCols(start, count) += self->grad; };
    }
    return r;
}

Var pair_sum(const Var& a) {
    Var r = make(pair_sum_value(a->value()), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            const Eigen::Index n = a->value().rows();
            Mat& ga = a->grad_ref();
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    const auto g = self->grad.row(i * n + j);
                    ga.row(i) += g;
                    ga.row(j) += g;
                }
            }
        };
    }
    return r;
}

Mat pair_sqdiff_value(const Mat& a) {
    const Eigen::Index n = a.rows();
    Mat out(n * n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = (a.row(i) - a.row(j)).array().square();
    }
    return out;
}

Var pair_sqdiff(const Var& a) {
    Var r = make(pair_sqdiff_value(a->value()), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] {
            const Mat& z = a->value();
            const Eigen::Index n = z.rows();
            Mat& ga = a->grad_ref();
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const auto diff = (z.row(i) - z.row(j)).array();
                    const auto g = self->grad.row(i * n + j).array();
                    ga.row(i).array() += 2.0 * diff * g;
                    ga.row(j).array() -= 2.0 * diff * g;
                }
            }
        };
    }
    return r;
}

Var sum_offdiag(const Var& e, Eigen::Index n) {
    if (e->value().rows() != n * n) throw DimensionError("sum_offdiag: expected n*n rows");
    Var r = make(sum_offdiag_value(e->value(), n), tape_of({&e}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [e, n, self] {
            Mat& ge = e->grad_ref();
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (j != i) ge.row(i * n + j) += self->grad.row(i);
                }
            }
        };
    }
    return r;
}

Mat symmetrize_pairs_value(const Mat& e, Eigen::Index n) {
    if (e.rows() != n * n) throw DimensionError("symmetrize_pairs: expected n*n rows");
    Mat out(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = 0.5 * (e.row(i * n + j) + e.row(j * n + i));
    }
    return out;
}

Var symmetrize_pairs(const Var& e, Eigen::Index n) {
    Var r = make(symmetrize_pairs_value(e->value(), n), tape_of({&e}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [e, n, self] { e->grad_ref() += symmetrize_pairs_value(self->grad, n); };
    }
    return r;
}

Var sum(const Var& a) {
    Mat v(1, 1);
    v(0, 0) = a->value().sum();
    Var r = make(std::move(v), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] { a->grad_ref().array() += self->grad(0, 0); };
    }
    return r;
}

Var weighted_sum(const Var& a, const Mat& weights) {
    if (weights.rows() != a->value().rows() || weights.cols() != a->value().cols()) {
        throw DimensionError("weighted_sum: weight shape mismatch");
    }
    Mat v(1, 1);
    v(0, 0) = a->value().cwiseProduct(weights).sum();
    Var r = make(std::move(v), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, weights, self] { a->grad_ref() += weights * self->grad(0, 0); };
    }
    return r;
}

Var squared_norm(const Var& a) {
    Mat v(1, 1);
    v(0, 0) = a->value().squaredNorm();
    Var r = make(std::move(v), tape_of({&a}));
    if (r->tracked()) {
        Node* self = r.get();
        r->backward = [a, self] { a->grad_ref() += a->value() * (2.0 * self->grad(0, 0)); };
    }
    return r;
}

}  // namespace nvdiff::ad
