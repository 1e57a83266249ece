#include "nvdiff/sampling.hpp"

#include "nvdiff/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

namespace nvdiff {

namespace {

Mat standard_normal(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

void require_finite(const Mat& z, const char* where) {
    if (!z.allFinite()) throw DivergenceError(std::string(where) + ": state became non-finite");
}

}  // namespace

void SolverConfig::validate() const {
    std::string err;
    if (num_steps < 1) err += "solver.num_steps must be >= 1; ";
    if (!(abs_tol > 0.0)) err += "solver.abs_tol must be > 0; ";
    if (!(rel_tol > 0.0)) err += "solver.rel_tol must be > 0; ";
    if (t_end >= 1.0) err += "solver.t_end must be < 1; ";
    if (!err.empty()) throw ConfigError(err.substr(0, err.size() - 2));
}

sde::DiffusionState reverse_sde_step(const sde::DiffusionState& state, const Mat& score, double f, double g,
                                     double dt, const Mat& noise) {
    if (!(dt > 0.0)) throw RangeError("reverse_sde_step: dt must be positive");
    if (state.time - dt < -1e-12) throw RangeError("reverse_sde_step: step would cross t = 0");
    if (score.rows() != state.latent.rows() || score.cols() != state.latent.cols() ||
        noise.rows() != state.latent.rows() || noise.cols() != state.latent.cols())
        throw DimensionError("reverse_sde_step: score/noise shape differs from the state");
    sde::DiffusionState next;
    next.latent = state.latent - (f * state.latent - g * g * score) * dt + g * std::sqrt(dt) * noise;
    next.time = std::max(0.0, state.time - dt);
    require_finite(next.latent, "reverse_sde_step");
    return next;
}

sde::DiffusionState reverse_sde_step(const sde::DiffusionState& state, const Mat& score,
                                     const sde::VpsdeConfig& cfg, double dt, const Mat& noise) {
    return reverse_sde_step(state, score, sde::drift_coeff(cfg, state.time), sde::diffusion_coeff(cfg, state.time),
                            dt, noise);
}

Mat probability_flow_drift(const Mat& z, const Mat& score, const sde::VpsdeConfig& cfg, double t) {
    const double f = sde::drift_coeff(cfg, t);
    const double g2 = sde::beta(cfg, t);
    return f * z - 0.5 * g2 * score;
}

sde::DiffusionState integrate_em(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                                 int num_steps, double t_end, Rng& rng, const TrajectoryFn& record) {
    if (num_steps < 1) throw RangeError("integrate_em: num_steps must be >= 1");
    if (!(t_end < state.time)) throw RangeError("integrate_em: t_end must lie below the start time");
    const double dt = (state.time - t_end) / num_steps;
    const int n = static_cast<int>(state.latent.rows());
    const int d = static_cast<int>(state.latent.cols());
    for (int k = 0; k < num_steps; ++k) {
        Mat s = score(state.latent, state.time);
        Mat noise = standard_normal(n, d, rng);
        state = reverse_sde_step(state, s, cfg, dt, noise);
        if (k == num_steps - 1) state.time = t_end;
        if (record) record(state.time, state.latent);
    }
    return state;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b*, the embedded 4th-order difference
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

sde::DiffusionState solve_ode(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                              const SolverConfig& solver, double t_end, OdeStats* stats) {
    solver.validate();
    if (t_end > state.time) throw RangeError("solve_ode: t_end must not exceed the start time");
    OdeStats local;
    OdeStats& st = stats ? *stats : local;
    auto rhs = [&](const Mat& z, double t) {
        ++st.evaluations;
        return probability_flow_drift(z, score(z, t), cfg, t);
    };

    const double span = state.time - t_end;
    if (span == 0.0) return state;
    const double min_step = 1e-12 * std::max(1.0, span);
    double h = std::min(span, 1e-2);  // magnitude; integration runs backward in time
    Mat z = state.latent;
    double t = state.time;
    Mat k1 = rhs(z, t);
    while (t > t_end) {
        if (t - h < t_end + min_step) h = t - t_end;
        const double s = -h;  // signed step
        Mat k2 = rhs(z + s * (a21 * k1), t + c2 * s);
        Mat k3 = rhs(z + s * (a31 * k1 + a32 * k2), t + c3 * s);
        Mat k4 = rhs(z + s * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * s);
        Mat k5 = rhs(z + s * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * s);
        Mat k6 = rhs(z + s * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + s);
        Mat z_new = z + s * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const double t_new = (h == t - t_end) ? t_end : t + s;
        Mat k7 = rhs(z_new, t_new);
        Mat err = s * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double acc = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double scale =
                solver.abs_tol + solver.rel_tol * std::max(std::abs(z.data()[i]), std::abs(z_new.data()[i]));
            const double r = err.data()[i] / scale;
            acc += r * r;
        }
        const double err_norm = std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(1, z.size())));
        if (!std::isfinite(err_norm) || !z_new.allFinite())
            throw DivergenceError("solve_ode: non-finite state at t = " + std::to_string(t));

        if (err_norm <= 1.0) {
            z = std::move(z_new);
            t = t_new;
            k1 = std::move(k7);  // first-same-as-last
            ++st.accepted;
        } else {
            ++st.rejected;
        }
        const double factor =
            err_norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, err_norm <= 1.0 ? 5.0 : 1.0);
        h *= factor;
        if (t > t_end && h < min_step) throw DivergenceError("solve_ode: step size underflow at t = " + std::to_string(t));
    }
    return {z, t_end};
}

sde::DiffusionState run_solver(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                               const SolverConfig& solver, Rng& rng, const std::vector<double>& grid,
                               const TrajectoryFn& record) {
    solver.validate();
    const double end = solver.end_time(cfg);
    std::vector<double> points;
    for (double g : grid) {
        if (g < end - 1e-12 || g > state.time + 1e-12)
            throw RangeError("run_solver: trajectory time " + std::to_string(g) + " outside the integration range");
        points.push_back(g);
    }
    std::sort(points.begin(), points.end(), std::greater<>());

    std::size_t next = 0;
    auto emit_due = [&](double t, const Mat& z, double tol) {
        while (next < points.size() && points[next] >= t - tol) {
            if (record) record(points[next], z);
            ++next;
        }
    };

    if (solver.kind == SolverKind::EulerMaruyama) {
        const double dt = (state.time - end) / solver.num_steps;
        emit_due(state.time, state.latent, 0.5 * dt);
        return integrate_em(state, score, cfg, solver.num_steps, end, rng,
                            points.empty() ? TrajectoryFn{} : TrajectoryFn([&](double t, const Mat& z) {
                                emit_due(t, z, 0.5 * dt);
                            }));
    }

    // ODE: integrate segment by segment so every requested time is hit exactly.
    emit_due(state.time, state.latent, 1e-12);
    while (next < points.size()) {
        state = solve_ode(state, score, cfg, solver, points[next]);
        emit_due(state.time, state.latent, 1e-12);
    }
    if (state.time > end) state = solve_ode(state, score, cfg, solver, end);
    return state;
}

ScoreFn model_score(const Model& model) {
    return [&model](const Mat& z, double t) -> Mat {
        const double sigma = sde::marginal_params(model.config.sde, t).sigma;
        if (!(sigma > 0.0)) throw RangeError("model_score: sigma_t is zero; raise eps_t or sigma0");
        return -score_forward(model.score, model.config.score, z, t).epsilon_hat / sigma;
    };
}

SampleOutput sample_graphs(const Model& model, int count, const SampleOptions& opts, Rng& rng) {
    if (count < 0) throw RangeError("sample_graphs: count must be >= 0");
    if (model.train_sizes.empty()) throw RangeError("sample_graphs: model has no training-size prior");
    const SizeHistogram sizes(model.train_sizes);
    const ScoreFn score = model_score(model);
    const int d = model.config.vae.latent_dim;
    SampleOutput out;
    out.graphs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng stream = rng.split(static_cast<std::uint64_t>(i));
        const int n = sizes.sample(stream);
        sde::DiffusionState state{standard_normal(n, d, stream), 1.0};
        TrajectoryFn rec;
        if (!opts.trajectory_grid.empty())
            rec = [&out, i](double t, const Mat& z) { out.trajectory.push_back({i, t, z}); };
        state = run_solver(state, score, model.config.sde, opts.solver, stream, opts.trajectory_grid, rec);
        const Mat z0 = model.norm.denormalize(state.latent);
        out.graphs.push_back(sample_graph(model.vae.decoder, model.config.vae, z0, opts.mode, stream));
    }
    return out;
}

Mat sample_latent(const Model& model, const Mat& z1, const SolverConfig& solver, Rng& rng) {
    if (z1.cols() != model.config.vae.latent_dim) throw DimensionError("sample_latent: wrong latent width");
    sde::DiffusionState state{z1, 1.0};
    state = run_solver(state, model_score(model), model.config.sde, solver, rng);
    return model.norm.denormalize(state.latent);
}

void write_trajectory_csv(const std::vector<TrajectoryPoint>& traj, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    const Eigen::Index d = traj.empty() ? 0 : traj.front().z.cols();
    os << "sample_id,t,node_id";
    for (Eigen::Index k = 0; k < d; ++k) os << ",z" << k;
    os << '\n';
    char buf[64];
    for (const auto& p : traj) {
        for (Eigen::Index i = 0; i < p.z.rows(); ++i) {
            std::snprintf(buf, sizeof buf, "%.6f", p.t);
            os << p.sample_id << ',' << buf << ',' << i;
            for (Eigen::Index k = 0; k < p.z.cols(); ++k) {
                std::snprintf(buf, sizeof buf, "%.17g", p.z(i, k));
                os << ',' << buf;
            }
            os << '\n';
        }
    }
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<double> uniform_time_grid(double end, int count) {
    if (count < 1) throw RangeError("uniform_time_grid: count must be >= 1");
    if (!(end >= 0.0 && end <= 1.0)) throw RangeError("uniform_time_grid: end must lie in [0, 1]");
    if (count == 1) return {1.0};
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) grid[static_cast<std::size_t>(k)] = 1.0 - (1.0 - end) * k / (count - 1);
    grid.back() = end;
    return grid;
}

double nll_importance(const Model& model, const GraphSample& g, int num_samples, Rng& rng,
                      bool prior_equals_proposal) {
    if (num_samples < 1) throw RangeError("nll_importance: need at least one sample");
    const VaeConfig& vc = model.config.vae;
    const double sigma = vc.posterior_std();
    if (!(sigma > 0.0)) throw RangeError("nll_importance: proposal has zero variance");
    const int n = g.num_nodes();
    const int d = vc.latent_dim;
    constexpr double half_log_2pi = 0.91893853320467274178;
    const double log_jacobian = n * model.norm.std.array().log().sum();

    std::vector<double> log_w(static_cast<std::size_t>(num_samples));
    for (int l = 0; l < num_samples; ++l) {
        const Encoding enc = encode(model.vae.encoder, vc, g, rng);
        const Mat eps = standard_normal(n, d, rng);
        const Mat z = reparameterize(enc.mean, sigma, eps);
        const double log_px = log_likelihood(model.vae.decoder, vc, g, z);
        if (prior_equals_proposal) {
            log_w[static_cast<std::size_t>(l)] = log_px;
            continue;
        }
        const double log_q = -0.5 * eps.squaredNorm() - n * d * (std::log(sigma) + half_log_2pi);
        const Mat zn = model.norm.normalize(z);
        const double log_p = -0.5 * zn.squaredNorm() - n * d * half_log_2pi - log_jacobian;
        log_w[static_cast<std::size_t>(l)] = log_px + log_p - log_q;
    }
    const double m = *std::max_element(log_w.begin(), log_w.end());
    double acc = 0.0;
    for (double v : log_w) acc += std::exp(v - m);
    const double est = m + std::log(acc / num_samples);
    if (!std::isfinite(est)) throw DivergenceError("nll_importance: non-finite estimate");
    return est;
}

double time_reverse_step(const Model& model, int n, int repeats, Rng& rng) {
    const ScoreFn score = model_score(model);
    const Mat z = standard_normal(n, model.config.vae.latent_dim, rng);
    std::vector<double> secs;
    for (int r = 0; r < std::max(1, repeats); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const double t = 0.5;
        Mat drift = probability_flow_drift(z, score(z, t), model.config.sde, t);
        Mat next = z - 1e-3 * drift;
        const auto t1 = std::chrono::steady_clock::now();
        require_finite(next, "time_reverse_step");
        secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::nth_element(secs.begin(), secs.begin() + static_cast<std::ptrdiff_t>(secs.size() / 2), secs.end());
    return secs[secs.size() / 2];
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DimensionError("loglog_slope: need two or more paired points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0 && y[i] > 0.0)) throw RangeError("loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw RangeError("loglog_slope: x values are all equal");
    return sxy / sxx;
}

}  // namespace nvdiff
