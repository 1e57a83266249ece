#pragma once

#include "nvdiff/graph.hpp"
#include "nvdiff/model.hpp"
#include "nvdiff/sde.hpp"
#include "nvdiff/vae.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace nvdiff {

enum class SolverKind { EulerMaruyama, ProbabilityFlowOde };

struct SolverConfig {
    SolverKind kind = SolverKind::ProbabilityFlowOde;
    int num_steps = 1000;  // Euler-Maruyama, uniform grid
    double abs_tol = 1e-5;
    double rel_tol = 1e-5;
    double t_end = -1.0;  // negative: use the SDE's eps_t

    void validate() const;
    double end_time(const sde::VpsdeConfig& cfg) const { return t_end < 0.0 ? cfg.eps_t : t_end; }
};

// Score estimate grad_z log p_t(z) at time t.
using ScoreFn = std::function<Mat(const Mat& z, double t)>;
// Called with each recorded state while integrating.
using TrajectoryFn = std::function<void(double t, const Mat& z)>;

// Z <- Z - [f Z - g^2 score] dt + g sqrt(dt) noise, time decremented by dt.
sde::DiffusionState reverse_sde_step(const sde::DiffusionState& state, const Mat& score, double f, double g,
                                     double dt, const Mat& noise);
sde::DiffusionState reverse_sde_step(const sde::DiffusionState& state, const Mat& score,
                                     const sde::VpsdeConfig& cfg, double dt, const Mat& noise);

// dZ/dt of the probability-flow ODE: f Z - 1/2 g^2 score.
Mat probability_flow_drift(const Mat& z, const Mat& score, const sde::VpsdeConfig& cfg, double t);

sde::DiffusionState integrate_em(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                                 int num_steps, double t_end, Rng& rng, const TrajectoryFn& record = {});

struct OdeStats {
    int accepted = 0;
    int rejected = 0;
    int evaluations = 0;
};

// Adaptive Dormand-Prince 5(4) integration of the probability-flow ODE from state.time down to t_end.
sde::DiffusionState solve_ode(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                              const SolverConfig& solver, double t_end, OdeStats* stats = nullptr);

// Runs the configured solver from t = 1 to the solver's end time. With a trajectory grid,
// the state is reported at each grid time (descending, within [end, 1]).
sde::DiffusionState run_solver(sde::DiffusionState state, const ScoreFn& score, const sde::VpsdeConfig& cfg,
                               const SolverConfig& solver, Rng& rng, const std::vector<double>& grid = {},
                               const TrajectoryFn& record = {});

// -eps_theta(z, t) / sigma_t, on normalized latents.
ScoreFn model_score(const Model& model);

struct TrajectoryPoint {
    int sample_id;
    double t;
    Mat z;  // N x d, normalized latent space
};

struct SampleOptions {
    SolverConfig solver;
    DecodeMode mode = DecodeMode::Sample;  // draw A, X from the decoder
    std::vector<double> trajectory_grid;  // empty: no export
};

struct SampleOutput {
    Corpus graphs;
    std::vector<TrajectoryPoint> trajectory;
};

// Draws N from the training-size prior, Z^1 ~ N(0, I), integrates back, de-normalizes
// and decodes. Each sample uses its own stream split from rng.
SampleOutput sample_graphs(const Model& model, int count, const SampleOptions& opts, Rng& rng);
// Single sample with a given size and initial noise, for equivariance checks.
Mat sample_latent(const Model& model, const Mat& z1, const SolverConfig& solver, Rng& rng);

void write_trajectory_csv(const std::vector<TrajectoryPoint>& traj, const std::filesystem::path& path);

// `count` evenly spaced times from 1 down to `end`, both included.
std::vector<double> uniform_time_grid(double end, int count);

// log p(G) ~= log (1/L) sum_l p(G|Z_l) p(Z_l) / q(Z_l|G), Z_l ~ q. The prior density is a
// standard normal on normalized latents (with the normalization Jacobian).
// `prior_equals_proposal` replaces p(Z) by q(Z|G), which collapses each ratio to p(G|Z).
// Returns the log-likelihood estimate; negate for NLL.
double nll_importance(const Model& model, const GraphSample& g, int num_samples, Rng& rng,
                      bool prior_equals_proposal = false);

// Seconds for one reverse-ODE drift evaluation (score network + update) at size n,
// median over `repeats` calls.
double time_reverse_step(const Model& model, int n, int repeats, Rng& rng);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace nvdiff
