#pragma once

#include "nvdiff/autodiff.hpp"
#include "nvdiff/rng.hpp"

#include <vector>

namespace nvdiff::sde {

using ad::Mat;

// Variance-preserving SDE dZ = -beta(t)/2 Z dt + sqrt(beta(t)) dW with a linear beta schedule.
struct VpsdeConfig {
    double beta0 = 0.1;
    double beta1 = 20.0;
    double eps_t = 0.01;   // lower time cutoff
    double sigma0 = 0.0;   // kernel std at t = 0

    void validate() const;
};

struct DiffusionState {
    Mat latent;
    double time = 1.0;
};

struct MarginalParams {
    double mean_scale;
    double sigma;
};

double beta(const VpsdeConfig& cfg, double t);
double drift_coeff(const VpsdeConfig& cfg, double t);
double diffusion_coeff(const VpsdeConfig& cfg, double t);
double integral_beta(const VpsdeConfig& cfg, double t);

// q(Z^t | Z^0) = N(mean_scale * Z^0, sigma^2 I) with
// mean_scale = exp(-1/2 int beta), sigma^2 = 1 - (1 - sigma0^2) exp(-int beta).
MarginalParams marginal_params(const VpsdeConfig& cfg, double t);

Mat sample_transition(const VpsdeConfig& cfg, const Mat& z0, double t, const Mat& noise);

enum class TimeSampling { Uniform, Importance };

struct TimeSample {
    double t;
    // Multiplying a per-t quantity by this weight gives an unbiased estimate of its
    // expectation under t ~ U[eps_t, 1].
    double weight;
};

// Draws t on [eps_t, 1] with density proportional to g(t)^2 / sigma_t^2, by inverse
// CDF on a piecewise-linear table.
class ImportanceTimeSampler {
public:
    explicit ImportanceTimeSampler(const VpsdeConfig& cfg, int table_size = 1000);
    TimeSample sample(Rng& rng) const;
    // Density of the sampling distribution (normalised over [eps_t, 1]).
    double density(double t) const;

private:
    double lo_, hi_;
    std::vector<double> grid_;
    std::vector<double> cdf_;
};

TimeSample sample_time(const VpsdeConfig& cfg, Rng& rng, TimeSampling mode);

// C = n * d * log(2 pi e sigma_{eps_t}^2)
double cross_entropy_constant(const VpsdeConfig& cfg, int n, int d);

}  // namespace nvdiff::sde
