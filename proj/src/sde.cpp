#include "nvdiff/sde.hpp"

#include "nvdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>

namespace nvdiff::sde {

namespace {

void check_time(double t, const char* fn) {
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError(std::string(fn) + ": t=" + std::to_string(t) + " outside [0,1]");
}

}  // namespace

void VpsdeConfig::validate() const {
    if (!(beta0 > 0.0 && beta0 <= beta1)) throw ConfigError("sde: require 0 < beta0 <= beta1");
    if (!(eps_t >= 0.0 && eps_t < 1.0)) throw ConfigError("sde: require 0 <= eps_t < 1");
    if (!(sigma0 >= 0.0 && sigma0 < 1.0)) throw ConfigError("sde: require 0 <= sigma0 < 1");
}

double beta(const VpsdeConfig& cfg, double t) {
    check_time(t, "beta");
    return cfg.beta0 + (cfg.beta1 - cfg.beta0) * t;
}

double drift_coeff(const VpsdeConfig& cfg, double t) { return -0.5 * beta(cfg, t); }

double diffusion_coeff(const VpsdeConfig& cfg, double t) { return std::sqrt(beta(cfg, t)); }

double integral_beta(const VpsdeConfig& cfg, double t) {
    check_time(t, "integral_beta");
    return cfg.beta0 * t + 0.5 * (cfg.beta1 - cfg.beta0) * t * t;
}

MarginalParams marginal_params(const VpsdeConfig& cfg, double t) {
    const double ib = integral_beta(cfg, t);
    const double mean_scale = std::exp(-0.5 * ib);
    const double var = 1.0 - (1.0 - cfg.sigma0 * cfg.sigma0) * std::exp(-ib);
    return {mean_scale, std::sqrt(std::max(var, 0.0))};
}

Mat sample_transition(const VpsdeConfig& cfg, const Mat& z0, double t, const Mat& noise) {
    if (noise.rows() != z0.rows() || noise.cols() != z0.cols()) {
        throw DimensionError("sample_transition: noise shape does not match z0");
    }
    const auto [mean_scale, sigma] = marginal_params(cfg, t);
    return mean_scale * z0 + sigma * noise;
}

ImportanceTimeSampler::ImportanceTimeSampler(const VpsdeConfig& cfg, int table_size)
    : lo_(cfg.eps_t), hi_(1.0) {
    if (table_size < 2) throw RangeError("ImportanceTimeSampler: table needs at least 2 points");
    grid_.resize(static_cast<std::size_t>(table_size));
    std::vector<double> dens(grid_.size());
    for (std::size_t k = 0; k < grid_.size(); ++k) {
        grid_[k] = lo_ + (hi_ - lo_) * static_cast<double>(k) / static_cast<double>(table_size - 1);
        const double s = marginal_params(cfg, grid_[k]).sigma;
        // At t=0 with sigma0=0 the weight is unbounded; clamp to keep the table finite.
        dens[k] = beta(cfg, grid_[k]) / std::max(s * s, 1e-12);
    }
    cdf_.assign(grid_.size(), 0.0);
    for (std::size_t k = 1; k < grid_.size(); ++k) {
        cdf_[k] = cdf_[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (grid_[k] - grid_[k - 1]);
    }
    const double total = cdf_.back();
    for (double& c : cdf_) c /= total;
}

double ImportanceTimeSampler::density(double t) const {
    if (t < lo_ || t > hi_) return 0.0;
    auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
    std::size_t k = static_cast<std::size_t>(std::distance(grid_.begin(), it));
    k = std::clamp<std::size_t>(k, 1, grid_.size() - 1);
    // Inverse-CDF sampling with linear interpolation has piecewise-constant density.
    return (cdf_[k] - cdf_[k - 1]) / (grid_[k] - grid_[k - 1]);
}

TimeSample ImportanceTimeSampler::sample(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t k = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
    k = std::clamp<std::size_t>(k, 1, cdf_.size() - 1);
    const double frac = (u - cdf_[k - 1]) / (cdf_[k] - cdf_[k - 1]);
    const double t = grid_[k - 1] + frac * (grid_[k] - grid_[k - 1]);
    const double p = (cdf_[k] - cdf_[k - 1]) / (grid_[k] - grid_[k - 1]);
    return {t, 1.0 / ((hi_ - lo_) * p)};
}

TimeSample sample_time(const VpsdeConfig& cfg, Rng& rng, TimeSampling mode) {
    if (mode == TimeSampling::Uniform) return {rng.uniform(cfg.eps_t, 1.0), 1.0};
    // Tables are cached per configuration; building one costs 1000 kernel evaluations.
    static std::mutex mu;
    static std::map<std::tuple<double, double, double, double>, ImportanceTimeSampler> cache;
    std::lock_guard<std::mutex> lock(mu);
    const auto key = std::make_tuple(cfg.beta0, cfg.beta1, cfg.eps_t, cfg.sigma0);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, ImportanceTimeSampler(cfg)).first;
    return it->second.sample(rng);
}

double cross_entropy_constant(const VpsdeConfig& cfg, int n, int d) {
    if (n < 1 || d < 1) throw RangeError("cross_entropy_constant: n and d must be positive");
    const double s = marginal_params(cfg, cfg.eps_t).sigma;
    if (s <= 0.0) throw RangeError("cross_entropy_constant: sigma at eps_t is zero; a positive time cutoff is required");
    return static_cast<double>(n) * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * std::numbers::e * s * s);
}

}  // namespace nvdiff::sde
