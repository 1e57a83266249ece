#pragma once

#include "nvdiff/graph.hpp"
#include "nvdiff/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nvdiff {

using Histogram = std::vector<double>;

// Total variation between two histograms, zero-padding the shorter one: 1/2 sum |x - y|.
double total_variation(const Histogram& x, const Histogram& y);

// Biased MMD^2 with k(x, y) = exp(-TV(x, y)^2 / (2 sigma^2)), clamped at 0.
double mmd(const std::vector<Histogram>& a, const std::vector<Histogram>& b, double sigma);

// Normalised degree histogram, index = degree.
Histogram degree_features(const GraphSample& g);
// 100 bins over [0, 1] of local clustering coefficients (degree < 2 counts as 0), normalised.
Histogram clustering_features(const GraphSample& g);

constexpr int kNumOrbits = 15;
using OrbitCounts = std::vector<std::array<std::int64_t, kNumOrbits>>;  // per node

// Per-node counts of the 15 automorphism orbits of connected induced subgraphs on 2, 3
// and 4 nodes, by exact enumeration of connected node sets.
// 0 edge | 1,2 path ends/middle | 3 triangle | 4,5 P4 ends/middle | 6,7 star leaf/centre
// 8 C4 | 9,10,11 paw tail/triangle/hub | 12,13 diamond deg 2/deg 3 | 14 K4
OrbitCounts orbit_counts(const GraphSample& g);
// Mean over nodes of orbit_counts.
Histogram orbit_features(const GraphSample& g);

// Weisfeiler-Lehman colour-refinement hash including node and edge labels.
std::uint64_t wl_hash(const GraphSample& g, int iterations = 3);
// Exact labelled isomorphism test.
bool isomorphic(const GraphSample& a, const GraphSample& b);

double uniqueness(const Corpus& samples);
double novelty(const Corpus& samples, const Corpus& train);

// Induced subgraph on the largest connected component; ties go to the component that
// contains the smallest node index. Node order is preserved.
GraphSample largest_component(const GraphSample& g);

bool has_cycle(const GraphSample& g);
// Longest shortest path within the largest component.
int diameter(const GraphSample& g);
// Number of distinct degree values.
int degree_class_count(const GraphSample& g);

struct EvalReport {
    double mmd_degree = 0.0;
    double mmd_cluster = 0.0;
    double mmd_orbit = 0.0;
    double uniqueness = 0.0;
    std::optional<double> novelty;
    int num_samples = 0;
    int num_reference = 0;
    std::map<int, double> sampling_seconds;  // graph size -> seconds

    std::string to_json() const;  // byte-stable formatting
    std::string to_csv() const;   // metric,value rows
};

struct EvalOptions {
    double sigma_degree = 1.0;
    double sigma_cluster = 0.1;
    double sigma_orbit = 30.0;
    bool largest_component_only = false;  // applied to samples only
};

EvalReport evaluate(const Corpus& samples, const Corpus& reference, const Corpus* train = nullptr,
                    const EvalOptions& opts = {});

// --- contextual-vector probe ----------------------------------------------------

enum class ProbeTask { CycleDetect, Diameter, DegreeClassCount };
ProbeTask parse_probe_task(const std::string& name);
std::string to_string(ProbeTask task);

struct ProbeOptions {
    double test_fraction = 0.1;
    double val_fraction = 0.1;  // of the training part, for early stopping
    int hidden = 32;
    int max_epochs = 300;
    int patience = 30;
    double lr = 3e-3;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

struct ProbePoint {
    double t = 0.0;
    double metric = 0.0;    // accuracy (cycle_detect) or MAE
    double baseline = 0.0;  // majority-class accuracy or MAE of the training mean
    bool skipped = false;   // degenerate labels
};

// Contexts g_L of every graph at time t: encode, normalise, diffuse, run the score net.
std::vector<Mat> contextual_vectors(const Model& model, const Corpus& corpus, double t, Rng& rng);

std::vector<ProbePoint> probe_contextual(const Model& model, const Corpus& corpus, const std::vector<double>& t_grid,
                                         ProbeTask task, const ProbeOptions& opts = {});

// Fits a 3-layer MLP probe on (features, labels) and scores it on the held-out split.
ProbePoint fit_probe(const std::vector<Mat>& features, const std::vector<double>& labels, bool classification,
                     const ProbeOptions& opts);

}  // namespace nvdiff
