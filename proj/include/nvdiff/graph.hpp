#pragma once

#include "nvdiff/autodiff.hpp"
#include "nvdiff/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace nvdiff {

using ad::Mat;

// A node- and edge-labelled undirected simple graph. Categorical features are
// stored as class indices; edge class 0 is the explicit "non-edge" channel,
// so a real edge has class 1..num_edge_types.
class GraphSample {
public:
    GraphSample() = default;
    // Validates all invariants; throws DimensionError/RangeError on violation.
    GraphSample(int num_node_types, int num_edge_types, std::vector<int> node_types,
                std::vector<std::uint8_t> edge_types);

    // Single node type, single edge type; edges given as index pairs.
    static GraphSample from_edges(int num_nodes, const std::vector<std::pair<int, int>>& edges);
    // Builds from a one-hot N x Kv node matrix and an (N*N) x (Ke+1) edge matrix.
    static GraphSample from_one_hot(const Mat& node_features, const Mat& edge_tensor);

    int num_nodes() const { return static_cast<int>(node_types_.size()); }
    int num_node_types() const { return num_node_types_; }
    int num_edge_types() const { return num_edge_types_; }

    int node_type(int i) const { return node_types_[static_cast<std::size_t>(i)]; }
    int edge_type(int i, int j) const {
        return edge_types_[static_cast<std::size_t>(i) * node_types_.size() + static_cast<std::size_t>(j)];
    }
    bool has_edge(int i, int j) const { return edge_type(i, j) != 0; }
    int degree(int i) const;
    int num_edges() const;
    std::vector<std::vector<int>> adjacency_lists() const;
    std::vector<std::pair<int, int>> edge_list() const;  // i < j

    // N x Kv one-hot.
    Mat node_features() const;
    // (N*N) x (Ke+1) one-hot, channel 0 = non-edge, diagonal rows are non-edges.
    Mat edge_tensor() const;

    const std::vector<int>& node_types() const { return node_types_; }
    const std::vector<std::uint8_t>& edge_types() const { return edge_types_; }

    friend bool operator==(const GraphSample& a, const GraphSample& b) = default;

private:
    int num_node_types_ = 1;
    int num_edge_types_ = 1;
    std::vector<int> node_types_;
    std::vector<std::uint8_t> edge_types_;
};

class Permutation {
public:
    explicit Permutation(std::vector<int> mapping);
    static Permutation identity(int n);
    static Permutation random(int n, Rng& rng);

    int size() const { return static_cast<int>(mapping_.size()); }
    int operator()(int i) const { return mapping_[static_cast<std::size_t>(i)]; }
    Permutation inverse() const;
    // (a.then(b))(i) == b(a(i))
    Permutation then(const Permutation& next) const;
    const std::vector<int>& mapping() const { return mapping_; }

    // Row permutation of a node matrix: out.row(p(i)) = m.row(i).
    Mat apply_rows(const Mat& m) const;
    // Joint permutation of a flattened pair tensor: out.row(p(i)*N+p(j)) = e.row(i*N+j).
    Mat apply_pairs(const Mat& e) const;

    friend bool operator==(const Permutation&, const Permutation&) = default;

private:
    std::vector<int> mapping_;
};

// Node p(i) of the result carries node i of g.
GraphSample apply_permutation(const GraphSample& g, const Permutation& p);

bool is_connected(const GraphSample& g);
int count_triangles(const GraphSample& g);
std::vector<int> degree_sequence_sorted(const GraphSample& g);

enum class DatasetName { CommunitySmall, Community, EgoSmall, Ego };

struct DatasetSpec {
    DatasetName name = DatasetName::CommunitySmall;
    int count = 500;
    int min_nodes = 12;
    int max_nodes = 20;
    std::uint64_t seed = 0;

    // Node range and graph count of the named benchmark.
    static DatasetSpec preset(DatasetName name, std::uint64_t seed = 0);
    void validate() const;
};

std::string to_string(DatasetName name);
DatasetName dataset_from_string(const std::string& s);

using Corpus = std::vector<GraphSample>;

// Two Erdos-Renyi blocks with a few uniformly chosen cross edges, resampled until connected.
Corpus generate_community(const DatasetSpec& spec, Rng& rng);
// Ego networks cut from a Barabasi-Albert parent graph.
Corpus generate_ego(const DatasetSpec& spec, Rng& rng);
Corpus generate_dataset(const DatasetSpec& spec);

class SizeHistogram {
public:
    explicit SizeHistogram(const Corpus& corpus);
    explicit SizeHistogram(const std::vector<int>& sizes);
    double probability(int n) const;
    int sample(Rng& rng) const;
    const std::map<int, double>& probabilities() const { return probs_; }
    std::vector<int> support() const;

private:
    std::map<int, double> probs_;
    std::vector<int> sizes_;
    std::vector<double> cdf_;
};

SizeHistogram size_histogram(const Corpus& corpus);

struct Split {
    Corpus train;
    Corpus test;
};
// Shuffled split; train gets round(train_fraction * size) graphs.
Split split_corpus(const Corpus& corpus, double train_fraction, Rng& rng);

// Binary corpus file: "NVDG" magic, version byte, little-endian u32 fields,
// one length-prefixed block per graph (N, node classes, upper-triangle edge classes).
std::vector<std::uint8_t> encode_corpus(const Corpus& corpus);
Corpus decode_corpus(const std::vector<std::uint8_t>& bytes);
void serialize_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus deserialize_corpus(const std::filesystem::path& path);

}  // namespace nvdiff
