#include "nvdiff/graph.hpp"

#include "nvdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <queue>
#include <set>

namespace nvdiff {

GraphSample::GraphSample(int num_node_types, int num_edge_types, std::vector<int> node_types,
                         std::vector<std::uint8_t> edge_types)
    : num_node_types_(num_node_types),
      num_edge_types_(num_edge_types),
      node_types_(std::move(node_types)),
      edge_types_(std::move(edge_types)) {
    if (num_node_types_ < 1 || num_edge_types_ < 1 || num_edge_types_ > 254) {
        throw RangeError("GraphSample: invalid number of node or edge types");
    }
    const std::size_t n = node_types_.size();
    if (n == 0) throw DimensionError("GraphSample: graph must have at least one node");
    if (edge_types_.size() != n * n) throw DimensionError("GraphSample: edge matrix must be N x N");
    for (int t : node_types_) {
        if (t < 0 || t >= num_node_types_) throw RangeError("GraphSample: node type out of range");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (edge_types_[i * n + i] != 0) throw RangeError("GraphSample: self-loop at node " + std::to_string(i));
        for (std::size_t j = 0; j < n; ++j) {
            const int t = edge_types_[i * n + j];
            if (t > num_edge_types_) throw RangeError("GraphSample: edge type out of range");
            if (t != edge_types_[j * n + i]) throw RangeError("GraphSample: edge matrix is not symmetric");
        }
    }
}

GraphSample GraphSample::from_edges(int num_nodes, const std::vector<std::pair<int, int>>& edges) {
    if (num_nodes < 1) throw DimensionError("from_edges: num_nodes must be positive");
    const auto n = static_cast<std::size_t>(num_nodes);
    std::vector<std::uint8_t> et(n * n, 0);
    for (auto [a, b] : edges) {
        if (a < 0 || b < 0 || a >= num_nodes || b >= num_nodes) throw RangeError("from_edges: node index out of range");
        if (a == b) throw RangeError("from_edges: self-loop");
        et[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = 1;
        et[static_cast<std::size_t>(b) * n + static_cast<std::size_t>(a)] = 1;
    }
    return GraphSample(1, 1, std::vector<int>(n, 0), std::move(et));
}

GraphSample GraphSample::from_one_hot(const Mat& node_features, const Mat& edge_tensor) {
    const Eigen::Index n = node_features.rows();
    if (edge_tensor.rows() != n * n) throw DimensionError("from_one_hot: edge tensor must have N*N rows");
    std::vector<int> nt(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index idx;
        node_features.row(i).maxCoeff(&idx);
        if (node_features.row(i).sum() != 1.0 || node_features(i, idx) != 1.0) {
            throw RangeError("from_one_hot: node row is not one-hot");
        }
        nt[static_cast<std::size_t>(i)] = static_cast<int>(idx);
    }
    std::vector<std::uint8_t> et(static_cast<std::size_t>(n * n));
    for (Eigen::Index r = 0; r < n * n; ++r) {
        Eigen::Index idx;
        edge_tensor.row(r).maxCoeff(&idx);
        if (edge_tensor.row(r).sum() != 1.0 || edge_tensor(r, idx) != 1.0) {
            throw RangeError("from_one_hot: edge slice is not one-hot");
        }
        et[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(idx);
    }
    return GraphSample(static_cast<int>(node_features.cols()), static_cast<int>(edge_tensor.cols()) - 1,
                       std::move(nt), std::move(et));
}

int GraphSample::degree(int i) const {
    int d = 0;
    for (int j = 0; j < num_nodes(); ++j) d += has_edge(i, j) ? 1 : 0;
    return d;
}

int GraphSample::num_edges() const {
    int m = 0;
    for (auto t : edge_types_) m += t != 0 ? 1 : 0;
    return m / 2;
}

std::vector<std::vector<int>> GraphSample::adjacency_lists() const {
    const int n = num_nodes();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (has_edge(i, j)) adj[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    return adj;
}

std::vector<std::pair<int, int>> GraphSample::edge_list() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < num_nodes(); ++i) {
        for (int j = i + 1; j < num_nodes(); ++j) {
            if (has_edge(i, j)) out.emplace_back(i, j);
        }
    }
    return out;
}

Mat GraphSample::node_features() const {
    Mat x = Mat::Zero(num_nodes(), num_node_types_);
    for (int i = 0; i < num_nodes(); ++i) x(i, node_type(i)) = 1.0;
    return x;
}

Mat GraphSample::edge_tensor() const {
    const int n = num_nodes();
    Mat a = Mat::Zero(static_cast<Eigen::Index>(n) * n, num_edge_types_ + 1);
    for (std::size_t r = 0; r < edge_types_.size(); ++r) a(static_cast<Eigen::Index>(r), edge_types_[r]) = 1.0;
    return a;
}

Permutation::Permutation(std::vector<int> mapping) : mapping_(std::move(mapping)) {
    std::vector<char> seen(mapping_.size(), 0);
    for (int v : mapping_) {
        if (v < 0 || static_cast<std::size_t>(v) >= mapping_.size() || seen[static_cast<std::size_t>(v)]) {
            throw RangeError("Permutation: mapping is not a bijection");
        }
        seen[static_cast<std::size_t>(v)] = 1;
    }
}

Permutation Permutation::identity(int n) {
    std::vector<int> m(static_cast<std::size_t>(n));
    std::iota(m.begin(), m.end(), 0);
    return Permutation(std::move(m));
}

Permutation Permutation::random(int n, Rng& rng) {
    std::vector<int> m(static_cast<std::size_t>(n));
    std::iota(m.begin(), m.end(), 0);
    // Fisher-Yates with our own draws so the result does not depend on std::shuffle's algorithm.
    for (int i = n - 1; i > 0; --i) std::swap(m[static_cast<std::size_t>(i)], m[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
    std::vector<int> inv(mapping_.size());
    for (std::size_t i = 0; i < mapping_.size(); ++i) inv[static_cast<std::size_t>(mapping_[i])] = static_cast<int>(i);
    return Permutation(std::move(inv));
}

Permutation Permutation::then(const Permutation& next) const {
    if (next.size() != size()) throw DimensionError("Permutation::then: size mismatch");
    std::vector<int> out(mapping_.size());
    for (std::size_t i = 0; i < mapping_.size(); ++i) out[i] = next(mapping_[i]);
    return Permutation(std::move(out));
}

Mat Permutation::apply_rows(const Mat& m) const {
    if (m.rows() != size()) throw DimensionError("Permutation::apply_rows: size mismatch");
    Mat out(m.rows(), m.cols());
    for (int i = 0; i < size(); ++i) out.row((*this)(i)) = m.row(i);
    return out;
}

Mat Permutation::apply_pairs(const Mat& e) const {
    const Eigen::Index n = size();
    if (e.rows() != n * n) throw DimensionError("Permutation::apply_pairs: size mismatch");
    Mat out(e.rows(), e.cols());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) out.row((*this)(i) * n + (*this)(j)) = e.row(i * n + j);
    }
    return out;
}

GraphSample apply_permutation(const GraphSample& g, const Permutation& p) {
    const int n = g.num_nodes();
    if (p.size() != n) {
        throw DimensionError("apply_permutation: permutation of size " + std::to_string(p.size()) +
                             " applied to graph with " + std::to_string(n) + " nodes");
    }
    std::vector<int> nt(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> et(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        nt[static_cast<std::size_t>(p(i))] = g.node_type(i);
        for (int j = 0; j < n; ++j) {
            et[static_cast<std::size_t>(p(i)) * static_cast<std::size_t>(n) + static_cast<std::size_t>(p(j))] =
                static_cast<std::uint8_t>(g.edge_type(i, j));
        }
    }
    return GraphSample(g.num_node_types(), g.num_edge_types(), std::move(nt), std::move(et));
}

bool is_connected(const GraphSample& g) {
    const int n = g.num_nodes();
    const auto adj = g.adjacency_lists();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (!seen[static_cast<std::size_t>(v)]) {
                seen[static_cast<std::size_t>(v)] = 1;
                ++count;
                q.push(v);
            }
        }
    }
    return count == n;
}

int count_triangles(const GraphSample& g) {
    const int n = g.num_nodes();
    int t = 0;
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            if (!g.has_edge(a, b)) continue;
            for (int c = b + 1; c < n; ++c) {
                if (g.has_edge(a, c) && g.has_edge(b, c)) ++t;
            }
        }
    }
    return t;
}

std::vector<int> degree_sequence_sorted(const GraphSample& g) {
    std::vector<int> d;
    for (int i = 0; i < g.num_nodes(); ++i) d.push_back(g.degree(i));
    std::sort(d.begin(), d.end());
    return d;
}

std::string to_string(DatasetName name) {
    switch (name) {
        case DatasetName::CommunitySmall: return "community-small";
        case DatasetName::Community: return "community";
        case DatasetName::EgoSmall: return "ego-small";
        case DatasetName::Ego: return "ego";
    }
    return "unknown";
}

DatasetName dataset_from_string(const std::string& s) {
    if (s == "community-small") return DatasetName::CommunitySmall;
    if (s == "community") return DatasetName::Community;
    if (s == "ego-small") return DatasetName::EgoSmall;
    if (s == "ego") return DatasetName::Ego;
    throw ConfigError("unknown dataset '" + s + "' (expected community-small, community, ego-small or ego)");
}

DatasetSpec DatasetSpec::preset(DatasetName name, std::uint64_t seed) {
    switch (name) {
        case DatasetName::CommunitySmall: return {name, 500, 12, 20, seed};
        case DatasetName::Community: return {name, 500, 60, 160, seed};
        case DatasetName::EgoSmall: return {name, 500, 4, 18, seed};
        case DatasetName::Ego: return {name, 753, 50, 399, seed};
    }
    throw ConfigError("unknown dataset");
}

void DatasetSpec::validate() const {
    const DatasetSpec ref = preset(name);
    if (min_nodes != ref.min_nodes || max_nodes != ref.max_nodes) {
        throw ConfigError("node range (" + std::to_string(min_nodes) + ", " + std::to_string(max_nodes) +
                          ") does not match " + to_string(name) + " (" + std::to_string(ref.min_nodes) + ", " +
                          std::to_string(ref.max_nodes) + ")");
    }
    if (count < 0) throw ConfigError("dataset count must be nonnegative");
}

namespace {

constexpr int kMaxGeneratorRetries = 1000;

GraphSample two_community_graph(int n, double p_intra, Rng& rng) {
    const int n1 = n / 2;
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const bool same = (i < n1) == (j < n1);
            if (same && rng.bernoulli(p_intra)) edges.emplace_back(i, j);
        }
    }
    const int inter = static_cast<int>(std::ceil(0.05 * n));
    std::set<std::pair<int, int>> cross;
    while (static_cast<int>(cross.size()) < inter) {
        cross.emplace(rng.uniform_int(0, n1 - 1), rng.uniform_int(n1, n - 1));
    }
    edges.insert(edges.end(), cross.begin(), cross.end());
    return GraphSample::from_edges(n, edges);
}

std::vector<std::vector<int>> barabasi_albert(int n, int m, Rng& rng) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    std::vector<int> targets;  // each node repeated once per incident edge
    for (int i = 0; i <= m; ++i) {
        for (int j = i + 1; j <= m; ++j) {
            adj[static_cast<std::size_t>(i)].push_back(j);
            adj[static_cast<std::size_t>(j)].push_back(i);
            targets.push_back(i);
            targets.push_back(j);
        }
    }
    for (int v = m + 1; v < n; ++v) {
        std::set<int> chosen;
        while (static_cast<int>(chosen.size()) < m) {
            chosen.insert(targets[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(targets.size()) - 1))]);
        }
        for (int u : chosen) {
            adj[static_cast<std::size_t>(v)].push_back(u);
            adj[static_cast<std::size_t>(u)].push_back(v);
            targets.push_back(u);
            targets.push_back(v);
        }
    }
    return adj;
}

std::vector<int> ego_nodes(const std::vector<std::vector<int>>& adj, int center, int radius, std::size_t cap) {
    std::vector<int> dist(adj.size(), -1);
    std::vector<int> nodes{center};
    dist[static_cast<std::size_t>(center)] = 0;
    for (std::size_t head = 0; head < nodes.size(); ++head) {
        const int u = nodes[head];
        if (dist[static_cast<std::size_t>(u)] == radius) continue;
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (dist[static_cast<std::size_t>(v)] < 0) {
                dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                nodes.push_back(v);
                if (nodes.size() > cap) return nodes;
            }
        }
    }
    return nodes;
}

GraphSample induced(const std::vector<std::vector<int>>& adj, const std::vector<int>& nodes) {
    std::vector<int> index(adj.size(), -1);
    for (std::size_t k = 0; k < nodes.size(); ++k) index[static_cast<std::size_t>(nodes[k])] = static_cast<int>(k);
    std::vector<std::pair<int, int>> edges;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        for (int v : adj[static_cast<std::size_t>(nodes[k])]) {
            const int j = index[static_cast<std::size_t>(v)];
            if (j > static_cast<int>(k)) edges.emplace_back(static_cast<int>(k), j);
        }
    }
    return GraphSample::from_edges(static_cast<int>(nodes.size()), edges);
}

}  // namespace

Corpus generate_community(const DatasetSpec& spec, Rng& rng) {
    if (spec.name != DatasetName::CommunitySmall && spec.name != DatasetName::Community) {
        throw ConfigError("generate_community: " + to_string(spec.name) + " is not a community dataset");
    }
    spec.validate();
    // The large variant uses a sparser block density so edge counts stay in its published range.
    const double p_intra = spec.name == DatasetName::CommunitySmall ? 0.7 : 0.3;
    Corpus out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int k = 0; k < spec.count; ++k) {
        const int n = rng.uniform_int(spec.min_nodes, spec.max_nodes);
        bool ok = false;
        for (int attempt = 0; attempt < kMaxGeneratorRetries && !ok; ++attempt) {
            GraphSample g = two_community_graph(n, p_intra, rng);
            if (is_connected(g)) {
                out.push_back(std::move(g));
                ok = true;
            }
        }
        if (!ok) throw DivergenceError("generate_community: no connected graph after retries");
    }
    return out;
}

Corpus generate_ego(const DatasetSpec& spec, Rng& rng) {
    if (spec.name != DatasetName::EgoSmall && spec.name != DatasetName::Ego) {
        throw ConfigError("generate_ego: " + to_string(spec.name) + " is not an ego dataset");
    }
    spec.validate();
    const bool small = spec.name == DatasetName::EgoSmall;
    const int parent_size = small ? 1000 : 4000;
    const auto adj = barabasi_albert(parent_size, 2, rng);
    Corpus out;
    out.reserve(static_cast<std::size_t>(spec.count));
    const int max_tries = 100 * kMaxGeneratorRetries;
    for (int k = 0; k < spec.count; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < max_tries && !ok; ++attempt) {
            const int center = rng.uniform_int(0, parent_size - 1);
            const int radius = small ? rng.uniform_int(1, 2) : 2;
            const auto nodes = ego_nodes(adj, center, radius, static_cast<std::size_t>(spec.max_nodes));
            const int n = static_cast<int>(nodes.size());
            if (n >= spec.min_nodes && n <= spec.max_nodes) {
                out.push_back(induced(adj, nodes));
                ok = true;
            }
        }
        if (!ok) throw DivergenceError("generate_ego: no ego network in node range after retries");
    }
    return out;
}

Corpus generate_dataset(const DatasetSpec& spec) {
    Rng rng(spec.seed);
    switch (spec.name) {
        case DatasetName::CommunitySmall:
        case DatasetName::Community: return generate_community(spec, rng);
        case DatasetName::EgoSmall:
        case DatasetName::Ego: return generate_ego(spec, rng);
    }
    throw ConfigError("unknown dataset");
}

namespace {

std::vector<int> sizes_of(const Corpus& corpus) {
    std::vector<int> out;
    for (const auto& g : corpus) out.push_back(g.num_nodes());
    return out;
}

}  // namespace

SizeHistogram::SizeHistogram(const Corpus& corpus) : SizeHistogram(sizes_of(corpus)) {}

SizeHistogram::SizeHistogram(const std::vector<int>& sizes) {
    if (sizes.empty()) throw DimensionError("size_histogram: empty corpus");
    std::map<int, int> counts;
    for (int n : sizes) {
        if (n < 1) throw RangeError("size_histogram: graph sizes must be positive");
        ++counts[n];
    }
    double acc = 0.0;
    for (auto [n, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(sizes.size());
        probs_[n] = p;
        acc += p;
        sizes_.push_back(n);
        cdf_.push_back(acc);
    }
    cdf_.back() = 1.0;
}

double SizeHistogram::probability(int n) const {
    auto it = probs_.find(n);
    return it == probs_.end() ? 0.0 : it->second;
}

int SizeHistogram::sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(std::distance(cdf_.begin(), it)), sizes_.size() - 1);
    return sizes_[idx];
}

std::vector<int> SizeHistogram::support() const { return sizes_; }

SizeHistogram size_histogram(const Corpus& corpus) { return SizeHistogram(corpus); }

Split split_corpus(const Corpus& corpus, double train_fraction, Rng& rng) {
    if (train_fraction < 0.0 || train_fraction > 1.0) throw RangeError("split_corpus: fraction must be in [0,1]");
    const auto perm = Permutation::random(static_cast<int>(corpus.size()), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(corpus.size())));
    Split s;
    for (std::size_t k = 0; k < corpus.size(); ++k) {
        const auto& g = corpus[static_cast<std::size_t>(perm(static_cast<int>(k)))];
        (k < n_train ? s.train : s.test).push_back(g);
    }
    return s;
}

namespace {

constexpr std::uint8_t kMagic[4] = {'N', 'V', 'D', 'G'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
    std::uint8_t u8() {
        need(1, "byte");
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * k);
        return v;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw ParseError(std::string("corpus: truncated ") + what, pos_);
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    out.push_back(kVersion);
    const int kv = corpus.empty() ? 1 : corpus.front().num_node_types();
    const int ke = corpus.empty() ? 1 : corpus.front().num_edge_types();
    put_u32(out, static_cast<std::uint32_t>(kv));
    put_u32(out, static_cast<std::uint32_t>(ke));
    put_u32(out, static_cast<std::uint32_t>(corpus.size()));
    for (const auto& g : corpus) {
        if (g.num_node_types() != kv || g.num_edge_types() != ke) {
            throw DimensionError("encode_corpus: all graphs must share node/edge type counts");
        }
        const auto n = static_cast<std::uint32_t>(g.num_nodes());
        const std::uint32_t block = 4 + n + n * (n - 1) / 2;
        put_u32(out, block);
        put_u32(out, n);
        for (int i = 0; i < g.num_nodes(); ++i) out.push_back(static_cast<std::uint8_t>(g.node_type(i)));
        for (int i = 0; i < g.num_nodes(); ++i) {
            for (int j = i + 1; j < g.num_nodes(); ++j) out.push_back(static_cast<std::uint8_t>(g.edge_type(i, j)));
        }
    }
    return out;
}

Corpus decode_corpus(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    for (std::uint8_t m : kMagic) {
        if (r.u8() != m) throw ParseError("corpus: bad magic header", r.pos() - 1);
    }
    const std::uint8_t version = r.u8();
    if (version != kVersion) throw ParseError("corpus: unsupported version " + std::to_string(version), r.pos() - 1);
    const std::uint32_t kv = r.u32();
    const std::uint32_t ke = r.u32();
    if (kv < 1 || kv > 255 || ke < 1 || ke > 254) throw ParseError("corpus: invalid type counts", r.pos() - 8);
    const std::uint32_t count = r.u32();
    Corpus out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::size_t block_start = r.pos();
        const std::uint32_t block = r.u32();
        r.need(block, "graph block");
        const std::uint32_t n = r.u32();
        if (n == 0 || block != 4 + n + n * (n - 1) / 2) {
            throw ParseError("corpus: inconsistent block length for graph " + std::to_string(k), block_start);
        }
        std::vector<int> nt(n);
        for (auto& t : nt) t = r.u8();
        std::vector<std::uint8_t> et(static_cast<std::size_t>(n) * n, 0);
        for (std::uint32_t i = 0; i < n; ++i) {
            for (std::uint32_t j = i + 1; j < n; ++j) {
                const std::uint8_t t = r.u8();
                et[static_cast<std::size_t>(i) * n + j] = t;
                et[static_cast<std::size_t>(j) * n + i] = t;
            }
        }
        try {
            out.emplace_back(static_cast<int>(kv), static_cast<int>(ke), std::move(nt), std::move(et));
        } catch (const std::exception& e) {
            throw ParseError(std::string("corpus: invalid graph: ") + e.what(), block_start);
        }
    }
    if (!r.done()) throw ParseError("corpus: trailing bytes", r.pos());
    return out;
}

void serialize_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    const auto bytes = encode_corpus(corpus);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

Corpus deserialize_corpus(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_corpus(bytes);
}

}  // namespace nvdiff
