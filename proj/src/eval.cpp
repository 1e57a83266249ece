#include "nvdiff/eval.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/nn.hpp"
#include "nvdiff/score_net.hpp"
#include "nvdiff/sde.hpp"
#include "nvdiff/vae.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace nvdiff {

// --- MMD ------------------------------------------------------------------------

double total_variation(const Histogram& x, const Histogram& y) {
    const std::size_t n = std::max(x.size(), y.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = i < x.size() ? x[i] : 0.0;
        const double b = i < y.size() ? y[i] : 0.0;
        acc += std::abs(a - b);
    }
    return 0.5 * acc;
}

namespace {

double mean_kernel(const std::vector<Histogram>& a, const std::vector<Histogram>& b, double sigma) {
    double acc = 0.0;
    for (const auto& x : a)
        for (const auto& y : b) {
            const double d = total_variation(x, y);
            acc += std::exp(-d * d / (2.0 * sigma * sigma));
        }
    return acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

double mmd(const std::vector<Histogram>& a, const std::vector<Histogram>& b, double sigma) {
    if (a.empty() || b.empty()) throw RangeError("mmd: both feature sets must be nonempty");
    if (!(sigma > 0.0)) throw RangeError("mmd: sigma must be positive");
    const double v = mean_kernel(a, a, sigma) + mean_kernel(b, b, sigma) - 2.0 * mean_kernel(a, b, sigma);
    return std::max(0.0, v);
}

// --- features -------------------------------------------------------------------

Histogram degree_features(const GraphSample& g) {
    const int n = g.num_nodes();
    std::vector<int> deg(static_cast<std::size_t>(n));
    int max_deg = 0;
    for (int i = 0; i < n; ++i) {
        deg[static_cast<std::size_t>(i)] = g.degree(i);
        max_deg = std::max(max_deg, deg[static_cast<std::size_t>(i)]);
    }
    Histogram h(static_cast<std::size_t>(max_deg + 1), 0.0);
    for (int d : deg) h[static_cast<std::size_t>(d)] += 1.0 / n;
    return h;
}

namespace {

std::vector<double> local_clustering(const GraphSample& g) {
    const int n = g.num_nodes();
    const auto adj = g.adjacency_lists();
    std::vector<double> c(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& nb = adj[static_cast<std::size_t>(i)];
        const std::size_t k = nb.size();
        if (k < 2) continue;
        int links = 0;
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a + 1; b < k; ++b)
                if (g.has_edge(nb[a], nb[b])) ++links;
        c[static_cast<std::size_t>(i)] = 2.0 * links / (static_cast<double>(k) * static_cast<double>(k - 1));
    }
    return c;
}

}  // namespace

Histogram clustering_features(const GraphSample& g) {
    Histogram h(100, 0.0);
    const auto c = local_clustering(g);
    for (double v : c) {
        const int bin = std::min(99, static_cast<int>(std::floor(v * 100.0)));
        h[static_cast<std::size_t>(bin)] += 1.0 / static_cast<double>(c.size());
    }
    return h;
}

namespace {

// Assigns orbit counts for one connected induced subgraph on `nodes`.
void classify(const GraphSample& g, const int* nodes, int k, OrbitCounts& out) {
    int deg[4] = {0, 0, 0, 0};
    int edges = 0;
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
            if (g.has_edge(nodes[a], nodes[b])) {
                ++deg[a];
                ++deg[b];
                ++edges;
            }
    auto bump = [&](int a, int orbit) { ++out[static_cast<std::size_t>(nodes[a])][static_cast<std::size_t>(orbit)]; };
    if (k == 2) {
        bump(0, 0);
        bump(1, 0);
        return;
    }
    if (k == 3) {
        for (int a = 0; a < 3; ++a) bump(a, edges == 3 ? 3 : (deg[a] == 1 ? 1 : 2));
        return;
    }
    const int max_deg = std::max({deg[0], deg[1], deg[2], deg[3]});
    for (int a = 0; a < 4; ++a) {
        int orbit = 0;
        switch (edges) {
            case 3: orbit = max_deg == 3 ? (deg[a] == 3 ? 7 : 6) : (deg[a] == 1 ? 4 : 5); break;
            case 4: orbit = max_deg == 2 ? 8 : (deg[a] == 1 ? 9 : deg[a] == 2 ? 10 : 11); break;
            case 5: orbit = deg[a] == 2 ? 12 : 13; break;
            default: orbit = 14; break;
        }
        bump(a, orbit);
    }
}

// ESU: every connected node set of size 2..4 is visited exactly once, rooted at its smallest node.
struct Esu {
    const GraphSample& g;
    const std::vector<std::vector<int>>& adj;
    OrbitCounts& out;
    int sub[4];

    void extend(int size, std::vector<int> ext, int root) {
        if (size >= 2) classify(g, sub, size, out);
        if (size == 4) return;
        while (!ext.empty()) {
            const int w = ext.back();
            ext.pop_back();
            std::vector<int> next = ext;
            for (int u : adj[static_cast<std::size_t>(w)]) {
                if (u <= root) continue;
                bool excluded = false;
                for (int s = 0; s < size && !excluded; ++s)
                    if (sub[s] == u || g.has_edge(sub[s], u)) excluded = true;
                if (excluded) continue;
                if (std::find(next.begin(), next.end(), u) == next.end()) next.push_back(u);
            }
            sub[size] = w;
            extend(size + 1, std::move(next), root);
        }
    }
};

}  // namespace

OrbitCounts orbit_counts(const GraphSample& g) {
    const int n = g.num_nodes();
    OrbitCounts out(static_cast<std::size_t>(n));
    for (auto& row : out) row.fill(0);
    const auto adj = g.adjacency_lists();
    Esu esu{g, adj, out, {0, 0, 0, 0}};
    for (int v = 0; v < n; ++v) {
        std::vector<int> ext;
        for (int u : adj[static_cast<std::size_t>(v)])
            if (u > v) ext.push_back(u);
        esu.sub[0] = v;
        esu.extend(1, std::move(ext), v);
    }
    return out;
}

Histogram orbit_features(const GraphSample& g) {
    const auto counts = orbit_counts(g);
    Histogram h(kNumOrbits, 0.0);
    for (const auto& row : counts)
        for (int o = 0; o < kNumOrbits; ++o) h[static_cast<std::size_t>(o)] += static_cast<double>(row[static_cast<std::size_t>(o)]);
    for (double& v : h) v /= std::max(1, g.num_nodes());
    return h;
}

// --- isomorphism ----------------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Colour refinement; colours are content hashes, so they are comparable across graphs.
std::vector<std::uint64_t> refine(const GraphSample& g, int max_iterations) {
    const int n = g.num_nodes();
    const auto adj = g.adjacency_lists();
    std::vector<std::uint64_t> c(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = mix(0x51ed, static_cast<std::uint64_t>(g.node_type(i)));
    std::size_t classes = std::set<std::uint64_t>(c.begin(), c.end()).size();
    for (int it = 0; it < max_iterations; ++it) {
        std::vector<std::uint64_t> next(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            std::vector<std::uint64_t> nb;
            for (int j : adj[static_cast<std::size_t>(i)])
                nb.push_back(mix(c[static_cast<std::size_t>(j)], static_cast<std::uint64_t>(g.edge_type(i, j))));
            std::sort(nb.begin(), nb.end());
            std::uint64_t h = mix(c[static_cast<std::size_t>(i)], nb.size());
            for (auto v : nb) h = mix(h, v);
            next[static_cast<std::size_t>(i)] = h;
        }
        c.swap(next);
        const std::size_t now = std::set<std::uint64_t>(c.begin(), c.end()).size();
        if (max_iterations > n && now == classes) break;  // stable partition
        classes = now;
    }
    return c;
}

std::uint64_t multiset_hash(std::vector<std::uint64_t> colours, const GraphSample& g) {
    std::sort(colours.begin(), colours.end());
    std::uint64_t h = mix(static_cast<std::uint64_t>(g.num_nodes()), static_cast<std::uint64_t>(g.num_edges()));
    h = mix(h, static_cast<std::uint64_t>(g.num_node_types()) * 257 + static_cast<std::uint64_t>(g.num_edge_types()));
    for (auto v : colours) h = mix(h, v);
    return h;
}

}  // namespace

std::uint64_t wl_hash(const GraphSample& g, int iterations) { return multiset_hash(refine(g, iterations), g); }

bool isomorphic(const GraphSample& a, const GraphSample& b) {
    const int n = a.num_nodes();
    if (n != b.num_nodes() || a.num_edges() != b.num_edges() || a.num_node_types() != b.num_node_types() ||
        a.num_edge_types() != b.num_edge_types())
        return false;
    // Refine to a stable partition (an iteration cap above n lets `refine` stop when stable).
    const auto ca = refine(a, n + 1);
    const auto cb = refine(b, n + 1);
    {
        auto sa = ca, sb = cb;
        std::sort(sa.begin(), sa.end());
        std::sort(sb.begin(), sb.end());
        if (sa != sb) return false;
    }
    // Visit a's nodes in BFS order (smallest colour classes as roots) so each new node has
    // mapped neighbours to check against.
    std::unordered_map<std::uint64_t, int> class_size;
    for (auto c : ca) ++class_size[c];
    std::vector<int> order;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    const auto adj_a = a.adjacency_lists();
    std::vector<int> roots(static_cast<std::size_t>(n));
    std::iota(roots.begin(), roots.end(), 0);
    std::stable_sort(roots.begin(), roots.end(), [&](int x, int y) {
        return class_size[ca[static_cast<std::size_t>(x)]] < class_size[ca[static_cast<std::size_t>(y)]];
    });
    for (int r : roots) {
        if (seen[static_cast<std::size_t>(r)]) continue;
        std::deque<int> q{r};
        seen[static_cast<std::size_t>(r)] = 1;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            order.push_back(u);
            for (int w : adj_a[static_cast<std::size_t>(u)])
                if (!seen[static_cast<std::size_t>(w)]) {
                    seen[static_cast<std::size_t>(w)] = 1;
                    q.push_back(w);
                }
        }
    }
    std::unordered_map<std::uint64_t, std::vector<int>> candidates;
    for (int j = 0; j < n; ++j) candidates[cb[static_cast<std::size_t>(j)]].push_back(j);

    std::vector<int> map(static_cast<std::size_t>(n), -1);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    std::function<bool(std::size_t)> assign = [&](std::size_t depth) -> bool {
        if (depth == order.size()) return true;
        const int u = order[depth];
        for (int v : candidates[ca[static_cast<std::size_t>(u)]]) {
            if (used[static_cast<std::size_t>(v)]) continue;
            bool ok = true;
            for (std::size_t d = 0; d < depth && ok; ++d) {
                const int w = order[d];
                if (a.edge_type(u, w) != b.edge_type(v, map[static_cast<std::size_t>(w)])) ok = false;
            }
            if (!ok) continue;
            map[static_cast<std::size_t>(u)] = v;
            used[static_cast<std::size_t>(v)] = 1;
            if (assign(depth + 1)) return true;
            used[static_cast<std::size_t>(v)] = 0;
        }
        return false;
    };
    return assign(0);
}

double uniqueness(const Corpus& samples) {
    if (samples.empty()) throw RangeError("uniqueness: no samples");
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> reps;
    std::size_t classes = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& bucket = reps[wl_hash(samples[i])];
        bool found = false;
        for (std::size_t r : bucket)
            if (isomorphic(samples[r], samples[i])) {
                found = true;
                break;
            }
        if (!found) {
            bucket.push_back(i);
            ++classes;
        }
    }
    return static_cast<double>(classes) / static_cast<double>(samples.size());
}

double novelty(const Corpus& samples, const Corpus& train) {
    if (samples.empty()) throw RangeError("novelty: no samples");
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> index;
    for (std::size_t i = 0; i < train.size(); ++i) index[wl_hash(train[i])].push_back(i);
    std::size_t novel = 0;
    for (const auto& s : samples) {
        auto it = index.find(wl_hash(s));
        bool seen = false;
        if (it != index.end())
            for (std::size_t r : it->second)
                if (isomorphic(train[r], s)) {
                    seen = true;
                    break;
                }
        if (!seen) ++novel;
    }
    return static_cast<double>(novel) / static_cast<double>(samples.size());
}

// --- structure ------------------------------------------------------------------

namespace {

std::vector<int> component_labels(const GraphSample& g, int* count) {
    const int n = g.num_nodes();
    const auto adj = g.adjacency_lists();
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    int c = 0;
    for (int s = 0; s < n; ++s) {
        if (label[static_cast<std::size_t>(s)] >= 0) continue;
        std::deque<int> q{s};
        label[static_cast<std::size_t>(s)] = c;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            for (int w : adj[static_cast<std::size_t>(u)])
                if (label[static_cast<std::size_t>(w)] < 0) {
                    label[static_cast<std::size_t>(w)] = c;
                    q.push_back(w);
                }
        }
        ++c;
    }
    if (count) *count = c;
    return label;
}

}  // namespace

GraphSample largest_component(const GraphSample& g) {
    int count = 0;
    const auto label = component_labels(g, &count);
    if (count <= 1) return g;
    std::vector<int> size(static_cast<std::size_t>(count), 0);
    for (int l : label) ++size[static_cast<std::size_t>(l)];
    // labels are assigned in order of each component's smallest node, so the first maximum wins ties
    const int best = static_cast<int>(std::max_element(size.begin(), size.end()) - size.begin());
    std::vector<int> keep;
    for (int i = 0; i < g.num_nodes(); ++i)
        if (label[static_cast<std::size_t>(i)] == best) keep.push_back(i);
    const int m = static_cast<int>(keep.size());
    std::vector<int> nodes(static_cast<std::size_t>(m));
    std::vector<std::uint8_t> edges(static_cast<std::size_t>(m * m), 0);
    for (int a = 0; a < m; ++a) {
        nodes[static_cast<std::size_t>(a)] = g.node_type(keep[static_cast<std::size_t>(a)]);
        for (int b = 0; b < m; ++b)
            edges[static_cast<std::size_t>(a * m + b)] =
                static_cast<std::uint8_t>(g.edge_type(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]));
    }
    return GraphSample(g.num_node_types(), g.num_edge_types(), std::move(nodes), std::move(edges));
}

bool has_cycle(const GraphSample& g) {
    int components = 0;
    component_labels(g, &components);
    return g.num_edges() > g.num_nodes() - components;
}

int diameter(const GraphSample& g) {
    const GraphSample c = largest_component(g);
    const auto adj = c.adjacency_lists();
    const int n = c.num_nodes();
    int best = 0;
    for (int s = 0; s < n; ++s) {
        std::vector<int> dist(static_cast<std::size_t>(n), -1);
        std::deque<int> q{s};
        dist[static_cast<std::size_t>(s)] = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            best = std::max(best, dist[static_cast<std::size_t>(u)]);
            for (int w : adj[static_cast<std::size_t>(u)])
                if (dist[static_cast<std::size_t>(w)] < 0) {
                    dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(u)] + 1;
                    q.push_back(w);
                }
        }
    }
    return best;
}

int degree_class_count(const GraphSample& g) {
    std::set<int> degrees;
    for (int i = 0; i < g.num_nodes(); ++i) degrees.insert(g.degree(i));
    return static_cast<int>(degrees.size());
}

// --- report ---------------------------------------------------------------------

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["mmd_degree"] = mmd_degree;
    j["mmd_cluster"] = mmd_cluster;
    j["mmd_orbit"] = mmd_orbit;
    j["uniqueness"] = uniqueness;
    j["novelty"] = novelty ? nlohmann::json(*novelty) : nlohmann::json(nullptr);
    j["num_samples"] = num_samples;
    j["num_reference"] = num_reference;
    nlohmann::json secs = nlohmann::json::object();
    for (const auto& [n, s] : sampling_seconds) secs[std::to_string(n)] = s;
    j["sampling_seconds"] = secs;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "metric,value\n";
    os << "mmd_degree," << mmd_degree << "\n";
    os << "mmd_cluster," << mmd_cluster << "\n";
    os << "mmd_orbit," << mmd_orbit << "\n";
    os << "uniqueness," << uniqueness << "\n";
    if (novelty) os << "novelty," << *novelty << "\n";
    for (const auto& [n, s] : sampling_seconds) os << "sampling_seconds_n" << n << "," << s << "\n";
    return os.str();
}

EvalReport evaluate(const Corpus& samples, const Corpus& reference, const Corpus* train, const EvalOptions& opts) {
    if (samples.empty() || reference.empty()) throw RangeError("evaluate: samples and reference must be nonempty");
    Corpus gen;
    gen.reserve(samples.size());
    for (const auto& g : samples) gen.push_back(opts.largest_component_only ? largest_component(g) : g);
    std::vector<Histogram> dg, dr, cg, cr, og, orf;
    for (const auto& g : gen) {
        dg.push_back(degree_features(g));
        cg.push_back(clustering_features(g));
        og.push_back(orbit_features(g));
    }
    for (const auto& g : reference) {
        dr.push_back(degree_features(g));
        cr.push_back(clustering_features(g));
        orf.push_back(orbit_features(g));
    }
    EvalReport r;
    r.mmd_degree = mmd(dg, dr, opts.sigma_degree);
    r.mmd_cluster = mmd(cg, cr, opts.sigma_cluster);
    r.mmd_orbit = mmd(og, orf, opts.sigma_orbit);
    r.uniqueness = uniqueness(gen);
    if (train) r.novelty = novelty(gen, *train);
    r.num_samples = static_cast<int>(gen.size());
    r.num_reference = static_cast<int>(reference.size());
    return r;
}

// --- probe ----------------------------------------------------------------------

ProbeTask parse_probe_task(const std::string& name) {
    if (name == "cycle_detect") return ProbeTask::CycleDetect;
    if (name == "diameter") return ProbeTask::Diameter;
    if (name == "degree_class_count") return ProbeTask::DegreeClassCount;
    throw ConfigError("unknown probe task '" + name + "' (cycle_detect, diameter, degree_class_count)");
}

std::string to_string(ProbeTask task) {
    switch (task) {
        case ProbeTask::CycleDetect: return "cycle_detect";
        case ProbeTask::Diameter: return "diameter";
        case ProbeTask::DegreeClassCount: return "degree_class_count";
    }
    return "?";
}

std::vector<Mat> contextual_vectors(const Model& model, const Corpus& corpus, double t, Rng& rng) {
    const VaeConfig& vc = model.config.vae;
    std::vector<Mat> out;
    out.reserve(corpus.size());
    for (const auto& g : corpus) {
        const Encoding enc = encode(model.vae.encoder, vc, g, rng);
        Mat eps(g.num_nodes(), vc.latent_dim), noise(g.num_nodes(), vc.latent_dim);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
        const Mat z0 = model.norm.normalize(reparameterize(enc.mean, enc.std, eps));
        const Mat zt = sde::sample_transition(model.config.sde, z0, t, noise);
        out.push_back(score_forward(model.score, model.config.score, zt, t).context);
    }
    return out;
}

namespace {

struct ProbeNet {
    nn::Linear l1, l2, l3;
    ProbeNet(int in, int hidden, int out, Rng& rng)
        : l1(in, hidden, "probe.0", rng), l2(hidden, hidden, "probe.1", rng), l3(hidden, out, "probe.2", rng) {}
    ad::Var operator()(const ad::Binder& b, const ad::Var& x) const {
        return l3(b, ad::silu(l2(b, ad::silu(l1(b, x)))));
    }
    nn::ParamList params() {
        nn::ParamList p;
        l1.collect(p);
        l2.collect(p);
        l3.collect(p);
        return p;
    }
};

}  // namespace

ProbePoint fit_probe(const std::vector<Mat>& features, const std::vector<double>& labels, bool classification,
                     const ProbeOptions& opts) {
    const std::size_t n = features.size();
    if (n != labels.size() || n < 10) throw RangeError("fit_probe: need at least 10 labelled examples");
    const Eigen::Index dim = features.front().cols();

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(opts.seed);
    std::shuffle(idx.begin(), idx.end(), split_rng.engine());
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opts.test_fraction * n)));
    const std::size_t n_rest = n - n_test;
    const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opts.val_fraction * n_rest)));
    const std::size_t n_train = n_rest - n_val;
    auto part = [&](std::size_t lo, std::size_t hi) { return std::vector<std::size_t>(idx.begin() + lo, idx.begin() + hi); };
    const auto tr = part(0, n_train), va = part(n_train, n_rest), te = part(n_rest, n);

    ProbePoint out;
    double label_mean = 0.0, label_std = 1.0;
    int majority = 0;
    {
        std::map<int, int> counts;
        for (auto i : tr) {
            label_mean += labels[i];
            if (classification) ++counts[static_cast<int>(labels[i])];
        }
        label_mean /= static_cast<double>(tr.size());
        double var = 0.0;
        for (auto i : tr) var += (labels[i] - label_mean) * (labels[i] - label_mean);
        label_std = std::sqrt(var / static_cast<double>(tr.size()));
        if (classification) {
            if (counts.size() < 2) {
                std::cerr << "probe: training labels contain a single class; skipping\n";
                out.skipped = true;
                return out;
            }
            majority = std::max_element(counts.begin(), counts.end(),
                                        [](const auto& a, const auto& b) { return a.second < b.second; })->first;
        } else if (label_std == 0.0) {
            std::cerr << "probe: training labels are constant; skipping\n";
            out.skipped = true;
            return out;
        }
    }
    for (auto i : te) {
        if (classification) out.baseline += (static_cast<int>(labels[i]) == majority) ? 1.0 : 0.0;
        else out.baseline += std::abs(labels[i] - label_mean);
    }
    out.baseline /= static_cast<double>(te.size());

    Mat mu = Mat::Zero(1, dim), sd = Mat::Zero(1, dim);
    for (auto i : tr) mu += features[i];
    mu /= static_cast<double>(tr.size());
    for (auto i : tr) sd += (features[i] - mu).cwiseAbs2();
    sd = (sd / static_cast<double>(tr.size())).cwiseSqrt().cwiseMax(1e-8);
    auto stack = [&](const std::vector<std::size_t>& ids) {
        Mat x(static_cast<Eigen::Index>(ids.size()), dim);
        for (std::size_t r = 0; r < ids.size(); ++r)
            x.row(static_cast<Eigen::Index>(r)) = (features[ids[r]] - mu).cwiseQuotient(sd);
        return x;
    };
    int num_classes = 1;
    if (classification) {
        int mx = 0;
        for (double l : labels) mx = std::max(mx, static_cast<int>(l));
        num_classes = mx + 1;
    }
    auto targets = [&](const std::vector<std::size_t>& ids) {
        Mat y = Mat::Zero(static_cast<Eigen::Index>(ids.size()), num_classes);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            if (classification) y(static_cast<Eigen::Index>(r), static_cast<int>(labels[ids[r]])) = 1.0;
            else y(static_cast<Eigen::Index>(r), 0) = (labels[ids[r]] - label_mean) / label_std;
        }
        return y;
    };
    auto loss_of = [&](const ad::Var& pred, const Mat& y) {
        if (classification)
            return ad::scale(ad::weighted_sum(ad::log_softmax_rows(pred), y), -1.0 / static_cast<double>(y.rows()));
        return ad::scale(ad::squared_norm(ad::sub(pred, ad::constant(y))), 1.0 / static_cast<double>(y.rows()));
    };

    Rng init(opts.seed ^ 0x9b0be);
    ProbeNet net(static_cast<int>(dim), opts.hidden, num_classes, init);
    nn::ParamList params = net.params();
    nn::Adam::Options ao;
    ao.lr = opts.lr;
    nn::Adam adam(params, ao);
    const Mat xv = stack(va), yv = targets(va);
    double best = std::numeric_limits<double>::infinity();
    std::vector<Mat> best_params;
    int since_best = 0;
    std::vector<std::size_t> order = tr;
    for (int epoch = 0; epoch < opts.max_epochs && since_best < opts.patience; ++epoch) {
        std::shuffle(order.begin(), order.end(), init.engine());
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(opts.batch_size)) {
            const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(s),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + static_cast<std::size_t>(opts.batch_size))));
            ad::Tape tape;
            ad::Binder b(&tape, true);
            ad::Var loss = loss_of(net(b, ad::constant(stack(ids))), targets(ids));
            tape.backward(loss);
            adam.step(nn::gradients(tape, params));
        }
        const double vl = loss_of(net(ad::Binder::frozen(), ad::constant(xv)), yv)->value()(0, 0);
        if (vl < best) {
            best = vl;
            since_best = 0;
            best_params.clear();
            for (auto* p : params) best_params.push_back(p->value);
        } else {
            ++since_best;
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_params[k];

    const Mat pred = net(ad::Binder::frozen(), ad::constant(stack(te)))->value();
    double metric = 0.0;
    for (std::size_t r = 0; r < te.size(); ++r) {
        if (classification) {
            Eigen::Index k;
            pred.row(static_cast<Eigen::Index>(r)).maxCoeff(&k);
            metric += (static_cast<int>(k) == static_cast<int>(labels[te[r]])) ? 1.0 : 0.0;
        } else {
            metric += std::abs(pred(static_cast<Eigen::Index>(r), 0) * label_std + label_mean - labels[te[r]]);
        }
    }
    out.metric = metric / static_cast<double>(te.size());
    return out;
}

std::vector<ProbePoint> probe_contextual(const Model& model, const Corpus& corpus, const std::vector<double>& t_grid,
                                         ProbeTask task, const ProbeOptions& opts) {
    std::vector<double> labels;
    for (const auto& g : corpus) {
        switch (task) {
            case ProbeTask::CycleDetect: labels.push_back(has_cycle(g) ? 1.0 : 0.0); break;
            case ProbeTask::Diameter: labels.push_back(diameter(g)); break;
            case ProbeTask::DegreeClassCount: labels.push_back(degree_class_count(g)); break;
        }
    }
    std::vector<ProbePoint> curve;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        Rng rng(opts.seed * 1000003ULL + k);
        const auto feats = contextual_vectors(model, corpus, t_grid[k], rng);
        ProbePoint p = fit_probe(feats, labels, task == ProbeTask::CycleDetect, opts);
        p.t = t_grid[k];
        curve.push_back(p);
    }
    return curve;
}

}  // namespace nvdiff
