#include "orbit_oracle.hpp"
#include "test_util.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/eval.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

using namespace nvdiff;

namespace {

GraphSample random_graph(int n, double p, Rng& rng) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.uniform() < p) edges.emplace_back(i, j);
    return GraphSample::from_edges(n, edges);
}

bool brute_isomorphic(const GraphSample& a, const GraphSample& b) {
    const int n = a.num_nodes();
    if (n != b.num_nodes()) return false;
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    do {
        bool ok = true;
        for (int i = 0; i < n && ok; ++i)
            for (int j = i + 1; j < n && ok; ++j)
                if (a.has_edge(i, j) != b.has_edge(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)])) ok = false;
        if (ok) return true;
    } while (std::next_permutation(p.begin(), p.end()));
    return false;
}

GraphSample star4() { return GraphSample::from_edges(4, {{0, 1}, {0, 2}, {0, 3}}); }
GraphSample triangle() { return GraphSample::from_edges(3, {{0, 1}, {1, 2}, {0, 2}}); }
GraphSample cycle(int n) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
    return GraphSample::from_edges(n, e);
}

}  // namespace

TEST_CASE("total variation and mmd") {
    CHECK(total_variation({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0));
    CHECK(total_variation({0.5, 0.5}, {0.5}) == doctest::Approx(0.25));
    // singletons at TV distance 1, sigma 1: 2 - 2 exp(-1/2)
    CHECK(mmd({{1.0, 0.0}}, {{0.0, 1.0}}, 1.0) == doctest::Approx(0.7869386805747332).epsilon(1e-12));

    Rng rng(3);
    std::vector<Histogram> a, b;
    for (int i = 0; i < 6; ++i) a.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    for (int i = 0; i < 4; ++i) b.push_back({rng.uniform(), rng.uniform()});
    CHECK(mmd(a, a, 0.7) == 0.0);
    CHECK(mmd(a, b, 0.7) > 0.0);
    CHECK(mmd(a, b, 0.7) == doctest::Approx(mmd(b, a, 0.7)).epsilon(1e-12));
    CHECK_THROWS_AS(mmd({}, b, 1.0), RangeError);
    CHECK_THROWS_AS(mmd(a, b, 0.0), RangeError);
}

TEST_CASE("degree and clustering features") {
    const auto d = degree_features(star4());
    REQUIRE(d.size() == 4);
    CHECK(d[1] == doctest::Approx(0.75));
    CHECK(d[3] == doctest::Approx(0.25));

    const auto ct = clustering_features(triangle());
    REQUIRE(ct.size() == 100);
    CHECK(ct[99] == doctest::Approx(1.0));
    const auto cs = clustering_features(star4());
    CHECK(cs[0] == doctest::Approx(1.0));
    // diamond: degree-3 nodes have clustering 2/3, degree-2 nodes 1
    const auto cd = clustering_features(GraphSample::from_edges(4, {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}}));
    CHECK(cd[66] == doctest::Approx(0.5));
    CHECK(cd[99] == doctest::Approx(0.5));
}

TEST_CASE("orbit counts: hand cases") {
    const auto s = orbit_counts(star4());
    CHECK(s[0][0] == 3);
    CHECK(s[0][2] == 3);
    CHECK(s[0][7] == 1);
    for (int leaf = 1; leaf < 4; ++leaf) {
        CHECK(s[static_cast<std::size_t>(leaf)][0] == 1);
        CHECK(s[static_cast<std::size_t>(leaf)][1] == 2);
        CHECK(s[static_cast<std::size_t>(leaf)][6] == 1);
    }
    const auto t = orbit_counts(triangle());
    for (const auto& row : t) {
        CHECK(row[0] == 2);
        CHECK(row[1] == 0);
        CHECK(row[3] == 1);
    }
    const auto c = orbit_counts(cycle(4));
    for (const auto& row : c) {
        CHECK(row[1] == 2);
        CHECK(row[2] == 1);
        CHECK(row[4] == 0);
        CHECK(row[8] == 1);
    }
    const auto f = orbit_features(star4());
    CHECK(f[0] == doctest::Approx(6.0 / 4.0));
}

TEST_CASE("orbit counts agree with all-subsets enumeration on random graphs") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(1, 15);
        const GraphSample g = random_graph(n, rng.uniform(0.1, 0.7), rng);
        CHECK(orbit_counts(g) == testutil::naive_orbits(g));
    }
}

TEST_CASE("isomorphism: permutations, regular graphs, brute-force agreement") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const GraphSample g = random_graph(12, 0.3, rng);
        const GraphSample h = apply_permutation(g, Permutation::random(12, rng));
        CHECK(isomorphic(g, h));
        CHECK(wl_hash(g) == wl_hash(h));
    }
    // C6 and two triangles are both 2-regular: colour refinement alone cannot separate them
    const GraphSample two_tri = GraphSample::from_edges(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
    CHECK(wl_hash(cycle(6)) == wl_hash(two_tri));
    CHECK_FALSE(isomorphic(cycle(6), two_tri));

    int agree = 0, positives = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const GraphSample a = random_graph(6, 0.5, rng);
        const GraphSample b = random_graph(6, 0.5, rng);
        const bool expect = brute_isomorphic(a, b);
        positives += expect;
        agree += (isomorphic(a, b) == expect);
    }
    CHECK(agree == 300);
    CHECK(positives > 0);
}

TEST_CASE("uniqueness and novelty") {
    Rng rng(2);
    const Corpus samples = {triangle(), apply_permutation(triangle(), Permutation::random(3, rng)),
                            GraphSample::from_edges(3, {{0, 1}, {1, 2}})};
    CHECK(uniqueness(samples) == doctest::Approx(2.0 / 3.0));
    CHECK(novelty(samples, {triangle()}) == doctest::Approx(1.0 / 3.0));
    CHECK(novelty(samples, {}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(uniqueness({}), RangeError);
}

TEST_CASE("structure helpers") {
    // components {0,3} and {1,2} tie; the one holding node 0 wins and order is kept
    const GraphSample tie = GraphSample::from_edges(4, {{0, 3}, {1, 2}});
    const GraphSample lc = largest_component(tie);
    CHECK(lc.num_nodes() == 2);
    CHECK(lc.has_edge(0, 1));
    const GraphSample big = largest_component(GraphSample::from_edges(5, {{1, 2}, {2, 4}}));
    CHECK(big.num_nodes() == 3);
    CHECK(big.num_edges() == 2);
    CHECK(big.has_edge(0, 1));
    CHECK(big.has_edge(1, 2));

    CHECK(has_cycle(triangle()));
    CHECK_FALSE(has_cycle(star4()));
    CHECK_FALSE(has_cycle(GraphSample::from_edges(5, {{0, 1}, {3, 4}})));
    CHECK(has_cycle(GraphSample::from_edges(6, {{0, 1}, {3, 4}, {4, 5}, {3, 5}})));

    CHECK(diameter(GraphSample::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}})) == 4);
    CHECK(diameter(cycle(6)) == 3);
    CHECK(degree_class_count(star4()) == 2);
    CHECK(degree_class_count(cycle(5)) == 1);
}

TEST_CASE("evaluate: report is deterministic and well formed") {
    Rng rng(9);
    Corpus a, b;
    for (int i = 0; i < 5; ++i) a.push_back(random_graph(8, 0.3, rng));
    for (int i = 0; i < 4; ++i) b.push_back(random_graph(9, 0.4, rng));
    const EvalReport r1 = evaluate(a, b, &b);
    const EvalReport r2 = evaluate(a, b, &b);
    CHECK(r1.to_json() == r2.to_json());
    CHECK(r1.num_samples == 5);
    REQUIRE(r1.novelty.has_value());
    CHECK(r1.to_json().find("\"mmd_orbit\"") != std::string::npos);
    CHECK(r1.to_csv().rfind("metric,value\n", 0) == 0);
    const EvalReport self = evaluate(b, b);
    CHECK(self.mmd_degree == 0.0);
    CHECK(self.mmd_cluster == 0.0);
    CHECK(self.mmd_orbit == 0.0);
    CHECK_FALSE(self.novelty.has_value());
}

TEST_CASE("probe fitting on synthetic features") {
    Rng rng(4);
    std::vector<Mat> x;
    std::vector<double> cls, reg;
    for (int i = 0; i < 400; ++i) {
        Mat f = testutil::random_mat(1, 5, rng);
        cls.push_back(f(0, 0) + 0.5 * f(0, 1) > 0.0 ? 1.0 : 0.0);
        reg.push_back(3.0 + 2.0 * f(0, 2) - f(0, 3));
        x.push_back(f);
    }
    ProbeOptions opts;
    opts.max_epochs = 200;
    const ProbePoint pc = fit_probe(x, cls, true, opts);
    CHECK_FALSE(pc.skipped);
    CHECK(pc.metric > 0.9);
    CHECK(pc.metric > pc.baseline);
    const ProbePoint pr = fit_probe(x, reg, false, opts);
    CHECK(pr.metric < 0.3 * pr.baseline);

    const ProbePoint deg = fit_probe(x, std::vector<double>(400, 1.0), true, opts);
    CHECK(deg.skipped);
    CHECK(parse_probe_task("diameter") == ProbeTask::Diameter);
    CHECK(to_string(ProbeTask::CycleDetect) == "cycle_detect");
    CHECK_THROWS_AS(parse_probe_task("girth"), ConfigError);
}
