#include "nvdiff/errors.hpp"
#include "nvdiff/graph.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace nvdiff;

namespace {

std::set<std::pair<int, int>> edge_set(const GraphSample& g) {
    auto e = g.edge_list();
    return {e.begin(), e.end()};
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("nvdiff_test_" + name);
}

}  // namespace

TEST_CASE("graph: invariants are enforced") {
    CHECK_THROWS(GraphSample(1, 1, {0, 0}, {0, 1, 0, 0}));  // asymmetric
    CHECK_THROWS(GraphSample(1, 1, {0, 0}, {1, 0, 0, 0}));                      // self loop
    CHECK_THROWS(GraphSample(1, 1, {1}, {0}));                                  // node type out of range
    CHECK_NOTHROW(GraphSample(2, 2, {0, 1}, {0, 2, 2, 0}));
}

TEST_CASE("graph: one-hot round trip") {
    GraphSample g(2, 2, {0, 1, 1}, {0, 2, 0, 2, 0, 1, 0, 1, 0});
    CHECK(GraphSample::from_one_hot(g.node_features(), g.edge_tensor()) == g);
    auto e = g.edge_tensor();
    CHECK(e(0, 0) == 1.0);  // diagonal is non-edge
    CHECK(e(1, 2) == 1.0);  // (0,1) has type 2
}

TEST_CASE("apply_permutation: identity, hand case and inverse") {
    auto path = GraphSample::from_edges(3, {{0, 1}, {1, 2}});
    CHECK(apply_permutation(path, Permutation::identity(3)) == path);

    Permutation swap({2, 1, 0});
    auto out = apply_permutation(path, swap);
    CHECK(edge_set(out) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});

    Rng rng(11);
    auto g = generate_dataset(DatasetSpec::preset(DatasetName::CommunitySmall, 1))[0];
    auto p = Permutation::random(g.num_nodes(), rng);
    CHECK(apply_permutation(apply_permutation(g, p), p.inverse()) == g);
    CHECK(p.then(p.inverse()) == Permutation::identity(g.num_nodes()));

    CHECK_THROWS_AS(apply_permutation(g, Permutation::identity(g.num_nodes() + 1)), DimensionError);
    CHECK_THROWS(Permutation({0, 0, 1}));
}

TEST_CASE("apply_permutation: preserves degree multiset, triangles, connectivity") {
    Rng rng(5);
    auto spec = DatasetSpec::preset(DatasetName::CommunitySmall, 2);
    spec.count = 30;
    for (const auto& g : generate_dataset(spec)) {
        auto p = Permutation::random(g.num_nodes(), rng);
        auto h = apply_permutation(g, p);
        CHECK(degree_sequence_sorted(h) == degree_sequence_sorted(g));
        CHECK(count_triangles(h) == count_triangles(g));
        CHECK(is_connected(h) == is_connected(g));
        for (int i = 0; i < g.num_nodes(); ++i)
            for (int j = 0; j < g.num_nodes(); ++j) CHECK(h.edge_type(p(i), p(j)) == g.edge_type(i, j));
    }
}

TEST_CASE("generators: sizes, counts, connectivity and determinism") {
    for (auto name : {DatasetName::CommunitySmall, DatasetName::EgoSmall, DatasetName::Community}) {
        auto spec = DatasetSpec::preset(name, 42);
        if (name == DatasetName::Community) spec.count = 40;
        auto corpus = generate_dataset(spec);
        REQUIRE(static_cast<int>(corpus.size()) == spec.count);
        for (const auto& g : corpus) {
            CHECK(g.num_nodes() >= spec.min_nodes);
            CHECK(g.num_nodes() <= spec.max_nodes);
            CHECK(is_connected(g));
        }
        CHECK(generate_dataset(spec) == corpus);
    }
    auto cs = DatasetSpec::preset(DatasetName::CommunitySmall);
    CHECK(cs.min_nodes == 12);
    CHECK(cs.max_nodes == 20);
    CHECK(cs.count == 500);
    auto es = DatasetSpec::preset(DatasetName::EgoSmall);
    CHECK(es.min_nodes == 4);
    CHECK(es.max_nodes == 18);
}

TEST_CASE("size_histogram: counting and sampling") {
    Corpus c{GraphSample::from_edges(12, {}), GraphSample::from_edges(12, {}), GraphSample::from_edges(20, {})};
    auto h = size_histogram(c);
    CHECK(h.probability(12) == doctest::Approx(2.0 / 3.0));
    CHECK(h.probability(20) == doctest::Approx(1.0 / 3.0));
    CHECK(h.probability(13) == 0.0);
    CHECK(h.support() == std::vector<int>{12, 20});

    Rng rng(1);
    int twelve = 0;
    for (int i = 0; i < 10000; ++i) twelve += h.sample(rng) == 12;
    CHECK(std::abs(twelve / 10000.0 - 2.0 / 3.0) < 0.02);

    auto single = size_histogram(Corpus{GraphSample::from_edges(5, {})});
    CHECK(single.probability(5) == 1.0);
    CHECK_THROWS_AS(size_histogram(Corpus{}), DimensionError);
}

TEST_CASE("split_corpus: disjoint and exhaustive") {
    auto spec = DatasetSpec::preset(DatasetName::EgoSmall, 3);
    spec.count = 50;
    auto corpus = generate_dataset(spec);
    Rng rng(9);
    for (double frac : {0.8, 0.9}) {
        auto s = split_corpus(corpus, frac, rng);
        CHECK(s.train.size() + s.test.size() == corpus.size());
        CHECK(s.train.size() == static_cast<std::size_t>(std::lround(frac * 50)));
        // Every input graph appears exactly once across both halves.
        std::multiset<std::vector<std::uint8_t>> all, got;
        for (const auto& g : corpus) all.insert(g.edge_types());
        for (const auto& g : s.train) got.insert(g.edge_types());
        for (const auto& g : s.test) got.insert(g.edge_types());
        CHECK(all == got);
    }
}

TEST_CASE("corpus file: round trip and malformed input") {
    auto spec = DatasetSpec::preset(DatasetName::EgoSmall, 8);
    spec.count = 25;
    auto corpus = generate_dataset(spec);
    auto path = temp_file("corpus.bin");
    serialize_corpus(corpus, path);
    CHECK(deserialize_corpus(path) == corpus);
    Corpus labelled{GraphSample(3, 2, {0, 2, 1}, {0, 1, 0, 1, 0, 2, 0, 2, 0})};
    CHECK(decode_corpus(encode_corpus(labelled)) == labelled);
    CHECK_THROWS_AS(encode_corpus({corpus[0], labelled[0]}), DimensionError);

    auto empty = temp_file("empty.bin");
    serialize_corpus({}, empty);
    CHECK(deserialize_corpus(empty).empty());

    auto bytes = encode_corpus(corpus);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_corpus(bad), ParseError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(decode_corpus(bad), ParseError);
    bad = bytes;
    bad.resize(bytes.size() - 3);
    try {
        decode_corpus(bad);
        FAIL("truncated corpus accepted");
    } catch (const ParseError& e) {
        CHECK(e.offset() > 0);
    }
    CHECK_THROWS_AS(deserialize_corpus(temp_file("does_not_exist.bin")), IoError);
}
