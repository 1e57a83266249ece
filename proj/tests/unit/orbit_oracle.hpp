#pragma once

#include "nvdiff/eval.hpp"

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace testutil {

using nvdiff::GraphSample;
using nvdiff::OrbitCounts;

struct Template {
    int k;
    std::vector<std::pair<int, int>> edges;
    std::vector<int> orbit;
};

// Orbit templates matched by brute force over all vertex permutations.
inline const std::vector<Template>& templates() {
    static const std::vector<Template> t = {
        {2, {{0, 1}}, {0, 0}},
        {3, {{0, 1}, {1, 2}}, {1, 2, 1}},
        {3, {{0, 1}, {1, 2}, {0, 2}}, {3, 3, 3}},
        {4, {{0, 1}, {1, 2}, {2, 3}}, {4, 5, 5, 4}},
        {4, {{0, 1}, {0, 2}, {0, 3}}, {7, 6, 6, 6}},
        {4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}, {8, 8, 8, 8}},
        {4, {{0, 1}, {1, 2}, {2, 0}, {2, 3}}, {10, 10, 11, 9}},
        {4, {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}}, {12, 13, 13, 12}},
        {4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, {14, 14, 14, 14}},
    };
    return t;
}

// Visits every 2-, 3- and 4-subset and labels it by permutation-matching against the templates.
inline OrbitCounts naive_orbits(const GraphSample& g) {
    const int n = g.num_nodes();
    OrbitCounts out(static_cast<std::size_t>(n));
    for (auto& r : out) r.fill(0);
    auto visit = [&](std::vector<int> s) {
        const int k = static_cast<int>(s.size());
        std::vector<int> perm(static_cast<std::size_t>(k));
        for (const auto& t : templates()) {
            if (t.k != k) continue;
            std::iota(perm.begin(), perm.end(), 0);
            do {
                bool match = true;
                for (int a = 0; a < k && match; ++a)
                    for (int b = a + 1; b < k && match; ++b) {
                        const bool te = std::find(t.edges.begin(), t.edges.end(), std::make_pair(a, b)) != t.edges.end() ||
                                        std::find(t.edges.begin(), t.edges.end(), std::make_pair(b, a)) != t.edges.end();
                        if (te != g.has_edge(s[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])],
                                             s[static_cast<std::size_t>(perm[static_cast<std::size_t>(b)])]))
                            match = false;
                    }
                if (match) {
                    for (int a = 0; a < k; ++a)
                        ++out[static_cast<std::size_t>(s[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])])]
                             [static_cast<std::size_t>(t.orbit[static_cast<std::size_t>(a)])];
                    return;
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    };
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            visit({a, b});
            for (int c = b + 1; c < n; ++c) {
                visit({a, b, c});
                for (int d = c + 1; d < n; ++d) visit({a, b, c, d});
            }
        }
    return out;
}

}  // namespace testutil
