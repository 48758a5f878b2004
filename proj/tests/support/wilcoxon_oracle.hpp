#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace rfimpute::testing {

/// Exact one-sided signed-rank p-value by enumerating every sign assignment.
/// Ranks are computed by counting, independently of any sorting.
inline double wilcoxon_bruteforce(std::span<const double> a, std::span<const double> b) {
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
    const std::size_t n = d.size();
    if (n == 0) return 1.0;
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double below = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) below += 1;
            if (std::abs(d[j]) == std::abs(d[i])) equal += 1;
        }
        rank[i] = below + (equal + 1.0) / 2.0;
    }
    double observed = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) observed += rank[i];
    std::uint64_t hits = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t signs = 0; signs < total; ++signs) {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i)
            if ((signs >> i) & 1U) w += rank[i];
        if (w >= observed) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace rfimpute::testing
