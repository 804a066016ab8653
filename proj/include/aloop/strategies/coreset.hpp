#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "aloop/common/error.hpp"

namespace aloop::strat {

using Embedding = std::vector<double>;

struct PoolEmbedding {
    std::string sample_id;
    Embedding embedding;
};

inline double euclidean(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw UsageError("embedding lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Greedy k-center over the pool with `labeled` as fixed centres. Each step takes the pool
/// point farthest from its nearest centre, ties to the smaller sample_id. With no labelled
/// centres the first pick is the smaller-id end of the pool's farthest pair.
/// Returns (sample_id, distance at pick time) in pick order.
inline std::vector<std::pair<std::string, double>> select_coreset_scored(const std::vector<Embedding>& labeled,
                                                                        const std::vector<PoolEmbedding>& pool,
                                                                        int k) {
    if (k < 0 || static_cast<std::size_t>(k) > pool.size())
        throw UsageError("select_coreset: k=" + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
    std::vector<std::pair<std::string, double>> picks;
    if (k == 0) return picks;
    const std::size_t n = pool.size();
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    for (const auto& c : labeled)
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], euclidean(pool[i].embedding, c));

    auto take = [&](std::size_t idx, double dist) {
        taken[idx] = true;
        picks.emplace_back(pool[idx].sample_id, dist);
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], euclidean(pool[i].embedding, pool[idx].embedding));
    };

    if (labeled.empty()) {
        std::size_t best = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double d = euclidean(pool[i].embedding, pool[j].embedding);
                const std::size_t lo = pool[i].sample_id < pool[j].sample_id ? i : j;
                if (d > far || (d == far && pool[lo].sample_id < pool[best].sample_id)) {
                    far = d;
                    best = lo;
                }
            }
        take(best, n > 1 ? far : 0.0);
    }
    while (picks.size() < static_cast<std::size_t>(k)) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (best == n || nearest[i] > nearest[best] ||
                (nearest[i] == nearest[best] && pool[i].sample_id < pool[best].sample_id))
                best = i;
        }
        take(best, nearest[best]);
    }
    return picks;
}

inline std::vector<std::string> select_coreset(const std::vector<Embedding>& labeled,
                                               const std::vector<PoolEmbedding>& pool, int k) {
    std::vector<std::string> ids;
    for (auto& [id, d] : select_coreset_scored(labeled, pool, k)) ids.push_back(id);
    return ids;
}

/// Largest distance from any pool point to its nearest centre.
inline double coverage_radius(const std::vector<Embedding>& centres, const std::vector<Embedding>& points) {
    double r = 0.0;
    for (const auto& p : points) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : centres) d = std::min(d, euclidean(p, c));
        r = std::max(r, d);
    }
    return r;
}

}  // namespace aloop::strat
