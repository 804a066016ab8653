#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "aloop/common/error.hpp"
#include "aloop/strategies/coreset.hpp"

namespace aloop::strat {

struct Candidate {
    std::string sample_id;
    Embedding embedding;
    double uncertainty = 0.0;
};

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw UsageError("embedding lengths differ");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

/// Rep(S) = sum over the pool of the best cosine similarity to a member of S.
inline double representativeness(const std::vector<Embedding>& selected, const std::vector<Embedding>& pool) {
    double total = 0.0;
    for (const auto& x : pool) {
        double best = -INFINITY;
        for (const auto& s : selected) best = std::max(best, cosine(x, s));
        if (!selected.empty()) total += best;
    }
    return total;
}

/// MAXRPR: keep the 2n most uncertain candidates, then grow S greedily by marginal gain in
/// Rep(S). Gain ties fall to higher uncertainty, then smaller sample_id. Result is sorted
/// by sample_id.
inline std::vector<std::string> score_representative(std::vector<Candidate> candidates,
                                                     const std::vector<Embedding>& pool_embeddings, int n) {
    if (n <= 0) return {};
    if (static_cast<std::size_t>(n) > candidates.size())
        throw UsageError("score_representative: n exceeds the candidate count");
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.uncertainty != b.uncertainty) return a.uncertainty > b.uncertainty;
        return a.sample_id < b.sample_id;
    });
    if (candidates.size() > 2 * static_cast<std::size_t>(n)) candidates.resize(2 * static_cast<std::size_t>(n));

    const std::size_t m = candidates.size(), P = pool_embeddings.size();
    std::vector<std::vector<double>> sim(m, std::vector<double>(P));
    for (std::size_t c = 0; c < m; ++c)
        for (std::size_t x = 0; x < P; ++x) sim[c][x] = cosine(candidates[c].embedding, pool_embeddings[x]);

    std::vector<double> cover(P, 0.0);
    std::vector<bool> taken(m, false);
    std::vector<std::string> chosen;
    for (int step = 0; step < n; ++step) {
        std::size_t best = m;
        double best_gain = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            if (taken[c]) continue;
            double gain = 0.0;
            for (std::size_t x = 0; x < P; ++x)
                gain += chosen.empty() ? sim[c][x] : std::max(0.0, sim[c][x] - cover[x]);
            const bool better = best == m || gain > best_gain + 1e-12 ||
                                (std::abs(gain - best_gain) <= 1e-12 &&
                                 (candidates[c].uncertainty > candidates[best].uncertainty ||
                                  (candidates[c].uncertainty == candidates[best].uncertainty &&
                                   candidates[c].sample_id < candidates[best].sample_id)));
            if (better) {
                best = c;
                best_gain = gain;
            }
        }
        taken[best] = true;
        for (std::size_t x = 0; x < P; ++x)
            cover[x] = chosen.empty() ? sim[best][x] : std::max(cover[x], sim[best][x]);
        chosen.push_back(candidates[best].sample_id);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace aloop::strat
