#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "aloop/common/grid.hpp"
#include "aloop/strategies/ranking.hpp"

namespace aloop::strat {

/// Samples for the annotators plus temporary machine labels for confident ones.
struct CealOutput {
    std::vector<std::string> query;
    std::map<std::string, SegMask> pseudo;
};

/// Confidence threshold for a round: linear decay from delta0, floored at 0.
inline double ceal_threshold(double delta0, double decay, int round) {
    return std::max(0.0, delta0 - decay * round);
}

/// `pool_scores` holds the ENT score of every pool sample, ranked. The first n go to the
/// annotators; every other sample with ENT < delta receives its argmax mask. Pseudo labels
/// are meant for the next training run only.
inline CealOutput select_ceal(const QueryResult& pool_scores, const std::map<std::string, Posterior>& posteriors,
                              int n, double delta) {
    CealOutput out;
    const std::size_t take = std::min(pool_scores.ranked.size(), static_cast<std::size_t>(std::max(n, 0)));
    for (std::size_t i = 0; i < pool_scores.ranked.size(); ++i) {
        const auto& s = pool_scores.ranked[i];
        if (i < take) {
            out.query.push_back(s.sample_id);
        } else if (s.score < delta) {
            auto it = posteriors.find(s.sample_id);
            if (it != posteriors.end()) out.pseudo.emplace(s.sample_id, it->second.argmax());
        }
    }
    return out;
}

}  // namespace aloop::strat
