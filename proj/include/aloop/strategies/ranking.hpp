#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/log.hpp"

namespace aloop::strat {

struct ScoredSample {
    std::string sample_id;
    double score = 0.0;
    bool operator==(const ScoredSample&) const = default;
};

/// Ranked query: scores non-increasing, ties by sample_id ascending.
struct QueryResult {
    std::vector<ScoredSample> ranked;
    std::string strategy;
    int round = 0;
    std::uint64_t rng_seed = 0;

    bool operator==(const QueryResult&) const = default;

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(ranked.size());
        for (const auto& r : ranked) out.push_back(r.sample_id);
        return out;
    }
};

inline nlohmann::json to_json(const QueryResult& q) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& r : q.ranked) items.push_back({{"sample_id", r.sample_id}, {"score", r.score}});
    return {{"strategy", q.strategy}, {"round", q.round}, {"rng_seed", q.rng_seed}, {"ranked", items}};
}

inline QueryResult query_from_json(const nlohmann::json& j) {
    QueryResult q;
    q.strategy = j.at("strategy").get<std::string>();
    q.round = j.at("round").get<int>();
    q.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    for (const auto& r : j.at("ranked")) q.ranked.push_back({r.at("sample_id").get<std::string>(), r.at("score").get<double>()});
    return q;
}

inline void sort_ranked(std::vector<ScoredSample>& v) {
    std::sort(v.begin(), v.end(), [](const ScoredSample& a, const ScoredSample& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.sample_id < b.sample_id;
    });
}

/// Rank-derived scores for an externally ordered selection: 1, 1 - 1/n, ...
inline std::vector<ScoredSample> scores_from_order(const std::vector<std::string>& ids) {
    std::vector<ScoredSample> out;
    const double n = static_cast<double>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], 1.0 - static_cast<double>(i) / n});
    return out;
}

/// Top-n of a score map. RANDOM ignores the scores and takes a seeded permutation.
inline QueryResult rank_pool(const std::map<std::string, double>& scores, int n, const std::string& strategy,
                             std::uint64_t rng_seed, int round = 0) {
    QueryResult q{{}, strategy, round, rng_seed};
    if (scores.empty()) {
        log().warn("rank_pool: empty pool");
        return q;
    }
    std::size_t take = n < 0 ? 0 : static_cast<std::size_t>(n);
    if (take > scores.size()) {
        log().warn("rank_pool: asked for {} of a pool of {}, returning the whole pool", n, scores.size());
        take = scores.size();
    }
    if (strategy == "RANDOM") {
        std::vector<std::string> ids;
        for (const auto& [id, s] : scores) ids.push_back(id);
        std::mt19937_64 rng(rng_seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(take);
        q.ranked = scores_from_order(ids);
        return q;
    }
    for (const auto& [id, s] : scores) q.ranked.push_back({id, s});
    sort_ranked(q.ranked);
    q.ranked.resize(take);
    return q;
}

}  // namespace aloop::strat
