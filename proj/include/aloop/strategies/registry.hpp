#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aloop/common/error.hpp"
#include "aloop/common/grid.hpp"
#include "aloop/config/run_config.hpp"
#include "aloop/segbackend/model.hpp"
#include "aloop/strategies/ceal.hpp"
#include "aloop/strategies/coreset.hpp"
#include "aloop/strategies/ranking.hpp"
#include "aloop/strategies/representative.hpp"
#include "aloop/strategies/scores.hpp"

namespace aloop::strat {

/// Everything a strategy may look at when choosing the next batch.
struct QueryContext {
    const seg::TrainedModel* model = nullptr;
    std::vector<std::string> pool;     // queryable unannotated samples
    std::vector<std::string> labeled;  // annotated samples (coverage centres)
    std::function<Image(const std::string&)> image;  // model-ready input for a sample
    config::ALSettings settings;
    int n = 0;
    int round = 0;
    std::uint64_t rng_seed = 0;
    int threads = 1;
};

struct StrategyOutput {
    QueryResult result;
    /// Machine labels to add to the next training run only.
    std::map<std::string, SegMask> pseudo;
};

using StrategyFn = std::function<StrategyOutput(const QueryContext&)>;
using ScorerFn = std::function<double(const Posterior&)>;

/// FNV-1a, so per-sample seeds do not depend on the standard library's hash.
inline std::uint64_t stable_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t sample_seed(std::uint64_t base, int round, const std::string& id) {
    std::uint64_t h = base * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(round) * 0xbf58476d1ce4e5b9ULL;
    return h ^ stable_hash(id);
}

/// out[i] = f(i) for i < n on up to `threads` workers. The first exception is rethrown.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, int threads, F&& f) {
    std::vector<T> out(n);
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    out[i] = f(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return out;
}

namespace detail {

inline void require_model(const QueryContext& ctx) {
    if (!ctx.model) throw UsageError("strategy needs a trained model");
    if (!ctx.image) throw UsageError("strategy needs an image loader");
}

inline std::map<std::string, double> score_pool(const QueryContext& ctx,
                                                const std::function<double(const std::string&)>& score) {
    auto values = parallel_map<double>(ctx.pool.size(), ctx.threads, [&](std::size_t i) { return score(ctx.pool[i]); });
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < ctx.pool.size(); ++i) out.emplace(ctx.pool[i], values[i]);
    return out;
}

inline StrategyOutput posterior_strategy(const QueryContext& ctx, const std::string& name, const ScorerFn& scorer) {
    require_model(ctx);
    auto scores = score_pool(ctx, [&](const std::string& id) {
        return scorer(seg::predict_posterior(*ctx.model, ctx.image(id)));
    });
    return {rank_pool(scores, ctx.n, name, ctx.rng_seed, ctx.round), {}};
}

inline StrategyOutput mc_strategy(const QueryContext& ctx, const std::string& name, bool regional) {
    require_model(ctx);
    const int T = ctx.settings.mc_passes;
    const int r = ctx.settings.region_size;
    auto scores = score_pool(ctx, [&](const std::string& id) {
        auto reps = seg::mc_dropout_posteriors(*ctx.model, ctx.image(id), T, sample_seed(ctx.rng_seed, ctx.round, id));
        return regional ? score_regional_mc(reps, r) : score_mc_entropy(reps);
    });
    return {rank_pool(scores, ctx.n, name, ctx.rng_seed, ctx.round), {}};
}

inline std::vector<Embedding> embed_all(const QueryContext& ctx, const std::vector<std::string>& ids) {
    return parallel_map<Embedding>(ids.size(), ctx.threads,
                                   [&](std::size_t i) { return seg::embed(*ctx.model, ctx.image(ids[i])); });
}

inline StrategyOutput coreset_strategy(const QueryContext& ctx) {
    require_model(ctx);
    const auto pool_emb = embed_all(ctx, ctx.pool);
    std::vector<PoolEmbedding> pool;
    for (std::size_t i = 0; i < ctx.pool.size(); ++i) pool.push_back({ctx.pool[i], pool_emb[i]});
    const int k = std::min<int>(ctx.n, static_cast<int>(pool.size()));
    QueryResult q{{}, "CORESET", ctx.round, ctx.rng_seed};
    for (auto& [id, d] : select_coreset_scored(embed_all(ctx, ctx.labeled), pool, k)) q.ranked.push_back({id, d});
    sort_ranked(q.ranked);
    return {q, {}};
}

inline StrategyOutput maxrpr_strategy(const QueryContext& ctx) {
    require_model(ctx);
    struct Scored {
        Embedding emb;
        double unc = 0.0;
    };
    auto scored = parallel_map<Scored>(ctx.pool.size(), ctx.threads, [&](std::size_t i) {
        const auto img = ctx.image(ctx.pool[i]);
        return Scored{seg::embed(*ctx.model, img),
                      score_uncertainty(seg::predict_posterior(*ctx.model, img), Uncertainty::ENT)};
    });
    std::vector<Candidate> cands;
    std::vector<Embedding> pool_emb;
    for (std::size_t i = 0; i < ctx.pool.size(); ++i) {
        cands.push_back({ctx.pool[i], scored[i].emb, scored[i].unc});
        pool_emb.push_back(scored[i].emb);
    }
    const int n = std::min<int>(ctx.n, static_cast<int>(cands.size()));
    QueryResult q{scores_from_order(score_representative(cands, pool_emb, n)), "MAXRPR", ctx.round, ctx.rng_seed};
    return {q, {}};
}

inline StrategyOutput ceal_strategy(const QueryContext& ctx) {
    require_model(ctx);
    auto posts = parallel_map<Posterior>(ctx.pool.size(), ctx.threads,
                                         [&](std::size_t i) { return seg::predict_posterior(*ctx.model, ctx.image(ctx.pool[i])); });
    std::map<std::string, double> scores;
    std::map<std::string, Posterior> by_id;
    for (std::size_t i = 0; i < ctx.pool.size(); ++i) {
        scores.emplace(ctx.pool[i], score_uncertainty(posts[i], Uncertainty::ENT));
        by_id.emplace(ctx.pool[i], std::move(posts[i]));
    }
    auto all = rank_pool(scores, static_cast<int>(scores.size()), "CEAL", ctx.rng_seed, ctx.round);
    const double delta = ceal_threshold(ctx.settings.ceal_delta, ctx.settings.ceal_decay, ctx.round);
    auto sel = select_ceal(all, by_id, ctx.n, delta);
    QueryResult q = all;
    q.ranked.resize(sel.query.size());
    return {q, std::move(sel.pseudo)};
}

}  // namespace detail

/// Name -> strategy table. Built-ins cover the nine standard strategies; plugins register
/// either a full selector or a per-posterior scorer.
class StrategyRegistry {
public:
    static StrategyRegistry with_builtins() {
        StrategyRegistry r;
        for (auto [name, method] : {std::pair{"CONF", Uncertainty::CONF}, std::pair{"MAR", Uncertainty::MAR},
                                    std::pair{"ENT", Uncertainty::ENT}}) {
            r.register_scorer(name, [m = method](const Posterior& p) { return score_uncertainty(p, m); });
        }
        r.register_selector("MCDR", [](const QueryContext& c) { return detail::mc_strategy(c, "MCDR", false); });
        r.register_selector("RMCDR", [](const QueryContext& c) { return detail::mc_strategy(c, "RMCDR", true); });
        r.register_selector("CORESET", detail::coreset_strategy);
        r.register_selector("MAXRPR", detail::maxrpr_strategy);
        r.register_selector("CEAL", detail::ceal_strategy);
        r.register_selector("RANDOM", [](const QueryContext& c) {
            std::map<std::string, double> ids;
            for (const auto& id : c.pool) ids.emplace(id, 0.0);
            return StrategyOutput{rank_pool(ids, c.n, "RANDOM", c.rng_seed, c.round), {}};
        });
        r.builtin_ = r.names();
        return r;
    }

    void register_selector(const std::string& name, StrategyFn fn) {
        if (name.empty()) throw UsageError("strategy name must not be empty");
        if (builtin_.count(name)) throw UsageError("cannot replace built-in strategy '" + name + "'");
        table_[name] = std::move(fn);
    }

    /// Wraps a per-image scorer (higher = more informative) into a top-n selector.
    void register_scorer(const std::string& name, ScorerFn scorer) {
        register_selector(name, [name, scorer = std::move(scorer)](const QueryContext& c) {
            return detail::posterior_strategy(c, name, scorer);
        });
    }

    bool contains(const std::string& name) const { return table_.count(name) > 0; }

    std::set<std::string> names() const {
        std::set<std::string> out;
        for (const auto& [k, v] : table_) out.insert(k);
        return out;
    }

    /// Config validation vocabulary including registered plugins.
    config::KnownNames known_names() const {
        auto k = config::KnownNames::builtin();
        for (const auto& n : names()) k.strategies.insert(n);
        return k;
    }

    StrategyOutput run(const std::string& name, const QueryContext& ctx) const {
        auto it = table_.find(name);
        if (it == table_.end()) throw UsageError("unknown strategy '" + name + "'");
        if (ctx.pool.empty()) return {QueryResult{{}, name, ctx.round, ctx.rng_seed}, {}};
        auto out = it->second(ctx);
        out.result.strategy = name;
        return out;
    }

private:
    std::map<std::string, StrategyFn> table_;
    std::set<std::string> builtin_;
};

}  // namespace aloop::strat
