#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "aloop/strategies/registry.hpp"

using namespace aloop;
using namespace aloop::strat;

namespace {

Posterior random_posterior(std::mt19937_64& rng, int H, int W, int K) {
    Posterior p(H, W, K);
    std::exponential_distribution<double> e(1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto px = p.pixel(i);
        double s = 0.0;
        for (auto& v : px) s += (v = u(rng) < 0.1 ? 0.0 : e(rng));
        if (s == 0.0) px[0] = s = 1.0;
        for (auto& v : px) v /= s;
    }
    return p;
}

Posterior single_pixel(std::vector<double> probs) {
    Posterior p(1, 1, static_cast<int>(probs.size()));
    p.probs = std::move(probs);
    return p;
}

// Direct formulas, written independently of the library's helpers.
double direct_ent(const std::vector<double>& p) {
    double h = 0;
    for (double v : p) h += v == 0 ? 0.0 : -v * std::log(v);
    return h;
}
double direct_conf(std::vector<double> p) {
    std::sort(p.rbegin(), p.rend());
    return 1.0 - p[0];
}
double direct_mar(std::vector<double> p) {
    std::sort(p.rbegin(), p.rend());
    return 1.0 - (p[0] - p[1]);
}
std::vector<double> pixel_vec(const Posterior& p, std::size_t i) {
    auto s = p.pixel(i);
    return {s.begin(), s.end()};
}

}  // namespace

TEST(Scores, SinglePixelAnchors) {
    auto uni = single_pixel({0.5, 0.5});
    EXPECT_NEAR(score_uncertainty(uni, Uncertainty::ENT), std::log(2.0), 1e-12);
    EXPECT_NEAR(score_uncertainty(uni, Uncertainty::MAR), 1.0, 1e-12);
    EXPECT_NEAR(score_uncertainty(uni, Uncertainty::CONF), 0.5, 1e-12);
    auto hot = single_pixel({0.0, 1.0, 0.0});
    for (auto m : {Uncertainty::ENT, Uncertainty::MAR, Uncertainty::CONF}) EXPECT_EQ(score_uncertainty(hot, m), 0.0);
    auto mixed = single_pixel({0.7, 0.2, 0.1});
    EXPECT_NEAR(score_uncertainty(mixed, Uncertainty::ENT), 0.801819, 1e-6);
    EXPECT_NEAR(score_uncertainty(mixed, Uncertainty::MAR), 0.5, 1e-12);
    EXPECT_NEAR(score_uncertainty(mixed, Uncertainty::CONF), 0.3, 1e-12);
    EXPECT_THROW(score_uncertainty(single_pixel({1.0}), Uncertainty::ENT), UsageError);
}

TEST(Scores, MatchDirectFormulas) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const int K = 2 + t % 4, H = 1 + t % 5, W = 1 + t % 7;
        auto p = random_posterior(rng, H, W, K);
        double ent = 0, conf = 0, mar = 0;
        for (std::size_t i = 0; i < p.pixel_count(); ++i) {
            ent += direct_ent(pixel_vec(p, i));
            conf += direct_conf(pixel_vec(p, i));
            mar += direct_mar(pixel_vec(p, i));
        }
        const double n = static_cast<double>(p.pixel_count());
        EXPECT_NEAR(score_uncertainty(p, Uncertainty::ENT), ent / n, 1e-12);
        EXPECT_NEAR(score_uncertainty(p, Uncertainty::CONF), conf / n, 1e-12);
        EXPECT_NEAR(score_uncertainty(p, Uncertainty::MAR), mar / n, 1e-12);
    }
}

TEST(Scores, RangesAndPermutationInvariance) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 1000; ++t) {
        const int K = 2 + t % 4;
        auto p = random_posterior(rng, 3, 2, K);
        const double ent = score_uncertainty(p, Uncertainty::ENT);
        const double conf = score_uncertainty(p, Uncertainty::CONF);
        const double mar = score_uncertainty(p, Uncertainty::MAR);
        EXPECT_GE(ent, 0.0);
        EXPECT_LE(ent, std::log(K) + 1e-12);
        EXPECT_GE(conf, 0.0);
        EXPECT_LE(conf, 1.0 - 1.0 / K + 1e-12);
        EXPECT_GE(mar, 0.0);
        EXPECT_LE(mar, 1.0 + 1e-12);

        std::vector<int> perm(K);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Posterior q = p;
        for (std::size_t i = 0; i < p.pixel_count(); ++i)
            for (int k = 0; k < K; ++k) q.pixel(i)[perm[k]] = p.pixel(i)[k];
        for (auto m : {Uncertainty::ENT, Uncertainty::CONF, Uncertainty::MAR})
            EXPECT_NEAR(score_uncertainty(p, m), score_uncertainty(q, m), 1e-9);
        Posterior q2 = p;
        std::vector<Posterior> reps{p, random_posterior(rng, 3, 2, K)}, reps_perm;
        for (const auto& r : reps) {
            Posterior s = r;
            for (std::size_t i = 0; i < r.pixel_count(); ++i)
                for (int k = 0; k < K; ++k) s.pixel(i)[perm[k]] = r.pixel(i)[k];
            reps_perm.push_back(s);
        }
        EXPECT_NEAR(score_mc_entropy(reps), score_mc_entropy(reps_perm), 1e-9);
    }
}

TEST(McScores, Anchors) {
    std::mt19937_64 rng(3);
    auto p = random_posterior(rng, 4, 4, 3);
    EXPECT_NEAR(score_mc_entropy({p, p, p}), score_uncertainty(p, Uncertainty::ENT), 1e-12);
    auto a = single_pixel({1.0, 0.0}), b = single_pixel({0.0, 1.0});
    EXPECT_NEAR(score_mc_entropy({a, b}), std::log(2.0), 1e-12);
    EXPECT_THROW(score_mc_entropy({p}), UsageError);
    EXPECT_THROW(score_mc_entropy({p, random_posterior(rng, 4, 3, 3)}), UsageError);
}

TEST(McScores, BruteForceOnTinyGrid) {
    std::mt19937_64 rng(4);
    std::vector<Posterior> reps;
    for (int t = 0; t < 3; ++t) reps.push_back(random_posterior(rng, 2, 2, 2));
    double total = 0.0;
    for (int i = 0; i < 4; ++i) {
        double m0 = (reps[0].probs[2 * i] + reps[1].probs[2 * i] + reps[2].probs[2 * i]) / 3.0;
        double m1 = (reps[0].probs[2 * i + 1] + reps[1].probs[2 * i + 1] + reps[2].probs[2 * i + 1]) / 3.0;
        total += direct_ent({m0, m1});
    }
    EXPECT_NEAR(score_mc_entropy(reps), total / 4.0, 1e-12);
}

TEST(McScores, JensenAndRegionalDominance) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
        const int K = 2 + t % 4;
        std::vector<Posterior> reps;
        for (int r = 0; r < 2 + t % 5; ++r) reps.push_back(random_posterior(rng, 1 + t % 8, 1 + (t / 8) % 8, K));
        double per_rep = 0.0;
        for (const auto& r : reps) per_rep += score_uncertainty(r, Uncertainty::ENT);
        per_rep /= reps.size();
        const double mcdr = score_mc_entropy(reps);
        EXPECT_GE(mcdr, per_rep - 1e-12);
        EXPECT_GE(score_regional_mc(reps, 1 + t % 4), mcdr - 1e-12);
    }
}

TEST(RegionalMc, Degeneracies) {
    std::mt19937_64 rng(6);
    std::vector<Posterior> reps{random_posterior(rng, 5, 7, 3), random_posterior(rng, 5, 7, 3)};
    EXPECT_NEAR(score_regional_mc(reps, 7), score_mc_entropy(reps), 1e-12);
    EXPECT_NEAR(score_regional_mc(reps, 100), score_mc_entropy(reps), 1e-12);

    // Constant entropy field.
    Posterior u(6, 6, 2, 0.5);
    EXPECT_NEAR(score_regional_mc({u, u}, 4), std::log(2.0), 1e-12);

    // One hot-spot tile: confident everywhere except the top-left 2x2 tile.
    Posterior c(6, 6, 2);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            const bool hot = y < 2 && x < 2;
            c.at(y, x, 0) = hot ? 0.5 : 0.99;
            c.at(y, x, 1) = hot ? 0.5 : 0.01;
        }
    const double cold = direct_ent({0.99, 0.01});
    EXPECT_NEAR(score_regional_mc({c, c}, 2), std::log(2.0), 1e-12);
    EXPECT_NEAR(score_mc_entropy({c, c}), (4 * std::log(2.0) + 32 * cold) / 36.0, 1e-12);
    EXPECT_GT(score_regional_mc({c, c}, 2), score_mc_entropy({c, c}));
    EXPECT_THROW(score_regional_mc({c, c}, 0), UsageError);
}

// ---- ranking --------------------------------------------------------------------------------

TEST(RankPool, TieBreakAndTruncation) {
    auto q = rank_pool({{"a", 0.2}, {"b", 0.9}, {"c", 0.9}}, 2, "ENT", 0);
    EXPECT_EQ(q.ids(), (std::vector<std::string>{"b", "c"}));
    EXPECT_EQ(rank_pool({{"a", 0.2}, {"b", 0.9}}, 5, "ENT", 0).ranked.size(), 2u);
    EXPECT_TRUE(rank_pool({}, 3, "ENT", 0).ranked.empty());
}

TEST(RankPool, RandomIsSeededAndIgnoresScores) {
    std::map<std::string, double> s;
    for (int i = 0; i < 30; ++i) s["s" + std::to_string(100 + i)] = i;
    auto a = rank_pool(s, 10, "RANDOM", 42), b = rank_pool(s, 10, "RANDOM", 42), c = rank_pool(s, 10, "RANDOM", 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.ids(), c.ids());
    for (std::size_t i = 1; i < a.ranked.size(); ++i) EXPECT_GT(a.ranked[i - 1].score, a.ranked[i].score);
}

TEST(RankPool, JsonRoundTrip) {
    auto q = rank_pool({{"a", 0.25}, {"b", 0.5}}, 2, "MAR", 9, 3);
    EXPECT_EQ(query_from_json(to_json(q)), q);
}

// ---- coreset -----------------------------------------------------------------------------------

TEST(Coreset, HandExamples) {
    EXPECT_EQ(select_coreset({{0.0}}, {{"p1", {1.0}}, {"p10", {10.0}}}, 1), std::vector<std::string>{"p10"});
    EXPECT_EQ(select_coreset({{0.0}}, {{"a", {0.0}}, {"b", {5.0}}, {"c", {10.0}}}, 2),
              (std::vector<std::string>{"c", "b"}));
    EXPECT_THROW(select_coreset({}, {{"a", {0.0}}}, 2), UsageError);
    EXPECT_TRUE(select_coreset({}, {{"a", {0.0}}}, 0).empty());
}

TEST(Coreset, ColdStartUsesFarthestPair) {
    // Farthest pair is (b, d); b has the smaller id.
    std::vector<PoolEmbedding> pool{{"d", {9.0}}, {"a", {3.0}}, {"b", {-4.0}}, {"c", {1.0}}};
    auto picks = select_coreset({}, pool, 3);
    ASSERT_EQ(picks.size(), 3u);
    EXPECT_EQ(picks[0], "b");
    EXPECT_EQ(picks[1], "d");
    EXPECT_EQ(picks[2], "a");  // 6 from its nearest centre, c is 5
}

TEST(Coreset, TwoApproximationSmall) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 150; ++t) {
        const int n = 2 + t % 6, k = 1 + t % 3;
        if (k > n) continue;
        std::vector<PoolEmbedding> pool;
        std::vector<Embedding> pts;
        for (int i = 0; i < n; ++i) {
            pts.push_back({u(rng), u(rng)});
            pool.push_back({"p" + std::to_string(i), pts.back()});
        }
        auto picks = select_coreset({}, pool, k);
        std::vector<Embedding> centres;
        for (const auto& id : picks) centres.push_back(pool[std::stoi(id.substr(1))].embedding);
        const double greedy = coverage_radius(centres, pts);
        double best = INFINITY;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            if (std::popcount(mask) != k) continue;
            std::vector<Embedding> c;
            for (int i = 0; i < n; ++i)
                if (mask >> i & 1u) c.push_back(pts[i]);
            best = std::min(best, coverage_radius(c, pts));
        }
        EXPECT_LE(greedy, 2.0 * best + 1e-12);
    }
}

// ---- MAXRPR ------------------------------------------------------------------------------------

TEST(MaxRpr, IdenticalEmbeddingsFallBackToUncertainty) {
    std::vector<Candidate> c{{"a", {1, 1}, 0.1}, {"b", {1, 1}, 0.9}, {"c", {1, 1}, 0.5}, {"d", {1, 1}, 0.7}};
    std::vector<Embedding> pool(4, Embedding{1, 1});
    EXPECT_EQ(score_representative(c, pool, 2), (std::vector<std::string>{"b", "d"}));
}

TEST(MaxRpr, AllCandidatesSortedById) {
    std::vector<Candidate> c{{"z", {1, 0}, 0.1}, {"m", {0, 1}, 0.9}, {"a", {1, 1}, 0.5}};
    std::vector<Embedding> pool{{1, 0}, {0, 1}, {1, 1}};
    EXPECT_EQ(score_representative(c, pool, 3), (std::vector<std::string>{"a", "m", "z"}));
    EXPECT_TRUE(score_representative(c, pool, 0).empty());
    EXPECT_THROW(score_representative(c, pool, 4), UsageError);
}

TEST(MaxRpr, OnePickPerClusterMatchesBruteForce) {
    std::vector<Candidate> c{{"a1", {1.0, 0.05}, 0.5}, {"a2", {1.0, -0.04}, 0.5}, {"a3", {1.0, 0.1}, 0.5},
                             {"b1", {0.05, 1.0}, 0.5}, {"b2", {-0.08, 1.0}, 0.5}};
    std::vector<Embedding> pool;
    for (const auto& x : c) pool.push_back(x.embedding);
    auto got = score_representative(c, pool, 2);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0][0], 'a');
    EXPECT_EQ(got[1][0], 'b');

    // Equal uncertainty keeps the four smallest ids (b2 drops out). Greedy on a monotone
    // submodular objective is within 1 - 1/e of the best eligible pair.
    double best = -INFINITY;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j)
            best = std::max(best, representativeness({c[i].embedding, c[j].embedding}, pool));
    std::vector<Embedding> picked;
    for (const auto& id : got)
        for (const auto& x : c)
            if (x.sample_id == id) picked.push_back(x.embedding);
    EXPECT_GE(representativeness(picked, pool), (1.0 - 1.0 / std::exp(1.0)) * best);
}

TEST(MaxRpr, MatchesNaiveGreedy) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const int n = 1 + t % 4, m = n + t % 7, dim = 2 + t % 3;
        std::vector<Candidate> c;
        std::vector<Embedding> pool;
        for (int i = 0; i < m; ++i) {
            Embedding e(dim);
            for (auto& v : e) v = g(rng);
            c.push_back({"c" + std::to_string(100 + i), e, u(rng)});
            pool.push_back(e);
        }
        for (int i = 0; i < 5; ++i) {
            Embedding e(dim);
            for (auto& v : e) v = g(rng);
            pool.push_back(e);
        }
        // Reference: keep the 2n most uncertain, then add whichever candidate raises Rep(S) most.
        auto eligible = c;
        std::sort(eligible.begin(), eligible.end(),
                  [](const Candidate& a, const Candidate& b) { return a.uncertainty > b.uncertainty; });
        eligible.resize(std::min<std::size_t>(eligible.size(), 2 * n));
        std::vector<Embedding> sel;
        std::vector<std::string> want;
        std::vector<bool> used(eligible.size(), false);
        for (int step = 0; step < n; ++step) {
            const double base = representativeness(sel, pool);
            std::size_t arg = 0;
            double top = -INFINITY;
            for (std::size_t i = 0; i < eligible.size(); ++i) {
                if (used[i]) continue;
                auto trial = sel;
                trial.push_back(eligible[i].embedding);
                const double gain = representativeness(trial, pool) - base;
                if (gain > top) top = gain, arg = i;
            }
            used[arg] = true;
            sel.push_back(eligible[arg].embedding);
            want.push_back(eligible[arg].sample_id);
        }
        std::sort(want.begin(), want.end());
        EXPECT_EQ(score_representative(c, pool, n), want) << "trial " << t;
    }
}

TEST(MaxRpr, OnlyTopTwoNUncertainAreEligible) {
    // "far" is the best representative but is the least uncertain of five; with n=2 only
    // four candidates survive the uncertainty stage.
    std::vector<Candidate> c{{"far", {0, 1}, 0.0}, {"u1", {1, 0}, 0.9}, {"u2", {1, 0.01}, 0.8},
                             {"u3", {1, 0.02}, 0.7}, {"u4", {1, 0.03}, 0.6}};
    std::vector<Embedding> pool(10, Embedding{0, 1});
    auto got = score_representative(c, pool, 2);
    EXPECT_EQ(std::count(got.begin(), got.end(), "far"), 0);
}

// ---- CEAL --------------------------------------------------------------------------------------

namespace {

struct CealPool {
    QueryResult ranked;
    std::map<std::string, Posterior> posts;
};

CealPool ceal_pool(const std::vector<double>& first_prob) {
    CealPool p;
    std::map<std::string, double> scores;
    for (std::size_t i = 0; i < first_prob.size(); ++i) {
        const std::string id = "s" + std::to_string(i);
        auto post = single_pixel({first_prob[i], 1.0 - first_prob[i]});
        scores[id] = score_uncertainty(post, Uncertainty::ENT);
        p.posts.emplace(id, post);
    }
    p.ranked = rank_pool(scores, static_cast<int>(scores.size()), "CEAL", 0);
    return p;
}

}  // namespace

TEST(Ceal, ThresholdExtremes) {
    auto p = ceal_pool({0.5, 0.6, 0.9, 0.99, 1.0});
    auto none = select_ceal(p.ranked, p.posts, 2, 0.0);
    EXPECT_EQ(none.query.size(), 2u);
    EXPECT_TRUE(none.pseudo.empty());
    auto all = select_ceal(p.ranked, p.posts, 2, std::log(2.0) + 1e-9);
    EXPECT_EQ(all.pseudo.size(), 3u);
}

TEST(Ceal, CraftedEntropies) {
    // Entropies (nats): 0.5->0.693, 0.7->0.611, 0.8->0.500, 0.95->0.199, 0.98->0.098, 0.999->0.008
    auto p = ceal_pool({0.5, 0.7, 0.8, 0.95, 0.98, 0.999});
    auto out = select_ceal(p.ranked, p.posts, 2, 0.25);
    EXPECT_EQ(out.query, (std::vector<std::string>{"s0", "s1"}));
    ASSERT_EQ(out.pseudo.size(), 3u);
    for (const auto& id : out.query) EXPECT_FALSE(out.pseudo.count(id));
    EXPECT_EQ(out.pseudo.at("s5").labels[0], 0);
}

TEST(Ceal, ThresholdDecaysLinearly) {
    EXPECT_DOUBLE_EQ(ceal_threshold(0.05, 0.0033, 0), 0.05);
    EXPECT_NEAR(ceal_threshold(0.05, 0.0033, 3), 0.05 - 0.0099, 1e-15);
    EXPECT_EQ(ceal_threshold(0.05, 0.0033, 100), 0.0);
}

// ---- registry ----------------------------------------------------------------------------------

namespace {

struct TinyWorld {
    seg::TrainedModel model;
    std::map<std::string, Image> images;
    TinyWorld() {
        seg::Architecture arch;
        arch.base_channels = 4;
        model = seg::init_model(arch, 3);
        std::mt19937_64 rng(8);
        std::normal_distribution<float> g(0.0f, 1.0f);
        for (int i = 0; i < 12; ++i) {
            Image img(8, 8);
            for (auto& v : img.pixels) v = g(rng) + 0.2f * i;
            images.emplace("s" + std::to_string(10 + i), img);
        }
    }
    QueryContext ctx(int n, int threads = 1) const {
        QueryContext c;
        c.model = &model;
        for (const auto& [id, img] : images)
            (id < "s13" ? c.labeled : c.pool).push_back(id);
        c.image = [this](const std::string& id) { return images.at(id); };
        c.settings.mc_passes = 4;
        c.settings.region_size = 4;
        c.settings.ceal_delta = 2.0;
        c.n = n;
        c.round = 1;
        c.rng_seed = 5;
        c.threads = threads;
        return c;
    }
};

}  // namespace

TEST(Registry, BuiltinsAndPlugins) {
    auto reg = StrategyRegistry::with_builtins();
    for (const auto& s : config::builtin_strategies()) EXPECT_TRUE(reg.contains(s)) << s;
    EXPECT_EQ(reg.names().size(), 9u);
    EXPECT_FALSE(reg.known_names().strategies.count("EDGEAL"));
    reg.register_scorer("EDGEAL", [](const Posterior& p) { return score_uncertainty(p, Uncertainty::CONF); });
    EXPECT_TRUE(reg.known_names().strategies.count("EDGEAL"));
    EXPECT_THROW(reg.register_scorer("ENT", [](const Posterior&) { return 0.0; }), UsageError);

    TinyWorld w;
    auto a = reg.run("EDGEAL", w.ctx(3));
    auto b = reg.run("CONF", w.ctx(3));
    EXPECT_EQ(a.result.ids(), b.result.ids());
    EXPECT_EQ(a.result.strategy, "EDGEAL");
    EXPECT_THROW(reg.run("NOPE", w.ctx(3)), UsageError);
}

TEST(Registry, EveryBuiltinProducesAValidQuery) {
    auto reg = StrategyRegistry::with_builtins();
    TinyWorld w;
    for (const auto& name : reg.names()) {
        auto out = reg.run(name, w.ctx(4));
        const auto& r = out.result.ranked;
        ASSERT_EQ(r.size(), 4u) << name;
        std::set<std::string> ids;
        for (std::size_t i = 0; i < r.size(); ++i) {
            ids.insert(r[i].sample_id);
            if (i > 0) {
                EXPECT_GE(r[i - 1].score, r[i].score) << name;
                if (r[i - 1].score == r[i].score) EXPECT_LT(r[i - 1].sample_id, r[i].sample_id) << name;
            }
        }
        EXPECT_EQ(ids.size(), 4u) << name;
        for (const auto& id : ids) EXPECT_NE(std::find(w.ctx(4).pool.begin(), w.ctx(4).pool.end(), id), w.ctx(4).pool.end());
        for (const auto& [id, m] : out.pseudo) EXPECT_FALSE(ids.count(id)) << name;
        if (name != "CEAL") EXPECT_TRUE(out.pseudo.empty()) << name;
    }
    EXPECT_FALSE(reg.run("CEAL", w.ctx(4)).pseudo.empty());
}

TEST(Registry, ThreadCountDoesNotChangeResults) {
    auto reg = StrategyRegistry::with_builtins();
    TinyWorld w;
    for (const char* name : {"MCDR", "RMCDR", "CORESET", "MAXRPR", "ENT"})
        EXPECT_EQ(reg.run(name, w.ctx(3, 1)).result, reg.run(name, w.ctx(3, 4)).result) << name;
}

TEST(Registry, EmptyPoolGivesEmptyQuery) {
    auto reg = StrategyRegistry::with_builtins();
    TinyWorld w;
    auto c = w.ctx(3);
    c.pool.clear();
    EXPECT_TRUE(reg.run("ENT", c).result.ranked.empty());
}
