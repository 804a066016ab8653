#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "aloop/common/fs.hpp"
#include "aloop/datamgr/annotation.hpp"
#include "aloop/simlab/experiment.hpp"
#include "test_util.hpp"

using namespace aloop;
using namespace aloop::sim;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.volumes = 4;
    s.slices_per_volume = 3;
    s.height = 32;
    s.width = 32;
    s.amplitude = 2;
    s.rng_seed = 11;
    return s;
}

config::RunConfig tiny_config() {
    auto cfg = config::parse_run_config(read_file(std::string(ALOOP_FIXTURES) + "/simlab.yaml"));
    cfg.model.base_channels = 4;
    cfg.optimizer.num_epochs = 2;
    cfg.optimizer.steps_per_epoch = 2;
    cfg.data.train->batch_size = 2;
    auto& al = cfg.active_learning;
    al.seed_size = 2;
    al.query_size = 2;
    al.rounds = 2;
    al.mc_passes = 2;
    al.region_size = 4;
    return cfg;
}

}  // namespace

TEST(Synthetic, ColumnsReadClassesTopToBottom) {
    auto spec = small_spec();
    spec.height = 64;
    spec.width = 64;
    for (int v = 0; v < 3; ++v) {
        auto s = generate_slice(spec, v, 1);
        for (int x = 0; x < spec.width; ++x) {
            std::vector<int> seen;
            for (int y = 0; y < spec.height; ++y) {
                const int c = s.truth.at(y, x);
                if (seen.empty() || seen.back() != c) seen.push_back(c);
            }
            EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3})) << "column " << x;
            for (std::size_t k = 1; k < s.boundaries.size(); ++k)
                EXPECT_GE(s.boundaries[k][x] - s.boundaries[k - 1][x], spec.min_gap - 1e-9);
        }
    }
}

TEST(Synthetic, NoiselessImagesArePiecewiseConstant) {
    auto spec = small_spec();
    spec.noise_sigma = 0;
    auto s = generate_slice(spec, 2, 0);
    std::map<int, std::set<float>> by_class;
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) by_class[s.truth.at(y, x)].insert(s.image.at(y, x));
    ASSERT_EQ(by_class.size(), 4u);
    for (const auto& [c, values] : by_class) EXPECT_EQ(values.size(), 1u) << "class " << c;
    EXPECT_LT(*by_class[0].begin(), *by_class[3].begin());
}

TEST(Synthetic, SameSeedSameBytes) {
    testutil::TempDir a, b, c;
    auto spec = small_spec();
    generate_synthetic(spec, a.path());
    generate_synthetic(spec, b.path());
    spec.rng_seed = 12;
    generate_synthetic(spec, c.path());
    const std::string slice = "volumes/v001/slice_2.png";
    EXPECT_EQ(read_file(a / slice), read_file(b / slice));
    EXPECT_NE(read_file(a / slice), read_file(c / slice));
    EXPECT_EQ(read_file(a / "ground_truth/boundaries.json"), read_file(b / "ground_truth/boundaries.json"));
    EXPECT_EQ(read_file(a / "ground_truth/v003_s000.png"), read_file(b / "ground_truth/v003_s000.png"));
}

TEST(Synthetic, SpecValidation) {
    auto spec = small_spec();
    spec.min_gap = 9;  // 4 * 9 > 32
    EXPECT_THROW(spec.validate(), UsageError);
    testutil::TempDir d;
    EXPECT_THROW(generate_synthetic(spec, d.path()), UsageError);
    spec = small_spec();
    spec.layers = {"A", "B"};
    EXPECT_THROW(spec.validate(), UsageError);
    EXPECT_THROW(parse_synthetic_spec("volumes: [1]"), ParseError);
    EXPECT_THROW(parse_synthetic_spec("noise_sigma: -1"), UsageError);
    const auto parsed = parse_synthetic_spec(read_file(std::string(ALOOP_FIXTURES) + "/synthetic.yaml"));
    EXPECT_EQ(parsed.volumes, 20);
    EXPECT_EQ(parsed.slices_per_volume, 10);
    EXPECT_EQ(parsed.num_classes, 4);
    EXPECT_EQ(parsed.layer_names(), (std::vector<std::string>{"ILM", "RPE", "BM"}));
}

TEST(Oracle, DeterministicAndRestrictable) {
    testutil::TempDir d;
    generate_synthetic(small_spec(), d.path());
    Oracle o(d.path());
    EXPECT_EQ(o.annotate("v000_s001"), o.annotate("v000_s001"));
    const auto rec = o.annotate("v000_s001");
    ASSERT_EQ(rec.lines().size(), 3u);
    for (const auto* l : rec.lines()) {
        EXPECT_FALSE(l->uncertain);
        EXPECT_EQ(l->points.front().x, 0);
        EXPECT_EQ(l->points.back().x, 31);
        EXPECT_EQ(l->points.size(), 9u);  // x = 0, 4, ..., 28 plus the last column
    }
    EXPECT_EQ(o.annotate("v000_s001", {"RPE"}).lines().size(), 1u);
    EXPECT_THROW(o.annotate("v999_s000"), UsageError);
    testutil::TempDir empty;
    EXPECT_THROW(Oracle(empty.path()), UsageError);
}

TEST(KFold, DisjointExhaustiveAndBalanced) {
    std::vector<std::string> vols;
    for (int v = 0; v < 23; ++v) vols.push_back(volume_id(v));
    for (int k : {2, 3, 5, 23}) {
        const auto folds = kfold_volumes(vols, k, 4);
        ASSERT_EQ(folds.size(), static_cast<std::size_t>(k));
        std::multiset<std::string> all;
        std::size_t lo = vols.size(), hi = 0;
        for (const auto& f : folds) {
            all.insert(f.begin(), f.end());
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
        }
        EXPECT_EQ(all, std::multiset<std::string>(vols.begin(), vols.end()));
        EXPECT_LE(hi - lo, 1u);
    }
    EXPECT_EQ(kfold_volumes(vols, 5, 4), kfold_volumes(vols, 5, 4));
    EXPECT_NE(kfold_volumes(vols, 5, 4), kfold_volumes(vols, 5, 5));
    EXPECT_THROW(kfold_volumes(vols, 1, 0), UsageError);
    EXPECT_THROW(kfold_volumes(vols, 24, 0), UsageError);
}

TEST(Csv, RoundTripAndErrors) {
    std::vector<CurveRow> rows = {{6.25, "ENT", 0, 1, 2, 0.5}, {100, "RANDOM", 4, 0, 0, 0.987654}};
    EXPECT_EQ(parse_csv(to_csv(rows)), rows);
    EXPECT_EQ(to_csv(rows).substr(0, to_csv(rows).find('\n')), "budget_pct,strategy,fold,seed,class,dice");
    EXPECT_THROW(parse_csv("a,b\n"), ParseError);
    EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\n1,ENT,0,0,0\n"), ParseError);
    EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\nx,ENT,0,0,0,1\n"), ParseError);
}

TEST(Curve, AggregatesOverRuns) {
    // Two runs at 10%: per-run class means 0.5 and 0.7.
    std::vector<CurveRow> rows = {
        {10, "ENT", 0, 0, 0, 0.4}, {10, "ENT", 0, 0, 1, 0.6}, {10, "ENT", 1, 0, 0, 0.8},
        {10, "ENT", 1, 0, 1, 0.6}, {20, "ENT", 0, 0, 0, 0.9}, {20, "ENT", 0, 0, 1, 0.9},
        {10, "RANDOM", 0, 0, 0, 0.1}, {10, "RANDOM", 0, 0, 1, 0.3},
    };
    const auto curve = learning_curve(rows);
    ASSERT_EQ(curve.size(), 3u);
    EXPECT_EQ(curve[0].strategy, "ENT");
    EXPECT_EQ(curve[0].budget_pct, 10);
    EXPECT_EQ(curve[0].runs, 2);
    EXPECT_NEAR(curve[0].mean, 0.6, 1e-12);
    EXPECT_NEAR(curve[0].std, std::sqrt(0.02), 1e-12);
    EXPECT_NEAR(curve[0].class_mean[0], 0.6, 1e-12);
    EXPECT_NEAR(curve[0].class_std[1], 0.0, 1e-12);
    EXPECT_EQ(curve[1].budget_pct, 20);
    EXPECT_EQ(curve[1].std, 0.0);
    EXPECT_EQ(curve[2].strategy, "RANDOM");
    EXPECT_NEAR(curve[2].mean, 0.2, 1e-12);

    const auto table = render_table(curve);
    EXPECT_NE(table.find("ENT"), std::string::npos);
    EXPECT_NE(table.find("0.600±0.141"), std::string::npos);
    EXPECT_NE(table.find("0.200±0.000"), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

TEST(Experiment, CountsTrainingRuns) {
    auto cfg = tiny_config();
    ExperimentOptions opt;
    opt.strategies = {"RANDOM"};
    opt.folds = 2;
    opt.seeds = 1;
    opt.full_budget = false;
    const auto res = run_experiment(cfg, small_spec(), opt);
    ASSERT_EQ(res.cells.size(), 2u);
    EXPECT_EQ(res.failed(), 0u);
    int trainings = 0;
    for (const auto& c : res.cells) {
        trainings += c.trainings;
        EXPECT_EQ(c.stop, ctl::StopReason::budget);
        // seed_size + i * query_size after annotation round i
        EXPECT_EQ(c.annotated_after_round, (std::vector<int>{2, 4}));
    }
    EXPECT_EQ(trainings, 4);
    EXPECT_EQ(res.rows.size(), 4u * 4u);  // one row per class per training
}

TEST(Experiment, DeterministicCurvesAndIncreasingBudgets) {
    auto cfg = tiny_config();
    ExperimentOptions opt;
    opt.strategies = {"ENT", "CORESET"};
    opt.folds = 2;
    opt.seeds = 2;
    opt.threads = 2;
    const auto a = run_experiment(cfg, small_spec(), opt);
    opt.threads = 1;
    const auto b = run_experiment(cfg, small_spec(), opt);
    EXPECT_EQ(to_csv(a.rows), to_csv(b.rows));

    // Train split is 2 volumes x 3 slices: 2, 4 annotated then the full 6.
    std::map<std::tuple<std::string, int, int>, std::vector<double>> budgets;
    for (const auto& r : a.rows) {
        EXPECT_GE(r.dice, 0.0);
        EXPECT_LE(r.dice, 1.0);
        auto& v = budgets[{r.strategy, r.fold, r.seed}];
        if (v.empty() || v.back() != r.budget_pct) v.push_back(r.budget_pct);
    }
    EXPECT_EQ(budgets.size(), 8u);
    for (const auto& [key, v] : budgets) EXPECT_EQ(v, (std::vector<double>{33.33, 66.67, 100.0}));
    for (const auto& p : learning_curve(a.rows)) EXPECT_EQ(p.runs, 4);
}

TEST(Experiment, FailedCellIsRecordedAndRunContinues) {
    auto reg = strat::StrategyRegistry::with_builtins();
    reg.register_scorer("BROKEN", [](const Posterior&) -> double { throw std::runtime_error("scorer exploded"); });
    ExperimentOptions opt;
    opt.strategies = {"BROKEN", "RANDOM"};
    opt.folds = 2;
    opt.full_budget = false;
    const auto res = run_experiment(tiny_config(), small_spec(), opt, reg);
    ASSERT_EQ(res.cells.size(), 4u);
    EXPECT_EQ(res.failed(), 2u);
    for (const auto& c : res.cells) {
        if (c.strategy == "BROKEN") {
            ASSERT_TRUE(c.error);
            EXPECT_NE(c.error->find("scorer exploded"), std::string::npos);
        } else {
            EXPECT_FALSE(c.error);
        }
    }
    for (const auto& r : res.rows) EXPECT_EQ(r.strategy, "RANDOM");
}

TEST(Experiment, RejectsBadInputs) {
    ExperimentOptions opt;
    EXPECT_THROW(run_experiment(tiny_config(), small_spec(), opt), UsageError);
    opt.strategies = {"NOPE"};
    EXPECT_THROW(run_experiment(tiny_config(), small_spec(), opt), UsageError);
    opt.strategies = {"ENT"};
    opt.folds = 1;
    EXPECT_THROW(run_experiment(tiny_config(), small_spec(), opt), UsageError);
}
