#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aloop/common/error.hpp"
#include "aloop/common/log.hpp"
#include "aloop/controller/cycle.hpp"
#include "aloop/simlab/oracle.hpp"
#include "aloop/simlab/synthetic.hpp"

namespace aloop::sim {

/// Volume-aligned k-fold partition: volumes are shuffled with `seed` and dealt round-robin,
/// so fold sizes differ by at most one volume.
inline std::vector<std::vector<std::string>> kfold_volumes(std::vector<std::string> volumes, int k, std::uint64_t seed) {
    if (k < 2) throw UsageError("k-fold needs k >= 2");
    if (static_cast<std::size_t>(k) > volumes.size())
        throw UsageError("cannot split " + std::to_string(volumes.size()) + " volumes into " + std::to_string(k) + " folds");
    std::sort(volumes.begin(), volumes.end());
    std::mt19937_64 rng(seed);
    std::shuffle(volumes.begin(), volumes.end(), rng);
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < volumes.size(); ++i) folds[i % folds.size()].push_back(volumes[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

struct ExperimentOptions {
    std::vector<std::string> strategies;
    int folds = 5;
    int seeds = 1;
    /// Concurrent cells; 0 = hardware concurrency.
    int threads = 0;
    /// After the AL rounds, annotate the whole remaining pool and train once more.
    bool full_budget = true;
    /// Scratch root for per-cell workspaces; a temp directory when unset.
    std::optional<std::filesystem::path> work_dir;
    bool keep_workspaces = false;
};

/// One CSV line: held-out dice of one class after one training run.
struct CurveRow {
    double budget_pct = 0;
    std::string strategy;
    int fold = 0;
    int seed = 0;
    int cls = 0;
    double dice = 0;

    bool operator==(const CurveRow&) const = default;
};

struct CellLog {
    std::string strategy;
    int fold = 0;
    int seed = 0;
    /// Annotated-set size after each AL annotation round (seed round first); the
    /// full-budget top-up is not counted.
    std::vector<int> annotated_after_round;
    int trainings = 0;
    std::optional<ctl::StopReason> stop;
    std::optional<std::string> error;
};

struct ExperimentResult {
    std::vector<CurveRow> rows;
    std::vector<CellLog> cells;

    std::size_t failed() const {
        return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellLog& c) { return c.error.has_value(); }));
    }
};

inline std::uint64_t cell_seed(std::uint64_t base, int fold, int seed) {
    return strat::sample_seed(base, fold, "seed-" + std::to_string(seed));
}

namespace detail {

struct Cell {
    std::size_t strategy_index;
    std::string strategy;
    int fold;
    int seed;
};

inline void copy_base(const std::filesystem::path& base, const std::filesystem::path& dst) {
    namespace stdfs = std::filesystem;
    stdfs::create_directories(dst);
    stdfs::copy(base / "volumes", dst / "volumes", stdfs::copy_options::recursive);
    stdfs::copy(base / "ground_truth", dst / "ground_truth", stdfs::copy_options::recursive);
    stdfs::copy_file(base / "layers.json", dst / "layers.json");
}

inline double round_pct(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

inline void run_cell(const config::RunConfig& base_cfg, const strat::StrategyRegistry& registry, const Oracle& oracle,
                     const std::filesystem::path& base_ws, const std::filesystem::path& dir,
                     const std::vector<std::string>& test_volumes, const Cell& cell, bool full_budget,
                     std::vector<CurveRow>& rows, CellLog& out) {
    copy_base(base_ws, dir);
    data::Workspace ws(dir);
    ws.initialize_with_files();
    std::vector<std::string> train, test;
    const std::set<std::string> held(test_volumes.begin(), test_volumes.end());
    for (const auto& v : ws.volume_ids())
        for (const auto& s : ws.volume_samples(v)) (held.count(v) ? test : train).push_back(s.sample_id);
    ws.write_splits({{data::Split::train, train}, {data::Split::test, test}});

    auto cfg = base_cfg;
    cfg.active_learning.strategy = cell.strategy;
    cfg.active_learning.rng_seed = cell_seed(base_cfg.active_learning.rng_seed, cell.fold, cell.seed);
    cfg.active_learning.auto_advance = false;
    // No validation split: the held-out fold stays untouched until evaluation.
    cfg.active_learning.target_value.reset();

    const auto chain = seg::eval_chain(cfg);
    const auto held_out = seg::prepare_eval(chain, ws.labeled(data::Split::test));
    ctl::CycleOptions opt;
    opt.on_trained = [&](const ctl::MetricsRow& m, const seg::TrainedModel& model) {
        ++out.trainings;
        const auto dice = seg::evaluate_dice(model, held_out);
        for (std::size_t c = 0; c < dice.size(); ++c)
            rows.push_back({round_pct(m.budget_fraction), cell.strategy, cell.fold, cell.seed, static_cast<int>(c), dice[c]});
    };
    ctl::Cycle cycle(ws, cfg, registry, opt);

    auto annotate_in_flight = [&](bool al_round) {
        std::vector<data::AnnotationRecord> records;
        for (const auto& id : ws.pool_state().in_flight) records.push_back(oracle.annotate(id));
        const auto res = cycle.handle_update_annotations(records);
        if (res.accepted != static_cast<int>(records.size()))
            throw UsageError("oracle annotation rejected in cell " + cell.strategy);
        if (al_round) out.annotated_after_round.push_back(static_cast<int>(ws.pool_state().annotated.size()));
    };

    while (cycle.phase() != ctl::Phase::DONE) {
        const auto rep = cycle.trigger_al_iteration();
        if (rep.phase == ctl::Phase::AWAITING_ANNOTATIONS) annotate_in_flight(true);
    }
    out.stop = cycle.stop_reason();

    if (full_budget) {
        const auto rest = ws.queryable_pool();
        if (!rest.empty()) {
            ws.remove_from_unannotated_set(rest);
            annotate_in_flight(false);
        }
        // Salted per strategy: at 100% every strategy holds the same annotated set, so the
        // spread across strategies is pure training noise.
        cycle.train_model(cycle.round() + 1, false,
                          strat::sample_seed(cfg.active_learning.rng_seed, cycle.round() + 1, "full-" + cell.strategy));
    }
}

}  // namespace detail

/// k-fold x seeds x strategies grid of simulated AL runs on a synthetic corpus. Every cell
/// gets its own workspace copy; the held-out fold is the test split and each training run
/// is scored on it. A failing cell is logged and skipped.
inline ExperimentResult run_experiment(const config::RunConfig& cfg, const SyntheticSpec& spec, const ExperimentOptions& options,
                                       const strat::StrategyRegistry& registry = strat::StrategyRegistry::with_builtins()) {
    namespace stdfs = std::filesystem;
    if (options.strategies.empty()) throw UsageError("experiment needs at least one strategy");
    for (const auto& s : options.strategies)
        if (!registry.contains(s)) throw UsageError("unknown strategy '" + s + "'");
    if (options.seeds < 1) throw UsageError("experiment needs at least one seed");

    const bool temp_root = !options.work_dir;
    stdfs::path root = options.work_dir.value_or(stdfs::temp_directory_path() /
                                                 ("aloop-exp-" + std::to_string(std::random_device{}())));
    stdfs::create_directories(root);
    const auto base = root / "base";
    stdfs::remove_all(base);
    generate_synthetic(spec, base);
    const Oracle oracle(base);

    std::vector<std::string> volumes;
    for (int v = 0; v < spec.volumes; ++v) volumes.push_back(volume_id(v));
    const auto folds = kfold_volumes(volumes, options.folds, cfg.active_learning.rng_seed);

    std::vector<detail::Cell> cells;
    for (std::size_t s = 0; s < options.strategies.size(); ++s)
        for (int f = 0; f < options.folds; ++f)
            for (int seed = 0; seed < options.seeds; ++seed) cells.push_back({s, options.strategies[s], f, seed});

    std::vector<std::vector<CurveRow>> rows(cells.size());
    std::vector<CellLog> logs(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < cells.size();) {
            const auto& c = cells[i];
            auto& lg = logs[i];
            lg.strategy = c.strategy;
            lg.fold = c.fold;
            lg.seed = c.seed;
            const auto dir = root / ("cell-" + c.strategy + "-f" + std::to_string(c.fold) + "-s" + std::to_string(c.seed));
            stdfs::remove_all(dir);
            try {
                detail::run_cell(cfg, registry, oracle, base, dir, folds[static_cast<std::size_t>(c.fold)], c,
                                 options.full_budget, rows[i], lg);
                log().info("cell {} fold {} seed {}: {} trainings", c.strategy, c.fold, c.seed, lg.trainings);
            } catch (const std::exception& e) {
                lg.error = e.what();
                rows[i].clear();
                log().error("cell {} fold {} seed {} failed: {}", c.strategy, c.fold, c.seed, e.what());
            }
            if (!options.keep_workspaces) stdfs::remove_all(dir);
        }
    };
    int threads = options.threads > 0 ? options.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min<int>(threads, static_cast<int>(cells.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (!options.keep_workspaces) {
        if (temp_root) stdfs::remove_all(root);
        else stdfs::remove_all(base);
    }

    ExperimentResult result;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        result.rows.insert(result.rows.end(), rows[i].begin(), rows[i].end());
        result.cells.push_back(std::move(logs[i]));
    }
    return result;
}

// ---- CSV --------------------------------------------------------------------------------

inline constexpr const char* kCsvHeader = "budget_pct,strategy,fold,seed,class,dice";

inline std::string to_csv(const std::vector<CurveRow>& rows) {
    std::string out = std::string(kCsvHeader) + "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f,%s,%d,%d,%d,%.6f\n", r.budget_pct, r.strategy.c_str(), r.fold, r.seed, r.cls, r.dice);
        out += buf;
    }
    return out;
}

inline std::vector<CurveRow> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError("results file must start with '" + std::string(kCsvHeader) + "'", 1);
    std::vector<CurveRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw ParseError("expected 6 columns", lineno);
        try {
            rows.push_back({std::stod(f[0]), f[1], std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stod(f[5])});
        } catch (const std::logic_error&) {
            throw ParseError("malformed number", lineno);
        }
    }
    return rows;
}

// ---- aggregation ------------------------------------------------------------------------

/// Mean and sample standard deviation over runs (fold x seed) at one budget step.
struct CurvePoint {
    double budget_pct = 0;
    std::string strategy;
    std::vector<double> class_mean, class_std;
    double mean = 0, std = 0;  // of the per-run class-averaged dice
    int runs = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace detail

/// Learning curve per strategy, budget ascending. Strategies keep first-appearance order.
inline std::vector<CurvePoint> learning_curve(const std::vector<CurveRow>& rows) {
    std::vector<std::string> order;
    // strategy -> budget -> (fold, seed) -> class -> dice
    std::map<std::string, std::map<double, std::map<std::pair<int, int>, std::map<int, double>>>> g;
    for (const auto& r : rows) {
        if (!g.count(r.strategy)) order.push_back(r.strategy);
        g[r.strategy][r.budget_pct][{r.fold, r.seed}][r.cls] = r.dice;
    }
    std::vector<CurvePoint> out;
    for (const auto& s : order) {
        for (const auto& [budget, runs] : g[s]) {
            CurvePoint p;
            p.budget_pct = budget;
            p.strategy = s;
            p.runs = static_cast<int>(runs.size());
            std::map<int, std::vector<double>> per_class;
            std::vector<double> run_means;
            for (const auto& [key, classes] : runs) {
                double sum = 0;
                for (const auto& [c, d] : classes) {
                    per_class[c].push_back(d);
                    sum += d;
                }
                run_means.push_back(sum / static_cast<double>(classes.size()));
            }
            for (const auto& [c, v] : per_class) {
                auto [m, sd] = detail::mean_std(v);
                p.class_mean.push_back(m);
                p.class_std.push_back(sd);
            }
            std::tie(p.mean, p.std) = detail::mean_std(run_means);
            out.push_back(std::move(p));
        }
    }
    return out;
}

/// Budget rows by strategy columns, each cell "mean±std" of mean dice.
inline std::string render_table(const std::vector<CurvePoint>& curve) {
    std::vector<std::string> strategies;
    std::map<double, std::map<std::string, const CurvePoint*>> grid;
    for (const auto& p : curve) {
        if (std::find(strategies.begin(), strategies.end(), p.strategy) == strategies.end()) strategies.push_back(p.strategy);
        grid[p.budget_pct][p.strategy] = &p;
    }
    std::ostringstream os;
    char buf[64];
    os << "GT%     ";
    for (const auto& s : strategies) {
        std::snprintf(buf, sizeof buf, " %14s", s.c_str());
        os << buf;
    }
    os << "\n";
    for (const auto& [budget, row] : grid) {
        std::snprintf(buf, sizeof buf, "%-8.2f", budget);
        os << buf;
        for (const auto& s : strategies) {
            auto it = row.find(s);
            if (it == row.end()) std::snprintf(buf, sizeof buf, " %14s", "-");
            else std::snprintf(buf, sizeof buf, " %7.3f±%.3f", it->second->mean, it->second->std);
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace aloop::sim
