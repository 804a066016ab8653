#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/log.hpp"
#include "aloop/config/run_config.hpp"
#include "aloop/datamgr/workspace.hpp"
#include "aloop/segbackend/backend.hpp"
#include "aloop/strategies/registry.hpp"

namespace aloop::ctl {

using Json = nlohmann::json;

enum class Phase { IDLE, TRAINING, QUERYING, AWAITING_ANNOTATIONS, DONE };
enum class StopReason { budget, target_reached, pool_empty, manual };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::IDLE: return "IDLE";
        case Phase::TRAINING: return "TRAINING";
        case Phase::QUERYING: return "QUERYING";
        case Phase::AWAITING_ANNOTATIONS: return "AWAITING_ANNOTATIONS";
        case Phase::DONE: return "DONE";
    }
    return "?";
}

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::budget: return "budget";
        case StopReason::target_reached: return "target-reached";
        case StopReason::pool_empty: return "pool-empty";
        case StopReason::manual: return "manual";
    }
    return "?";
}

inline Phase parse_phase(const std::string& s) {
    for (auto p : {Phase::IDLE, Phase::TRAINING, Phase::QUERYING, Phase::AWAITING_ANNOTATIONS, Phase::DONE})
        if (s == to_string(p)) return p;
    throw UsageError("unknown phase '" + s + "'");
}

/// The admitted edges of the cycle's phase machine.
inline bool transition_allowed(Phase from, Phase to) {
    if (from == Phase::DONE) return false;
    if (to == Phase::DONE) return true;
    return (from == Phase::IDLE && to == Phase::TRAINING) || (from == Phase::TRAINING && to == Phase::QUERYING) ||
           (from == Phase::QUERYING && to == Phase::AWAITING_ANNOTATIONS) ||
           (from == Phase::AWAITING_ANNOTATIONS && to == Phase::TRAINING);
}

struct PhaseChange {
    Phase from;
    Phase to;
    int round;
};

/// One training round as seen on GET /metrics.
struct MetricsRow {
    int round = 0;
    int annotated = 0;
    int pseudo_labeled = 0;
    double budget_fraction = 0.0;  // annotated / |train split|
    double train_loss = 0.0;
    int best_epoch = 0;
    std::vector<double> val_dice_per_class;  // empty without validation data
    std::optional<double> val_mean_dice;
};

inline Json to_json(const MetricsRow& m) {
    Json j = {{"round", m.round},
              {"annotated", m.annotated},
              {"pseudo_labeled", m.pseudo_labeled},
              {"budget_fraction", m.budget_fraction},
              {"train_loss", m.train_loss},
              {"best_epoch", m.best_epoch},
              {"dice_per_class", m.val_dice_per_class},
              {"mean_dice", nullptr}};
    if (m.val_mean_dice) j["mean_dice"] = *m.val_mean_dice;
    return j;
}

struct DispatchStatus {
    std::string mode;  // "push" or "pull"
    int attempts = 0;
    bool delivered = false;
    int newly_in_flight = 0;
};

struct RoundReport {
    int round = 0;
    Phase phase = Phase::IDLE;
    std::optional<StopReason> stop_reason;
    std::optional<MetricsRow> metrics;
    std::optional<strat::QueryResult> query;
    std::vector<std::string> extra_random;
    std::optional<DispatchStatus> dispatch;
};

struct AnnotationOutcome {
    int accepted = 0;
    std::vector<data::RecordStatus> statuses;
    bool round_resolved = false;
};

/// Delivers a query payload to the annotation tool; true once acknowledged.
using Pusher = std::function<bool(const Json& payload)>;

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{200};  // doubled after each failure
};

struct CycleOptions {
    int threads = 1;
    RetryPolicy retry;
    /// Called after every training run with the fresh model (simulation hooks).
    std::function<void(const MetricsRow&, const seg::TrainedModel&)> on_trained;
};

/// The AL cycle: train on the annotated pool, query the next batch, hand it to the
/// annotation tool, wait. One instance drives one workspace. Mutating calls must come from a
/// single thread (the service's worker); status readers may call from anywhere.
class Cycle {
public:
    Cycle(data::Workspace& ws, config::RunConfig cfg, strat::StrategyRegistry registry = strat::StrategyRegistry::with_builtins(),
          CycleOptions options = {})
        : ws_(ws), cfg_(std::move(cfg)), registry_(std::move(registry)), opt_(std::move(options)),
          eval_chain_(seg::eval_chain(cfg_)) {
        if (!ws_.initialized()) throw UsageError("cycle needs an initialized workspace");
        if (!registry_.contains(cfg_.active_learning.strategy))
            throw UsageError("unknown strategy '" + cfg_.active_learning.strategy + "'");
        const auto stale = ws_.pool_state().in_flight;
        if (!stale.empty()) {
            log().warn("releasing {} in-flight samples left by an earlier session", stale.size());
            ws_.release_in_flight({stale.begin(), stale.end()});
        }
    }

    const config::RunConfig& config() const { return cfg_; }

    Phase phase() const {
        std::lock_guard lock(mu_);
        return phase_;
    }

    std::vector<PhaseChange> phase_log() const {
        std::lock_guard lock(mu_);
        return log_;
    }

    std::vector<MetricsRow> metrics() const {
        std::lock_guard lock(mu_);
        return metrics_;
    }

    std::optional<Json> latest_query() const {
        std::lock_guard lock(mu_);
        return latest_;
    }

    void set_pusher(Pusher p) {
        std::lock_guard lock(mu_);
        pusher_ = std::move(p);
    }

    Json status() const {
        const auto pool = ws_.pool_state();
        std::lock_guard lock(mu_);
        Json j = {{"phase", to_string(phase_)},
                  {"round", round_},
                  {"strategy", cfg_.active_learning.strategy},
                  {"stop_reason", stop_ ? Json(to_string(*stop_)) : Json(nullptr)},
                  {"active_query", latest_ ? *latest_ : Json(nullptr)},
                  {"pool",
                   {{"annotated", pool.annotated.size()},
                    {"unannotated", pool.unannotated.size()},
                    {"in_flight", pool.in_flight.size()}}}};
        Json lg = Json::array();
        for (const auto& c : log_) lg.push_back({{"from", to_string(c.from)}, {"to", to_string(c.to)}, {"round", c.round}});
        j["phase_log"] = lg;
        return j;
    }

    /// True when nothing dispatched in the current round is still awaiting annotation.
    bool round_resolved() const {
        const auto in_flight = ws_.pool_state().in_flight;
        std::lock_guard lock(mu_);
        for (const auto& id : round_ids_)
            if (in_flight.count(id)) return false;
        return true;
    }

    /// Whether trigger_al_iteration would be accepted now.
    bool can_trigger() const {
        const Phase p = phase();
        return p == Phase::IDLE || (p == Phase::AWAITING_ANNOTATIONS && round_resolved());
    }

    AnnotationOutcome handle_update_annotations(const std::vector<data::AnnotationRecord>& records) {
        AnnotationOutcome out;
        out.statuses = ws_.update_annotations(records);
        for (const auto& s : out.statuses) out.accepted += s.accepted;
        out.round_resolved = phase() == Phase::AWAITING_ANNOTATIONS && round_resolved();
        return out;
    }

    /// Runs one iteration: the seed round when nothing is annotated yet, otherwise
    /// train, check the stop rules, query and dispatch.
    RoundReport trigger_al_iteration() {
        const Phase p = phase();
        if (p == Phase::DONE) throw ConflictError("the cycle has finished");
        if (p == Phase::TRAINING || p == Phase::QUERYING) throw ConflictError("an iteration is already running");
        if (p == Phase::AWAITING_ANNOTATIONS && !round_resolved())
            throw ConflictError("round " + std::to_string(round_) + " still has samples awaiting annotation");

        const auto& al = cfg_.active_learning;
        if (p == Phase::IDLE && annotated_train().empty()) return seed_round();

        RoundReport rep;
        set_phase(Phase::TRAINING, round_ + 1);
        rep.round = round_;
        auto model = train_model(round_, true);
        MetricsRow row = last_row();
        rep.metrics = row;
        model_ = std::move(model);

        if (auto reason = check_stop(row)) return finish(rep, *reason);
        const auto pool = ws_.queryable_pool();
        if (pool.empty()) return finish(rep, StopReason::pool_empty);

        set_phase(Phase::QUERYING, round_);
        strat::QueryContext ctx;
        ctx.model = &*model_;
        ctx.pool = pool;
        ctx.labeled = annotated_train();
        ctx.image = [this](const std::string& id) { return model_input(id); };
        ctx.settings = al;
        ctx.n = al.query_size;
        ctx.round = round_;
        ctx.rng_seed = al.rng_seed;
        ctx.threads = opt_.threads;
        auto out = registry_.run(al.strategy, ctx);
        pseudo_ = std::move(out.pseudo);
        rep.query = out.result;
        rep.extra_random = pick_extra(pool, out.result.ids());
        rep.dispatch = dispatch_new_samples(out.result, rep.extra_random);
        set_phase(Phase::AWAITING_ANNOTATIONS, round_);
        rep.phase = Phase::AWAITING_ANNOTATIONS;
        return rep;
    }

    /// Moves the batch to in-flight (skipping ids this round already dispatched), stages
    /// it for GET /queries/latest and, with a pusher, POSTs it with retries.
    DispatchStatus dispatch_new_samples(const strat::QueryResult& result, const std::vector<std::string>& extra = {}) {
        std::vector<std::string> ids = result.ids();
        ids.insert(ids.end(), extra.begin(), extra.end());
        std::vector<std::string> fresh;
        {
            std::lock_guard lock(mu_);
            auto& sent = dispatched_[result.round];
            for (const auto& id : ids)
                if (!sent.count(id)) fresh.push_back(id);
        }
        if (!fresh.empty()) ws_.remove_from_unannotated_set(fresh);
        Json payload = query_payload(result, extra);
        Pusher pusher;
        {
            std::lock_guard lock(mu_);
            auto& sent = dispatched_[result.round];
            sent.insert(fresh.begin(), fresh.end());
            if (result.round != round_ids_round_) {
                round_ids_.clear();
                round_ids_round_ = result.round;
            }
            round_ids_.insert(ids.begin(), ids.end());
            latest_ = payload;
            pusher = pusher_;
        }
        DispatchStatus st{"pull", 0, false, static_cast<int>(fresh.size())};
        if (!pusher) return st;
        st.mode = "push";
        auto delay = opt_.retry.base_delay;
        for (int attempt = 1; attempt <= opt_.retry.attempts; ++attempt) {
            st.attempts = attempt;
            bool ok = false;
            try {
                ok = pusher(payload);
            } catch (const std::exception& e) {
                log().warn("dispatch attempt {} failed: {}", attempt, e.what());
            }
            if (ok) {
                st.delivered = true;
                return st;
            }
            if (attempt < opt_.retry.attempts) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
        }
        log().warn("annotation tool unreachable after {} attempts; round {} staged for pull", st.attempts, result.round);
        st.mode = "pull";
        return st;
    }

    /// Re-sends the staged batch of the current round. Pool state does not change.
    std::optional<DispatchStatus> redispatch() {
        std::optional<strat::QueryResult> q;
        std::vector<std::string> extra;
        {
            std::lock_guard lock(mu_);
            if (!latest_) return std::nullopt;
            q = strat::query_from_json((*latest_)["query"]);
            for (const auto& s : (*latest_)["samples"])
                if (s.value("random", false)) extra.push_back(s["sample_id"]);
        }
        return dispatch_new_samples(*q, extra);
    }

    void stop() {
        std::lock_guard lock(mu_);
        if (phase_ == Phase::DONE) return;
        change_phase_locked(Phase::DONE, round_);
        stop_ = StopReason::manual;
    }

    std::optional<StopReason> stop_reason() const {
        std::lock_guard lock(mu_);
        return stop_;
    }

    int round() const {
        std::lock_guard lock(mu_);
        return round_;
    }

    /// Trains a fresh model on the current annotated train set (plus pending pseudo-labels
    /// when `use_pseudo`), logs a metrics row and notifies on_trained. The training seed
    /// derives from the AL seed and the round unless `seed` is given.
    seg::TrainedModel train_model(int round, bool use_pseudo = false, std::optional<std::uint64_t> seed = std::nullopt) {
        auto train = annotated_train_items();
        const int annotated = static_cast<int>(train.size());
        int pseudo_count = 0;
        if (use_pseudo) {
            for (auto& [id, mask] : pseudo_) {
                auto img = ws_.load_image(id);
                SegMask m = mask;
                if (m.height != img.height || m.width != img.width) m = data::detail::resize(m, img.height, img.width);
                train.push_back({id, std::move(img), std::move(m)});
                ++pseudo_count;
            }
            pseudo_.clear();
        }
        if (cfg_.data.train && cfg_.data.train->data_limit &&
            train.size() > static_cast<std::size_t>(*cfg_.data.train->data_limit))
            train.resize(static_cast<std::size_t>(*cfg_.data.train->data_limit));
        const auto val = ws_.labeled(data::Split::validation);
        if (!seed) seed = strat::sample_seed(cfg_.active_learning.rng_seed, round, "train");
        auto model = seg::train(cfg_, train, val, *seed);

        MetricsRow row;
        row.round = round;
        row.annotated = annotated;
        row.pseudo_labeled = pseudo_count;
        const auto train_split = ws_.split_ids(data::Split::train).size();
        row.budget_fraction = train_split ? static_cast<double>(annotated) / static_cast<double>(train_split) : 0.0;
        row.best_epoch = model.best_epoch;
        row.train_loss = model.log.at(static_cast<std::size_t>(model.best_epoch)).train_loss;
        if (!val.empty()) {
            row.val_dice_per_class = seg::evaluate_dice(model, seg::prepare_eval(eval_chain_, val));
            row.val_mean_dice = seg::mean_of(row.val_dice_per_class);
        }
        {
            std::lock_guard lock(mu_);
            metrics_.push_back(row);
        }
        if (opt_.on_trained) opt_.on_trained(row, model);
        return model;
    }

    /// The image a model sees for a sample (eval transforms applied).
    Image model_input(const std::string& id) const {
        auto img = ws_.load_image(id);
        eval_chain_.apply_eval(img);
        return img;
    }

    const std::optional<seg::TrainedModel>& model() const { return model_; }

private:
    std::vector<std::string> annotated_train() const {
        const auto annotated = ws_.pool_state().annotated;
        std::vector<std::string> out;
        for (const auto& id : ws_.split_ids(data::Split::train))
            if (annotated.count(id)) out.push_back(id);
        return out;
    }

    std::vector<LabeledImage> annotated_train_items() const { return ws_.labeled(data::Split::train); }

    MetricsRow last_row() const {
        std::lock_guard lock(mu_);
        return metrics_.back();
    }

    RoundReport seed_round() {
        const auto& al = cfg_.active_learning;
        RoundReport rep;
        set_phase(Phase::TRAINING, 0);  // nothing to train on yet
        auto pool = ws_.queryable_pool();
        if (pool.empty()) return finish(rep, StopReason::pool_empty);
        set_phase(Phase::QUERYING, 0);
        std::mt19937_64 rng(strat::sample_seed(al.rng_seed, 0, "seed"));
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(al.seed_size)));
        std::sort(pool.begin(), pool.end());
        strat::QueryResult q{strat::scores_from_order(pool), "SEED", 0, al.rng_seed};
        rep.query = q;
        rep.dispatch = dispatch_new_samples(q);
        set_phase(Phase::AWAITING_ANNOTATIONS, 0);
        rep.phase = Phase::AWAITING_ANNOTATIONS;
        return rep;
    }

    std::optional<StopReason> check_stop(const MetricsRow& row) const {
        const auto& al = cfg_.active_learning;
        if (al.target_value) {
            const std::string metric = al.target_metric.value_or("mean_dice");
            if (!row.val_mean_dice) {
                log().warn("target stop rule set but there is no validation data to evaluate it");
            } else if (metric == "dice_per_class") {
                if (std::all_of(row.val_dice_per_class.begin(), row.val_dice_per_class.end(),
                                [&](double d) { return d >= *al.target_value; }))
                    return StopReason::target_reached;
            } else if (*row.val_mean_dice >= *al.target_value) {
                return StopReason::target_reached;
            }
        }
        if (row.round >= al.rounds) return StopReason::budget;
        return std::nullopt;
    }

    std::vector<std::string> pick_extra(const std::vector<std::string>& pool, const std::vector<std::string>& chosen) const {
        const int k = cfg_.active_learning.extra_random;
        if (k <= 0) return {};
        std::set<std::string> taken(chosen.begin(), chosen.end());
        std::vector<std::string> rest;
        for (const auto& id : pool)
            if (!taken.count(id)) rest.push_back(id);
        std::mt19937_64 rng(strat::sample_seed(cfg_.active_learning.rng_seed, round_, "extra"));
        std::shuffle(rest.begin(), rest.end(), rng);
        rest.resize(std::min<std::size_t>(rest.size(), static_cast<std::size_t>(k)));
        std::sort(rest.begin(), rest.end());
        return rest;
    }

    Json query_payload(const strat::QueryResult& q, const std::vector<std::string>& extra) const {
        Json samples = Json::array();
        auto describe = [this](const std::string& id, std::optional<double> score) {
            const auto s = ws_.sample(id);
            Json j = {{"sample_id", id},
                      {"volume_id", s.volume_id},
                      {"slice_index", s.slice_index},
                      {"height", s.height},
                      {"width", s.width},
                      {"image_path", s.image_path.string()},
                      {"random", !score.has_value()}};
            if (score) j["score"] = *score;
            return j;
        };
        for (const auto& r : q.ranked) samples.push_back(describe(r.sample_id, r.score));
        for (const auto& id : extra) samples.push_back(describe(id, std::nullopt));
        return {{"round", q.round},
                {"strategy", q.strategy},
                {"idempotency_key", "round-" + std::to_string(q.round)},
                {"samples", samples},
                {"query", strat::to_json(q)}};
    }

    RoundReport finish(RoundReport rep, StopReason reason) {
        std::lock_guard lock(mu_);
        change_phase_locked(Phase::DONE, round_);
        stop_ = reason;
        rep.phase = Phase::DONE;
        rep.stop_reason = reason;
        return rep;
    }

    void set_phase(Phase to, int round) {
        std::lock_guard lock(mu_);
        change_phase_locked(to, round);
    }

    void change_phase_locked(Phase to, int round) {
        if (!transition_allowed(phase_, to))
            throw std::logic_error(std::string("illegal phase change ") + to_string(phase_) + " -> " + to_string(to));
        log_.push_back({phase_, to, round});
        phase_ = to;
        round_ = round;
    }

    data::Workspace& ws_;
    config::RunConfig cfg_;
    strat::StrategyRegistry registry_;
    CycleOptions opt_;
    data::TransformChain eval_chain_;

    mutable std::mutex mu_;
    Phase phase_ = Phase::IDLE;
    int round_ = 0;
    std::optional<StopReason> stop_;
    std::vector<PhaseChange> log_;
    std::vector<MetricsRow> metrics_;
    std::optional<Json> latest_;
    std::set<std::string> round_ids_;
    int round_ids_round_ = -1;
    std::map<int, std::set<std::string>> dispatched_;
    Pusher pusher_;

    std::optional<seg::TrainedModel> model_;
    std::map<std::string, SegMask> pseudo_;
};

}  // namespace aloop::ctl
