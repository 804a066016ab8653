#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>

#include "aloop/controller/service.hpp"
#include "aloop/simlab/oracle.hpp"
#include "aloop/simlab/synthetic.hpp"
#include "test_util.hpp"

using namespace aloop;
using namespace aloop::ctl;
using Json = nlohmann::json;

namespace {

std::string read_fixture(const std::string& name) {
    std::ifstream in(std::string(ALOOP_FIXTURES) + "/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

config::RunConfig tiny_config() {
    auto cfg = config::parse_run_config(read_fixture("simlab.yaml"));
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

struct World {
    testutil::TempDir dir{"aloop-ctl"};
    data::Workspace ws;
    config::RunConfig cfg = tiny_config();

    explicit World(int volumes = 3, int slices = 4) : ws(dir / "ws") {
        sim::SyntheticSpec spec;
        spec.volumes = volumes;
        spec.slices_per_volume = slices;
        spec.height = 32;
        spec.width = 32;
        spec.amplitude = 2;
        spec.rng_seed = 3;
        sim::generate_synthetic(spec, ws.root());
        ws.initialize_with_files();
    }

    std::vector<data::AnnotationRecord> oracle_for_in_flight() const {
        sim::Oracle oracle(ws.root());
        std::vector<data::AnnotationRecord> out;
        for (const auto& id : ws.pool_state().in_flight) out.push_back(oracle.annotate(id));
        return out;
    }
};

CycleOptions fast_retry() {
    CycleOptions o;
    o.retry.base_delay = std::chrono::milliseconds(1);
    return o;
}

void expect_consistent_log(const std::vector<PhaseChange>& log) {
    Phase at = Phase::IDLE;
    for (const auto& c : log) {
        EXPECT_EQ(c.from, at);
        EXPECT_TRUE(transition_allowed(c.from, c.to)) << to_string(c.from) << " -> " << to_string(c.to);
        at = c.to;
    }
}

}  // namespace

TEST(Phases, TransitionTable) {
    EXPECT_TRUE(transition_allowed(Phase::IDLE, Phase::TRAINING));
    EXPECT_TRUE(transition_allowed(Phase::AWAITING_ANNOTATIONS, Phase::TRAINING));
    EXPECT_TRUE(transition_allowed(Phase::QUERYING, Phase::DONE));
    EXPECT_FALSE(transition_allowed(Phase::IDLE, Phase::QUERYING));
    EXPECT_FALSE(transition_allowed(Phase::TRAINING, Phase::AWAITING_ANNOTATIONS));
    EXPECT_FALSE(transition_allowed(Phase::DONE, Phase::TRAINING));
    EXPECT_FALSE(transition_allowed(Phase::DONE, Phase::DONE));
    for (auto p : {Phase::IDLE, Phase::TRAINING, Phase::QUERYING, Phase::AWAITING_ANNOTATIONS, Phase::DONE})
        EXPECT_EQ(parse_phase(to_string(p)), p);
    EXPECT_THROW(parse_phase("WAITING"), UsageError);
}

TEST(Cycle, SeedRoundDispatchesWithoutTraining) {
    World w;
    Cycle c(w.ws, w.cfg);
    auto rep = c.trigger_al_iteration();
    EXPECT_EQ(rep.round, 0);
    EXPECT_EQ(rep.phase, Phase::AWAITING_ANNOTATIONS);
    EXPECT_FALSE(rep.metrics);
    EXPECT_TRUE(c.metrics().empty());
    EXPECT_EQ(w.ws.pool_state().in_flight.size(), 2u);
    ASSERT_TRUE(rep.dispatch);
    EXPECT_EQ(rep.dispatch->mode, "pull");
    EXPECT_EQ(rep.dispatch->newly_in_flight, 2);

    const auto q = c.latest_query();
    ASSERT_TRUE(q);
    EXPECT_EQ((*q)["idempotency_key"], "round-0");
    EXPECT_EQ((*q)["samples"].size(), 2u);
    for (const auto& s : (*q)["samples"]) {
        EXPECT_TRUE(w.ws.pool_state().in_flight.count(s["sample_id"]));
        EXPECT_EQ(s["height"], 32);
        EXPECT_TRUE(std::filesystem::exists(s["image_path"].get<std::string>()));
    }
    const auto log = c.phase_log();
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log.back().to, Phase::AWAITING_ANNOTATIONS);
    expect_consistent_log(log);
}

TEST(Cycle, RefusesToAdvanceUntilTheRoundIsResolved) {
    World w;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    EXPECT_FALSE(c.can_trigger());
    EXPECT_THROW(c.trigger_al_iteration(), ConflictError);

    auto recs = w.oracle_for_in_flight();
    auto partial = c.handle_update_annotations({recs[0]});
    EXPECT_EQ(partial.accepted, 1);
    EXPECT_FALSE(partial.round_resolved);
    EXPECT_THROW(c.trigger_al_iteration(), ConflictError);

    auto rest = c.handle_update_annotations({recs[1]});
    EXPECT_TRUE(rest.round_resolved);
    EXPECT_TRUE(c.can_trigger());
}

TEST(Cycle, RejectedRecordsStayInFlight) {
    World w;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    auto recs = w.oracle_for_in_flight();
    auto bad = recs[0];
    std::get<data::BoundaryLine>(bad.items[0]).points = {{0, 1}, {500, 1}};
    auto out = c.handle_update_annotations({bad, recs[1]});
    EXPECT_EQ(out.accepted, 1);
    EXPECT_FALSE(out.statuses[0].accepted);
    EXPECT_FALSE(out.round_resolved);
    EXPECT_TRUE(w.ws.pool_state().in_flight.count(recs[0].sample_id));
}

TEST(Cycle, BudgetStopAfterConfiguredRounds) {
    World w;
    Cycle c(w.ws, w.cfg);
    std::vector<int> annotated_at;
    for (int guard = 0; guard < 10 && c.phase() != Phase::DONE; ++guard) {
        auto rep = c.trigger_al_iteration();
        if (rep.metrics) annotated_at.push_back(rep.metrics->annotated);
        if (rep.phase == Phase::AWAITING_ANNOTATIONS) c.handle_update_annotations(w.oracle_for_in_flight());
    }
    EXPECT_EQ(c.phase(), Phase::DONE);
    EXPECT_EQ(c.stop_reason(), StopReason::budget);
    EXPECT_EQ(c.round(), 2);
    // round r trains on the seed plus (r-1) query batches
    EXPECT_EQ(annotated_at, (std::vector<int>{2, 4}));
    ASSERT_EQ(c.metrics().size(), 2u);
    EXPECT_DOUBLE_EQ(c.metrics()[1].budget_fraction, 4.0 / 12.0);
    EXPECT_FALSE(c.metrics()[0].val_mean_dice);
    EXPECT_THROW(c.trigger_al_iteration(), ConflictError);
    expect_consistent_log(c.phase_log());
    EXPECT_EQ(c.status()["stop_reason"], "budget");
}

TEST(Cycle, PoolEmptyStop) {
    World w(1, 6);
    w.cfg.active_learning.seed_size = 3;
    w.cfg.active_learning.query_size = 3;
    w.cfg.active_learning.rounds = 10;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    c.handle_update_annotations(w.oracle_for_in_flight());
    auto r1 = c.trigger_al_iteration();
    ASSERT_TRUE(r1.query);
    EXPECT_EQ(r1.query->ranked.size(), 3u);
    c.handle_update_annotations(w.oracle_for_in_flight());
    auto r2 = c.trigger_al_iteration();
    EXPECT_EQ(r2.phase, Phase::DONE);
    EXPECT_EQ(r2.stop_reason, StopReason::pool_empty);
    EXPECT_EQ(r2.metrics->annotated, 6);
}

TEST(Cycle, TargetStopNeedsValidationData) {
    World w;
    auto ids = w.ws.split_ids(data::Split::train);
    w.ws.write_splits({{data::Split::train, {ids.begin(), ids.begin() + 10}},
                       {data::Split::validation, {ids.begin() + 10, ids.end()}}});
    w.cfg.active_learning.rounds = 5;
    w.cfg.active_learning.target_metric = "mean_dice";
    w.cfg.active_learning.target_value = 0.0;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    for (const auto& id : w.ws.pool_state().in_flight) EXPECT_LT(id, ids[10]) << "validation ids are not queryable";
    c.handle_update_annotations(w.oracle_for_in_flight());
    auto rep = c.trigger_al_iteration();
    EXPECT_EQ(rep.stop_reason, StopReason::target_reached);
    ASSERT_TRUE(rep.metrics->val_mean_dice);
    EXPECT_EQ(rep.metrics->val_dice_per_class.size(), 4u);
    EXPECT_DOUBLE_EQ(rep.metrics->budget_fraction, 2.0 / 10.0);
}

TEST(Cycle, TargetIgnoredWithoutValidationSplit) {
    World w;
    w.cfg.active_learning.target_value = 0.0;
    w.cfg.active_learning.rounds = 1;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    c.handle_update_annotations(w.oracle_for_in_flight());
    EXPECT_EQ(c.trigger_al_iteration().stop_reason, StopReason::budget);
}

TEST(Cycle, PerClassTargetUsesTheWorstClass) {
    World w;
    auto ids = w.ws.split_ids(data::Split::train);
    w.ws.write_splits({{data::Split::train, {ids.begin(), ids.begin() + 10}},
                       {data::Split::validation, {ids.begin() + 10, ids.end()}}});
    w.cfg.active_learning.rounds = 1;
    w.cfg.active_learning.target_metric = "dice_per_class";
    Cycle probe(w.ws, w.cfg);
    probe.trigger_al_iteration();
    probe.handle_update_annotations(w.oracle_for_in_flight());
    auto row = *probe.trigger_al_iteration().metrics;
    const double worst = *std::min_element(row.val_dice_per_class.begin(), row.val_dice_per_class.end());
    const double best = *std::max_element(row.val_dice_per_class.begin(), row.val_dice_per_class.end());
    ASSERT_LT(worst, best);

    // Same annotated set and seed, so the retrained model scores identically.
    auto reach = [&](double target) {
        auto cfg = w.cfg;
        cfg.active_learning.target_value = target;
        cfg.active_learning.rounds = 5;
        Cycle c(w.ws, cfg);
        return c.trigger_al_iteration().stop_reason;
    };
    EXPECT_EQ(reach(worst), StopReason::target_reached);
    EXPECT_NE(reach((worst + best) / 2), StopReason::target_reached);
}

TEST(Cycle, ManualStop) {
    World w;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    c.stop();
    EXPECT_EQ(c.phase(), Phase::DONE);
    EXPECT_EQ(c.stop_reason(), StopReason::manual);
    c.stop();
    EXPECT_THROW(c.trigger_al_iteration(), ConflictError);
    expect_consistent_log(c.phase_log());
}

TEST(Cycle, RedispatchIsIdempotent) {
    World w;
    Cycle c(w.ws, w.cfg, strat::StrategyRegistry::with_builtins(), fast_retry());
    std::vector<Json> received;
    c.set_pusher([&](const Json& p) {
        received.push_back(p);
        return true;
    });
    c.trigger_al_iteration();
    const auto pool = w.ws.pool_state();
    auto st = c.redispatch();
    ASSERT_TRUE(st);
    EXPECT_EQ(st->newly_in_flight, 0);
    EXPECT_TRUE(st->delivered);
    EXPECT_EQ(w.ws.pool_state(), pool);
    ASSERT_EQ(received.size(), 2u);
    EXPECT_EQ(received[0], received[1]);
    EXPECT_EQ(received[0]["idempotency_key"], "round-0");
}

TEST(Cycle, RedispatchBeforeAnyQuery) {
    World w;
    Cycle c(w.ws, w.cfg);
    EXPECT_FALSE(c.redispatch());
}

TEST(Cycle, PushRetriesWithBackoffThenSucceeds) {
    World w;
    CycleOptions opt;
    opt.retry.base_delay = std::chrono::milliseconds(20);
    Cycle c(w.ws, w.cfg, strat::StrategyRegistry::with_builtins(), opt);
    std::vector<std::chrono::steady_clock::time_point> calls;
    c.set_pusher([&](const Json&) {
        calls.push_back(std::chrono::steady_clock::now());
        if (calls.size() == 1) throw std::runtime_error("connection refused");
        return calls.size() == 3;
    });
    auto rep = c.trigger_al_iteration();
    ASSERT_EQ(calls.size(), 3u);
    EXPECT_EQ(rep.dispatch->mode, "push");
    EXPECT_EQ(rep.dispatch->attempts, 3);
    EXPECT_TRUE(rep.dispatch->delivered);
    using ms = std::chrono::milliseconds;
    EXPECT_GE(std::chrono::duration_cast<ms>(calls[1] - calls[0]).count(), 20);
    EXPECT_GE(std::chrono::duration_cast<ms>(calls[2] - calls[1]).count(), 40);
}

TEST(Cycle, PushFallsBackToPull) {
    World w;
    Cycle c(w.ws, w.cfg, strat::StrategyRegistry::with_builtins(), fast_retry());
    int calls = 0;
    c.set_pusher([&](const Json&) { return ++calls < 0; });
    auto rep = c.trigger_al_iteration();
    EXPECT_EQ(calls, 3);
    EXPECT_EQ(rep.dispatch->mode, "pull");
    EXPECT_FALSE(rep.dispatch->delivered);
    EXPECT_EQ(rep.phase, Phase::AWAITING_ANNOTATIONS);
    ASSERT_TRUE(c.latest_query());
    EXPECT_EQ(w.ws.pool_state().in_flight.size(), 2u);
}

TEST(Cycle, RestartReleasesStaleInFlight) {
    World w;
    {
        Cycle c(w.ws, w.cfg);
        c.trigger_al_iteration();
    }
    EXPECT_EQ(w.ws.pool_state().in_flight.size(), 2u);
    data::Workspace reopened(w.ws.root());
    reopened.initialize_with_files();
    EXPECT_EQ(reopened.pool_state().in_flight.size(), 2u);
    Cycle again(reopened, w.cfg);
    EXPECT_TRUE(reopened.pool_state().in_flight.empty());
    EXPECT_EQ(reopened.pool_state().unannotated.size(), 12u);
}

TEST(Cycle, ExtraRandomSamplesAreFlagged) {
    World w;
    w.cfg.active_learning.extra_random = 2;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    c.handle_update_annotations(w.oracle_for_in_flight());
    auto rep = c.trigger_al_iteration();
    ASSERT_EQ(rep.extra_random.size(), 2u);
    EXPECT_EQ(w.ws.pool_state().in_flight.size(), 4u);
    const auto q = *c.latest_query();
    int flagged = 0;
    for (const auto& s : q["samples"]) {
        if (s["random"]) {
            ++flagged;
            EXPECT_FALSE(s.contains("score"));
        }
    }
    EXPECT_EQ(flagged, 2);
    for (const auto& id : rep.extra_random)
        for (const auto& r : rep.query->ranked) EXPECT_NE(id, r.sample_id);
}

TEST(Cycle, RunsAreReproducible) {
    auto run = [] {
        World w;
        w.cfg.active_learning.strategy = "MCDR";
        Cycle c(w.ws, w.cfg);
        std::vector<std::vector<std::string>> queries;
        while (c.phase() != Phase::DONE) {
            auto rep = c.trigger_al_iteration();
            if (rep.query) queries.push_back(rep.query->ids());
            if (rep.phase == Phase::AWAITING_ANNOTATIONS) c.handle_update_annotations(w.oracle_for_in_flight());
        }
        std::vector<double> losses;
        for (const auto& m : c.metrics()) losses.push_back(m.train_loss);
        return std::make_pair(queries, losses);
    };
    EXPECT_EQ(run(), run());
}

TEST(Cycle, CealPseudoLabelsLastOneRound) {
    World w;
    w.cfg.active_learning.strategy = "CEAL";
    w.cfg.active_learning.ceal_delta = 10.0;  // every remaining sample qualifies
    w.cfg.active_learning.rounds = 3;
    Cycle c(w.ws, w.cfg);
    c.trigger_al_iteration();
    c.handle_update_annotations(w.oracle_for_in_flight());
    c.trigger_al_iteration();
    c.handle_update_annotations(w.oracle_for_in_flight());
    auto r2 = c.trigger_al_iteration();
    // 12 samples: 2 seed + 2 queried in round 1 leaves 8, all confident
    EXPECT_EQ(r2.metrics->pseudo_labeled, 8);
    EXPECT_EQ(r2.metrics->annotated, 4);
    EXPECT_EQ(c.metrics()[0].pseudo_labeled, 0);
}

TEST(Cycle, UnknownStrategyIsRejected) {
    World w;
    w.cfg.active_learning.strategy = "NOPE";
    EXPECT_THROW(Cycle(w.ws, w.cfg), UsageError);
}

// ---- HTTP -------------------------------------------------------------------------------

namespace {

struct Served {
    World w;
    std::unique_ptr<Service> svc;
    std::unique_ptr<httplib::Client> http;

    explicit Served(bool with_protocol = true, bool auto_advance = true) {
        w.cfg.active_learning.auto_advance = auto_advance;
        ServiceOptions opt;
        opt.cycle = fast_retry();
        if (with_protocol) opt.protocol = protocol::parse_protocol(read_fixture("oct_protocol.yaml"));
        svc = std::make_unique<Service>(w.ws, w.cfg, opt);
        const int port = svc->start();
        http = std::make_unique<httplib::Client>("127.0.0.1", port);
    }

    Json post(const std::string& path, const Json& body, int expect) {
        auto r = http->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(r);
        if (!r) return nullptr;
        EXPECT_EQ(r->status, expect) << path << ": " << r->body;
        return r->body.empty() ? Json() : Json::parse(r->body, nullptr, false);
    }
    Json get(const std::string& path, int expect) {
        auto r = http->Get(path);
        EXPECT_TRUE(r);
        if (!r) return nullptr;
        EXPECT_EQ(r->status, expect) << path << ": " << r->body;
        return Json::parse(r->body, nullptr, false);
    }
};

}  // namespace

TEST(Service, FullRoundOverHttp) {
    Served s;
    s.get("/queries/latest", 404);
    EXPECT_EQ(s.get("/status", 200)["phase"], "IDLE");
    s.post("/iteration", {}, 202);
    s.svc->drain();
    const auto q = s.get("/queries/latest", 200);
    EXPECT_EQ(q["round"], 0);
    EXPECT_EQ(q["samples"].size(), 2u);
    s.post("/iteration", {}, 409);

    s.post("/annotations", Json{{"records", "nope"}}, 400);
    s.post("/annotations", Json{{"records", {{{"sample_id", "x"}}}}}, 400);
    Json records = Json::array();
    for (const auto& r : s.w.oracle_for_in_flight()) records.push_back(data::to_json(r));
    auto out = s.post("/annotations", Json{{"records", records}}, 200);
    EXPECT_EQ(out["accepted"], 2);
    EXPECT_TRUE(out["round_resolved"]);
    s.svc->drain();  // auto-advance trains round 1 and queries

    const auto q1 = s.get("/queries/latest", 200);
    EXPECT_EQ(q1["round"], 1);
    EXPECT_EQ(q1["idempotency_key"], "round-1");
    const auto metrics = s.get("/metrics", 200);
    ASSERT_EQ(metrics.size(), 1u);
    EXPECT_EQ(metrics[0]["annotated"], 2);
    const auto st = s.get("/status", 200);
    EXPECT_EQ(st["phase"], "AWAITING_ANNOTATIONS");
    EXPECT_EQ(st["pool"]["annotated"], 2);
    EXPECT_EQ(st["pool"]["in_flight"], 2);
    EXPECT_TRUE(st["last_error"].is_null());
    EXPECT_EQ(st["active_query"], q1);

    // a bare array is accepted too
    Json arr = Json::array();
    for (const auto& r : s.w.oracle_for_in_flight()) arr.push_back(data::to_json(r));
    s.post("/annotations", arr, 200);
    s.svc->drain();
    EXPECT_EQ(s.get("/status", 200)["stop_reason"], "budget");
    s.post("/iteration", {}, 409);
}

TEST(Service, ManualAdvanceAndStop) {
    Served s(false, false);
    s.post("/iteration", {}, 202);
    s.svc->drain();
    Json recs = Json::array();
    for (const auto& r : s.w.oracle_for_in_flight()) recs.push_back(data::to_json(r));
    s.post("/annotations", recs, 200);
    s.svc->drain();
    EXPECT_EQ(s.get("/status", 200)["round"], 0) << "no auto-advance";
    auto st = s.post("/stop", {}, 200);
    EXPECT_EQ(st["phase"], "DONE");
    EXPECT_EQ(st["stop_reason"], "manual");
    s.post("/iteration", {}, 409);
    s.post("/sessions", {}, 404);
}

TEST(Service, CallbackReceivesPushes) {
    httplib::Server tool;
    std::mutex mu;
    std::vector<Json> got;
    tool.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        got.push_back(Json::parse(req.body));
        EXPECT_EQ(req.get_header_value("Idempotency-Key"), got.back()["idempotency_key"]);
        res.status = 204;
    });
    const int port = tool.bind_to_any_port("127.0.0.1");
    std::thread t([&] { tool.listen_after_bind(); });
    tool.wait_until_ready();

    Served s;
    s.post("/callback", {{"url", "ftp://nowhere"}}, 400);
    s.post("/callback", Json::object(), 400);
    s.post("/callback", {{"url", "http://127.0.0.1:" + std::to_string(port) + "/hook"}}, 200);
    s.post("/dispatch", {}, 404);
    s.post("/iteration", {}, 202);
    s.svc->drain();
    auto d = s.post("/dispatch", {}, 200);
    EXPECT_EQ(d["mode"], "push");
    EXPECT_EQ(d["newly_in_flight"], 0);
    tool.stop();
    t.join();
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0], got[1]);
    EXPECT_EQ(got[0]["round"], 0);
}

TEST(Service, UnreachableCallbackFallsBackToPull) {
    int dead = 0;
    {
        httplib::Server probe;
        dead = probe.bind_to_any_port("127.0.0.1");
        std::thread t([&] { probe.listen_after_bind(); });
        probe.wait_until_ready();
        probe.stop();
        t.join();
    }
    Served s;
    s.post("/callback", {{"url", "http://127.0.0.1:" + std::to_string(dead) + "/hook"}}, 200);
    s.post("/iteration", {}, 202);
    s.svc->drain();
    EXPECT_EQ(s.get("/queries/latest", 200)["samples"].size(), 2u);
    EXPECT_EQ(s.get("/status", 200)["phase"], "AWAITING_ANNOTATIONS");
}

TEST(Service, AnnotationSessionsFeedTheWorkspace) {
    Served s(true, false);
    s.post("/sessions", {}, 409);  // nothing dispatched yet
    s.post("/iteration", {}, 202);
    s.svc->drain();
    const auto q = s.get("/queries/latest", 200);
    const std::string first = q["samples"][0]["sample_id"];
    const std::string second = q["samples"][1]["sample_id"];

    auto a = s.post("/sessions", {{"annotator_id", "dr"}}, 201);
    auto b = s.post("/sessions", {{"annotator_id", "dr"}}, 201);
    EXPECT_EQ(a["sample_id"], first);
    EXPECT_EQ(b["sample_id"], second);
    s.post("/sessions", {}, 409);
    s.post("/sessions", {{"sample_id", "ghost"}}, 404);
    s.get("/sessions/sess-999999", 404);

    const std::string id = a["session_id"];
    s.post("/sessions/" + id + "/answer", {{"answer", "next"}}, 200);
    s.post("/sessions/" + id + "/answer", {{"answer", "bogus"}}, 400);
    s.post("/sessions/" + id + "/answer", {{"answer", {{"points", {{0, 8}, {31, 9}}}}}}, 200);
    s.post("/sessions/" + id + "/jump", {{"state", "nowhere"}}, 400);
    s.post("/sessions/" + id + "/answer", {{"answer", "lamellar"}}, 200);
    EXPECT_EQ(s.get("/sessions/" + id, 200)["current"], "summary");
    auto done = s.post("/sessions/" + id + "/answer", {{"answer", "confirm"}}, 200);
    EXPECT_TRUE(done["completed"]);

    EXPECT_TRUE(s.w.ws.pool_state().annotated.count(first));
    const auto rec = s.w.ws.load_annotation(first);
    ASSERT_TRUE(rec);
    EXPECT_EQ(rec->annotator_id, "dr");
    EXPECT_EQ(rec->lines().size(), 1u);
    const auto mask = s.w.ws.load_mask(first);
    ASSERT_TRUE(mask);
    EXPECT_GT(mask->ignore_count(), 0u) << "one boundary leaves the deeper classes unknown";

    auto img = s.http->Get("/samples/" + first + "/image");
    ASSERT_TRUE(img);
    EXPECT_EQ(img->status, 200);
    EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(img->body.substr(1, 3), "PNG");
    s.get("/samples/ghost/image", 404);
}
