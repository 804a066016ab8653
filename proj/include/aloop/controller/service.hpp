#pragma once

#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/log.hpp"
#include "aloop/controller/cycle.hpp"
#include "aloop/protocol/session.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that collides with
// Eigen parameter names.
#include <httplib.h>

namespace aloop::ctl {

/// Runs submitted jobs one at a time, in order, on a dedicated thread.
class SerialWorker {
public:
    SerialWorker() : thread_([this] { loop(); }) {}
    ~SerialWorker() {
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        thread_.join();
    }
    SerialWorker(const SerialWorker&) = delete;
    SerialWorker& operator=(const SerialWorker&) = delete;

    template <class F>
    auto submit(F f) -> std::future<decltype(f())> {
        auto task = std::make_shared<std::packaged_task<decltype(f())()>>(std::move(f));
        auto fut = task->get_future();
        {
            std::lock_guard lock(mu_);
            if (stopping_) throw ConflictError("worker is shutting down");
            jobs_.emplace_back([task] { (*task)(); });
        }
        cv_.notify_all();
        return fut;
    }

    /// Blocks until every job submitted so far has finished.
    void drain() { submit([] {}).wait(); }

private:
    void loop() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
                if (jobs_.empty()) return;
                job = std::move(jobs_.front());
                jobs_.pop_front();
            }
            job();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> jobs_;
    bool stopping_ = false;
    std::thread thread_;
};

/// POSTs payloads as JSON to an http:// URL. Returns true on a 2xx answer.
inline Pusher http_pusher(const std::string& url, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    static const std::regex re(R"(^(http://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw UsageError("callback url must look like http://host:port/path");
    const std::string base = m[1].str();
    const std::string path = m[2].matched ? m[2].str() : "/";
    return [base, path, timeout](const Json& payload) {
        httplib::Client cli(base);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        auto res = cli.Post(path, {{"Idempotency-Key", payload.value("idempotency_key", "")}}, payload.dump(),
                            "application/json");
        return res && res->status >= 200 && res->status < 300;
    };
}

struct ServiceOptions {
    CycleOptions cycle;
    /// Enables the /sessions routes.
    std::optional<protocol::Protocol> protocol;
    std::string host = "127.0.0.1";
};

/// HTTP front end of a Cycle. Handlers may run concurrently; everything that mutates the
/// cycle or the workspace goes through one SerialWorker, so at most one iteration runs.
class Service {
public:
    Service(data::Workspace& ws, config::RunConfig cfg, ServiceOptions opt = {},
            strat::StrategyRegistry registry = strat::StrategyRegistry::with_builtins())
        : ws_(ws), opt_(std::move(opt)), cycle_(ws, std::move(cfg), std::move(registry), opt_.cycle) {
        if (opt_.protocol)
            sessions_.emplace(
                *opt_.protocol, [this](const data::AnnotationRecord& r) { submit_annotations({r}); },
                [this](const std::set<std::string>& claimed) { return next_unclaimed(claimed); });
        routes();
    }

    ~Service() { stop(); }

    Cycle& cycle() { return cycle_; }

    /// Binds (port 0 picks a free one) and serves on a background thread.
    int start(int port = 0) {
        const int bound = port == 0 ? server_.bind_to_any_port(opt_.host) : (server_.bind_to_port(opt_.host, port) ? port : -1);
        if (bound < 0) throw IoError("cannot bind " + opt_.host + ":" + std::to_string(port));
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return bound;
    }

    /// Serves on the calling thread until stop().
    void run(int port) {
        if (!server_.listen(opt_.host, port)) throw IoError("cannot listen on " + opt_.host + ":" + std::to_string(port));
    }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (listener_.joinable()) listener_.join();
    }

    /// Queues one iteration unless one is pending or the cycle cannot advance.
    bool schedule_iteration() {
        std::lock_guard lock(mu_);
        if (pending_ || !cycle_.can_trigger()) return false;
        pending_ = true;
        worker_.submit([this] {
            try {
                cycle_.trigger_al_iteration();
                set_error(std::nullopt);
            } catch (const std::exception& e) {
                log().error("iteration failed: {}", e.what());
                set_error(std::string(e.what()));
            }
            std::lock_guard l(mu_);
            pending_ = false;
        });
        return true;
    }

    /// Waits until every queued job (including scheduled iterations) has run.
    void drain() {
        for (;;) {
            worker_.drain();
            std::lock_guard lock(mu_);
            if (!pending_) return;
        }
    }

    AnnotationOutcome submit_annotations(std::vector<data::AnnotationRecord> records) {
        auto outcome = worker_.submit([this, records = std::move(records)] { return cycle_.handle_update_annotations(records); }).get();
        if (outcome.round_resolved && cycle_.config().active_learning.auto_advance) schedule_iteration();
        return outcome;
    }

private:
    using Req = httplib::Request;
    using Res = httplib::Response;

    static void reply(Res& res, int status, const Json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    // Maps exceptions to status codes so every handler can just throw.
    template <class F>
    static httplib::Server::Handler guarded(F f) {
        return [f](const Req& req, Res& res) {
            try {
                f(req, res);
            } catch (const NotFoundError& e) {
                reply(res, 404, {{"error", e.what()}});
            } catch (const ConflictError& e) {
                reply(res, 409, {{"error", e.what()}});
            } catch (const UsageError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const ParseError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const Json::exception& e) {
                reply(res, 400, {{"error", std::string("malformed body: ") + e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        };
    }

    static Json body_json(const Req& req) {
        if (req.body.empty()) return Json::object();
        auto j = Json::parse(req.body);
        return j.is_null() ? Json::object() : j;
    }

    void routes() {
        server_.Post("/annotations", guarded([this](const Req& req, Res& res) {
            const auto body = body_json(req);
            const Json& list = body.is_array() ? body : body.at("records");
            if (!list.is_array()) throw ParseError("expected an array of annotation records");
            std::vector<data::AnnotationRecord> records;
            for (const auto& r : list) records.push_back(data::record_from_json(r));
            const auto out = submit_annotations(std::move(records));
            Json statuses = Json::array();
            for (const auto& s : out.statuses) {
                Json j = {{"sample_id", s.sample_id}, {"accepted", s.accepted}};
                if (s.accepted) j["mask_path"] = s.mask_path.string();
                else j["reason"] = s.reason;
                statuses.push_back(j);
            }
            reply(res, 200, {{"accepted", out.accepted}, {"statuses", statuses}, {"round_resolved", out.round_resolved}});
        }));

        server_.Post("/iteration", guarded([this](const Req&, Res& res) {
            if (!schedule_iteration()) throw ConflictError("cannot start an iteration in phase " + std::string(to_string(cycle_.phase())));
            reply(res, 202, {{"scheduled", true}});
        }));

        server_.Post("/stop", guarded([this](const Req&, Res& res) {
            worker_.submit([this] { cycle_.stop(); }).get();
            reply(res, 200, cycle_.status());
        }));

        server_.Post("/dispatch", guarded([this](const Req&, Res& res) {
            auto st = worker_.submit([this] { return cycle_.redispatch(); }).get();
            if (!st) throw NotFoundError("nothing has been dispatched yet");
            reply(res, 200, {{"mode", st->mode}, {"attempts", st->attempts}, {"delivered", st->delivered},
                             {"newly_in_flight", st->newly_in_flight}});
        }));

        server_.Get("/queries/latest", guarded([this](const Req&, Res& res) {
            auto q = cycle_.latest_query();
            if (!q) throw NotFoundError("no query staged yet");
            reply(res, 200, *q);
        }));

        server_.Get("/status", guarded([this](const Req&, Res& res) {
            auto s = cycle_.status();
            std::lock_guard lock(mu_);
            s["iteration_pending"] = pending_;
            s["last_error"] = last_error_ ? Json(*last_error_) : Json(nullptr);
            reply(res, 200, s);
        }));

        server_.Get("/metrics", guarded([this](const Req&, Res& res) {
            Json rows = Json::array();
            for (const auto& m : cycle_.metrics()) rows.push_back(to_json(m));
            reply(res, 200, rows);
        }));

        server_.Post("/callback", guarded([this](const Req& req, Res& res) {
            const std::string url = body_json(req).at("url").get<std::string>();
            cycle_.set_pusher(http_pusher(url));
            reply(res, 200, {{"url", url}});
        }));

        server_.Get(R"(/samples/([^/]+)/image)", guarded([this](const Req& req, Res& res) {
            const auto id = req.matches[1].str();
            if (!ws_.all_ids().count(id)) throw NotFoundError("unknown sample '" + id + "'");
            std::ifstream in(ws_.sample(id).image_path, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            res.set_content(ss.str(), "image/png");
        }));

        server_.Post("/sessions", guarded([this](const Req& req, Res& res) {
            const auto body = body_json(req);
            std::optional<std::string> sample;
            if (body.contains("sample_id")) sample = body["sample_id"].get<std::string>();
            if (sample && !ws_.all_ids().count(*sample)) throw NotFoundError("unknown sample '" + *sample + "'");
            reply(res, 201, store().create(sample, body.value("annotator_id", "anonymous")));
        }));
        server_.Get(R"(/sessions/([^/]+))", guarded([this](const Req& req, Res& res) {
            reply(res, 200, store().get(req.matches[1].str()));
        }));
        server_.Post(R"(/sessions/([^/]+)/answer)", guarded([this](const Req& req, Res& res) {
            const auto body = body_json(req);
            reply(res, 200, store().answer(req.matches[1].str(), body.contains("answer") ? body["answer"] : Json(nullptr)));
        }));
        server_.Post(R"(/sessions/([^/]+)/jump)", guarded([this](const Req& req, Res& res) {
            reply(res, 200, store().jump(req.matches[1].str(), body_json(req).at("state").get<std::string>()));
        }));
    }

    protocol::SessionStore& store() {
        if (!sessions_) throw NotFoundError("no annotation protocol is loaded");
        return *sessions_;
    }

    // First-come claiming: the oldest in-flight sample of the active query not held by an
    // open session.
    std::optional<std::string> next_unclaimed(const std::set<std::string>& claimed) const {
        const auto q = cycle_.latest_query();
        if (!q) return std::nullopt;
        const auto in_flight = ws_.pool_state().in_flight;
        for (const auto& s : (*q)["samples"]) {
            const std::string id = s["sample_id"];
            if (in_flight.count(id) && !claimed.count(id)) return id;
        }
        return std::nullopt;
    }

    void set_error(std::optional<std::string> e) {
        std::lock_guard lock(mu_);
        last_error_ = std::move(e);
    }

    data::Workspace& ws_;
    ServiceOptions opt_;
    Cycle cycle_;
    std::optional<protocol::SessionStore> sessions_;
    httplib::Server server_;
    std::thread listener_;

    std::mutex mu_;
    bool pending_ = false;
    std::optional<std::string> last_error_;
    SerialWorker worker_;  // declared last: joins before the members its jobs touch go away
};

}  // namespace aloop::ctl
