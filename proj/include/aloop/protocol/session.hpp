#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/datamgr/annotation.hpp"
#include "aloop/protocol/protocol.hpp"

namespace aloop::protocol {

using Json = nlohmann::json;

/// The answer did not fit the current state; the session is unchanged.
class AnswerRejected : public UsageError {
public:
    using UsageError::UsageError;
};

struct Session {
    std::string session_id;
    std::string sample_id;
    std::string annotator_id;
    std::string current;
    /// state name -> last accepted answer payload
    std::map<std::string, Json> answers;
    bool completed = false;

    /// Answer to revise after a jump, if the current state was answered before.
    std::optional<Json> preloaded() const {
        auto it = answers.find(current);
        if (it == answers.end()) return std::nullopt;
        return std::optional<Json>(std::in_place, it->second);
    }
};

inline Session start_session(const Protocol& p, std::string session_id, std::string sample_id,
                             std::string annotator_id = "anonymous") {
    return Session{std::move(session_id), std::move(sample_id), std::move(annotator_id), p.start, {}, false};
}

namespace detail {

// Line payloads: {"points": [[x, y], ...], "uncertain": bool}, at least two points.
inline void check_line_answer(const Json& a) {
    if (!a.is_object() || !a.contains("points") || !a["points"].is_array())
        throw AnswerRejected("line answer needs a 'points' array");
    if (a["points"].size() < 2) throw AnswerRejected("line answer needs at least 2 points");
    for (const auto& pt : a["points"])
        if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
            throw AnswerRejected("each point is [x, y]");
    if (a.contains("uncertain") && !a["uncertain"].is_boolean()) throw AnswerRejected("'uncertain' must be a boolean");
}

/// Key matched against literal transition patterns; line answers only match "*".
inline std::optional<std::string> match_key(const StateDef& s, const Json& answer) {
    if (s.is_line()) return std::nullopt;
    if (answer.is_string()) return answer.get<std::string>();
    return std::nullopt;
}

}  // namespace detail

/// Merges the answer log into one record: line states become boundary lines, select
/// states become categorical answers. Protocol state order fixes item order.
inline data::AnnotationRecord build_record(const Protocol& p, const Session& s) {
    data::AnnotationRecord r;
    r.sample_id = s.sample_id;
    r.annotator_id = s.annotator_id;
    r.timestamp = data::utc_now_iso8601();
    for (const auto& def : p.states) {
        auto it = s.answers.find(def.name);
        if (it == s.answers.end()) continue;
        const auto& a = it->second;
        if (def.is_line()) {
            data::BoundaryLine line{def.line_class(), {}, a.value("uncertain", false)};
            for (const auto& pt : a["points"]) line.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
            r.items.emplace_back(std::move(line));
        } else if (def.type == StateType::select) {
            r.items.emplace_back(data::CategoricalAnswer{def.question.value_or(def.name), a.get<std::string>()});
        }
    }
    return r;
}

/// Records `answer` for the current state and follows the matching transition. Returns the
/// emitted record when this step reaches an end state.
inline std::optional<data::AnnotationRecord> advance(const Protocol& p, Session& s, const Json& answer) {
    if (s.completed) throw UsageError("session '" + s.session_id + "' is already completed");
    const auto& def = p.at(s.current);
    switch (def.type) {
        case StateType::octSegmentation:
            detail::check_line_answer(answer);
            break;
        case StateType::select:
            if (!answer.is_string()) throw AnswerRejected("select answer must be a string");
            if (std::find(def.options.begin(), def.options.end(), answer.get<std::string>()) == def.options.end())
                throw AnswerRejected("'" + answer.get<std::string>() + "' is not an option of '" + def.name + "'");
            break;
        case StateType::load:
        case StateType::summary_oct:
            if (!answer.is_string() && !answer.is_null()) throw AnswerRejected("answer must be a string");
            break;
        case StateType::end:
            throw UsageError("end state takes no answers");
    }
    const auto next = p.next_state(s.current, detail::match_key(def, answer));
    if (!next) throw AnswerRejected("no transition of '" + def.name + "' matches the answer");
    s.answers[s.current] = answer;
    s.current = *next;
    if (p.at(s.current).type == StateType::end) {
        s.completed = true;
        return build_record(p, s);
    }
    return std::nullopt;
}

/// Moves to any non-end state; the answer log is kept and the target's earlier answer (if
/// any) becomes Session::preloaded(). Jumping reopens a completed session.
inline void jump_to_state(const Protocol& p, Session& s, const std::string& state) {
    const auto* def = p.find(state);
    if (!def) throw UsageError("unknown state '" + state + "'");
    if (def->type == StateType::end) throw UsageError("cannot jump to an end state");
    if (s.current == state) return;
    s.current = state;
    s.completed = false;
}

inline Json to_json(const Protocol& p, const Session& s) {
    const auto& def = p.at(s.current);
    const auto users = p.user_states();
    std::size_t answered = 0;
    for (const auto& u : users) answered += s.answers.count(u);
    Json state = {{"name", def.name}, {"type", to_string(def.type)}};
    if (def.question) state["question"] = *def.question;
    if (def.annotation_type) state["annotation_type"] = *def.annotation_type;
    if (def.is_line()) state["class"] = def.line_class();
    if (!def.options.empty()) state["options"] = def.options;
    return {{"session_id", s.session_id},
            {"sample_id", s.sample_id},
            {"annotator_id", s.annotator_id},
            {"current", s.current},
            {"state", state},
            {"answers", s.answers},
            {"preloaded", s.preloaded() ? *s.preloaded() : Json(nullptr)},
            {"completed", s.completed},
            {"progress", users.empty() ? 1.0 : static_cast<double>(answered) / users.size()}};
}

/// Thread-safe session table. Completed sessions hand their record to `sink`.
class SessionStore {
public:
    using Sink = std::function<void(const data::AnnotationRecord&)>;
    /// Returns the next sample to annotate when a client does not name one.
    using Claimer = std::function<std::optional<std::string>(const std::set<std::string>& claimed)>;

    SessionStore(Protocol protocol, Sink sink, Claimer claimer = {})
        : protocol_(std::move(protocol)), sink_(std::move(sink)), claimer_(std::move(claimer)) {}

    const Protocol& protocol() const { return protocol_; }

    Json create(std::optional<std::string> sample_id, const std::string& annotator_id) {
        std::lock_guard lock(mu_);
        if (!sample_id) {
            std::set<std::string> claimed;
            for (const auto& [id, s] : sessions_)
                if (!s.completed) claimed.insert(s.sample_id);
            if (claimer_) sample_id = claimer_(claimed);
            if (!sample_id) throw ConflictError("no sample available for a new session");
        }
        char id[32];
        std::snprintf(id, sizeof id, "sess-%06d", ++counter_);
        auto s = start_session(protocol_, id, *sample_id, annotator_id);
        auto view = to_json(protocol_, s);
        sessions_.emplace(s.session_id, std::move(s));
        return view;
    }

    Json get(const std::string& id) const {
        std::lock_guard lock(mu_);
        return to_json(protocol_, find(id));
    }

    Json answer(const std::string& id, const Json& payload) {
        std::optional<data::AnnotationRecord> record;
        Json view;
        {
            std::lock_guard lock(mu_);
            auto& s = find(id);
            record = advance(protocol_, s, payload);
            view = to_json(protocol_, s);
        }
        if (record && sink_) sink_(*record);
        return view;
    }

    Json jump(const std::string& id, const std::string& state) {
        std::lock_guard lock(mu_);
        auto& s = find(id);
        jump_to_state(protocol_, s, state);
        return to_json(protocol_, s);
    }

private:
    Session& find(const std::string& id) {
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
        return it->second;
    }
    const Session& find(const std::string& id) const { return const_cast<SessionStore*>(this)->find(id); }

    Protocol protocol_;
    Sink sink_;
    Claimer claimer_;
    mutable std::mutex mu_;
    std::map<std::string, Session> sessions_;
    int counter_ = 0;
};

}  // namespace aloop::protocol
