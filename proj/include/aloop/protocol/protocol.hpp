#pragma once

#include <algorithm>
#include <cctype>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "aloop/common/error.hpp"

namespace aloop::protocol {

enum class StateType { load, octSegmentation, select, summary_oct, end };

inline std::optional<StateType> parse_state_type(const std::string& s) {
    if (s == "load") return StateType::load;
    if (s == "octSegmentation") return StateType::octSegmentation;
    if (s == "select") return StateType::select;
    if (s == "summary_oct") return StateType::summary_oct;
    if (s == "end") return StateType::end;
    return std::nullopt;
}

inline const char* to_string(StateType t) {
    switch (t) {
        case StateType::load: return "load";
        case StateType::octSegmentation: return "octSegmentation";
        case StateType::select: return "select";
        case StateType::summary_oct: return "summary_oct";
        case StateType::end: return "end";
    }
    return "?";
}

inline constexpr const char* kWildcard = "*";
inline constexpr const char* kEndState = "end";
inline constexpr const char* kStartState = "start";

struct Transition {
    std::string pattern;  // literal answer or "*"
    std::string target;
    bool operator==(const Transition&) const = default;
};

struct StateDef {
    std::string name;
    StateType type = StateType::end;
    std::optional<std::string> question;
    std::optional<std::string> annotation_type;
    std::optional<std::string> dataloader;
    /// Boundary class drawn in a line state; see line_class().
    std::optional<std::string> layer;
    std::vector<std::string> options;
    std::vector<Transition> transitions;

    bool is_line() const { return type == StateType::octSegmentation; }
    bool operator==(const StateDef&) const = default;

    /// Class name recorded for a line answer: explicit `layer`, else the upper-cased
    /// suffix of a "seg_<name>" state, else the question text.
    std::string line_class() const {
        if (layer) return *layer;
        if (name.rfind("seg_", 0) == 0 && name.size() > 4) {
            std::string s = name.substr(4);
            for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            return s;
        }
        return question.value_or(name);
    }
};

/// Named protocol failures. `code` is stable and machine-checkable; `state` names the
/// offending state when there is one.
class ProtocolError : public ParseError {
public:
    enum class Code {
        syntax,
        not_a_mapping,
        missing_start,
        missing_type,
        unknown_type,
        bad_field,
        bad_transition,
        dangling_target,
        missing_options,
        unsupported_annotation,
        unreachable_end,
    };

    ProtocolError(Code code, std::string state, const std::string& detail, int line = 0)
        : ParseError(std::string(code_name(code)) + (state.empty() ? "" : " in state '" + state + "'") + ": " + detail,
                     line),
          code_(code),
          state_(std::move(state)) {}

    Code code() const noexcept { return code_; }
    const std::string& state() const noexcept { return state_; }

    static const char* code_name(Code c) {
        switch (c) {
            case Code::syntax: return "syntax error";
            case Code::not_a_mapping: return "not a mapping";
            case Code::missing_start: return "missing start state";
            case Code::missing_type: return "missing type";
            case Code::unknown_type: return "unknown state type";
            case Code::bad_field: return "bad field";
            case Code::bad_transition: return "bad transition";
            case Code::dangling_target: return "dangling transition target";
            case Code::missing_options: return "missing options";
            case Code::unsupported_annotation: return "unsupported annotation type";
            case Code::unreachable_end: return "unreachable end";
        }
        return "protocol error";
    }

private:
    Code code_;
    std::string state_;
};

/// A parsed annotation protocol. States keep document order; "end" is always present.
struct Protocol {
    std::vector<StateDef> states;
    std::string start = kStartState;

    const StateDef* find(const std::string& name) const {
        for (const auto& s : states)
            if (s.name == name) return &s;
        return nullptr;
    }
    const StateDef& at(const std::string& name) const {
        if (auto* s = find(name)) return *s;
        throw UsageError("protocol has no state '" + name + "'");
    }

    /// States a user answers (everything but "end").
    std::vector<std::string> user_states() const {
        std::vector<std::string> out;
        for (const auto& s : states)
            if (s.type != StateType::end) out.push_back(s.name);
        return out;
    }

    /// Target of the first literal transition equal to `key`, else the first wildcard.
    std::optional<std::string> next_state(const std::string& from, const std::optional<std::string>& key) const {
        const auto& s = at(from);
        if (key)
            for (const auto& t : s.transitions)
                if (t.pattern == *key) return t.target;
        for (const auto& t : s.transitions)
            if (t.pattern == kWildcard) return t.target;
        return std::nullopt;
    }
};

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

inline std::optional<std::string> scalar_field(const YAML::Node& state, const std::string& state_name,
                                               const char* key) {
    const auto v = state[key];
    if (!v) return std::nullopt;
    if (!v.IsScalar())
        throw ProtocolError(ProtocolError::Code::bad_field, state_name, std::string("'") + key + "' must be a scalar",
                            line_of(v));
    return v.as<std::string>();
}

inline std::vector<Transition> parse_transitions(const YAML::Node& node, const std::string& state) {
    using C = ProtocolError::Code;
    std::vector<Transition> out;
    if (!node) return out;
    if (!node.IsSequence()) throw ProtocolError(C::bad_transition, state, "'transitions' must be a list", line_of(node));
    for (const auto& entry : node) {
        if (!entry.IsMap() || entry.size() != 1)
            throw ProtocolError(C::bad_transition, state, "each transition is a single 'pattern: {target: ...}' entry",
                                line_of(entry));
        const auto it = entry.begin();
        if (!it->first.IsScalar()) throw ProtocolError(C::bad_transition, state, "pattern must be a scalar", line_of(entry));
        const auto body = it->second;
        if (!body.IsMap() || !body["target"] || !body["target"].IsScalar())
            throw ProtocolError(C::bad_transition, state, "transition needs a scalar 'target'", line_of(entry));
        out.push_back({it->first.as<std::string>(), body["target"].as<std::string>()});
    }
    return out;
}

}  // namespace detail

/// Parses and checks a protocol: known state types, resolvable targets, select options,
/// a "start" state and an "end" reachable from it. Every failure is a ProtocolError.
inline Protocol parse_protocol(const std::string& yaml_text) {
    using C = ProtocolError::Code;
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ProtocolError(C::syntax, "", e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
    }
    if (!root.IsMap()) throw ProtocolError(C::not_a_mapping, "", "protocol must map state names to definitions");

    Protocol p;
    for (const auto& kv : root) {
        if (!kv.first.IsScalar()) throw ProtocolError(C::not_a_mapping, "", "state names must be scalars");
        StateDef s;
        s.name = kv.first.as<std::string>();
        const auto body = kv.second;
        if (!body.IsMap()) throw ProtocolError(C::not_a_mapping, s.name, "state body must be a mapping", detail::line_of(body));
        const auto type = detail::scalar_field(body, s.name, "type");
        if (!type) throw ProtocolError(C::missing_type, s.name, "no 'type'", detail::line_of(body));
        const auto parsed = parse_state_type(*type);
        if (!parsed) throw ProtocolError(C::unknown_type, s.name, "'" + *type + "'", detail::line_of(body["type"]));
        s.type = *parsed;
        s.question = detail::scalar_field(body, s.name, "question");
        s.annotation_type = detail::scalar_field(body, s.name, "annotation_type");
        s.dataloader = detail::scalar_field(body, s.name, "dataloader");
        s.layer = detail::scalar_field(body, s.name, "layer");
        if (const auto opts = body["options"]) {
            if (!opts.IsSequence()) throw ProtocolError(C::bad_field, s.name, "'options' must be a list", detail::line_of(opts));
            for (const auto& o : opts) {
                if (!o.IsScalar()) throw ProtocolError(C::bad_field, s.name, "options must be scalars", detail::line_of(o));
                s.options.push_back(o.as<std::string>());
            }
        }
        if (s.type == StateType::select && s.options.empty())
            throw ProtocolError(C::missing_options, s.name, "select state lists no options", detail::line_of(body));
        if (s.is_line() && s.annotation_type.value_or("line") != "line")
            throw ProtocolError(C::unsupported_annotation, s.name, "'" + *s.annotation_type + "' (only 'line')",
                                detail::line_of(body["annotation_type"]));
        s.transitions = detail::parse_transitions(body["transitions"], s.name);
        if (s.type != StateType::end && s.transitions.empty())
            throw ProtocolError(C::bad_transition, s.name, "state has no transitions", detail::line_of(body));
        if (s.name == kEndState && s.type != StateType::end)
            throw ProtocolError(C::bad_field, s.name, "state 'end' must have type end", detail::line_of(body));
        if (p.find(s.name)) throw ProtocolError(C::bad_field, s.name, "duplicate state", detail::line_of(body));
        p.states.push_back(std::move(s));
    }
    if (!p.find(kEndState)) p.states.push_back(StateDef{kEndState, StateType::end, {}, {}, {}, {}, {}, {}});
    if (!p.find(kStartState)) throw ProtocolError(C::missing_start, "", "no state named 'start'");
    if (p.at(kStartState).type == StateType::end) throw ProtocolError(C::missing_start, kStartState, "start cannot be an end state");

    for (const auto& s : p.states)
        for (const auto& t : s.transitions)
            if (!p.find(t.target)) throw ProtocolError(C::dangling_target, s.name, "no state '" + t.target + "'");

    std::set<std::string> seen{p.start};
    std::deque<std::string> frontier{p.start};
    while (!frontier.empty()) {
        const auto& s = p.at(frontier.front());
        frontier.pop_front();
        for (const auto& t : s.transitions)
            if (seen.insert(t.target).second) frontier.push_back(t.target);
    }
    bool reaches_end = false;
    for (const auto& name : seen) reaches_end = reaches_end || p.at(name).type == StateType::end;
    if (!reaches_end) throw ProtocolError(C::unreachable_end, p.start, "no path from start to an end state");
    return p;
}

}  // namespace aloop::protocol
