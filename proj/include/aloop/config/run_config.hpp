#pragma once

#include <cstdint>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "aloop/common/error.hpp"

namespace aloop::config {

using Json = nlohmann::json;

/// Built-in query strategy names.
inline const std::vector<std::string>& builtin_strategies() {
    static const std::vector<std::string> names = {"CONF", "MAR",  "ENT",    "MCDR",  "RMCDR",
                                                   "CORESET", "CEAL", "MAXRPR", "RANDOM"};
    return names;
}

struct ALSettings {
    std::string strategy;
    int seed_size = 10;
    int query_size = 10;
    int rounds = 5;
    int mc_passes = 10;
    int region_size = 8;
    double ceal_delta = 0.05;
    double ceal_decay = 0.0033;
    std::optional<std::string> target_metric;
    std::optional<double> target_value;
    std::uint64_t rng_seed = 0;
    bool auto_advance = true;
    /// Random pool samples appended to every query batch.
    int extra_random = 0;
    Json extras = Json::object();

    bool operator==(const ALSettings&) const = default;
};

struct ModelSpec {
    std::string trunk = "unet";
    int n_channels = 1;
    int n_classes = 4;
    bool bilinear = true;
    int base_channels = 8;
    double dropout = 0.5;
    std::optional<std::string> weights_init;
    Json extras = Json::object();

    bool operator==(const ModelSpec&) const = default;
};

struct TransformSpec {
    std::string name;
    Json params = Json::object();

    bool operator==(const TransformSpec&) const = default;
};

struct SplitSpec {
    std::vector<std::string> data_sources;
    std::vector<std::string> label_sources;
    std::vector<std::string> dataset_names;
    int batch_size = 1;
    std::vector<TransformSpec> transforms;
    /// nullopt = unlimited (YAML -1 or absent).
    std::optional<std::int64_t> data_limit;
    std::string collate = "msk_collator";
    Json extras = Json::object();

    bool operator==(const SplitSpec&) const = default;
};

struct DataSpec {
    int num_workers = 1;
    std::optional<SplitSpec> train, validation, test;
    Json extras = Json::object();

    bool operator==(const DataSpec&) const = default;
};

struct OptimizerSpec {
    std::string name = "sgd";
    double momentum = 0.9;
    double lr = 0.05;
    double weight_decay = 0.0;
    /// Rescale the mini-batch gradient to at most this L2 norm; 0 disables clipping.
    double clip_grad_norm = 0.0;
    int num_epochs = 10;
    /// 0 = one pass over the training set per epoch.
    int steps_per_epoch = 0;
    Json extras = Json::object();

    bool operator==(const OptimizerSpec&) const = default;
};

struct LossSpec {
    std::string name = "dice_loss";
    bool softmax = true;
    int ignore_index = -1;
    Json extras = Json::object();

    bool operator==(const LossSpec&) const = default;
};

struct RunConfig {
    ALSettings active_learning;
    ModelSpec model;
    DataSpec data;
    std::vector<std::string> meters = {"dice_per_class"};
    OptimizerSpec optimizer;
    LossSpec loss;
    Json distributed = Json::object();
    Json machine = Json::object();
    /// Top-level sections other than the eight recognised ones, kept verbatim.
    Json other_sections = Json::object();
    /// Unknown keys found inside recognised sections.
    std::vector<std::string> warnings;

    bool operator==(const RunConfig&) const = default;
};

struct Violation {
    std::string path;
    std::string rule;

    bool operator==(const Violation&) const = default;
    std::string str() const { return path + ": " + rule; }
};

/// Names a config may reference. Validation fails for anything outside these sets.
struct KnownNames {
    std::set<std::string> strategies;
    std::set<std::string> trunks{"unet"};
    std::set<std::string> losses{"dice_loss"};
    std::set<std::string> optimizers{"sgd"};
    std::set<std::string> meters{"dice_per_class", "mean_dice"};
    std::set<std::string> transforms{"RandomResizedCrop", "RandomCrop", "Resize", "RandomHorizontalFlip",
                                     "ToTensor", "Normalize"};
    std::set<std::string> collates{"msk_collator", "default"};

    static KnownNames builtin() {
        KnownNames n;
        n.strategies.insert(builtin_strategies().begin(), builtin_strategies().end());
        return n;
    }
};

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

inline Json scalar_to_json(const YAML::Node& n) {
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") return s;  // quoted
    static const std::regex int_re(R"([-+]?[0-9]+)");
    static const std::regex float_re(R"([-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?)");
    if (std::regex_match(s, int_re)) return std::stoll(s);
    if (std::regex_match(s, float_re)) return std::stod(s);
    if (s == "true" || s == "True" || s == "TRUE") return true;
    if (s == "false" || s == "False" || s == "FALSE") return false;
    if (s == "~" || s == "null" || s == "Null" || s == "NULL" || s.empty()) return nullptr;
    return s;
}

inline Json to_json(const YAML::Node& n) {
    switch (n.Type()) {
        case YAML::NodeType::Scalar: return scalar_to_json(n);
        case YAML::NodeType::Sequence: {
            Json a = Json::array();
            for (const auto& e : n) a.push_back(to_json(e));
            return a;
        }
        case YAML::NodeType::Map: {
            Json o = Json::object();
            for (const auto& kv : n) o[kv.first.as<std::string>()] = to_json(kv.second);
            return o;
        }
        default: return nullptr;
    }
}

inline void emit_json(YAML::Emitter& out, const Json& j) {
    if (j.is_object()) {
        out << YAML::BeginMap;
        for (const auto& [k, v] : j.items()) {
            out << YAML::Key << k << YAML::Value;
            emit_json(out, v);
        }
        out << YAML::EndMap;
    } else if (j.is_array()) {
        out << YAML::BeginSeq;
        for (const auto& v : j) emit_json(out, v);
        out << YAML::EndSeq;
    } else if (j.is_string()) {
        out << YAML::DoubleQuoted << j.get<std::string>();
    } else if (j.is_boolean()) {
        out << (j.get<bool>() ? "true" : "false");
    } else if (j.is_number_integer()) {
        out << j.get<std::int64_t>();
    } else if (j.is_number()) {
        out << YAML::Precision(17) << j.get<double>();
    } else {
        out << YAML::Null;
    }
}

/// Walks one mapping, routing each key to a handler or to `extras` with a warning.
class SectionReader {
public:
    SectionReader(const YAML::Node& node, std::string path, Json& extras, std::vector<std::string>& warnings)
        : node_(node), path_(std::move(path)), extras_(extras), warnings_(warnings) {
        if (node_ && !node_.IsNull() && !node_.IsMap())
            throw ParseError(path_ + " must be a mapping", line_of(node_));
    }

    template <class T>
    void get(const std::string& key, T& field) {
        seen_.insert(key);
        if (!node_ || node_.IsNull() || !node_[key] || node_[key].IsNull()) return;
        field = convert<T>(node_[key], key);
    }

    template <class T>
    void get(const std::string& key, std::optional<T>& field) {
        seen_.insert(key);
        if (!node_ || node_.IsNull() || !node_[key] || node_[key].IsNull()) return;
        field = convert<T>(node_[key], key);
    }

    YAML::Node child(const std::string& key) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return YAML::Node();
        return node_[key];
    }

    /// Accepted framework keys that are echoed but not interpreted (no warning).
    void passthrough(std::initializer_list<const char*> keys) {
        for (const char* k : keys) passthrough_.insert(k);
    }

    void finish() {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (seen_.count(key)) continue;
            extras_[key] = to_json(kv.second);
            if (!passthrough_.count(key)) warnings_.push_back("unknown key " + path_ + "." + key);
        }
    }

private:
    template <class T>
    T convert(const YAML::Node& n, const std::string& key) {
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            throw ParseError(path_ + "." + key + ": cannot convert value", line_of(n));
        }
    }

    YAML::Node node_;
    std::string path_;
    Json& extras_;
    std::vector<std::string>& warnings_;
    std::set<std::string> seen_, passthrough_;
};

inline SplitSpec read_split(const YAML::Node& n, const std::string& path, std::vector<std::string>& warnings) {
    SplitSpec s;
    SectionReader r(n, path, s.extras, warnings);
    r.get("DATA_SOURCES", s.data_sources);
    r.get("LABEL_SOURCES", s.label_sources);
    r.get("DATASET_NAMES", s.dataset_names);
    r.get("BATCHSIZE_PER_REPLICA", s.batch_size);
    std::int64_t limit = -1;
    r.get("DATA_LIMIT", limit);
    if (limit != -1) s.data_limit = limit;
    r.get("COLLATE_FUNCTION", s.collate);
    if (auto t = r.child("TRANSFORMS"); t && !t.IsNull()) {
        if (!t.IsSequence()) throw ParseError(path + ".TRANSFORMS must be a sequence", line_of(t));
        for (const auto& item : t) {
            TransformSpec ts;
            if (item.IsScalar()) {
                ts.name = item.as<std::string>();
            } else if (item.IsMap() && item["name"]) {
                for (const auto& kv : item) {
                    const auto key = kv.first.as<std::string>();
                    if (key == "name")
                        ts.name = kv.second.as<std::string>();
                    else
                        ts.params[key] = to_json(kv.second);
                }
            } else {
                throw ParseError(path + ".TRANSFORMS entries need a name", line_of(item));
            }
            s.transforms.push_back(std::move(ts));
        }
    }
    r.passthrough({"MMAP_MODE", "COPY_TO_LOCAL_DISK", "COPY_DESTINATION_DIR", "DROP_LAST", "LABEL_TYPE"});
    r.finish();
    return s;
}

inline std::optional<YAML::Node> find_section(const YAML::Node& root, std::initializer_list<const char*> names) {
    if (!root || !root.IsMap()) return std::nullopt;
    for (const char* n : names)
        if (root[n]) return root[n];
    return std::nullopt;
}

}  // namespace detail

/// Parses the upper-case-sectioned YAML run blueprint. Mandatory sections: MODEL, DATA,
/// OPTIMIZER, LOSS, ACTIVE_LEARNING (also spelled "ACTIVE LEARNING").
inline RunConfig parse_run_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ParseError("YAML syntax error: " + e.msg, e.mark.line + 1);
    }
    if (root && !root.IsNull() && !root.IsMap()) throw ParseError("top level must be a mapping", detail::line_of(root));

    RunConfig cfg;
    auto& w = cfg.warnings;
    auto required = [&root](std::initializer_list<const char*> names) {
        auto n = detail::find_section(root, names);
        if (!n) throw MissingSectionError(*names.begin());
        return *n;
    };
    const auto model = required({"MODEL"});
    const auto data = required({"DATA"});
    const auto optimizer = required({"OPTIMIZER"});
    const auto loss = required({"LOSS"});
    const auto al = required({"ACTIVE_LEARNING", "ACTIVE LEARNING"});

    {
        auto& a = cfg.active_learning;
        detail::SectionReader r(al, "ACTIVE_LEARNING", a.extras, w);
        r.get("strategy", a.strategy);
        r.get("seed_size", a.seed_size);
        r.get("query_size", a.query_size);
        r.get("rounds", a.rounds);
        r.get("mc_passes", a.mc_passes);
        r.get("region_size", a.region_size);
        r.get("ceal_delta", a.ceal_delta);
        r.get("ceal_decay", a.ceal_decay);
        r.get("target_metric", a.target_metric);
        r.get("target_value", a.target_value);
        r.get("rng_seed", a.rng_seed);
        r.get("auto_advance", a.auto_advance);
        r.get("extra_random", a.extra_random);
        r.finish();
    }
    {
        auto& m = cfg.model;
        detail::SectionReader r(model, "MODEL", m.extras, w);
        auto trunk = r.child("TRUNK");
        Json trunk_extras = Json::object();
        detail::SectionReader tr(trunk, "MODEL.TRUNK", trunk_extras, w);
        tr.get("NAME", m.trunk);
        auto unet = tr.child("UNET");
        Json unet_extras = Json::object();
        detail::SectionReader ur(unet, "MODEL.TRUNK.UNET", unet_extras, w);
        ur.get("n_channels", m.n_channels);
        ur.get("n_classes", m.n_classes);
        ur.get("bilinear", m.bilinear);
        ur.get("base_channels", m.base_channels);
        ur.get("dropout", m.dropout);
        ur.finish();
        tr.finish();
        if (!unet_extras.empty()) trunk_extras["UNET"] = unet_extras;
        if (!trunk_extras.empty()) m.extras["TRUNK"] = trunk_extras;
        auto weights = r.child("WEIGHTS_INIT");
        Json wi_extras = Json::object();
        detail::SectionReader wr(weights, "MODEL.WEIGHTS_INIT", wi_extras, w);
        wr.get("PARAMS_FILE", m.weights_init);
        wr.finish();
        if (m.weights_init && m.weights_init->empty()) m.weights_init.reset();
        if (!wi_extras.empty()) m.extras["WEIGHTS_INIT"] = wi_extras;
        r.passthrough({"FEATURE_EVAL_SETTINGS"});
        r.finish();
    }
    {
        auto& l = cfg.loss;
        detail::SectionReader r(loss, "LOSS", l.extras, w);
        r.get("name", l.name);
        auto params = r.child(l.name);
        Json p_extras = Json::object();
        detail::SectionReader pr(params, "LOSS." + l.name, p_extras, w);
        pr.get("softmax", l.softmax);
        pr.get("ignore_index", l.ignore_index);
        pr.finish();
        if (!p_extras.empty()) l.extras[l.name] = p_extras;
        r.finish();
    }
    {
        auto& o = cfg.optimizer;
        detail::SectionReader r(optimizer, "OPTIMIZER", o.extras, w);
        r.get("name", o.name);
        r.get("momentum", o.momentum);
        r.get("lr", o.lr);
        r.get("weight_decay", o.weight_decay);
        r.get("clip_grad_norm", o.clip_grad_norm);
        r.get("num_epochs", o.num_epochs);
        r.get("steps_per_epoch", o.steps_per_epoch);
        r.passthrough({"nesterov", "param_schedulers", "regularize_bn", "regularize_bias"});
        r.finish();
    }
    {
        auto& d = cfg.data;
        detail::SectionReader r(data, "DATA", d.extras, w);
        r.get("NUM_DATALOADER_WORKERS", d.num_workers);
        if (auto n = r.child("TRAIN"); n && !n.IsNull()) d.train = detail::read_split(n, "DATA.TRAIN", w);
        if (auto n = r.child("VALIDATION"); n && !n.IsNull()) d.validation = detail::read_split(n, "DATA.VALIDATION", w);
        if (auto n = r.child("TEST"); n && !n.IsNull()) d.test = detail::read_split(n, "DATA.TEST", w);
        r.finish();
    }
    if (auto found = detail::find_section(root, {"METERS"}); found && !found->IsNull()) {
        const auto& m = *found;
        cfg.meters.clear();
        try {
            if (m.IsSequence()) {
                cfg.meters = m.as<std::vector<std::string>>();
            } else if (m.IsScalar()) {
                cfg.meters.push_back(m.as<std::string>());
            } else if (m.IsMap()) {
                if (m["names"]) cfg.meters = m["names"].as<std::vector<std::string>>();
                else if (m["name"]) cfg.meters.push_back(m["name"].as<std::string>());
                for (const auto& kv : m) {
                    const auto key = kv.first.as<std::string>();
                    if (key != "names" && key != "name") w.push_back("unknown key METERS." + key);
                }
            }
        } catch (const YAML::Exception& e) {
            throw ParseError("METERS: expected a name list", e.mark.line + 1);
        }
    }
    if (auto n = detail::find_section(root, {"DISTRIBUTED"}); n && !n->IsNull()) cfg.distributed = detail::to_json(*n);
    if (auto n = detail::find_section(root, {"MACHINE"}); n && !n->IsNull()) cfg.machine = detail::to_json(*n);

    static const std::set<std::string> known = {"ACTIVE_LEARNING", "ACTIVE LEARNING", "MODEL",      "DATA",
                                                "METERS",          "OPTIMIZER",       "LOSS",       "DISTRIBUTED",
                                                "MACHINE"};
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (known.count(key)) continue;
        cfg.other_sections[key] = detail::to_json(kv.second);
        w.push_back("unknown section " + key);
    }
    return cfg;
}

/// Emits a blueprint that parses back to an equal RunConfig.
inline std::string serialize_run_config(const RunConfig& cfg) {
    using detail::emit_json;
    YAML::Emitter out;
    auto extras_into = [&out](const Json& extras, std::initializer_list<const char*> skip = {}) {
        for (const auto& [k, v] : extras.items()) {
            bool skipped = false;
            for (const char* s : skip) skipped |= (k == s);
            if (skipped) continue;
            out << YAML::Key << k << YAML::Value;
            emit_json(out, v);
        }
    };
    out << YAML::BeginMap;

    const auto& a = cfg.active_learning;
    out << YAML::Key << "ACTIVE_LEARNING" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "strategy" << YAML::Value << YAML::DoubleQuoted << a.strategy;
    out << YAML::Key << "seed_size" << YAML::Value << a.seed_size;
    out << YAML::Key << "query_size" << YAML::Value << a.query_size;
    out << YAML::Key << "rounds" << YAML::Value << a.rounds;
    out << YAML::Key << "mc_passes" << YAML::Value << a.mc_passes;
    out << YAML::Key << "region_size" << YAML::Value << a.region_size;
    out << YAML::Key << "ceal_delta" << YAML::Value << YAML::Precision(17) << a.ceal_delta;
    out << YAML::Key << "ceal_decay" << YAML::Value << YAML::Precision(17) << a.ceal_decay;
    if (a.target_metric) out << YAML::Key << "target_metric" << YAML::Value << YAML::DoubleQuoted << *a.target_metric;
    if (a.target_value) out << YAML::Key << "target_value" << YAML::Value << YAML::Precision(17) << *a.target_value;
    out << YAML::Key << "rng_seed" << YAML::Value << a.rng_seed;
    out << YAML::Key << "auto_advance" << YAML::Value << a.auto_advance;
    out << YAML::Key << "extra_random" << YAML::Value << a.extra_random;
    extras_into(a.extras);
    out << YAML::EndMap;

    const auto& m = cfg.model;
    out << YAML::Key << "MODEL" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "TRUNK" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "NAME" << YAML::Value << YAML::DoubleQuoted << m.trunk;
    out << YAML::Key << "UNET" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n_channels" << YAML::Value << m.n_channels;
    out << YAML::Key << "n_classes" << YAML::Value << m.n_classes;
    out << YAML::Key << "bilinear" << YAML::Value << m.bilinear;
    out << YAML::Key << "base_channels" << YAML::Value << m.base_channels;
    out << YAML::Key << "dropout" << YAML::Value << YAML::Precision(17) << m.dropout;
    if (m.extras.contains("TRUNK") && m.extras["TRUNK"].contains("UNET")) extras_into(m.extras["TRUNK"]["UNET"]);
    out << YAML::EndMap;
    if (m.extras.contains("TRUNK")) extras_into(m.extras["TRUNK"], {"UNET"});
    out << YAML::EndMap;
    if (m.weights_init || m.extras.contains("WEIGHTS_INIT")) {
        out << YAML::Key << "WEIGHTS_INIT" << YAML::Value << YAML::BeginMap;
        if (m.weights_init) out << YAML::Key << "PARAMS_FILE" << YAML::Value << YAML::DoubleQuoted << *m.weights_init;
        if (m.extras.contains("WEIGHTS_INIT")) extras_into(m.extras["WEIGHTS_INIT"]);
        out << YAML::EndMap;
    }
    extras_into(m.extras, {"TRUNK", "WEIGHTS_INIT"});
    out << YAML::EndMap;

    const auto& l = cfg.loss;
    out << YAML::Key << "LOSS" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << l.name;
    out << YAML::Key << l.name << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "softmax" << YAML::Value << l.softmax;
    out << YAML::Key << "ignore_index" << YAML::Value << l.ignore_index;
    if (l.extras.contains(l.name)) extras_into(l.extras[l.name]);
    out << YAML::EndMap;
    extras_into(l.extras, {l.name.c_str()});
    out << YAML::EndMap;

    const auto& o = cfg.optimizer;
    out << YAML::Key << "OPTIMIZER" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << o.name;
    out << YAML::Key << "momentum" << YAML::Value << YAML::Precision(17) << o.momentum;
    out << YAML::Key << "lr" << YAML::Value << YAML::Precision(17) << o.lr;
    out << YAML::Key << "weight_decay" << YAML::Value << YAML::Precision(17) << o.weight_decay;
    out << YAML::Key << "clip_grad_norm" << YAML::Value << YAML::Precision(17) << o.clip_grad_norm;
    out << YAML::Key << "num_epochs" << YAML::Value << o.num_epochs;
    out << YAML::Key << "steps_per_epoch" << YAML::Value << o.steps_per_epoch;
    extras_into(o.extras);
    out << YAML::EndMap;

    auto emit_split = [&](const char* name, const std::optional<SplitSpec>& s) {
        if (!s) return;
        out << YAML::Key << name << YAML::Value << YAML::BeginMap;
        auto strings = [&out](const char* key, const std::vector<std::string>& v) {
            out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
            for (const auto& e : v) out << YAML::DoubleQuoted << e;
            out << YAML::EndSeq;
        };
        strings("DATA_SOURCES", s->data_sources);
        strings("LABEL_SOURCES", s->label_sources);
        strings("DATASET_NAMES", s->dataset_names);
        out << YAML::Key << "BATCHSIZE_PER_REPLICA" << YAML::Value << s->batch_size;
        out << YAML::Key << "TRANSFORMS" << YAML::Value << YAML::BeginSeq;
        for (const auto& t : s->transforms) {
            out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << t.name;
            extras_into(t.params);
            out << YAML::EndMap;
        }
        out << YAML::EndSeq;
        out << YAML::Key << "DATA_LIMIT" << YAML::Value << (s->data_limit ? *s->data_limit : std::int64_t{-1});
        out << YAML::Key << "COLLATE_FUNCTION" << YAML::Value << YAML::DoubleQuoted << s->collate;
        extras_into(s->extras);
        out << YAML::EndMap;
    };
    out << YAML::Key << "DATA" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "NUM_DATALOADER_WORKERS" << YAML::Value << cfg.data.num_workers;
    emit_split("TRAIN", cfg.data.train);
    emit_split("VALIDATION", cfg.data.validation);
    emit_split("TEST", cfg.data.test);
    extras_into(cfg.data.extras);
    out << YAML::EndMap;

    out << YAML::Key << "METERS" << YAML::Value << YAML::BeginMap << YAML::Key << "names" << YAML::Value
        << YAML::Flow << YAML::BeginSeq;
    for (const auto& n : cfg.meters) out << YAML::DoubleQuoted << n;
    out << YAML::EndSeq << YAML::EndMap;

    if (!cfg.distributed.empty()) {
        out << YAML::Key << "DISTRIBUTED" << YAML::Value;
        emit_json(out, cfg.distributed);
    }
    if (!cfg.machine.empty()) {
        out << YAML::Key << "MACHINE" << YAML::Value;
        emit_json(out, cfg.machine);
    }
    extras_into(cfg.other_sections);
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

/// Checks every invariant; empty result means the config is runnable. Never mutates `cfg`.
inline std::vector<Violation> validate_run_config(const RunConfig& cfg,
                                                  const KnownNames& names = KnownNames::builtin()) {
    std::vector<Violation> v;
    auto check = [&v](bool ok, std::string path, std::string rule) {
        if (!ok) v.push_back({std::move(path), std::move(rule)});
    };
    const auto& a = cfg.active_learning;
    if (a.strategy.empty())
        check(false, "active_learning.strategy", "required");
    else
        check(names.strategies.count(a.strategy) > 0, "active_learning.strategy",
              "unknown strategy '" + a.strategy + "' (not built in and no plugin registered)");
    check(a.seed_size >= 1, "active_learning.seed_size", "must be >= 1");
    check(a.query_size >= 1, "active_learning.query_size", "must be >= 1");
    check(a.rounds >= 1, "active_learning.rounds", "must be >= 1");
    check(a.extra_random >= 0, "active_learning.extra_random", "must be >= 0");
    if (a.strategy == "MCDR" || a.strategy == "RMCDR")
        check(a.mc_passes >= 2, "active_learning.mc_passes", "must be >= 2");
    if (a.strategy == "RMCDR") check(a.region_size >= 1, "active_learning.region_size", "must be >= 1");
    if (a.strategy == "CEAL") {
        check(a.ceal_delta > 0.0 && a.ceal_delta <= 1.0, "active_learning.ceal_delta", "must lie in (0, 1]");
        check(a.ceal_decay >= 0.0 && a.ceal_decay < 1.0, "active_learning.ceal_decay", "must lie in [0, 1)");
    }
    if (a.target_value) {
        const std::string metric = a.target_metric.value_or("mean_dice");
        check(names.meters.count(metric) > 0, "active_learning.target_metric", "unknown metric '" + metric + "'");
        check(*a.target_value >= 0.0 && *a.target_value <= 1.0, "active_learning.target_value",
              "must lie in [0, 1]");
    } else if (a.target_metric) {
        check(names.meters.count(*a.target_metric) > 0, "active_learning.target_metric",
              "unknown metric '" + *a.target_metric + "'");
    }

    const auto& m = cfg.model;
    check(names.trunks.count(m.trunk) > 0, "model.trunk", "unknown trunk '" + m.trunk + "'");
    check(m.n_channels == 1, "model.n_channels", "the reference trunk takes single-channel images");
    check(m.n_classes >= 2, "model.n_classes", "must be >= 2");
    check(m.base_channels >= 1, "model.base_channels", "must be >= 1");
    check(m.dropout >= 0.0 && m.dropout < 1.0, "model.dropout", "must lie in [0, 1)");
    if (m.weights_init) check(!m.weights_init->empty(), "model.weights_init", "must be a non-empty path");

    const auto& l = cfg.loss;
    check(names.losses.count(l.name) > 0, "loss.name", "unknown loss '" + l.name + "'");
    check(l.softmax, "loss.softmax", "the dice loss operates on softmax posteriors");
    check(l.ignore_index < 0 || l.ignore_index >= m.n_classes, "loss.ignore_index",
          "must not collide with a class index");

    const auto& o = cfg.optimizer;
    check(names.optimizers.count(o.name) > 0, "optimizer.name", "unknown optimizer '" + o.name + "'");
    check(o.momentum >= 0.0 && o.momentum < 1.0, "optimizer.momentum", "must lie in [0, 1)");
    check(o.lr > 0.0, "optimizer.lr", "must be > 0");
    check(o.weight_decay >= 0.0, "optimizer.weight_decay", "must be >= 0");
    check(o.clip_grad_norm >= 0.0, "optimizer.clip_grad_norm", "must be >= 0");
    check(o.num_epochs >= 1, "optimizer.num_epochs", "must be >= 1");
    check(o.steps_per_epoch >= 0, "optimizer.steps_per_epoch", "must be >= 0");

    check(cfg.data.train.has_value(), "data.train", "required");
    check(cfg.data.num_workers >= 0, "data.num_workers", "must be >= 0");
    auto check_split = [&](const char* name, const std::optional<SplitSpec>& s) {
        if (!s) return;
        const std::string p = std::string("data.") + name;
        check(s->batch_size >= 1, p + ".batch_size", "must be >= 1");
        if (s->data_limit) check(*s->data_limit >= 0, p + ".data_limit", "must be >= 0 or -1 (unlimited)");
        check(names.collates.count(s->collate) > 0, p + ".collate", "unknown collate function '" + s->collate + "'");
        for (std::size_t i = 0; i < s->transforms.size(); ++i)
            check(names.transforms.count(s->transforms[i].name) > 0,
                  p + ".transforms[" + std::to_string(i) + "]",
                  "unknown transform '" + s->transforms[i].name + "'");
    };
    check_split("train", cfg.data.train);
    check_split("validation", cfg.data.validation);
    check_split("test", cfg.data.test);

    for (std::size_t i = 0; i < cfg.meters.size(); ++i)
        check(names.meters.count(cfg.meters[i]) > 0, "meters[" + std::to_string(i) + "]",
              "unknown metric '" + cfg.meters[i] + "'");
    return v;
}

}  // namespace aloop::config
