#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/fs.hpp"
#include "aloop/datamgr/annotation.hpp"

namespace aloop::sim {

inline constexpr int kOracleColumnStep = 4;

/// Polyline record traced from exact boundary heights: a point every kOracleColumnStep
/// columns plus the last column. `only` restricts the record to a subset of layer names.
inline data::AnnotationRecord oracle_record(const std::string& sample_id,
                                            const std::vector<std::vector<double>>& boundaries,
                                            const std::vector<std::string>& layer_names,
                                            const std::set<std::string>& only = {}) {
    if (boundaries.size() != layer_names.size())
        throw UsageError("oracle: boundary count differs from the layer list");
    data::AnnotationRecord r;
    r.sample_id = sample_id;
    r.annotator_id = "oracle";
    r.timestamp = "1970-01-01T00:00:00Z";
    for (std::size_t k = 0; k < boundaries.size(); ++k) {
        if (!only.empty() && !only.count(layer_names[k])) continue;
        const auto& ys = boundaries[k];
        const int W = static_cast<int>(ys.size());
        data::BoundaryLine line{layer_names[k], {}, false};
        for (int x = 0; x < W; x += kOracleColumnStep) line.points.push_back({double(x), ys[x]});
        if ((W - 1) % kOracleColumnStep != 0) line.points.push_back({double(W - 1), ys[W - 1]});
        r.items.emplace_back(std::move(line));
    }
    return r;
}

/// Simulated annotator backed by a workspace's ground_truth/boundaries.json.
class Oracle {
public:
    explicit Oracle(const std::filesystem::path& workspace) {
        const auto layers = workspace / "layers.json";
        const auto geom = workspace / "ground_truth" / "boundaries.json";
        if (!std::filesystem::exists(geom)) throw UsageError("oracle: no ground truth at " + geom.string());
        layers_ = fs::read_json(layers).get<std::vector<std::string>>();
        const auto geometry = fs::read_json(geom);
        for (const auto& [id, b] : geometry.items())
            truth_.emplace(id, b.get<std::vector<std::vector<double>>>());
    }

    const std::vector<std::string>& layers() const { return layers_; }
    bool has(const std::string& sample_id) const { return truth_.count(sample_id) > 0; }

    data::AnnotationRecord annotate(const std::string& sample_id, const std::set<std::string>& only = {}) const {
        auto it = truth_.find(sample_id);
        if (it == truth_.end()) throw UsageError("oracle: no ground truth for '" + sample_id + "'");
        return oracle_record(sample_id, it->second, layers_, only);
    }

private:
    std::vector<std::string> layers_;
    std::map<std::string, std::vector<std::vector<double>>> truth_;
};

}  // namespace aloop::sim
