#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/grid.hpp"

namespace aloop::data {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// A drawn layer boundary. Points are pixel coordinates.
struct BoundaryLine {
    std::string class_name;
    std::vector<Point> points;
    bool uncertain = false;
    bool operator==(const BoundaryLine&) const = default;
};

/// A categorical question answered during annotation. Stored, never rendered.
struct CategoricalAnswer {
    std::string question;
    std::string answer;
    bool operator==(const CategoricalAnswer&) const = default;
};

using AnnotationItem = std::variant<BoundaryLine, CategoricalAnswer>;

struct AnnotationRecord {
    std::string sample_id;
    std::string annotator_id;
    std::string timestamp;  // ISO 8601, UTC
    std::vector<AnnotationItem> items;

    bool operator==(const AnnotationRecord&) const = default;

    std::vector<const BoundaryLine*> lines() const {
        std::vector<const BoundaryLine*> out;
        for (const auto& it : items)
            if (auto* l = std::get_if<BoundaryLine>(&it)) out.push_back(l);
        return out;
    }
};

inline std::string utc_now_iso8601() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// JSON wire format:
// {sample_id, annotator_id, timestamp,
//  items: [{kind: "line", class, points: [[x, y], ...], uncertain} | {kind: "select", question, answer}]}

inline nlohmann::json to_json(const AnnotationItem& item) {
    if (auto* l = std::get_if<BoundaryLine>(&item)) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : l->points) pts.push_back({p.x, p.y});
        return {{"kind", "line"}, {"class", l->class_name}, {"points", pts}, {"uncertain", l->uncertain}};
    }
    const auto& c = std::get<CategoricalAnswer>(item);
    return {{"kind", "select"}, {"question", c.question}, {"answer", c.answer}};
}

inline nlohmann::json to_json(const AnnotationRecord& r) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : r.items) items.push_back(to_json(it));
    return {{"sample_id", r.sample_id}, {"annotator_id", r.annotator_id}, {"timestamp", r.timestamp}, {"items", items}};
}

/// Strict schema check; throws ParseError naming the offending field.
inline AnnotationItem item_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("annotation item must be an object");
    const auto kind = j.value("kind", std::string{});
    if (kind == "line") {
        BoundaryLine l;
        if (!j.contains("class") || !j["class"].is_string()) throw ParseError("line item: 'class' must be a string");
        l.class_name = j["class"].get<std::string>();
        if (!j.contains("points") || !j["points"].is_array()) throw ParseError("line item: 'points' must be an array");
        for (const auto& p : j["points"]) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
                throw ParseError("line item: each point must be [x, y]");
            l.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        if (j.contains("uncertain")) {
            if (!j["uncertain"].is_boolean()) throw ParseError("line item: 'uncertain' must be a boolean");
            l.uncertain = j["uncertain"].get<bool>();
        }
        return l;
    }
    if (kind == "select") {
        if (!j.contains("question") || !j["question"].is_string() || !j.contains("answer") || !j["answer"].is_string())
            throw ParseError("select item: 'question' and 'answer' must be strings");
        return CategoricalAnswer{j["question"].get<std::string>(), j["answer"].get<std::string>()};
    }
    throw ParseError("annotation item: unknown kind '" + kind + "'");
}

inline AnnotationRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("annotation record must be an object");
    AnnotationRecord r;
    if (!j.contains("sample_id") || !j["sample_id"].is_string()) throw ParseError("record: 'sample_id' must be a string");
    r.sample_id = j["sample_id"].get<std::string>();
    if (j.contains("annotator_id")) {
        if (!j["annotator_id"].is_string()) throw ParseError("record: 'annotator_id' must be a string");
        r.annotator_id = j["annotator_id"].get<std::string>();
    }
    if (j.contains("timestamp")) {
        if (!j["timestamp"].is_string()) throw ParseError("record: 'timestamp' must be a string");
        r.timestamp = j["timestamp"].get<std::string>();
    }
    if (!j.contains("items") || !j["items"].is_array()) throw ParseError("record: 'items' must be an array");
    for (const auto& it : j["items"]) r.items.push_back(item_from_json(it));
    return r;
}

/// Why a record cannot be rendered against an H x W image with the given boundary classes,
/// or nullopt if it can.
inline std::optional<std::string> check_record(const AnnotationRecord& r, int height, int width,
                                               const std::vector<std::string>& layer_order) {
    std::set<std::string> seen;
    for (const auto* l : r.lines()) {
        if (std::find(layer_order.begin(), layer_order.end(), l->class_name) == layer_order.end())
            return "unknown class '" + l->class_name + "'";
        if (!seen.insert(l->class_name).second) return "duplicate class '" + l->class_name + "'";
        if (l->points.size() < 2) return "line '" + l->class_name + "' has fewer than 2 points";
        for (const auto& p : l->points)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.x >= width || p.y < 0 || p.y >= height)
                return "line '" + l->class_name + "' has a point outside the image";
    }
    return std::nullopt;
}

namespace detail {

/// y(x) of a polyline at every integer column it spans; NaN outside [x_first, x_last].
inline std::vector<double> sample_polyline(std::vector<Point> pts, int width) {
    std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    std::vector<double> y(width, std::nan(""));
    std::size_t seg = 0;
    for (int x = 0; x < width; ++x) {
        if (x < pts.front().x || x > pts.back().x) continue;
        while (seg + 2 < pts.size() && pts[seg + 1].x < x) ++seg;
        const auto& a = pts[seg];
        const auto& b = pts[seg + 1];
        const double dx = b.x - a.x;
        y[x] = dx > 0 ? a.y + (b.y - a.y) * (x - a.x) / dx : a.y;
    }
    return y;
}

}  // namespace detail

/// Renders the per-pixel class mask of a boundary annotation. Boundary j (0-based, in
/// `layer_order`) separates class j from class j+1, so K = |layer_order| + 1. In each column
/// a pixel at row y gets class #{j : y >= y_j(x)} when every boundary needed to decide that
/// count is present there; otherwise it is IGNORE. Crossing boundaries are clamped downward
/// so that present boundaries are non-decreasing in j.
inline SegMask render_mask(const AnnotationRecord& record, int height, int width,
                           const std::vector<std::string>& layer_order) {
    if (auto why = check_record(record, height, width, layer_order)) throw UsageError("render_mask: " + *why);
    const int B = static_cast<int>(layer_order.size());
    const int K = B + 1;
    std::vector<std::vector<double>> ys(B);
    for (const auto* l : record.lines()) {
        const auto idx = std::find(layer_order.begin(), layer_order.end(), l->class_name) - layer_order.begin();
        ys[idx] = detail::sample_polyline(l->points, width);
    }

    SegMask mask(height, width, K, SegMask::kIgnore);
    std::vector<double> col(B);
    std::vector<bool> present(B);
    for (int x = 0; x < width; ++x) {
        double running = -INFINITY;
        for (int j = 0; j < B; ++j) {
            present[j] = !ys[j].empty() && !std::isnan(ys[j][x]);
            if (!present[j]) continue;
            running = std::max(running, ys[j][x]);
            col[j] = running;
        }
        for (int y = 0; y < height; ++y) {
            int lo = 0, hi = K - 1;
            for (int j = 0; j < B; ++j) {
                if (!present[j]) continue;
                if (y >= col[j])
                    lo = std::max(lo, j + 1);
                else
                    hi = std::min(hi, j);
            }
            if (lo == hi) mask.at(y, x) = static_cast<std::int16_t>(lo);
        }
    }
    return mask;
}

}  // namespace aloop::data
