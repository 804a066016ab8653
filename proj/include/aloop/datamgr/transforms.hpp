#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/grid.hpp"
#include "aloop/config/run_config.hpp"

namespace aloop::data {

namespace detail {

inline std::pair<int, int> size_param(const nlohmann::json& params, const std::string& who) {
    if (!params.contains("size")) throw UsageError(who + ": missing 'size'");
    const auto& s = params["size"];
    if (s.is_number_integer()) return {s.get<int>(), s.get<int>()};
    if (s.is_array() && s.size() == 2) return {s[0].get<int>(), s[1].get<int>()};
    throw UsageError(who + ": 'size' must be an integer or [h, w]");
}

inline std::pair<double, double> range_param(const nlohmann::json& params, const char* key, double lo, double hi) {
    if (!params.contains(key)) return {lo, hi};
    const auto& r = params[key];
    return {r.at(0).get<double>(), r.at(1).get<double>()};
}

inline Image crop(const Image& img, int top, int left, int h, int w) {
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = img.at(top + y, left + x);
    return out;
}

inline SegMask crop(const SegMask& m, int top, int left, int h, int w) {
    SegMask out(h, w, m.num_classes);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = m.at(top + y, left + x);
    return out;
}

/// Bilinear with half-pixel centres (align_corners = false).
inline Image resize(const Image& img, int h, int w) {
    if (img.height == h && img.width == w) return img;
    Image out(h, w);
    const double sy = static_cast<double>(img.height) / h, sx = static_cast<double>(img.width) / w;
    for (int y = 0; y < h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            const double top = img.at(y0, x0) * (1 - wx) + img.at(y0, x1) * wx;
            const double bot = img.at(y1, x0) * (1 - wx) + img.at(y1, x1) * wx;
            out.at(y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

/// Nearest neighbour, so labels (and IGNORE) are never blended.
inline SegMask resize(const SegMask& m, int h, int w) {
    if (m.height == h && m.width == w) return m;
    SegMask out(h, w, m.num_classes);
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * m.height / h), m.height - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * m.width / w), m.width - 1);
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

}  // namespace detail

/// Applies a configured transform chain to an image and its mask. Geometric transforms
/// move both; intensity transforms touch the image only.
class TransformChain {
public:
    explicit TransformChain(std::vector<config::TransformSpec> specs = {}) : specs_(std::move(specs)) {
        for (auto& t : specs_) {
            if (t.params.is_null()) t.params = nlohmann::json::object();
            if (t.name != "RandomResizedCrop" && t.name != "RandomCrop" && t.name != "Resize" &&
                t.name != "RandomHorizontalFlip" && t.name != "ToTensor" && t.name != "Normalize")
                throw UsageError("unknown transform '" + t.name + "'");
        }
    }

    /// Training-time application; random transforms draw from `rng`.
    void apply(Image& img, SegMask* mask, std::mt19937_64& rng) const { run(img, mask, &rng); }

    /// Inference-time application: random transforms are skipped, deterministic ones kept.
    void apply_eval(Image& img, SegMask* mask = nullptr) const { run(img, mask, nullptr); }

    bool empty() const { return specs_.empty(); }

private:
    void run(Image& img, SegMask* mask, std::mt19937_64* rng) const {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (const auto& t : specs_) {
            const auto& p = t.params;
            if (t.name == "ToTensor") {
                for (auto& v : img.pixels) v /= 255.0f;
            } else if (t.name == "Normalize") {
                const double mean = p.contains("mean") ? first_number(p["mean"]) : 0.0;
                const double sd = p.contains("std") ? first_number(p["std"]) : 1.0;
                if (sd <= 0) throw UsageError("Normalize: std must be > 0");
                for (auto& v : img.pixels) v = static_cast<float>((v - mean) / sd);
            } else if (t.name == "Resize") {
                auto [h, w] = detail::size_param(p, t.name);
                img = detail::resize(img, h, w);
                if (mask) *mask = detail::resize(*mask, h, w);
            } else if (!rng) {
                continue;
            } else if (t.name == "RandomHorizontalFlip") {
                const double prob = p.value("p", 0.5);
                if (u01(*rng) < prob) {
                    flip(img.pixels, img.height, img.width);
                    if (mask) flip(mask->labels, mask->height, mask->width);
                }
            } else if (t.name == "RandomCrop") {
                auto [h, w] = detail::size_param(p, t.name);
                if (h > img.height || w > img.width) throw UsageError("RandomCrop: size exceeds image");
                const int top = std::uniform_int_distribution<int>(0, img.height - h)(*rng);
                const int left = std::uniform_int_distribution<int>(0, img.width - w)(*rng);
                img = detail::crop(img, top, left, h, w);
                if (mask) *mask = detail::crop(*mask, top, left, h, w);
            } else if (t.name == "RandomResizedCrop") {
                auto [h, w] = detail::size_param(p, t.name);
                auto [smin, smax] = detail::range_param(p, "scale", 0.08, 1.0);
                auto [rmin, rmax] = detail::range_param(p, "ratio", 3.0 / 4.0, 4.0 / 3.0);
                auto [top, left, ch, cw] = pick_crop(img.height, img.width, smin, smax, rmin, rmax, *rng);
                img = detail::resize(detail::crop(img, top, left, ch, cw), h, w);
                if (mask) *mask = detail::resize(detail::crop(*mask, top, left, ch, cw), h, w);
            }
        }
    }

    static double first_number(const nlohmann::json& j) {
        return j.is_array() ? j.at(0).get<double>() : j.get<double>();
    }

    template <class T>
    static void flip(std::vector<T>& v, int h, int w) {
        for (int y = 0; y < h; ++y) std::reverse(v.begin() + static_cast<std::ptrdiff_t>(y) * w,
                                                 v.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    }

    // Area/aspect sampling with ten attempts, then a centre crop, as in the common
    // RandomResizedCrop definition.
    static std::tuple<int, int, int, int> pick_crop(int H, int W, double smin, double smax, double rmin,
                                                    double rmax, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> scale(smin, smax), logr(std::log(rmin), std::log(rmax));
        const double area = static_cast<double>(H) * W;
        for (int attempt = 0; attempt < 10; ++attempt) {
            const double target = area * scale(rng);
            const double ratio = std::exp(logr(rng));
            const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
            const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
            if (w > 0 && h > 0 && w <= W && h <= H) {
                const int top = std::uniform_int_distribution<int>(0, H - h)(rng);
                const int left = std::uniform_int_distribution<int>(0, W - w)(rng);
                return {top, left, h, w};
            }
        }
        const double in_ratio = static_cast<double>(W) / H;
        int w = W, h = H;
        if (in_ratio < rmin) h = static_cast<int>(std::lround(w / rmin));
        else if (in_ratio > rmax) w = static_cast<int>(std::lround(h * rmax));
        return {(H - h) / 2, (W - w) / 2, h, w};
    }

    std::vector<config::TransformSpec> specs_;
};

}  // namespace aloop::data
