#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "aloop/common/error.hpp"
#include "aloop/common/grid.hpp"

namespace aloop::strat {

enum class Uncertainty { CONF, MAR, ENT };

inline Uncertainty parse_uncertainty(const std::string& s) {
    if (s == "CONF") return Uncertainty::CONF;
    if (s == "MAR") return Uncertainty::MAR;
    if (s == "ENT") return Uncertainty::ENT;
    throw UsageError("not an uncertainty method: '" + s + "'");
}

/// -sum p ln p with 0 ln 0 = 0.
template <class Range>
double entropy(const Range& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

namespace detail {

inline double pixel_score(std::span<const double> p, Uncertainty m) {
    switch (m) {
        case Uncertainty::ENT: return entropy(p);
        case Uncertainty::CONF: return 1.0 - *std::max_element(p.begin(), p.end());
        case Uncertainty::MAR: {
            double a = -1.0, b = -1.0;  // largest, second largest
            for (double v : p) {
                if (v > a) {
                    b = a;
                    a = v;
                } else if (v > b) {
                    b = v;
                }
            }
            return 1.0 - (a - b);
        }
    }
    return 0.0;
}

inline void check_replicates(const std::vector<Posterior>& reps) {
    if (reps.size() < 2) throw UsageError("MC scoring needs at least two replicates");
    for (const auto& r : reps)
        if (!r.same_shape(reps.front())) throw UsageError("MC replicates differ in shape");
    if (reps.front().num_classes < 2) throw UsageError("MC scoring needs K >= 2");
}

}  // namespace detail

/// Mean over pixels of the per-pixel score; higher means more informative.
inline double score_uncertainty(const Posterior& p, Uncertainty method) {
    if (p.num_classes < 2) throw UsageError("score_uncertainty: K must be >= 2");
    const std::size_t n = p.pixel_count();
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += detail::pixel_score(p.pixel(i), method);
    return sum / static_cast<double>(n);
}

/// Per-pixel entropy of the replicate-mean posterior, row-major H x W.
inline std::vector<double> mc_entropy_field(const std::vector<Posterior>& reps) {
    detail::check_replicates(reps);
    const auto& f = reps.front();
    const int K = f.num_classes;
    std::vector<double> field(f.pixel_count()), mean(K);
    const double inv = 1.0 / static_cast<double>(reps.size());
    for (std::size_t i = 0; i < f.pixel_count(); ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (const auto& r : reps) {
            auto p = r.pixel(i);
            for (int k = 0; k < K; ++k) mean[k] += p[k];
        }
        for (auto& v : mean) v *= inv;
        field[i] = entropy(mean);
    }
    return field;
}

/// MCDR: predictive entropy of the MC mean, averaged over pixels.
inline double score_mc_entropy(const std::vector<Posterior>& reps) {
    auto field = mc_entropy_field(reps);
    if (field.empty()) return 0.0;
    double s = 0.0;
    for (double v : field) s += v;
    return s / static_cast<double>(field.size());
}

/// Largest mean over r x r tiles of a row-major field (edge tiles may be smaller).
inline double max_region_mean(const std::vector<double>& field, int height, int width, int r) {
    if (r < 1) throw UsageError("region size must be >= 1");
    double best = -INFINITY;
    for (int y0 = 0; y0 < height; y0 += r)
        for (int x0 = 0; x0 < width; x0 += r) {
            double s = 0.0;
            int n = 0;
            for (int y = y0; y < std::min(height, y0 + r); ++y)
                for (int x = x0; x < std::min(width, x0 + r); ++x, ++n) s += field[static_cast<std::size_t>(y) * width + x];
            best = std::max(best, s / n);
        }
    return std::isfinite(best) ? best : 0.0;
}

/// RMCDR: the most uncertain r x r region's mean MC entropy.
inline double score_regional_mc(const std::vector<Posterior>& reps, int region_size) {
    if (region_size < 1) throw UsageError("score_regional_mc: region size must be >= 1");
    auto field = mc_entropy_field(reps);
    return max_region_mean(field, reps.front().height, reps.front().width, region_size);
}

}  // namespace aloop::strat
