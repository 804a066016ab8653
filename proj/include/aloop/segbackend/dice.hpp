#pragma once

#include <cstdint>
#include <vector>

#include "aloop/common/grid.hpp"
#include "aloop/common/log.hpp"

namespace aloop::seg {

inline constexpr double kDiceSmoothing = 1e-6;

struct DiceLossResult {
    double value = 0.0;
    /// Every target pixel equals ignore_index; value is 0 and the gradient vanishes.
    bool all_ignored = false;
    /// dL/dprobs, same layout as Posterior::probs. Filled only when requested.
    std::vector<double> grad;
};

namespace detail {

inline void check_target(const Posterior& probs, const SegMask& target) {
    if (probs.height != target.height || probs.width != target.width)
        throw UsageError("dice_loss: posterior and mask shapes differ");
    if (probs.num_classes < 2) throw UsageError("dice_loss: need at least two classes");
}

}  // namespace detail

/// Soft dice loss 1 - mean_k (2 sum p g + eps) / (sum p + sum g + eps), summed only over
/// pixels whose target differs from `ignore_index`. Ignored pixels contribute neither value
/// nor gradient.
inline DiceLossResult dice_loss_with_grad(const Posterior& probs, const SegMask& target,
                                          int ignore_index, bool want_grad) {
    detail::check_target(probs, target);
    const int K = probs.num_classes;
    const std::size_t n = probs.pixel_count();
    std::vector<double> inter(K, 0.0), psum(K, 0.0), gsum(K, 0.0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int t = target.labels[i];
        if (t == ignore_index) continue;
        if (t < 0 || t >= K) throw UsageError("dice_loss: target class out of range");
        ++kept;
        auto p = probs.pixel(i);
        for (int k = 0; k < K; ++k) psum[k] += p[k];
        inter[t] += p[t];
        gsum[t] += 1.0;
    }
    DiceLossResult r;
    if (want_grad) r.grad.assign(probs.probs.size(), 0.0);
    if (kept == 0) {
        r.all_ignored = true;
        return r;
    }
    double mean_dice = 0.0;
    std::vector<double> denom(K), numer(K);
    for (int k = 0; k < K; ++k) {
        numer[k] = 2.0 * inter[k] + kDiceSmoothing;
        denom[k] = psum[k] + gsum[k] + kDiceSmoothing;
        mean_dice += numer[k] / denom[k];
    }
    mean_dice /= K;
    r.value = 1.0 - mean_dice;
    if (want_grad) {
        // d/dp_ik of -(1/K) D_k = -(1/K) (2 g_ik denom_k - numer_k) / denom_k^2
        for (std::size_t i = 0; i < n; ++i) {
            const int t = target.labels[i];
            if (t == ignore_index) continue;
            double* gi = r.grad.data() + i * K;
            for (int k = 0; k < K; ++k) {
                const double g = (k == t) ? 1.0 : 0.0;
                gi[k] = -(2.0 * g * denom[k] - numer[k]) / (denom[k] * denom[k]) / K;
            }
        }
    }
    return r;
}

inline double dice_loss(const Posterior& probs, const SegMask& target, int ignore_index = SegMask::kIgnore) {
    auto r = dice_loss_with_grad(probs, target, ignore_index, false);
    if (r.all_ignored) log().warn("dice_loss: every pixel is ignored, loss carries no signal");
    return r.value;
}

/// Chain rule through a per-pixel softmax: dL/dz_k = p_k (dL/dp_k - sum_j p_j dL/dp_j).
inline std::vector<double> softmax_backward(const Posterior& probs, const std::vector<double>& dprobs) {
    const int K = probs.num_classes;
    std::vector<double> dz(dprobs.size(), 0.0);
    for (std::size_t i = 0; i < probs.pixel_count(); ++i) {
        auto p = probs.pixel(i);
        const double* g = dprobs.data() + i * K;
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += p[k] * g[k];
        for (int k = 0; k < K; ++k) dz[i * K + k] = p[k] * (g[k] - dot);
    }
    return dz;
}

/// Hard dice 2|P n G| / (|P| + |G|) for one class; pixels ignored in `gt` are excluded.
/// Both sets empty gives 1.
inline double dice_metric(const SegMask& pred, const SegMask& gt, int class_k) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw UsageError("dice_metric: shape mismatch");
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.labels[i] == SegMask::kIgnore) continue;
        const bool in_p = pred.labels[i] == class_k;
        const bool in_g = gt.labels[i] == class_k;
        p += in_p;
        g += in_g;
        both += in_p && in_g;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

/// Per-class dice averaged over a set of (prediction, ground truth) pairs.
inline std::vector<double> mean_dice_per_class(const std::vector<SegMask>& preds,
                                               const std::vector<SegMask>& gts, int num_classes) {
    std::vector<double> acc(num_classes, 0.0);
    if (preds.empty()) return acc;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (int k = 0; k < num_classes; ++k) acc[k] += dice_metric(preds[i], gts[i], k);
    for (auto& v : acc) v /= static_cast<double>(preds.size());
    return acc;
}

}  // namespace aloop::seg
