#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#define ALOOP_HAS_MXCSR 1
#endif

#include "aloop/common/error.hpp"

namespace aloop::nn {

/// Flushes denormal floats to zero for the current thread while alive. Tiny gradients
/// otherwise fall into the denormal range and slow the GEMM kernels several-fold.
class DenormalGuard {
public:
    DenormalGuard() {
#ifdef ALOOP_HAS_MXCSR
        saved_ = _mm_getcsr();
        _mm_setcsr(saved_ | 0x8040);  // FTZ | DAZ
#endif
    }
    ~DenormalGuard() {
#ifdef ALOOP_HAS_MXCSR
        _mm_setcsr(saved_);
#endif
    }
    DenormalGuard(const DenormalGuard&) = delete;
    DenormalGuard& operator=(const DenormalGuard&) = delete;

private:
    unsigned saved_ = 0;
};

/// Channel-major activation map (C x H x W) for one image.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    float* channel(int c) { return data.data() + c * plane(); }
    const float* channel(int c) const { return data.data() + c * plane(); }
};

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

/// Saved state of one Conv2d forward pass, consumed by backward().
struct ConvCache {
    std::vector<float> cols;  // unfolded input (3x3) or raw input (1x1)
    int height = 0;
    int width = 0;
};

/// Square convolution (kernel 1 or 3, stride 1, zero padding keeps size).
/// Parameters live in an external flat buffer at [offset, offset + param_count()).
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, std::size_t offset)
        : cin_(in_channels), cout_(out_channels), k_(kernel), offset_(offset) {
        if (kernel != 1 && kernel != 3) throw UsageError("Conv2d: kernel must be 1 or 3");
    }

    std::size_t weight_count() const { return static_cast<std::size_t>(cout_) * cin_ * k_ * k_; }
    std::size_t param_count() const { return weight_count() + cout_; }
    std::size_t offset() const { return offset_; }
    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }

    /// He-normal weights scaled by `gain`, zero bias.
    template <class Rng>
    void init(std::span<float> params, Rng& rng, float gain = 1.0f) const {
        const float fan_in = static_cast<float>(cin_ * k_ * k_);
        std::normal_distribution<float> dist(0.0f, gain * std::sqrt(2.0f / fan_in));
        for (auto& v : params.subspan(offset_, weight_count())) v = dist(rng);
        auto b = params.subspan(offset_ + weight_count(), cout_);
        std::fill(b.begin(), b.end(), 0.0f);
    }

    /// With a non-null `cache` the unfolded input is kept for backward().
    Tensor forward(std::span<const float> params, const Tensor& x, ConvCache* cache = nullptr) const {
        if (x.channels != cin_) throw UsageError("Conv2d: channel mismatch");
        const int hw = x.height * x.width;
        Tensor y(cout_, x.height, x.width);
        ConstMatMap w(params.data() + offset_, cout_, cin_ * k_ * k_);
        MatMap out(y.data.data(), cout_, hw);
        if (k_ == 1) {
            ConstMatMap in(x.data.data(), cin_, hw);
            out.noalias() = w * in;
            if (cache) cache->cols = x.data;
        } else {
            std::vector<float> local;
            std::vector<float>& cols = cache ? cache->cols : local;
            im2col(x, cols);
            ConstMatMap in(cols.data(), cin_ * 9, hw);
            out.noalias() = w * in;
        }
        if (cache) {
            cache->height = x.height;
            cache->width = x.width;
        }
        const float* b = params.data() + offset_ + weight_count();
        for (int c = 0; c < cout_; ++c) {
            float* row = y.channel(c);
            for (int i = 0; i < hw; ++i) row[i] += b[c];
        }
        return y;
    }

    /// Accumulates parameter gradients into `grads`; returns dL/dx when `need_input_grad`.
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    const ConvCache& cache, bool need_input_grad) const {
        const int hw = dy.height * dy.width;
        const int rows = cin_ * k_ * k_;
        ConstMatMap w(params.data() + offset_, cout_, rows);
        MatMap dw(grads.data() + offset_, cout_, rows);
        ConstMatMap g(dy.data.data(), cout_, hw);
        float* db = grads.data() + offset_ + weight_count();
        for (int c = 0; c < cout_; ++c) {
            const float* row = dy.channel(c);
            float s = 0.0f;
            for (int i = 0; i < hw; ++i) s += row[i];
            db[c] += s;
        }
        ConstMatMap in(cache.cols.data(), rows, hw);
        dw.noalias() += g * in.transpose();
        if (!need_input_grad) return {};
        if (k_ == 1) {
            Tensor dx(cin_, dy.height, dy.width);
            MatMap dxm(dx.data.data(), cin_, hw);
            dxm.noalias() = w.transpose() * g;
            return dx;
        }
        std::vector<float> dcols(static_cast<std::size_t>(rows) * hw);
        MatMap dc(dcols.data(), rows, hw);
        dc.noalias() = w.transpose() * g;
        Tensor dx(cin_, cache.height, cache.width);
        col2im(dcols, dx);
        return dx;
    }

private:
    // Row (c*9 + ky*3 + kx) holds x[c, y+ky-1, x+kx-1], zero outside the image.
    static void im2col(const Tensor& x, std::vector<float>& cols) {
        const int h = x.height, w = x.width;
        const std::size_t hw = x.plane();
        cols.assign(static_cast<std::size_t>(x.channels) * 9 * hw, 0.0f);
        for (int c = 0; c < x.channels; ++c) {
            const float* src = x.channel(c);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    float* dst = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                    const int dy = ky - 1, dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy) {
                        const float* s = src + (yy + dy) * w + dx;
                        float* d = dst + yy * w;
                        for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
                    }
                }
            }
        }
    }

    static void col2im(const std::vector<float>& cols, Tensor& dx) {
        const int h = dx.height, w = dx.width;
        const std::size_t hw = dx.plane();
        for (int c = 0; c < dx.channels; ++c) {
            float* dst = dx.channel(c);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const float* src = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                    const int dy = ky - 1, ddx = kx - 1;
                    const int x0 = std::max(0, -ddx), x1 = std::min(w, w - ddx);
                    for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy) {
                        const float* s = src + yy * w;
                        float* d = dst + (yy + dy) * w + ddx;
                        for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
                    }
                }
            }
        }
    }

    int cin_ = 0, cout_ = 0, k_ = 3;
    std::size_t offset_ = 0;
};

inline void relu_inplace(Tensor& t) {
    for (auto& v : t.data) v = v > 0.0f ? v : 0.0f;
}

/// dy masked by the post-activation output `y`.
inline void relu_backward_inplace(Tensor& dy, const Tensor& y) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (y.data[i] <= 0.0f) dy.data[i] = 0.0f;
}

/// 2x2 max pooling; odd trailing rows/columns are dropped.
inline Tensor maxpool2(const Tensor& x, std::vector<int>* argmax = nullptr) {
    Tensor y(x.channels, x.height / 2, x.width / 2);
    if (argmax) argmax->assign(y.data.size(), 0);
    for (int c = 0; c < x.channels; ++c) {
        const float* src = x.channel(c);
        float* dst = y.channel(c);
        for (int yy = 0; yy < y.height; ++yy) {
            for (int xx = 0; xx < y.width; ++xx) {
                int best = (2 * yy) * x.width + 2 * xx;
                for (int d : {best + 1, best + x.width, best + x.width + 1})
                    if (src[d] > src[best]) best = d;
                const std::size_t o = static_cast<std::size_t>(yy) * y.width + xx;
                dst[o] = src[best];
                if (argmax) (*argmax)[c * y.plane() + o] = best;
            }
        }
    }
    return y;
}

inline Tensor maxpool2_backward(const Tensor& dy, const std::vector<int>& argmax, int in_h, int in_w) {
    Tensor dx(dy.channels, in_h, in_w);
    for (int c = 0; c < dy.channels; ++c) {
        const float* g = dy.channel(c);
        float* d = dx.channel(c);
        for (std::size_t o = 0; o < dy.plane(); ++o) d[argmax[c * dy.plane() + o]] += g[o];
    }
    return dx;
}

/// Nearest-neighbour 2x upsampling to exactly (out_h, out_w).
inline Tensor upsample2(const Tensor& x, int out_h, int out_w) {
    Tensor y(x.channels, out_h, out_w);
    for (int c = 0; c < x.channels; ++c) {
        const float* src = x.channel(c);
        float* dst = y.channel(c);
        for (int yy = 0; yy < out_h; ++yy) {
            const int sy = std::min(yy / 2, x.height - 1);
            for (int xx = 0; xx < out_w; ++xx)
                dst[yy * out_w + xx] = src[sy * x.width + std::min(xx / 2, x.width - 1)];
        }
    }
    return y;
}

inline Tensor upsample2_backward(const Tensor& dy, int in_h, int in_w) {
    Tensor dx(dy.channels, in_h, in_w);
    for (int c = 0; c < dy.channels; ++c) {
        const float* g = dy.channel(c);
        float* d = dx.channel(c);
        for (int yy = 0; yy < dy.height; ++yy) {
            const int sy = std::min(yy / 2, in_h - 1);
            for (int xx = 0; xx < dy.width; ++xx)
                d[sy * in_w + std::min(xx / 2, in_w - 1)] += g[yy * dy.width + xx];
        }
    }
    return dx;
}

/// Channel concatenation [a; b].
inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw UsageError("concat: spatial mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return y;
}

inline void split(const Tensor& y, int a_channels, Tensor& da, Tensor& db) {
    da = Tensor(a_channels, y.height, y.width);
    db = Tensor(y.channels - a_channels, y.height, y.width);
    const auto cut = static_cast<std::ptrdiff_t>(da.data.size());
    std::copy(y.data.begin(), y.data.begin() + cut, da.data.begin());
    std::copy(y.data.begin() + cut, y.data.end(), db.data.begin());
}

/// Inverted dropout: kept units are scaled by 1/(1-rate). `mask` receives the per-unit multiplier.
template <class Rng>
void dropout_inplace(Tensor& t, float rate, Rng& rng, std::vector<float>* mask = nullptr) {
    if (mask) mask->assign(t.data.size(), 1.0f);
    if (rate <= 0.0f) return;
    std::bernoulli_distribution keep(1.0 - rate);
    const float scale = 1.0f / (1.0f - rate);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const float m = keep(rng) ? scale : 0.0f;
        t.data[i] *= m;
        if (mask) (*mask)[i] = m;
    }
}

}  // namespace aloop::nn
