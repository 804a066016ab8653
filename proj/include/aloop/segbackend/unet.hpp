#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aloop/common/grid.hpp"
#include "aloop/segbackend/layers.hpp"

namespace aloop::seg {

/// Shape of the reference encoder-decoder. Serialized into every parameter snapshot.
struct Architecture {
    std::string trunk = "unet";
    int in_channels = 1;
    int base_channels = 8;
    int num_classes = 4;
    float dropout = 0.5f;

    bool operator==(const Architecture&) const = default;
};

/// Two-level U-Net: conv pairs at full and half resolution, dropout ahead of the
/// quarter-resolution bottleneck, nearest upsampling with 1x1 projections and
/// concatenated skips, 1x1 classifier head.
class UNet {
public:
    /// Activations and per-layer caches of one training forward pass.
    struct Trace {
        nn::Tensor s0a, s0, p0, s1a, s1, p1, dropped, ba, b, u1, cat1, d1, u0, cat0, d0;
        std::vector<int> pool0, pool1;
        std::vector<float> drop_mask;
        nn::ConvCache c_e0a, c_e0b, c_e1a, c_e1b, c_ba, c_bb, c_u1, c_d1, c_u0, c_d0, c_head;
    };

    /// Deterministic part of the network (everything ahead of dropout).
    struct Prefix {
        nn::Tensor s0, s1, p1;
    };

    explicit UNet(Architecture arch) : arch_(std::move(arch)) {
        if (arch_.in_channels < 1 || arch_.base_channels < 1 || arch_.num_classes < 2)
            throw UsageError("UNet: invalid architecture");
        if (arch_.dropout < 0.0f || arch_.dropout >= 1.0f)
            throw UsageError("UNet: dropout must lie in [0, 1)");
        const int c = arch_.base_channels;
        std::size_t off = 0;
        auto make = [&off](int cin, int cout, int k) {
            nn::Conv2d l(cin, cout, k, off);
            off += l.param_count();
            return l;
        };
        e0a_ = make(arch_.in_channels, c, 3);
        e0b_ = make(c, c, 3);
        e1a_ = make(c, 2 * c, 3);
        e1b_ = make(2 * c, 2 * c, 3);
        ba_ = make(2 * c, 4 * c, 3);
        bb_ = make(4 * c, 4 * c, 3);
        u1_ = make(4 * c, 2 * c, 1);
        d1_ = make(4 * c, 2 * c, 3);
        u0_ = make(2 * c, c, 1);
        d0_ = make(2 * c, c, 3);
        head_ = make(c, arch_.num_classes, 1);
        param_count_ = off;
    }

    const Architecture& architecture() const { return arch_; }
    std::size_t param_count() const { return param_count_; }
    int embedding_size() const { return 4 * arch_.base_channels; }

    template <class Rng>
    std::vector<float> init_params(Rng& rng) const {
        std::vector<float> p(param_count_);
        for (const auto* l : {&e0a_, &e0b_, &e1a_, &e1b_, &ba_, &bb_, &u1_, &d1_, &u0_, &d0_})
            l->init(p, rng);
        // Small head keeps the untrained posterior close to uniform.
        head_.init(p, rng, 0.1f);
        return p;
    }

    nn::Tensor to_tensor(const Image& img) const {
        if (arch_.in_channels != 1) throw UsageError("UNet: only single-channel images are supported");
        if (img.height < 4 || img.width < 4) throw UsageError("UNet: image smaller than 4x4");
        nn::Tensor t(1, img.height, img.width);
        t.data = img.pixels;
        return t;
    }

    Prefix forward_prefix(std::span<const float> p, const Image& img) const {
        Prefix out;
        auto x = to_tensor(img);
        auto a = e0a_.forward(p, x);
        nn::relu_inplace(a);
        out.s0 = e0b_.forward(p, a);
        nn::relu_inplace(out.s0);
        auto p0 = nn::maxpool2(out.s0);
        auto b = e1a_.forward(p, p0);
        nn::relu_inplace(b);
        out.s1 = e1b_.forward(p, b);
        nn::relu_inplace(out.s1);
        out.p1 = nn::maxpool2(out.s1);
        return out;
    }

    /// Bottleneck activations from a (possibly dropped-out) pooled tensor.
    nn::Tensor bottleneck(std::span<const float> p, const nn::Tensor& dropped) const {
        auto a = ba_.forward(p, dropped);
        nn::relu_inplace(a);
        auto b = bb_.forward(p, a);
        nn::relu_inplace(b);
        return b;
    }

    /// Logits (K x H x W) from the prefix; dropout is applied iff `rng` is non-null.
    nn::Tensor forward_suffix(std::span<const float> p, const Prefix& pre, std::mt19937_64* rng) const {
        nn::Tensor d = pre.p1;
        if (rng) nn::dropout_inplace(d, arch_.dropout, *rng);
        auto b = bottleneck(p, d);
        auto u1 = nn::upsample2(u1_.forward(p, b), pre.s1.height, pre.s1.width);
        auto d1 = d1_.forward(p, nn::concat(u1, pre.s1));
        nn::relu_inplace(d1);
        auto u0 = nn::upsample2(u0_.forward(p, d1), pre.s0.height, pre.s0.width);
        auto d0 = d0_.forward(p, nn::concat(u0, pre.s0));
        nn::relu_inplace(d0);
        return head_.forward(p, d0);
    }

    /// Spatial mean of the deterministic bottleneck activations.
    std::vector<double> embed(std::span<const float> p, const Image& img) const {
        auto pre = forward_prefix(p, img);
        auto b = bottleneck(p, pre.p1);
        std::vector<double> e(b.channels, 0.0);
        for (int c = 0; c < b.channels; ++c) {
            const float* row = b.channel(c);
            double s = 0.0;
            for (std::size_t i = 0; i < b.plane(); ++i) s += row[i];
            e[c] = s / static_cast<double>(b.plane());
        }
        return e;
    }

    /// Training forward pass; dropout is drawn from `rng` when non-null.
    nn::Tensor forward_train(std::span<const float> p, const Image& img, Trace& t,
                             std::mt19937_64* rng) const {
        auto x = to_tensor(img);
        t.s0a = e0a_.forward(p, x, &t.c_e0a);
        nn::relu_inplace(t.s0a);
        t.s0 = e0b_.forward(p, t.s0a, &t.c_e0b);
        nn::relu_inplace(t.s0);
        t.p0 = nn::maxpool2(t.s0, &t.pool0);
        t.s1a = e1a_.forward(p, t.p0, &t.c_e1a);
        nn::relu_inplace(t.s1a);
        t.s1 = e1b_.forward(p, t.s1a, &t.c_e1b);
        nn::relu_inplace(t.s1);
        t.p1 = nn::maxpool2(t.s1, &t.pool1);
        t.dropped = t.p1;
        if (rng)
            nn::dropout_inplace(t.dropped, arch_.dropout, *rng, &t.drop_mask);
        else
            t.drop_mask.assign(t.dropped.data.size(), 1.0f);
        t.ba = ba_.forward(p, t.dropped, &t.c_ba);
        nn::relu_inplace(t.ba);
        t.b = bb_.forward(p, t.ba, &t.c_bb);
        nn::relu_inplace(t.b);
        t.u1 = nn::upsample2(u1_.forward(p, t.b, &t.c_u1), t.s1.height, t.s1.width);
        t.cat1 = nn::concat(t.u1, t.s1);
        t.d1 = d1_.forward(p, t.cat1, &t.c_d1);
        nn::relu_inplace(t.d1);
        t.u0 = nn::upsample2(u0_.forward(p, t.d1, &t.c_u0), t.s0.height, t.s0.width);
        t.cat0 = nn::concat(t.u0, t.s0);
        t.d0 = d0_.forward(p, t.cat0, &t.c_d0);
        nn::relu_inplace(t.d0);
        return head_.forward(p, t.d0, &t.c_head);
    }

    /// Accumulates dL/dparams for the pass recorded in `t`, given dL/dlogits.
    void backward(std::span<const float> p, std::span<float> g, const Trace& t,
                  const nn::Tensor& dlogits) const {
        const int c = arch_.base_channels;
        auto dd0 = head_.backward(p, g, dlogits, t.c_head, true);
        nn::relu_backward_inplace(dd0, t.d0);
        auto dcat0 = d0_.backward(p, g, dd0, t.c_d0, true);
        nn::Tensor du0up, ds0;
        nn::split(dcat0, c, du0up, ds0);
        auto du0 = nn::upsample2_backward(du0up, t.d1.height, t.d1.width);
        auto dd1 = u0_.backward(p, g, du0, t.c_u0, true);
        nn::relu_backward_inplace(dd1, t.d1);
        auto dcat1 = d1_.backward(p, g, dd1, t.c_d1, true);
        nn::Tensor du1up, ds1;
        nn::split(dcat1, 2 * c, du1up, ds1);
        auto du1 = nn::upsample2_backward(du1up, t.b.height, t.b.width);
        auto db = u1_.backward(p, g, du1, t.c_u1, true);
        nn::relu_backward_inplace(db, t.b);
        auto dba = bb_.backward(p, g, db, t.c_bb, true);
        nn::relu_backward_inplace(dba, t.ba);
        auto ddrop = ba_.backward(p, g, dba, t.c_ba, true);
        for (std::size_t i = 0; i < ddrop.data.size(); ++i) ddrop.data[i] *= t.drop_mask[i];
        auto dpool1 = nn::maxpool2_backward(ddrop, t.pool1, t.s1.height, t.s1.width);
        for (std::size_t i = 0; i < ds1.data.size(); ++i) ds1.data[i] += dpool1.data[i];
        nn::relu_backward_inplace(ds1, t.s1);
        auto ds1a = e1b_.backward(p, g, ds1, t.c_e1b, true);
        nn::relu_backward_inplace(ds1a, t.s1a);
        auto dp0 = e1a_.backward(p, g, ds1a, t.c_e1a, true);
        auto dpool0 = nn::maxpool2_backward(dp0, t.pool0, t.s0.height, t.s0.width);
        for (std::size_t i = 0; i < ds0.data.size(); ++i) ds0.data[i] += dpool0.data[i];
        nn::relu_backward_inplace(ds0, t.s0);
        auto ds0a = e0b_.backward(p, g, ds0, t.c_e0b, true);
        nn::relu_backward_inplace(ds0a, t.s0a);
        e0a_.backward(p, g, ds0a, t.c_e0a, false);
    }

private:
    Architecture arch_;
    nn::Conv2d e0a_, e0b_, e1a_, e1b_, ba_, bb_, u1_, d1_, u0_, d0_, head_;
    std::size_t param_count_ = 0;
};

/// Per-pixel softmax over the channel axis of a logit map.
inline Posterior softmax(const nn::Tensor& logits) {
    Posterior post(logits.height, logits.width, logits.channels);
    const std::size_t plane = logits.plane();
    std::vector<double> z(logits.channels);
    for (std::size_t i = 0; i < plane; ++i) {
        double mx = -INFINITY;
        for (int k = 0; k < logits.channels; ++k) {
            z[k] = logits.data[k * plane + i];
            mx = std::max(mx, z[k]);
        }
        double sum = 0.0;
        for (int k = 0; k < logits.channels; ++k) {
            z[k] = std::exp(z[k] - mx);
            sum += z[k];
        }
        auto px = post.pixel(i);
        for (int k = 0; k < logits.channels; ++k) px[k] = z[k] / sum;
    }
    return post;
}

}  // namespace aloop::seg
