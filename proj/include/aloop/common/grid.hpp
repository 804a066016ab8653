#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aloop/common/error.hpp"

namespace aloop {

/// Single-channel image, row-major, values as float (raw 0..255 until a transform rescales).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
    bool operator==(const Image&) const = default;
};

/// Per-pixel class index grid. `kIgnore` marks pixels with no label.
struct SegMask {
    static constexpr std::int16_t kIgnore = -1;
    /// On-disk encoding of kIgnore in 8-bit mask files.
    static constexpr std::uint8_t kIgnoreFileValue = 255;

    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<std::int16_t> labels;

    SegMask() = default;
    SegMask(int h, int w, int k, std::int16_t fill = kIgnore)
        : height(h), width(w), num_classes(k), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::int16_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::int16_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return labels.size(); }

    std::size_t ignore_count() const {
        std::size_t n = 0;
        for (auto v : labels) n += (v == kIgnore);
        return n;
    }
    bool operator==(const SegMask&) const = default;
};

/// Per-pixel class probabilities, layout [(y * width + x) * num_classes + k].
struct Posterior {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> probs;

    Posterior() = default;
    Posterior(int h, int w, int k, double fill = 0.0)
        : height(h), width(w), num_classes(k),
          probs(static_cast<std::size_t>(h) * w * k, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    std::span<double> pixel(std::size_t i) {
        return {probs.data() + i * num_classes, static_cast<std::size_t>(num_classes)};
    }
    std::span<const double> pixel(std::size_t i) const {
        return {probs.data() + i * num_classes, static_cast<std::size_t>(num_classes)};
    }
    double& at(int y, int x, int k) {
        return probs[(static_cast<std::size_t>(y) * width + x) * num_classes + k];
    }
    double at(int y, int x, int k) const {
        return probs[(static_cast<std::size_t>(y) * width + x) * num_classes + k];
    }

    bool operator==(const Posterior&) const = default;

    bool same_shape(const Posterior& o) const {
        return height == o.height && width == o.width && num_classes == o.num_classes;
    }

    /// Largest deviation of a per-pixel sum from 1.
    double max_normalization_error() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < pixel_count(); ++i) {
            double s = 0.0;
            for (double p : pixel(i)) s += p;
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }

    /// Per-pixel argmax as a fully labelled mask.
    SegMask argmax() const {
        SegMask m(height, width, num_classes, 0);
        for (std::size_t i = 0; i < pixel_count(); ++i) {
            auto p = pixel(i);
            int best = 0;
            for (int k = 1; k < num_classes; ++k)
                if (p[k] > p[best]) best = k;
            m.labels[i] = static_cast<std::int16_t>(best);
        }
        return m;
    }
};

/// An image and its (possibly partial) label mask.
struct LabeledImage {
    std::string sample_id;
    Image image;
    SegMask mask;
};

}  // namespace aloop
