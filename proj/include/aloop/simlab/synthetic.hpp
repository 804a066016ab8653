#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "aloop/common/error.hpp"
#include "aloop/common/fs.hpp"
#include "aloop/common/grid.hpp"
#include "aloop/common/png.hpp"

namespace aloop::sim {

/// Parameters of the layered-band image generator.
struct SyntheticSpec {
    int volumes = 20;
    int slices_per_volume = 10;
    int height = 64;
    int width = 64;
    int num_classes = 4;
    double amplitude = 4.0;   // boundary sinusoid amplitude, pixels
    double frequency = 1.0;   // boundary sinusoid cycles across the width
    double min_gap = 6.0;     // minimum vertical distance between adjacent boundaries
    double noise_sigma = 20.0;
    std::uint64_t rng_seed = 0;
    /// Boundary class names, top to bottom. Empty means the defaults from layer_names().
    std::vector<std::string> layers;

    std::vector<std::string> layer_names() const {
        if (!layers.empty()) return layers;
        static const std::vector<std::string> oct = {"ILM", "RPE", "BM"};
        if (num_classes == 4) return oct;
        std::vector<std::string> out;
        for (int k = 1; k < num_classes; ++k) out.push_back("B" + std::to_string(k));
        return out;
    }

    void validate() const {
        if (volumes < 1 || slices_per_volume < 1 || height < 4 || width < 4 || num_classes < 2)
            throw UsageError("synthetic spec: sizes must be positive (images at least 4x4, K >= 2)");
        if (amplitude < 0 || frequency <= 0 || min_gap <= 0 || noise_sigma < 0)
            throw UsageError("synthetic spec: amplitude/noise must be >= 0, frequency/min_gap > 0");
        if (static_cast<int>(layer_names().size()) != num_classes - 1)
            throw UsageError("synthetic spec: need exactly K-1 layer names");
        if (min_gap * num_classes > height)
            throw UsageError("synthetic spec: " + std::to_string(num_classes - 1) +
                             " boundaries with min gap " + std::to_string(min_gap) +
                             " do not fit in height " + std::to_string(height));
    }
};

inline SyntheticSpec parse_synthetic_spec(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ParseError(std::string("synthetic spec: ") + e.msg, e.mark.line + 1);
    }
    SyntheticSpec s;
    if (!root || root.IsNull()) return s;
    if (!root.IsMap()) throw ParseError("synthetic spec: top level must be a mapping");
    try {
        auto get = [&root](const char* key, auto& field) {
            if (root[key]) field = root[key].as<std::decay_t<decltype(field)>>();
        };
        get("volumes", s.volumes);
        get("slices_per_volume", s.slices_per_volume);
        get("height", s.height);
        get("width", s.width);
        get("num_classes", s.num_classes);
        get("amplitude", s.amplitude);
        get("frequency", s.frequency);
        get("min_gap", s.min_gap);
        get("noise_sigma", s.noise_sigma);
        get("rng_seed", s.rng_seed);
        get("layers", s.layers);
    } catch (const YAML::Exception& e) {
        throw ParseError(std::string("synthetic spec: ") + e.msg, e.mark.line + 1);
    }
    s.validate();
    return s;
}

inline std::string volume_id(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "v%03d", v);
    return buf;
}

inline std::string sample_id(const std::string& volume, int slice) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_s%03d", slice);
    return volume + buf;
}

/// One generated slice: raw image (0..255), ground-truth mask and the exact boundary heights
/// boundaries[k][x] for k in [0, K-1).
struct SyntheticSlice {
    std::string sample_id;
    std::string volume_id;
    int slice_index = 0;
    Image image;
    SegMask truth;
    std::vector<std::vector<double>> boundaries;
};

/// Class of row y in a column given ordered boundary heights: #{k : y >= y_k}.
inline int class_at(double y, const std::vector<std::vector<double>>& b, int x) {
    int c = 0;
    for (const auto& row : b) c += (y >= row[x]);
    return c;
}

/// Deterministic in (spec.rng_seed, volume, slice); slices can be generated independently.
inline SyntheticSlice generate_slice(const SyntheticSpec& spec, int volume, int slice) {
    const int H = spec.height, W = spec.width, K = spec.num_classes, B = K - 1;
    std::seed_seq vseq{spec.rng_seed, std::uint64_t(volume), std::uint64_t(0x5eed)};
    std::mt19937_64 vrng(vseq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    // Volume-level anatomy and scanner contrast.
    std::vector<double> base(B), amp(B), phase(B);
    for (int k = 0; k < B; ++k) {
        base[k] = H * (k + 1.0) / K + (u01(vrng) - 0.5) * spec.min_gap;
        amp[k] = spec.amplitude * (0.5 + 0.5 * u01(vrng));
        phase[k] = 2.0 * std::numbers::pi * u01(vrng);
    }
    const double gain = 0.85 + 0.3 * u01(vrng);
    const double offset = (u01(vrng) - 0.5) * 20.0;
    const double tilt = (u01(vrng) - 0.5) * 0.1;

    std::seed_seq sseq{spec.rng_seed, std::uint64_t(volume), std::uint64_t(slice), std::uint64_t(0x511ce)};
    std::mt19937_64 rng(sseq);
    const double shift = (u01(rng) - 0.5) * spec.min_gap;
    const double dphase = (u01(rng) - 0.5) * 1.0;
    std::normal_distribution<double> noise(0.0, 1.0);

    SyntheticSlice out;
    out.volume_id = volume_id(volume);
    out.slice_index = slice;
    out.sample_id = sample_id(out.volume_id, slice);
    out.boundaries.assign(B, std::vector<double>(W));
    for (int x = 0; x < W; ++x) {
        const double t = 2.0 * std::numbers::pi * spec.frequency * x / W;
        std::vector<double> y(B);
        for (int k = 0; k < B; ++k)
            y[k] = base[k] + shift + tilt * (x - W / 2.0) + amp[k] * std::sin(t + phase[k] + dphase);
        double prev = 0.0;
        for (int k = 0; k < B; ++k) prev = y[k] = std::max(y[k], prev + spec.min_gap);
        double next = H;
        for (int k = B - 1; k >= 0; --k) next = y[k] = std::min(y[k], next - spec.min_gap);
        for (int k = 0; k < B; ++k) out.boundaries[k][x] = y[k];
    }

    out.image = Image(H, W);
    out.truth = SegMask(H, W, K, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int c = class_at(y, out.boundaries, x);
            out.truth.at(y, x) = static_cast<std::int16_t>(c);
            const double mean = 30.0 + 190.0 * c / (K - 1);
            double v = gain * mean + offset;
            if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
            out.image.at(y, x) = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
        }
    }
    return out;
}

inline png::Gray8 to_gray8(const Image& img) {
    png::Gray8 g{img.height, img.width, std::vector<std::uint8_t>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i)
        g.data[i] = static_cast<std::uint8_t>(std::clamp(img.pixels[i], 0.0f, 255.0f));
    return g;
}

inline png::Gray8 mask_to_gray8(const SegMask& m) {
    png::Gray8 g{m.height, m.width, std::vector<std::uint8_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i)
        g.data[i] = m.labels[i] == SegMask::kIgnore ? SegMask::kIgnoreFileValue
                                                    : static_cast<std::uint8_t>(m.labels[i]);
    return g;
}

/// Writes a complete workspace: volume index, slices, ground-truth masks and boundary
/// geometry, and the layer list. Byte-identical for identical specs.
inline void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out) {
    spec.validate();
    namespace stdfs = std::filesystem;
    stdfs::create_directories(out);
    fs::write_json(out / "layers.json", spec.layer_names());
    nlohmann::json geometry = nlohmann::json::object();
    for (int v = 0; v < spec.volumes; ++v) {
        const auto vid = volume_id(v);
        const auto vdir = out / "volumes" / vid;
        fs::write_json(vdir / "meta.json", {{"slice_count", spec.slices_per_volume},
                                            {"height", spec.height},
                                            {"width", spec.width}});
        for (int s = 0; s < spec.slices_per_volume; ++s) {
            auto sl = generate_slice(spec, v, s);
            png::write_gray8(vdir / ("slice_" + std::to_string(s) + ".png"), to_gray8(sl.image));
            png::write_gray8(out / "ground_truth" / (sl.sample_id + ".png"), mask_to_gray8(sl.truth));
            geometry[sl.sample_id] = sl.boundaries;
        }
    }
    fs::write_json(out / "ground_truth" / "boundaries.json", geometry);
}

}  // namespace aloop::sim
