#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/grid.hpp"
#include "aloop/common/log.hpp"
#include "aloop/segbackend/dice.hpp"
#include "aloop/segbackend/unet.hpp"

namespace aloop::seg {

/// SGD with heavy-ball momentum: v <- mu v + (g + wd w); w <- w - lr v.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum, double weight_decay = 0.0)
        : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::span<float> params, std::span<const float> grads) {
        if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i] + weight_decay_ * params[i];
            velocity_[i] = momentum_ * velocity_[i] + g;
            params[i] = static_cast<float>(params[i] - lr_ * velocity_[i]);
        }
    }

    std::span<const double> velocity() const { return velocity_; }

private:
    double lr_, momentum_, weight_decay_;
    std::vector<double> velocity_;
};

struct EpochRecord {
    int epoch = 0;  // 0 = before any update
    double train_loss = 0.0;
    std::optional<double> val_mean_dice;
};

struct TrainSettings {
    Architecture arch;
    int epochs = 10;
    /// Mini-batches per epoch; 0 means one pass over the training set.
    int steps_per_epoch = 0;
    int batch_size = 4;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double clip_grad_norm = 0.0;
    int ignore_index = SegMask::kIgnore;
    std::uint64_t rng_seed = 0;
    /// Optional per-draw augmentation, applied to a copy of each sampled pair.
    std::function<void(Image&, SegMask&, std::mt19937_64&)> augment;
};

/// Immutable parameter snapshot plus provenance; safe for concurrent inference.
struct TrainedModel {
    Architecture arch;
    std::vector<float> params;
    std::vector<EpochRecord> log;
    std::uint64_t rng_seed = 0;
    int best_epoch = 0;
};

inline TrainedModel init_model(const Architecture& arch, std::uint64_t seed) {
    UNet net(arch);
    std::mt19937_64 rng(seed);
    return TrainedModel{arch, net.init_params(rng), {}, seed, 0};
}

inline Posterior predict_posterior(const TrainedModel& model, const Image& image) {
    nn::DenormalGuard ftz;
    UNet net(model.arch);
    if (model.params.size() != net.param_count()) throw UsageError("predict: parameter count mismatch");
    auto pre = net.forward_prefix(model.params, image);
    return softmax(net.forward_suffix(model.params, pre, nullptr));
}

inline SegMask predict_mask(const TrainedModel& model, const Image& image) {
    return predict_posterior(model, image).argmax();
}

/// T stochastic forward passes with dropout active. The deterministic encoder is computed
/// once; only the layers after the dropout point are re-run per replicate.
inline std::vector<Posterior> mc_dropout_posteriors(const TrainedModel& model, const Image& image,
                                                    int passes, std::uint64_t rng_seed) {
    if (passes < 2) throw UsageError("mc_dropout_posteriors: need at least 2 passes");
    if (model.arch.dropout <= 0.0f)
        log().warn("mc_dropout_posteriors: dropout rate is 0, replicates will be identical");
    nn::DenormalGuard ftz;
    UNet net(model.arch);
    if (model.params.size() != net.param_count()) throw UsageError("predict: parameter count mismatch");
    std::mt19937_64 rng(rng_seed);
    auto pre = net.forward_prefix(model.params, image);
    std::vector<Posterior> out;
    out.reserve(passes);
    for (int t = 0; t < passes; ++t) out.push_back(softmax(net.forward_suffix(model.params, pre, &rng)));
    return out;
}

inline std::vector<double> embed(const TrainedModel& model, const Image& image) {
    nn::DenormalGuard ftz;
    return UNet(model.arch).embed(model.params, image);
}

/// Per-class dice of argmax predictions, averaged over images.
inline std::vector<double> evaluate_dice(const TrainedModel& model, const std::vector<LabeledImage>& data) {
    std::vector<SegMask> preds, gts;
    preds.reserve(data.size());
    for (const auto& d : data) {
        preds.push_back(predict_mask(model, d.image));
        gts.push_back(d.mask);
    }
    return mean_dice_per_class(preds, gts, model.arch.num_classes);
}

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Mini-batch SGD on the dice loss. Returns the snapshot with the best validation mean dice
/// (or, without validation data, the lowest epoch training loss).
inline TrainedModel train(const TrainSettings& s, const std::vector<LabeledImage>& train_data,
                          const std::vector<LabeledImage>& val_data,
                          const std::optional<TrainedModel>& init = std::nullopt) {
    if (train_data.empty()) throw UsageError("train: empty training set");
    if (s.batch_size < 1) throw UsageError("train: batch size must be >= 1");
    for (const auto& d : train_data)
        if (d.mask.num_classes != s.arch.num_classes)
            throw UsageError("train: mask class count differs from the architecture");

    nn::DenormalGuard ftz;
    UNet net(s.arch);
    TrainedModel model;
    if (init) {
        if (!(init->arch == s.arch)) throw UsageError("train: initial snapshot architecture differs");
        model = *init;
        model.log.clear();
    } else {
        model = init_model(s.arch, s.rng_seed);
    }
    model.rng_seed = s.rng_seed;
    if (model.params.size() != net.param_count()) throw UsageError("train: parameter count mismatch");

    std::mt19937_64 rng(s.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    SgdMomentum opt(s.lr, s.momentum, s.weight_decay);
    std::vector<float> grads(model.params.size());
    UNet::Trace trace;

    const bool has_val = !val_data.empty();
    EpochRecord initial{0, 0.0, std::nullopt};
    if (has_val) initial.val_mean_dice = mean_of(evaluate_dice(model, val_data));
    model.log.push_back(initial);

    std::vector<float> best = model.params;
    double best_score = has_val ? *initial.val_mean_dice : INFINITY;
    int best_epoch = 0;

    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const int steps = s.steps_per_epoch > 0
                          ? s.steps_per_epoch
                          : static_cast<int>((train_data.size() + s.batch_size - 1) / s.batch_size);

    for (int epoch = 1; epoch <= s.epochs; ++epoch) {
        double loss_sum = 0.0;
        int loss_count = 0;
        for (int step = 0; step < steps; ++step) {
            std::fill(grads.begin(), grads.end(), 0.0f);
            int in_batch = 0;
            double batch_loss = 0.0;
            for (int b = 0; b < s.batch_size; ++b) {
                if (cursor >= order.size()) {
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                const LabeledImage* sample = &train_data[order[cursor++]];
                LabeledImage augmented;
                if (s.augment) {
                    augmented = *sample;
                    s.augment(augmented.image, augmented.mask, rng);
                    sample = &augmented;
                }
                auto logits = net.forward_train(model.params, sample->image, trace, &rng);
                auto post = softmax(logits);
                auto r = dice_loss_with_grad(post, sample->mask, s.ignore_index, true);
                if (!std::isfinite(r.value))
                    throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch));
                batch_loss += r.value;
                ++in_batch;
                if (r.all_ignored) continue;
                auto dz = softmax_backward(post, r.grad);
                nn::Tensor dlogits(logits.channels, logits.height, logits.width);
                const std::size_t plane = logits.plane();
                const int K = logits.channels;
                for (std::size_t i = 0; i < plane; ++i)
                    for (int k = 0; k < K; ++k) dlogits.data[k * plane + i] = static_cast<float>(dz[i * K + k]);
                net.backward(model.params, grads, trace, dlogits);
            }
            const float inv = 1.0f / static_cast<float>(in_batch);
            for (auto& g : grads) g *= inv;
            double sq = 0.0;
            for (float g : grads) {
                if (!std::isfinite(g)) throw TrainingError("train: non-finite gradient at epoch " + std::to_string(epoch));
                sq += static_cast<double>(g) * g;
            }
            if (s.clip_grad_norm > 0.0 && sq > s.clip_grad_norm * s.clip_grad_norm) {
                const auto scale = static_cast<float>(s.clip_grad_norm / std::sqrt(sq));
                for (auto& g : grads) g *= scale;
            }
            opt.step(model.params, grads);
            loss_sum += batch_loss / in_batch;
            ++loss_count;
        }
        EpochRecord rec{epoch, loss_sum / loss_count, std::nullopt};
        bool improved;
        if (has_val) {
            rec.val_mean_dice = mean_of(evaluate_dice(model, val_data));
            improved = *rec.val_mean_dice > best_score;
            if (improved) best_score = *rec.val_mean_dice;
        } else {
            improved = rec.train_loss < best_score;
            if (improved) best_score = rec.train_loss;
        }
        if (improved) {
            best = model.params;
            best_epoch = epoch;
        }
        model.log.push_back(rec);
    }
    model.params = std::move(best);
    model.best_epoch = best_epoch;
    return model;
}

// Snapshot file: "ALOOPSNP" | u32 version | u32 descriptor length | descriptor JSON |
// u64 parameter count | float32 parameters (little endian).
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline nlohmann::json architecture_to_json(const Architecture& a) {
    return {{"trunk", a.trunk},
            {"in_channels", a.in_channels},
            {"base_channels", a.base_channels},
            {"num_classes", a.num_classes},
            {"dropout", a.dropout}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
    Architecture a;
    a.trunk = j.at("trunk").get<std::string>();
    a.in_channels = j.at("in_channels").get<int>();
    a.base_channels = j.at("base_channels").get<int>();
    a.num_classes = j.at("num_classes").get<int>();
    a.dropout = j.at("dropout").get<float>();
    return a;
}

inline void save_snapshot(const TrainedModel& m, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto desc = architecture_to_json(m.arch);
    desc["rng_seed"] = m.rng_seed;
    desc["best_epoch"] = m.best_epoch;
    const std::string text = desc.dump();
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        auto put32 = [&out](std::uint32_t v) {
            for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
        };
        out.write("ALOOPSNP", 8);
        put32(kSnapshotVersion);
        put32(static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        const std::uint64_t n = m.params.size();
        for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
        for (float f : m.params) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put32(bits);
        }
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline TrainedModel load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open snapshot " + path.string());
    auto get = [&in, &path](std::size_t n) {
        std::string buf(n, '\0');
        in.read(buf.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated snapshot " + path.string());
        return buf;
    };
    auto get32 = [&get]() {
        auto b = get(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
        return v;
    };
    if (get(8) != "ALOOPSNP") throw IoError("not a snapshot file: " + path.string());
    if (auto v = get32(); v != kSnapshotVersion)
        throw IoError("unsupported snapshot version " + std::to_string(v));
    const auto desc = nlohmann::json::parse(get(get32()));
    TrainedModel m;
    m.arch = architecture_from_json(desc);
    m.rng_seed = desc.value("rng_seed", std::uint64_t{0});
    m.best_epoch = desc.value("best_epoch", 0);
    auto nb = get(8);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(nb[i]);
    if (n != UNet(m.arch).param_count()) throw IoError("snapshot parameter count does not match its architecture");
    m.params.resize(n);
    for (auto& f : m.params) {
        const std::uint32_t bits = get32();
        std::memcpy(&f, &bits, 4);
    }
    return m;
}

}  // namespace aloop::seg
