#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "aloop/config/run_config.hpp"
#include "aloop/datamgr/transforms.hpp"
#include "aloop/segbackend/model.hpp"

namespace aloop::seg {

inline Architecture architecture_from(const config::ModelSpec& m) {
    Architecture a;
    a.trunk = m.trunk;
    a.in_channels = m.n_channels;
    a.num_classes = m.n_classes;
    a.base_channels = m.base_channels;
    a.dropout = static_cast<float>(m.dropout);
    return a;
}

/// Training settings for one run. Training pairs are passed through the configured train
/// transform chain on every draw.
inline TrainSettings settings_from(const config::RunConfig& cfg, std::uint64_t seed) {
    if (cfg.model.trunk != "unet") throw UsageError("unsupported trunk '" + cfg.model.trunk + "'");
    if (cfg.optimizer.name != "sgd") throw UsageError("unsupported optimizer '" + cfg.optimizer.name + "'");
    if (cfg.loss.name != "dice_loss") throw UsageError("unsupported loss '" + cfg.loss.name + "'");
    TrainSettings s;
    s.arch = architecture_from(cfg.model);
    s.epochs = cfg.optimizer.num_epochs;
    s.steps_per_epoch = cfg.optimizer.steps_per_epoch;
    s.lr = cfg.optimizer.lr;
    s.momentum = cfg.optimizer.momentum;
    s.weight_decay = cfg.optimizer.weight_decay;
    s.clip_grad_norm = cfg.optimizer.clip_grad_norm;
    s.ignore_index = cfg.loss.ignore_index;
    s.rng_seed = seed;
    if (cfg.data.train) {
        s.batch_size = cfg.data.train->batch_size;
        data::TransformChain chain(cfg.data.train->transforms);
        if (!chain.empty())
            s.augment = [chain](Image& img, SegMask& mask, std::mt19937_64& rng) { chain.apply(img, &mask, rng); };
    }
    return s;
}

/// Eval-time chain for inputs the model sees outside training (validation, scoring).
inline data::TransformChain eval_chain(const config::RunConfig& cfg) {
    return data::TransformChain(cfg.data.train ? cfg.data.train->transforms : std::vector<config::TransformSpec>{});
}

inline std::vector<LabeledImage> prepare_eval(const data::TransformChain& chain, std::vector<LabeledImage> items) {
    for (auto& d : items) chain.apply_eval(d.image, &d.mask);
    return items;
}

/// Snapshot named by `path`, else by MODEL.WEIGHTS_INIT; checked against the configured
/// architecture.
inline std::optional<TrainedModel> initial_weights(const config::RunConfig& cfg,
                                                   const std::optional<std::filesystem::path>& path = std::nullopt) {
    std::optional<std::filesystem::path> p = path;
    if (!p && cfg.model.weights_init && !cfg.model.weights_init->empty()) p = *cfg.model.weights_init;
    if (!p) return std::nullopt;
    auto m = load_snapshot(*p);
    if (!(m.arch == architecture_from(cfg.model)))
        throw UsageError("weights file " + p->string() + " does not match the configured model");
    return m;
}

/// Trains from raw (untransformed) pairs: train data is augmented per draw, validation data
/// goes through the eval chain once.
inline TrainedModel train(const config::RunConfig& cfg, const std::vector<LabeledImage>& train_data,
                          const std::vector<LabeledImage>& val_data, std::uint64_t seed,
                          const std::optional<std::filesystem::path>& init_params = std::nullopt) {
    return train(settings_from(cfg, seed), train_data, prepare_eval(eval_chain(cfg), val_data),
                 initial_weights(cfg, init_params));
}

}  // namespace aloop::seg
