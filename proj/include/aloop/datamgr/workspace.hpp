#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"
#include "aloop/common/fs.hpp"
#include "aloop/common/grid.hpp"
#include "aloop/common/log.hpp"
#include "aloop/common/png.hpp"
#include "aloop/config/run_config.hpp"
#include "aloop/datamgr/annotation.hpp"
#include "aloop/datamgr/transforms.hpp"

namespace aloop::data {

namespace stdfs = std::filesystem;

enum class Partition { annotated, unannotated, in_flight };
enum class Split { train, validation, test };

inline Partition parse_partition(const std::string& s) {
    if (s == "annotated") return Partition::annotated;
    if (s == "unannotated") return Partition::unannotated;
    if (s == "in_flight") return Partition::in_flight;
    throw UsageError("unknown partition '" + s + "' (annotated, unannotated, in_flight)");
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw UsageError("unknown split '" + s + "' (train, validation, test)");
}

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

struct Sample {
    std::string sample_id;
    std::string volume_id;
    int slice_index = 0;
    stdfs::path image_path;
    int height = 0;
    int width = 0;
    // Set by list_set for annotated samples.
    std::optional<stdfs::path> annotation_path;
    std::optional<stdfs::path> mask_path;
};

struct PoolState {
    std::set<std::string> annotated, unannotated, in_flight;

    bool operator==(const PoolState&) const = default;
    std::size_t total() const { return annotated.size() + unannotated.size() + in_flight.size(); }

    /// Pairwise disjoint and exactly covering `all`.
    bool is_partition_of(const std::set<std::string>& all) const {
        if (total() != all.size()) return false;
        for (const auto* s : {&annotated, &unannotated, &in_flight})
            for (const auto& id : *s)
                if (!all.count(id)) return false;
        std::set<std::string> u(annotated);
        u.insert(unannotated.begin(), unannotated.end());
        u.insert(in_flight.begin(), in_flight.end());
        return u.size() == all.size();
    }

    nlohmann::json to_json() const {
        return {{"annotated", annotated}, {"unannotated", unannotated}, {"in_flight", in_flight}};
    }
};

struct Rejection {
    std::string sample_id;
    std::string reason;
};

struct InitReport {
    PoolState pool;
    std::vector<Rejection> rejected;
};

struct RecordStatus {
    std::string sample_id;
    bool accepted = false;
    std::string reason;      // set when rejected
    stdfs::path mask_path;   // set when accepted
};

/// The on-disk sample pool and annotation store. All mutations run under one exclusive
/// lock and persist before returning; readers share the lock and see committed state only.
///
/// Layout under the root:
///   layers.json                         boundary class names, top to bottom
///   volumes/<vid>/meta.json             {slice_count, height, width, ...}
///   volumes/<vid>/slice_<idx>.png       8-bit grayscale
///   annotations/<sample_id>.json        AnnotationRecord
///   masks/<sample_id>.png               rendered mask, 255 = IGNORE
///   ground_truth/<sample_id>.png        optional reference masks for evaluation splits
///   pool_state.json, splits.json
class Workspace {
public:
    explicit Workspace(stdfs::path root) : root_(std::move(root)) {}

    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

    const stdfs::path& root() const { return root_; }

    InitReport initialize_with_files() {
        std::unique_lock lock(mu_);
        const auto vol_dir = root_ / "volumes";
        if (!stdfs::is_directory(vol_dir)) throw IoError("workspace has no volume index: " + vol_dir.string());

        layers_ = default_layers();
        if (stdfs::exists(root_ / "layers.json")) layers_ = fs::read_json(root_ / "layers.json").get<std::vector<std::string>>();
        if (layers_.empty()) throw IoError("layers.json lists no boundary classes");

        InitReport report;
        samples_.clear();
        std::vector<stdfs::path> vdirs;
        for (const auto& e : stdfs::directory_iterator(vol_dir))
            if (e.is_directory()) vdirs.push_back(e.path());
        std::sort(vdirs.begin(), vdirs.end());
        for (const auto& vdir : vdirs) register_volume(vdir, report.rejected);

        PoolState ps;
        std::set<std::string> persisted_in_flight;
        if (stdfs::exists(root_ / "pool_state.json")) {
            auto j = fs::read_json(root_ / "pool_state.json");
            if (j.contains("in_flight")) persisted_in_flight = j["in_flight"].get<std::set<std::string>>();
        }
        for (const auto& [id, s] : samples_) {
            const auto ann = annotation_path(id);
            if (stdfs::exists(ann)) {
                if (!stdfs::exists(mask_path(id))) rerender(id, s);
                ps.annotated.insert(id);
            } else if (persisted_in_flight.count(id)) {
                ps.in_flight.insert(id);
            } else {
                ps.unannotated.insert(id);
            }
        }
        pool_ = std::move(ps);
        load_splits();
        initialized_ = true;
        persist_pool();
        report.pool = pool_;
        for (const auto& r : report.rejected) log().warn("rejected sample {}: {}", r.sample_id, r.reason);
        return report;
    }

    bool initialized() const {
        std::shared_lock lock(mu_);
        return initialized_;
    }

    std::vector<std::string> layer_order() const {
        std::shared_lock lock(mu_);
        require_init();
        return layers_;
    }

    int num_classes() const { return static_cast<int>(layer_order().size()) + 1; }

    PoolState pool_state() const {
        std::shared_lock lock(mu_);
        require_init();
        return pool_;
    }

    std::set<std::string> all_ids() const {
        std::shared_lock lock(mu_);
        require_init();
        std::set<std::string> out;
        for (const auto& [id, s] : samples_) out.insert(id);
        return out;
    }

    Sample sample(const std::string& id) const {
        std::shared_lock lock(mu_);
        require_init();
        return find(id);
    }

    std::vector<Sample> list_set(const std::string& partition) const { return list_set(parse_partition(partition)); }

    std::vector<Sample> list_set(Partition p) const {
        std::shared_lock lock(mu_);
        require_init();
        const auto& ids = p == Partition::annotated ? pool_.annotated
                          : p == Partition::unannotated ? pool_.unannotated
                                                        : pool_.in_flight;
        std::vector<Sample> out;
        out.reserve(ids.size());
        for (const auto& id : ids) {
            Sample s = samples_.at(id);
            if (p == Partition::annotated) {
                s.annotation_path = annotation_path(id);
                s.mask_path = mask_path(id);
            }
            out.push_back(std::move(s));
        }
        return out;
    }

    /// Moves `ids` from unannotated to in-flight. All-or-nothing.
    PoolState remove_from_unannotated_set(const std::vector<std::string>& ids) {
        std::unique_lock lock(mu_);
        require_init();
        std::set<std::string> unique(ids.begin(), ids.end());
        if (unique.size() != ids.size()) throw UsageError("remove_from_unannotated_set: duplicate ids");
        for (const auto& id : ids)
            if (!pool_.unannotated.count(id))
                throw UsageError("remove_from_unannotated_set: '" + id + "' is not in the unannotated set");
        if (ids.empty()) return pool_;
        PoolState next = pool_;
        for (const auto& id : ids) {
            next.unannotated.erase(id);
            next.in_flight.insert(id);
        }
        commit(std::move(next));
        return pool_;
    }

    /// Puts in-flight samples back into the unannotated set (an abandoned query).
    PoolState release_in_flight(const std::vector<std::string>& ids) {
        std::unique_lock lock(mu_);
        require_init();
        for (const auto& id : ids)
            if (!pool_.in_flight.count(id)) throw UsageError("release_in_flight: '" + id + "' is not in flight");
        PoolState next = pool_;
        for (const auto& id : ids) {
            next.in_flight.erase(id);
            next.unannotated.insert(id);
        }
        commit(std::move(next));
        return pool_;
    }

    /// Stores each record, renders and writes its mask, and marks the sample annotated.
    /// Records are independent: an invalid one is reported and the rest proceed. A record
    /// for an already annotated sample replaces the earlier one.
    std::vector<RecordStatus> update_annotations(const std::vector<AnnotationRecord>& records) {
        std::unique_lock lock(mu_);
        require_init();
        std::vector<RecordStatus> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            RecordStatus st{r.sample_id, false, {}, {}};
            auto it = samples_.find(r.sample_id);
            if (it == samples_.end()) {
                st.reason = "unknown sample";
            } else if (auto why = check_record(r, it->second.height, it->second.width, layers_)) {
                st.reason = *why;
            } else {
                auto mask = render_mask(r, it->second.height, it->second.width, layers_);
                png::write_gray8(mask_path(r.sample_id), mask_to_file(mask));
                AnnotationRecord stored = r;
                if (stored.timestamp.empty()) stored.timestamp = utc_now_iso8601();
                fs::write_json(annotation_path(r.sample_id), to_json(stored));
                PoolState next = pool_;
                next.unannotated.erase(r.sample_id);
                next.in_flight.erase(r.sample_id);
                next.annotated.insert(r.sample_id);
                commit(std::move(next));
                st.accepted = true;
                st.mask_path = mask_path(r.sample_id);
            }
            if (!st.accepted) log().warn("annotation for '{}' rejected: {}", r.sample_id, st.reason);
            out.push_back(std::move(st));
        }
        return out;
    }

    Image load_image(const std::string& id) const {
        Sample s = sample(id);
        auto g = png::read_gray8(s.image_path);
        Image img(g.height, g.width);
        for (std::size_t i = 0; i < g.data.size(); ++i) img.pixels[i] = g.data[i];
        return img;
    }

    std::optional<AnnotationRecord> load_annotation(const std::string& id) const {
        sample(id);
        const auto p = annotation_path(id);
        if (!stdfs::exists(p)) return std::nullopt;
        return record_from_json(fs::read_json(p));
    }

    /// The rendered annotation mask, if the sample is annotated.
    std::optional<SegMask> load_mask(const std::string& id) const {
        sample(id);
        return read_mask(mask_path(id));
    }

    std::optional<SegMask> load_ground_truth(const std::string& id) const {
        sample(id);
        return read_mask(root_ / "ground_truth" / (id + ".png"));
    }

    // ---- splits -------------------------------------------------------------------------

    void write_splits(const std::map<Split, std::vector<std::string>>& splits) {
        std::unique_lock lock(mu_);
        require_init();
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [split, ids] : splits) {
            for (const auto& id : ids)
                if (!samples_.count(id)) throw UsageError("write_splits: unknown sample '" + id + "'");
            j[to_string(split)] = std::set<std::string>(ids.begin(), ids.end());
        }
        fs::write_json(root_ / "splits.json", j);
        load_splits();
    }

    /// Sample ids assigned to a split, ascending. Without splits.json every sample is in
    /// train and the evaluation splits are empty.
    std::vector<std::string> split_ids(Split split) const {
        std::shared_lock lock(mu_);
        require_init();
        if (!splits_) {
            if (split != Split::train) return {};
            std::vector<std::string> all;
            for (const auto& [id, s] : samples_) all.push_back(id);
            return all;
        }
        auto it = splits_->find(split);
        return it == splits_->end() ? std::vector<std::string>{} : it->second;
    }

    /// Unannotated samples eligible for querying (those in the train split).
    std::vector<std::string> queryable_pool() const {
        auto train = split_ids(Split::train);
        auto ps = pool_state();
        std::vector<std::string> out;
        for (const auto& id : train)
            if (ps.unannotated.count(id)) out.push_back(id);
        return out;
    }

    /// Labelled images of a split without transforms. Train serves annotated samples;
    /// validation and test serve annotated masks, falling back to ground truth.
    std::vector<LabeledImage> labeled(Split split) const {
        std::vector<LabeledImage> out;
        const auto annotated = pool_state().annotated;
        for (const auto& id : split_ids(split)) {
            std::optional<SegMask> m;
            if (annotated.count(id)) m = load_mask(id);
            if (!m && split != Split::train) m = load_ground_truth(id);
            if (!m) continue;
            out.push_back({id, load_image(id), std::move(*m)});
        }
        return out;
    }

    /// Batches of transformed (image, mask) pairs for a split. Train order is shuffled by
    /// `rng_seed`; the data limit applies after shuffling.
    std::vector<std::vector<LabeledImage>> get_dataloader(Split split, const config::SplitSpec& spec,
                                                          std::uint64_t rng_seed) const {
        if (spec.batch_size < 1) throw UsageError("get_dataloader: batch size must be >= 1");
        TransformChain chain(spec.transforms);
        auto items = labeled(split);
        std::mt19937_64 rng(rng_seed);
        if (split == Split::train) std::shuffle(items.begin(), items.end(), rng);
        if (spec.data_limit && items.size() > static_cast<std::size_t>(*spec.data_limit))
            items.resize(static_cast<std::size_t>(*spec.data_limit));
        for (auto& it : items) chain.apply(it.image, &it.mask, rng);

        const bool drop_last = spec.extras.value("DROP_LAST", false);
        std::vector<std::vector<LabeledImage>> batches;
        for (std::size_t i = 0; i < items.size(); i += spec.batch_size) {
            const std::size_t end = std::min(items.size(), i + spec.batch_size);
            if (drop_last && end - i < static_cast<std::size_t>(spec.batch_size)) break;
            batches.emplace_back(std::make_move_iterator(items.begin() + i), std::make_move_iterator(items.begin() + end));
        }
        return batches;
    }

    std::vector<std::string> volume_ids() const {
        std::shared_lock lock(mu_);
        require_init();
        std::set<std::string> v;
        for (const auto& [id, s] : samples_) v.insert(s.volume_id);
        return {v.begin(), v.end()};
    }

    std::vector<Sample> volume_samples(const std::string& volume_id) const {
        std::shared_lock lock(mu_);
        require_init();
        std::vector<Sample> out;
        for (const auto& [id, s] : samples_)
            if (s.volume_id == volume_id) out.push_back(s);
        std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.slice_index < b.slice_index; });
        return out;
    }

    /// The middle slice plus random picks split between the two halves around it.
    std::vector<Sample> select_slices(const std::string& volume_id, int count, std::mt19937_64& rng) const {
        auto slices = volume_samples(volume_id);
        if (slices.empty()) throw UsageError("select_slices: unknown volume '" + volume_id + "'");
        if (count < 1) throw UsageError("select_slices: count must be >= 1");
        const int n = static_cast<int>(slices.size());
        if (n < 3) {
            log().warn("select_slices: volume {} has only {} slices, returning all", volume_id, n);
            return slices;
        }
        const int mid = n / 2;
        std::vector<int> lower(mid), upper(n - mid - 1);
        std::iota(lower.begin(), lower.end(), 0);
        std::iota(upper.begin(), upper.end(), mid + 1);
        std::shuffle(lower.begin(), lower.end(), rng);
        std::shuffle(upper.begin(), upper.end(), rng);
        std::vector<int> picked{mid};
        std::size_t li = 0, ui = 0;
        for (int k = 1; k < count; ++k) {
            const bool take_lower = (k % 2 == 1 && li < lower.size()) || ui >= upper.size();
            if (take_lower && li < lower.size()) picked.push_back(lower[li++]);
            else if (ui < upper.size()) picked.push_back(upper[ui++]);
        }
        std::sort(picked.begin(), picked.end());
        std::vector<Sample> out;
        for (int i : picked) out.push_back(slices[i]);
        return out;
    }

    static std::vector<std::string> default_layers() { return {"ILM", "RPE", "BM"}; }

    static png::Gray8 mask_to_file(const SegMask& m) {
        png::Gray8 g{m.height, m.width, std::vector<std::uint8_t>(m.size())};
        for (std::size_t i = 0; i < m.size(); ++i)
            g.data[i] = m.labels[i] == SegMask::kIgnore ? SegMask::kIgnoreFileValue : static_cast<std::uint8_t>(m.labels[i]);
        return g;
    }

private:
    stdfs::path annotation_path(const std::string& id) const { return root_ / "annotations" / (id + ".json"); }
    stdfs::path mask_path(const std::string& id) const { return root_ / "masks" / (id + ".png"); }

    void require_init() const {
        if (!initialized_) throw UsageError("workspace not initialized");
    }

    const Sample& find(const std::string& id) const {
        auto it = samples_.find(id);
        if (it == samples_.end()) throw UsageError("unknown sample '" + id + "'");
        return it->second;
    }

    std::optional<SegMask> read_mask(const stdfs::path& p) const {
        if (!stdfs::exists(p)) return std::nullopt;
        auto g = png::read_gray8(p);
        const int K = static_cast<int>(layers_.size()) + 1;
        SegMask m(g.height, g.width, K);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const auto v = g.data[i];
            if (v == SegMask::kIgnoreFileValue) continue;
            if (v >= K) throw IoError("mask " + p.string() + " has class " + std::to_string(v) + " >= K");
            m.labels[i] = static_cast<std::int16_t>(v);
        }
        return m;
    }

    void register_volume(const stdfs::path& vdir, std::vector<Rejection>& rejected) {
        const std::string vid = vdir.filename().string();
        nlohmann::json meta;
        try {
            meta = fs::read_json(vdir / "meta.json");
        } catch (const std::exception& e) {
            rejected.push_back({vid, std::string("volume meta unreadable: ") + e.what()});
            return;
        }
        const int count = meta.value("slice_count", -1), H = meta.value("height", -1), W = meta.value("width", -1);
        if (count < 0 || H <= 0 || W <= 0) {
            rejected.push_back({vid, "volume meta needs slice_count, height and width"});
            return;
        }
        for (int i = 0; i < count; ++i) {
            char suffix[16];
            std::snprintf(suffix, sizeof suffix, "_s%03d", i);
            Sample s{vid + suffix, vid, i, vdir / ("slice_" + std::to_string(i) + ".png"), H, W, {}, {}};
            if (!stdfs::exists(s.image_path)) {
                rejected.push_back({s.sample_id, "missing image " + s.image_path.string()});
                continue;
            }
            try {
                auto g = png::read_gray8(s.image_path);
                if (g.height != H || g.width != W) {
                    rejected.push_back({s.sample_id, "image is " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                                                         ", meta says " + std::to_string(H) + "x" + std::to_string(W)});
                    continue;
                }
            } catch (const IoError& e) {
                rejected.push_back({s.sample_id, e.what()});
                continue;
            }
            samples_.emplace(s.sample_id, std::move(s));
        }
    }

    void rerender(const std::string& id, const Sample& s) {
        auto rec = record_from_json(fs::read_json(annotation_path(id)));
        png::write_gray8(mask_path(id), mask_to_file(render_mask(rec, s.height, s.width, layers_)));
    }

    void load_splits() {
        splits_.reset();
        const auto p = root_ / "splits.json";
        if (!stdfs::exists(p)) return;
        auto j = fs::read_json(p);
        std::map<Split, std::vector<std::string>> m;
        for (auto split : {Split::train, Split::validation, Split::test}) {
            if (!j.contains(to_string(split))) continue;
            auto ids = j[to_string(split)].get<std::vector<std::string>>();
            std::erase_if(ids, [this](const std::string& id) { return !samples_.count(id); });
            std::sort(ids.begin(), ids.end());
            m[split] = std::move(ids);
        }
        splits_ = std::move(m);
    }

    void commit(PoolState next) {
        pool_ = std::move(next);
        persist_pool();
    }

    void persist_pool() const { fs::write_json(root_ / "pool_state.json", pool_.to_json()); }

    stdfs::path root_;
    mutable std::shared_mutex mu_;
    bool initialized_ = false;
    std::vector<std::string> layers_;
    std::map<std::string, Sample> samples_;
    PoolState pool_;
    std::optional<std::map<Split, std::vector<std::string>>> splits_;
};

}  // namespace aloop::data
