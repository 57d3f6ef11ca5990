#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sslseg/bundle.hpp"
#include "sslseg/cascade.hpp"
#include "sslseg/crf.hpp"
#include "sslseg/data_io.hpp"
#include "sslseg/entropy_select.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/gbdt.hpp"
#include "sslseg/metrics.hpp"

namespace sslseg {

struct PipelineConfig {
    CascadeConfig cascade;
    GbdtConfig gbdt;
    CrfConfig crf;
    double keep_ratio = 0.8;
    bool use_crf = true;
    bool use_featsel = true;  // false runs selection with an all-keep ratio of 1.0
    int entropy_bins = 32;
    int max_train_pixels_per_slice = 3000;
    int background_cap_ratio = 2;  // background pixels per slice <= ratio x largest foreground class
    uint64_t seed = 0;
    int preprocess_size = 224;
};

/// Kept-channel feature rows for the given pixels of one image, reading each
/// unit's native-resolution output through nearest-neighbor index mapping.
/// This is the one feature path shared by training and prediction.
inline FeatureMatrix gather_features(const std::vector<FeatureMap>& unit_outputs,
                                     const std::vector<uint8_t>& keep_mask,
                                     const std::vector<int>& pixels) {
    if (unit_outputs.empty()) throw std::invalid_argument("gather_features: no unit outputs");
    const int h0 = unit_outputs.front().height;
    const int w0 = unit_outputs.front().width;

    struct UnitView {
        const FeatureMap* map;
        int sy, sx;
        std::vector<int> kept;  // channel indices within the unit
    };
    std::vector<UnitView> views;
    int offset = 0;
    int total_kept = 0;
    for (const FeatureMap& m : unit_outputs) {
        if (h0 % m.height != 0 || w0 % m.width != 0)
            throw std::invalid_argument("gather_features: unit output does not divide base shape");
        UnitView v{&m, h0 / m.height, w0 / m.width, {}};
        for (int c = 0; c < m.channels; ++c)
            if (offset + c >= static_cast<int>(keep_mask.size()))
                throw std::invalid_argument("gather_features: mask shorter than channels");
            else if (keep_mask[offset + c])
                v.kept.push_back(c);
        total_kept += static_cast<int>(v.kept.size());
        offset += m.channels;
        views.push_back(std::move(v));
    }
    if (offset != static_cast<int>(keep_mask.size()))
        throw std::invalid_argument("gather_features: mask length does not match channels");
    if (total_kept == 0) throw std::invalid_argument("gather_features: mask keeps no channels");

    FeatureMatrix out;
    out.rows = static_cast<int>(pixels.size());
    out.cols = total_kept;
    out.values.resize(static_cast<size_t>(out.rows) * out.cols);
    float* dst = out.values.data();
    for (int p : pixels) {
        const int y = p / w0;
        const int x = p % w0;
        for (const UnitView& v : views) {
            const FeatureMap& m = *v.map;
            const float* src = m.data.data() +
                               (static_cast<size_t>(y / v.sy) * m.width + x / v.sx) * m.channels;
            for (int c : v.kept) *dst++ = src[c];
        }
    }
    return out;
}

/// All pixels of the base resolution, row-major.
inline FeatureMatrix gather_features(const std::vector<FeatureMap>& unit_outputs,
                                     const std::vector<uint8_t>& keep_mask) {
    const int n = unit_outputs.empty()
                      ? 0
                      : unit_outputs.front().height * unit_outputs.front().width;
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return gather_features(unit_outputs, keep_mask, all);
}

namespace detail {

inline void subsample_sorted(std::vector<int>& items, size_t target, std::mt19937_64& rng) {
    if (items.size() <= target) return;
    for (size_t i = 0; i < target; ++i) {
        const size_t j = i + static_cast<size_t>(rng() % (items.size() - i));
        std::swap(items[i], items[j]);
    }
    items.resize(target);
    std::sort(items.begin(), items.end());
}

}  // namespace detail

/// Class-balanced pixel sampling for one training slice: keep every
/// foreground pixel, cap background at background_cap_ratio times the largest
/// foreground class, then shrink all classes proportionally toward
/// max_pixels. Returns sorted pixel indices.
inline std::vector<int> sample_training_pixels(const LabelMap& labels, int background_cap_ratio,
                                               int max_pixels, std::mt19937_64& rng) {
    if (background_cap_ratio < 1)
        throw std::invalid_argument("sample_training_pixels: cap ratio must be at least 1");
    if (max_pixels < kNumClasses)
        throw std::invalid_argument("sample_training_pixels: max_pixels too small");

    std::vector<int> by_class[kNumClasses];
    for (size_t i = 0; i < labels.data.size(); ++i) {
        if (labels.data[i] >= kNumClasses)
            throw std::invalid_argument("sample_training_pixels: label out of range");
        by_class[labels.data[i]].push_back(static_cast<int>(i));
    }

    size_t largest_fg = 0;
    for (int c = 1; c < kNumClasses; ++c) largest_fg = std::max(largest_fg, by_class[c].size());
    const size_t bg_cap = largest_fg > 0
                              ? largest_fg * static_cast<size_t>(background_cap_ratio)
                              : static_cast<size_t>(max_pixels);
    detail::subsample_sorted(by_class[0], bg_cap, rng);

    size_t total = 0;
    for (const std::vector<int>& v : by_class) total += v.size();
    if (total > static_cast<size_t>(max_pixels)) {
        for (std::vector<int>& v : by_class) {
            if (v.empty()) continue;
            const size_t quota = std::max<size_t>(
                1, v.size() * static_cast<size_t>(max_pixels) / total);
            detail::subsample_sorted(v, quota, rng);
        }
    }

    std::vector<int> out;
    for (const std::vector<int>& v : by_class) out.insert(out.end(), v.begin(), v.end());
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

constexpr uint64_t kSeedStride = 0x9e3779b97f4a7c15ull;

struct TrainSlice {
    FeatureMap image;
    LabelMap labels;
    std::string subject_id;
};

inline std::vector<TrainSlice> load_split(const DatasetManifest& manifest,
                                          const std::string& split, int target,
                                          bool require_labels) {
    std::vector<TrainSlice> out;
    for (const SliceRecord& r : manifest.records) {
        if (r.split != split) continue;
        LoadedSlice s = load_slice(r, manifest.base_dir);
        if (require_labels && !s.has_labels)
            throw std::invalid_argument("split '" + split + "' record " + r.image_path +
                                        " has no labels");
        TrainSlice t;
        t.image = preprocess(s.image, target);
        if (s.has_labels) t.labels = preprocess_labels(s.labels, target);
        t.subject_id = r.subject_id;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace detail

/// Full training pass: preprocess -> cascade -> per-channel class entropy ->
/// channel selection -> balanced pixel sampling -> boosted trees. The CRF
/// config is stored verbatim; nothing in it is learned.
inline ModelBundle train_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                                  std::ostream* log = nullptr) {
    std::vector<detail::TrainSlice> slices =
        detail::load_split(manifest, "train", config.preprocess_size, true);
    if (slices.empty()) throw std::invalid_argument("train_pipeline: empty train split");
    if (!(config.keep_ratio > 0.0) || config.keep_ratio > 1.0)
        throw std::invalid_argument("train_pipeline: keep_ratio must be in (0, 1]");

    std::vector<FeatureMap> images;
    images.reserve(slices.size());
    for (detail::TrainSlice& s : slices) images.push_back(s.image);

    if (log) *log << "fitting cascade on " << images.size() << " slices\n";
    CascadeConfig cascade_config = config.cascade;
    cascade_config.seed = config.seed;
    SslCascade cascade = fit_cascade(images, cascade_config);

    if (log) *log << "transforming training slices\n";
    std::vector<std::vector<FeatureMap>> unit_outputs(slices.size());
    for (size_t i = 0; i < slices.size(); ++i)
        unit_outputs[i] = transform_cascade(cascade, slices[i].image);

    if (log) *log << "scoring channel entropies\n";
    ChannelEntropyAccumulator entropy(cascade.total_channels(), config.entropy_bins);
    for (const std::vector<FeatureMap>& u : unit_outputs) entropy.observe_range(u);
    for (size_t i = 0; i < slices.size(); ++i)
        entropy.observe_histogram(unit_outputs[i], slices[i].labels);
    const std::vector<double> entropies = entropy.entropies();
    const double effective_ratio = config.use_featsel ? config.keep_ratio : 1.0;
    ChannelSelection selection = select_channels(entropies, effective_ratio);

    if (log)
        *log << "sampling training pixels (" << selection.num_kept() << " of "
             << cascade.total_channels() << " channels kept)\n";
    FeatureMatrix train_x;
    train_x.cols = selection.num_kept();
    std::vector<uint8_t> train_y;
    for (size_t i = 0; i < slices.size(); ++i) {
        std::mt19937_64 rng(config.seed + detail::kSeedStride * (static_cast<uint64_t>(i) + 1));
        const std::vector<int> pixels = sample_training_pixels(
            slices[i].labels, config.background_cap_ratio, config.max_train_pixels_per_slice, rng);
        FeatureMatrix part = gather_features(unit_outputs[i], selection.keep_mask, pixels);
        train_x.values.insert(train_x.values.end(), part.values.begin(), part.values.end());
        train_x.rows += part.rows;
        for (int p : pixels) train_y.push_back(slices[i].labels.data[p]);
    }

    if (log) *log << "boosting on " << train_x.rows << " pixels\n";
    GbdtConfig gbdt_config = config.gbdt;
    gbdt_config.seed = config.seed;
    TreeEnsemble ensemble = fit_gbdt(train_x, train_y, gbdt_config);
    if (log && !ensemble.train_loss.empty())
        *log << "train loss " << ensemble.train_loss.front() << " -> "
             << ensemble.train_loss.back() << "\n";

    ModelBundle bundle;
    bundle.cascade = std::move(cascade);
    bundle.keep_mask = std::move(selection.keep_mask);
    bundle.channel_entropies = entropies;
    bundle.channel_min = entropy.channel_mins();
    bundle.channel_max = entropy.channel_maxs();
    bundle.keep_ratio = effective_ratio;
    bundle.ensemble = std::move(ensemble);
    bundle.crf = config.crf;
    bundle.crf_enabled = config.use_crf;
    bundle.preprocess_size = config.preprocess_size;
    bundle.seed = config.seed;
    return bundle;
}

struct PredictResult {
    FeatureMap preprocessed;  // model-resolution single-channel image
    ProbabilityMap probs;     // per-pixel class probabilities
    LabelMap before_crf;      // argmax of probs
    LabelMap after_crf;       // refined labels; equals before_crf when CRF is disabled
};

/// The exact training-time feature path, then boosted probabilities, then
/// optional mean-field refinement against the preprocessed intensities.
inline PredictResult predict(const ModelBundle& bundle, const FeatureMap& raw_image) {
    PredictResult out;
    out.preprocessed = preprocess(raw_image, bundle.preprocess_size);
    const std::vector<FeatureMap> units = transform_cascade(bundle.cascade, out.preprocessed);
    const FeatureMatrix features = gather_features(units, bundle.keep_mask);
    out.probs.height = out.preprocessed.height;
    out.probs.width = out.preprocessed.width;
    out.probs.values = predict_proba(bundle.ensemble, features);
    out.before_crf = argmax_labels(out.probs);
    out.after_crf = bundle.crf_enabled
                        ? mean_field_refine(out.probs, out.preprocessed, bundle.crf)
                        : out.before_crf;
    return out;
}

struct EvalOptions {
    std::string split = "test";
    bool per_subject = false;  // pool pixel counts per subject before averaging
    bool use_crf_output = true;
};

inline DiceReport evaluate_manifest(const ModelBundle& bundle, const DatasetManifest& manifest,
                                    const EvalOptions& options = {}) {
    std::vector<detail::TrainSlice> slices =
        detail::load_split(manifest, options.split, bundle.preprocess_size, true);
    if (slices.empty())
        throw std::invalid_argument("evaluate_manifest: split '" + options.split + "' is empty");

    std::vector<LabelMap> preds, truths;
    std::vector<std::string> subjects;
    for (detail::TrainSlice& s : slices) {
        PredictResult r = predict(bundle, s.image);
        preds.push_back(options.use_crf_output ? std::move(r.after_crf) : std::move(r.before_crf));
        truths.push_back(std::move(s.labels));
        subjects.push_back(std::move(s.subject_id));
    }

    if (!options.per_subject) return dice_report_slices(preds, truths);

    // Subject mode: pool overlap counts across each subject's slices, score
    // each subject once per class, then average over subjects.
    std::vector<std::string> order;
    for (const std::string& id : subjects)
        if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
    DiceReport report;
    report.num_slices = static_cast<int>(preds.size());
    for (int cls = 1; cls < kNumClasses; ++cls) {
        double sum = 0.0;
        for (const std::string& id : order) {
            DiceCounts pooled;
            for (size_t i = 0; i < preds.size(); ++i)
                if (subjects[i] == id) pooled.add(dice_counts(preds[i], truths[i], cls));
            sum += dice_from_counts(pooled);
        }
        report.per_class[cls - 1] = sum / static_cast<double>(order.size());
    }
    report.average = (report.per_class[0] + report.per_class[1] + report.per_class[2]) / 3.0;
    return report;
}

struct SweepRow {
    int units = 0;
    double mean_dice = 0.0;
    double std_dice = 0.0;  // population std over split seeds
};

/// Depth sensitivity: for each unit count, re-deal the train/val subjects
/// num_seeds times (test subjects never move), retrain, and score the
/// validation split. Kernel counts reuse the base list, truncated or extended
/// by repeating its last entry.
inline std::vector<SweepRow> sweep_units(const DatasetManifest& manifest,
                                         const std::vector<int>& unit_counts,
                                         const PipelineConfig& base, int num_seeds,
                                         std::ostream* log = nullptr) {
    if (unit_counts.empty()) throw std::invalid_argument("sweep_units: no unit counts");
    for (int u : unit_counts)
        if (u < 1) throw std::invalid_argument("sweep_units: unit counts must be positive");
    if (num_seeds < 1) throw std::invalid_argument("sweep_units: need at least one seed");

    std::vector<SliceRecord> pool;
    std::vector<std::string> train_subjects, val_subjects;
    for (const SliceRecord& r : manifest.records) {
        if (r.split == "test") continue;
        pool.push_back(r);
        std::vector<std::string>& bucket = r.split == "train" ? train_subjects : val_subjects;
        if (std::find(bucket.begin(), bucket.end(), r.subject_id) == bucket.end())
            bucket.push_back(r.subject_id);
    }
    const int train_n = static_cast<int>(train_subjects.size());
    const int val_n = static_cast<int>(val_subjects.size());
    if (train_n < 1 || val_n < 1)
        throw std::invalid_argument("sweep_units: need non-empty train and val splits");

    std::vector<SweepRow> rows;
    for (int units : unit_counts) {
        std::vector<int> kernels(base.cascade.kernels_per_unit.begin(),
                                 base.cascade.kernels_per_unit.end());
        if (static_cast<int>(kernels.size()) > units) kernels.resize(units);
        while (static_cast<int>(kernels.size()) < units)
            kernels.push_back(kernels.empty() ? 5 : kernels.back());

        std::vector<double> scores;
        for (int s = 0; s < num_seeds; ++s) {
            DatasetManifest resplit;
            resplit.base_dir = manifest.base_dir;
            resplit.records = split_manifest(pool, base.seed + static_cast<uint64_t>(s), train_n,
                                             val_n, 0);
            PipelineConfig run = base;
            run.cascade.num_units = units;
            run.cascade.kernels_per_unit = kernels;
            run.seed = base.seed + static_cast<uint64_t>(s);
            if (log) *log << "sweep: units=" << units << " seed=" << run.seed << "\n";
            ModelBundle bundle = train_pipeline(resplit, run);
            EvalOptions eval;
            eval.split = "val";
            scores.push_back(evaluate_manifest(bundle, resplit, eval).average);
        }
        SweepRow row;
        row.units = units;
        double mean = 0.0;
        for (double v : scores) mean += v;
        mean /= static_cast<double>(scores.size());
        double var = 0.0;
        for (double v : scores) var += (v - mean) * (v - mean);
        var /= static_cast<double>(scores.size());
        row.mean_dice = mean;
        row.std_dice = std::sqrt(var);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace sslseg
