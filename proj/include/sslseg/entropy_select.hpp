#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sslseg/feature_map.hpp"

namespace sslseg {

/// Two-pass per-channel class-conditional histogram entropy.
///
/// Pass 1 finds each channel's value range over every training pixel. Pass 2
/// fills one fixed-width histogram per (channel, class) over that range. A
/// channel's score is the sum over classes of the histogram entropy
/// -sum_b p_b ln p_b; classes with no pixels contribute zero. Feature maps
/// are fed per unit at native resolution; labels stay at full resolution and
/// coarser units are read through nearest-neighbor index mapping, which
/// matches scoring the upsampled maps exactly.
class ChannelEntropyAccumulator {
  public:
    ChannelEntropyAccumulator(int num_channels, int num_bins)
        : num_channels_(num_channels), num_bins_(num_bins) {
        if (num_channels < 1)
            throw std::invalid_argument("entropy: need at least one channel");
        if (num_bins < 1)
            throw std::invalid_argument("entropy: need at least one bin");
        mins_.assign(num_channels, std::numeric_limits<float>::infinity());
        maxs_.assign(num_channels, -std::numeric_limits<float>::infinity());
    }

    /// Pass 1: extend per-channel ranges with one image's unit outputs.
    /// Replication by upsampling cannot change a range, so native pixels suffice.
    void observe_range(const std::vector<FeatureMap>& unit_outputs) {
        check_layout(unit_outputs);
        int base = 0;
        for (const FeatureMap& m : unit_outputs) {
            const float* v = m.data.data();
            for (int p = 0; p < m.height * m.width; ++p, v += m.channels)
                for (int c = 0; c < m.channels; ++c) {
                    mins_[base + c] = std::min(mins_[base + c], v[c]);
                    maxs_[base + c] = std::max(maxs_[base + c], v[c]);
                }
            base += m.channels;
        }
    }

    /// Pass 2: count (channel, class, bin) hits for one image. Labels are at
    /// the first unit's resolution; unit resolutions must divide it evenly.
    void observe_histogram(const std::vector<FeatureMap>& unit_outputs, const LabelMap& labels) {
        check_layout(unit_outputs);
        if (counts_.empty())
            counts_.assign(static_cast<size_t>(num_channels_) * kNumClasses * num_bins_, 0);
        if (labels.height != unit_outputs.front().height ||
            labels.width != unit_outputs.front().width)
            throw std::invalid_argument("entropy: label shape does not match first unit output");

        int base = 0;
        for (const FeatureMap& m : unit_outputs) {
            if (labels.height % m.height != 0 || labels.width % m.width != 0)
                throw std::invalid_argument("entropy: unit output does not divide label shape");
            const int sy = labels.height / m.height;
            const int sx = labels.width / m.width;
            for (int y = 0; y < labels.height; ++y) {
                const float* row = m.data.data() +
                                   static_cast<size_t>(y / sy) * m.width * m.channels;
                const uint8_t* lab = labels.data.data() + static_cast<size_t>(y) * labels.width;
                for (int x = 0; x < labels.width; ++x) {
                    const float* v = row + static_cast<size_t>(x / sx) * m.channels;
                    const int cls = lab[x];
                    if (cls >= kNumClasses)
                        throw std::invalid_argument("entropy: label value out of range");
                    for (int c = 0; c < m.channels; ++c)
                        ++counts_[bin_index(base + c, cls, v[c])];
                }
            }
            base += m.channels;
        }
    }

    /// Per-channel value ranges from pass 1; these define the histogram bins.
    const std::vector<float>& channel_mins() const { return mins_; }
    const std::vector<float>& channel_maxs() const { return maxs_; }

    /// Final per-channel scores: sum over classes of -sum_b p_b ln p_b.
    std::vector<double> entropies() const {
        std::vector<double> out(num_channels_, 0.0);
        if (counts_.empty()) return out;
        for (int ch = 0; ch < num_channels_; ++ch) {
            double total = 0.0;
            for (int cls = 0; cls < kNumClasses; ++cls) {
                const int64_t* h = counts_.data() +
                                   (static_cast<size_t>(ch) * kNumClasses + cls) * num_bins_;
                int64_t n = 0;
                for (int b = 0; b < num_bins_; ++b) n += h[b];
                if (n == 0) continue;
                double hsum = 0.0;
                for (int b = 0; b < num_bins_; ++b) {
                    if (h[b] == 0) continue;
                    const double p = static_cast<double>(h[b]) / static_cast<double>(n);
                    hsum -= p * std::log(p);
                }
                total += hsum;
            }
            out[ch] = total;
        }
        return out;
    }

  private:
    void check_layout(const std::vector<FeatureMap>& unit_outputs) const {
        if (unit_outputs.empty())
            throw std::invalid_argument("entropy: no unit outputs");
        int n = 0;
        for (const FeatureMap& m : unit_outputs) n += m.channels;
        if (n != num_channels_)
            throw std::invalid_argument("entropy: channel count does not match accumulator");
    }

    size_t bin_index(int channel, int cls, float value) const {
        const float lo = mins_[channel];
        const float hi = maxs_[channel];
        int b = 0;  // a constant channel lands everything in bin 0
        if (hi > lo) {
            b = static_cast<int>((static_cast<double>(value) - lo) / (static_cast<double>(hi) - lo) *
                                 num_bins_);
            b = std::clamp(b, 0, num_bins_ - 1);
        }
        return (static_cast<size_t>(channel) * kNumClasses + cls) * num_bins_ + b;
    }

    int num_channels_;
    int num_bins_;
    std::vector<float> mins_;
    std::vector<float> maxs_;
    std::vector<int64_t> counts_;
};

/// Per-channel class-conditional entropies of full-resolution feature maps.
/// Convenience wrapper over the accumulator for already-stacked features.
inline std::vector<double> class_entropy(const std::vector<FeatureMap>& features,
                                         const std::vector<LabelMap>& labels, int num_bins = 32) {
    if (features.empty()) throw std::invalid_argument("class_entropy: no images");
    if (features.size() != labels.size())
        throw std::invalid_argument("class_entropy: image and label counts differ");
    ChannelEntropyAccumulator acc(features.front().channels, num_bins);
    for (const FeatureMap& m : features) acc.observe_range({m});
    for (size_t i = 0; i < features.size(); ++i) acc.observe_histogram({features[i]}, labels[i]);
    return acc.entropies();
}

/// Which channels survive selection, in the cascade's unit-major channel order.
struct ChannelSelection {
    std::vector<uint8_t> keep_mask;  // 1 = kept
    std::vector<double> entropies;   // score per channel, lower = kept first

    int num_kept() const {
        int n = 0;
        for (uint8_t k : keep_mask) n += k;
        return n;
    }
};

/// Keep the max(1, floor(keep_ratio * C)) channels with the lowest entropy.
/// Ties break toward the lower channel index, i.e. earlier unit, then earlier
/// kernel within the unit.
inline ChannelSelection select_channels(const std::vector<double>& entropies, double keep_ratio) {
    if (entropies.empty()) throw std::invalid_argument("select_channels: no channels");
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
        throw std::invalid_argument("select_channels: keep_ratio must be in (0, 1]");
    for (double e : entropies)
        if (!std::isfinite(e))
            throw std::invalid_argument("select_channels: non-finite entropy score");

    const int total = static_cast<int>(entropies.size());
    const int keep = std::max(1, static_cast<int>(std::floor(keep_ratio * total)));

    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return entropies[a] < entropies[b]; });

    ChannelSelection sel;
    sel.entropies = entropies;
    sel.keep_mask.assign(total, 0);
    for (int i = 0; i < keep; ++i) sel.keep_mask[order[i]] = 1;
    return sel;
}

/// Drop masked channels from a stacked feature map, preserving order.
inline FeatureMap apply_selection(const FeatureMap& features, const std::vector<uint8_t>& keep_mask) {
    if (static_cast<int>(keep_mask.size()) != features.channels)
        throw std::invalid_argument("apply_selection: mask length does not match channels");
    int kept = 0;
    for (uint8_t k : keep_mask) kept += k;
    if (kept == 0) throw std::invalid_argument("apply_selection: mask keeps no channels");

    FeatureMap out(features.height, features.width, kept);
    const float* src = features.data.data();
    float* dst = out.data.data();
    for (int p = 0; p < features.height * features.width; ++p, src += features.channels)
        for (int c = 0; c < features.channels; ++c)
            if (keep_mask[c]) *dst++ = src[c];
    return out;
}

}  // namespace sslseg
