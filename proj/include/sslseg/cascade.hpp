#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sslseg/feature_map.hpp"
#include "sslseg/saab.hpp"
#include "sslseg/tensor_ops.hpp"

namespace sslseg {

struct CascadeConfig {
    int num_units = 4;
    std::vector<int> kernels_per_unit = {5, 10, 30, 100};
    int window = 3;                   // square patch side, odd
    uint64_t seed = 0;
    size_t max_fit_rows = 1'000'000;  // per-unit covariance subsample cap
};

/// A stack of Saab stages with 2x2 max pooling between consecutive stages.
/// Unit u (0-based) runs at 1/2^u of the input resolution. Bank parameters
/// are rounded through f32 at fit time, so features computed from a
/// serialized model match the ones seen during training bit for bit.
struct SslCascade {
    int window = 3;
    std::vector<SaabKernelBank> banks;

    int num_units() const { return static_cast<int>(banks.size()); }
    int total_channels() const {
        int n = 0;
        for (const SaabKernelBank& b : banks) n += b.num_kernels;
        return n;
    }
};

namespace detail {

inline void validate_cascade_config(const CascadeConfig& config) {
    if (config.num_units < 1)
        throw std::invalid_argument("cascade: need at least one unit");
    if (static_cast<int>(config.kernels_per_unit.size()) != config.num_units)
        throw std::invalid_argument("cascade: kernel list length does not match unit count");
    for (int f : config.kernels_per_unit)
        if (f < 2) throw std::invalid_argument("cascade: each unit needs at least 2 kernels");
    if (config.window < 1 || config.window % 2 == 0)
        throw std::invalid_argument("cascade: window must be odd and positive");
}

/// Stack per-image patch matrices into one training matrix. Source shape
/// metadata is meaningless for the stacked result and set to rows x 1.
inline PatchMatrix stack_patch_rows(const std::vector<PatchMatrix>& parts) {
    int64_t rows = 0;
    for (const PatchMatrix& p : parts) rows += p.rows;
    PatchMatrix all;
    all.rows = static_cast<int>(rows);
    all.cols = parts.front().cols;
    all.source_height = all.rows;
    all.source_width = 1;
    all.source_channels = parts.front().source_channels;
    all.data.resize(static_cast<size_t>(all.rows) * all.cols);
    size_t offset = 0;
    for (const PatchMatrix& p : parts) {
        if (p.cols != all.cols)
            throw std::invalid_argument("cascade: images disagree on channel count");
        std::memcpy(all.data.data() + offset, p.data.data(), p.data.size() * sizeof(float));
        offset += p.data.size();
    }
    return all;
}

}  // namespace detail

/// Fit every unit on the pooled outputs of the previous one, pooling all
/// training images in lockstep. Spatial dims must stay even wherever a pool
/// is applied (224x224 inputs survive three pools).
inline SslCascade fit_cascade(const std::vector<FeatureMap>& images, const CascadeConfig& config) {
    detail::validate_cascade_config(config);
    if (images.empty()) throw std::invalid_argument("fit_cascade: no training images");
    for (const FeatureMap& m : images)
        if (m.channels != images.front().channels)
            throw std::invalid_argument("fit_cascade: images disagree on channel count");

    SslCascade cascade;
    cascade.window = config.window;
    cascade.banks.reserve(config.num_units);

    std::vector<FeatureMap> current = images;
    for (int u = 0; u < config.num_units; ++u) {
        if (u > 0)
            for (FeatureMap& m : current) m = max_pool(m);

        std::vector<PatchMatrix> parts;
        parts.reserve(current.size());
        for (const FeatureMap& m : current) parts.push_back(extract_patches(m, config.window));
        PatchMatrix stacked = detail::stack_patch_rows(parts);

        SaabFitOptions fit_options;
        fit_options.seed = config.seed + static_cast<uint64_t>(u);
        fit_options.max_fit_rows = config.max_fit_rows;
        fit_options.quantize_params = true;
        cascade.banks.push_back(fit_saab(stacked, config.kernels_per_unit[u], fit_options));

        if (u + 1 < config.num_units)
            for (size_t i = 0; i < current.size(); ++i)
                current[i] = apply_saab(cascade.banks[u], parts[i]);
    }
    return cascade;
}

/// Run one image through the cascade. Returns one feature map per unit at
/// that unit's native resolution (input res for unit 0, halved per pool).
inline std::vector<FeatureMap> transform_cascade(const SslCascade& cascade, const FeatureMap& image) {
    if (cascade.banks.empty()) throw std::invalid_argument("transform_cascade: empty cascade");
    std::vector<FeatureMap> outputs;
    outputs.reserve(cascade.banks.size());
    FeatureMap current = image;
    for (size_t u = 0; u < cascade.banks.size(); ++u) {
        if (u > 0) current = max_pool(current);
        PatchMatrix patches = extract_patches(current, cascade.window);
        FeatureMap out = apply_saab(cascade.banks[u], patches);
        if (u + 1 < cascade.banks.size()) current = out;
        outputs.push_back(std::move(out));
    }
    return outputs;
}

/// Upsample each unit's output back to the first unit's resolution and stack
/// them channel-wise: unit 0 channels first, then unit 1, and so on.
inline FeatureMap concat_cascade_features(const std::vector<FeatureMap>& unit_outputs) {
    if (unit_outputs.empty())
        throw std::invalid_argument("concat_cascade_features: no unit outputs");
    const int h = unit_outputs.front().height;
    const int w = unit_outputs.front().width;
    std::vector<FeatureMap> upsampled;
    upsampled.reserve(unit_outputs.size());
    for (const FeatureMap& m : unit_outputs)
        upsampled.push_back(m.height == h && m.width == w ? m : upsample_nearest(m, h, w));
    return concat_channels(upsampled);
}

}  // namespace sslseg
