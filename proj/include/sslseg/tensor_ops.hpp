#pragma once

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "sslseg/feature_map.hpp"

namespace sslseg {

/// Flatten the k x k x C neighborhood of every pixel into one row, zero
/// padding outside the image. Window must be odd so each pixel sits at the
/// center (flat index (k*k)/2 * C .. (k*k)/2 * C + C).
inline PatchMatrix extract_patches(const FeatureMap& t, int window) {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("extract_patches: window must be odd and positive");
    const int h = t.height, w = t.width, c = t.channels;
    const int half = window / 2;

    PatchMatrix out;
    out.rows = h * w;
    out.cols = window * window * c;
    out.source_height = h;
    out.source_width = w;
    out.source_channels = c;
    out.data.assign(static_cast<size_t>(out.rows) * out.cols, 0.f);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float* row = out.row(y * w + x);
            for (int dy = -half; dy <= half; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -half; dx <= half; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    const int slot = ((dy + half) * window + (dx + half)) * c;
                    std::memcpy(row + slot, t.pixel(yy, xx), sizeof(float) * c);
                }
            }
        }
    }
    return out;
}

/// Non-overlapping 2x2 max pooling per channel; spatial dimensions must be even.
inline FeatureMap max_pool(const FeatureMap& t) {
    if (t.height % 2 != 0 || t.width % 2 != 0)
        throw std::invalid_argument("max_pool: spatial dimensions must be even");
    FeatureMap out(t.height / 2, t.width / 2, t.channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const float* p00 = t.pixel(2 * y, 2 * x);
            const float* p01 = t.pixel(2 * y, 2 * x + 1);
            const float* p10 = t.pixel(2 * y + 1, 2 * x);
            const float* p11 = t.pixel(2 * y + 1, 2 * x + 1);
            float* dst = out.pixel(y, x);
            for (int c = 0; c < t.channels; ++c)
                dst[c] = std::max(std::max(p00[c], p01[c]), std::max(p10[c], p11[c]));
        }
    }
    return out;
}

/// Nearest-neighbor block replication. Target dimensions must be integer
/// multiples of the source so every source value maps to an exact block.
inline FeatureMap upsample_nearest(const FeatureMap& t, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0 || target_h % t.height != 0 || target_w % t.width != 0)
        throw std::invalid_argument("upsample_nearest: target must be an integer multiple of source");
    const int sy = target_h / t.height;
    const int sx = target_w / t.width;
    FeatureMap out(target_h, target_w, t.channels);
    for (int y = 0; y < target_h; ++y) {
        const int ys = y / sy;
        for (int x = 0; x < target_w; ++x)
            std::memcpy(out.pixel(y, x), t.pixel(ys, x / sx), sizeof(float) * t.channels);
    }
    return out;
}

/// Stack maps along the channel axis in list order; all inputs must share H and W.
inline FeatureMap concat_channels(const std::vector<FeatureMap>& maps) {
    if (maps.empty())
        throw std::invalid_argument("concat_channels: empty input list");
    const int h = maps[0].height, w = maps[0].width;
    int total = 0;
    for (const FeatureMap& m : maps) {
        if (m.height != h || m.width != w)
            throw std::invalid_argument("concat_channels: spatial dimensions differ");
        total += m.channels;
    }
    FeatureMap out(h, w, total);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float* dst = out.pixel(y, x);
            for (const FeatureMap& m : maps) {
                std::memcpy(dst, m.pixel(y, x), sizeof(float) * m.channels);
                dst += m.channels;
            }
        }
    }
    return out;
}

}  // namespace sslseg
