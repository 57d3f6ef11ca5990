#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sslseg/errors.hpp"

namespace sslseg {

// Tissue classes. Background is 0 so label maps default to "nothing".
inline constexpr int kBackground = 0;
inline constexpr int kRightVentricle = 1;
inline constexpr int kMyocardium = 2;
inline constexpr int kLeftVentricle = 3;
inline constexpr int kNumClasses = 4;

/// Dense H x W x C tensor in row-major (H, W, C) order. This is the unit of
/// data that flows between every stage: grayscale slices are H x W x 1 and
/// transform responses are H x W x F.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(c), 0.f) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("FeatureMap: dimensions must be positive");
    }

    size_t size() const { return data.size(); }

    size_t index(int y, int x, int c) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c) { return data[index(y, x, c)]; }
    float at(int y, int x, int c) const { return data[index(y, x, c)]; }

    /// Pointer to the C contiguous channel values of one pixel.
    const float* pixel(int y, int x) const { return data.data() + index(y, x, 0); }
    float* pixel(int y, int x) { return data.data() + index(y, x, 0); }

    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

inline bool all_finite(const FeatureMap& t) {
    for (float v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Per-pixel class ids in {0..3}, row-major.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;

    LabelMap() = default;
    LabelMap(int h, int w)
        : height(h), width(w), data(static_cast<size_t>(h) * static_cast<size_t>(w), 0) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("LabelMap: dimensions must be positive");
    }

    size_t size() const { return data.size(); }
    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

/// Per-pixel class distributions, H x W x 4 row-major, kept in double so that
/// normalization survives downstream tolerance checks.
struct ProbabilityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // height * width * kNumClasses

    ProbabilityMap() = default;
    ProbabilityMap(int h, int w)
        : height(h), width(w),
          values(static_cast<size_t>(h) * static_cast<size_t>(w) * kNumClasses, 0.0) {}

    size_t index(int y, int x, int cls) const {
        return (static_cast<size_t>(y) * width + x) * kNumClasses + cls;
    }
    double& at(int y, int x, int cls) { return values[index(y, x, cls)]; }
    double at(int y, int x, int cls) const { return values[index(y, x, cls)]; }
};

/// One flattened k x k x C neighborhood per source pixel: row r corresponds to
/// pixel r in row-major order, columns run window-row, window-column, then
/// channel fastest. Keeps the source shape so responses can be folded back
/// into a FeatureMap.
struct PatchMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
    int source_height = 0;
    int source_width = 0;
    int source_channels = 0;

    const float* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    float* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
};

/// Dense N x C sample matrix handed to the pixel classifier.
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> values;

    FeatureMatrix() = default;
    FeatureMatrix(int r, int c)
        : rows(r), cols(c), values(static_cast<size_t>(r) * static_cast<size_t>(c), 0.f) {}

    const float* row(int r) const { return values.data() + static_cast<size_t>(r) * cols; }
    float* row(int r) { return values.data() + static_cast<size_t>(r) * cols; }
};

}  // namespace sslseg
