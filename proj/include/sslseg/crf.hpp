#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "sslseg/feature_map.hpp"

namespace sslseg {

struct CrfConfig {
    int iterations = 5;
    double spatial_weight = 3.0;             // w_s
    double appearance_weight = 5.0;          // w_a
    double spatial_sigma = 3.0;              // pixels
    double appearance_sigma_xy = 30.0;       // pixels
    double appearance_sigma_intensity = 0.1; // fraction of the slice's min-max range
    int intensity_levels = 32;               // conditioning-image quantization for the bilateral kernel
};

/// Per-pixel argmax with ties broken toward the lowest class index.
inline LabelMap argmax_labels(const ProbabilityMap& probs) {
    LabelMap out;
    out.height = probs.height;
    out.width = probs.width;
    out.data.resize(static_cast<size_t>(probs.height) * probs.width);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double* p = probs.values.data() + i * kNumClasses;
        int best = 0;
        for (int k = 1; k < kNumClasses; ++k)
            if (p[k] > p[best]) best = k;
        out.data[i] = static_cast<uint8_t>(best);
    }
    return out;
}

namespace detail {

inline void validate_crf_inputs(const ProbabilityMap& probs, const FeatureMap& image,
                                const CrfConfig& config) {
    if (probs.height != image.height || probs.width != image.width)
        throw std::invalid_argument("crf: probability and image shapes differ");
    if (image.channels != 1)
        throw std::invalid_argument("crf: conditioning image must have one channel");
    if (probs.height < 1 || probs.width < 1)
        throw std::invalid_argument("crf: empty input");
    for (size_t i = 0; i < probs.values.size(); i += kNumClasses) {
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
            const double p = probs.values[i + k];
            if (!(p > -1e-9) || !std::isfinite(p))
                throw std::invalid_argument("crf: negative or non-finite probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("crf: probability rows must sum to 1");
    }
    if (config.iterations < 0) throw std::invalid_argument("crf: negative iteration count");
    if (config.spatial_weight < 0.0 || config.appearance_weight < 0.0)
        throw std::invalid_argument("crf: negative pairwise weight");
    if (!(config.spatial_sigma > 0.0) || !(config.appearance_sigma_xy > 0.0) ||
        !(config.appearance_sigma_intensity > 0.0))
        throw std::invalid_argument("crf: sigmas must be positive");
    if (config.intensity_levels < 1)
        throw std::invalid_argument("crf: need at least one intensity level");
}

inline std::vector<double> gaussian_taps(double sigma, int radius) {
    std::vector<double> w(2 * radius + 1);
    for (int t = -radius; t <= radius; ++t)
        w[t + radius] = std::exp(-(static_cast<double>(t) * t) / (2.0 * sigma * sigma));
    return w;
}

/// Dense separable Gaussian sum S(i) = sum_j exp(-|i-j|^2 / 2 sigma^2) q(j),
/// truncated at the given square radius, self term included.
inline void separable_gaussian_sum(const double* q, double* out, int h, int w,
                                   const std::vector<double>& taps, int radius,
                                   std::vector<double>& scratch) {
    scratch.assign(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        const double* src = q + static_cast<size_t>(y) * w;
        double* dst = scratch.data() + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int lo = std::max(-radius, -x);
            const int hi = std::min(radius, w - 1 - x);
            double s = 0.0;
            for (int t = lo; t <= hi; ++t) s += taps[t + radius] * src[x + t];
            dst[x] = s;
        }
    }
    std::fill(out, out + static_cast<size_t>(h) * w, 0.0);
    for (int ys = 0; ys < h; ++ys) {
        const double* src = scratch.data() + static_cast<size_t>(ys) * w;
        const int lo = std::max(-radius, -ys);
        const int hi = std::min(radius, h - 1 - ys);
        for (int t = lo; t <= hi; ++t) {
            const double tap = taps[t + radius];
            double* dst = out + static_cast<size_t>(ys + t) * w;
            for (int x = 0; x < w; ++x) dst[x] += tap * src[x];
        }
    }
}

/// Bilateral Gaussian sum over a quantized conditioning image, computed
/// exactly by decomposing pixels into intensity levels: one masked spatial
/// convolution per occupied level, then a gather weighted by the level-pair
/// intensity kernel. Kernel values vanish beyond 3 sigma in both the spatial
/// and the intensity axes. Self term included (weight exactly 1).
class BilateralLevelFilter {
  public:
    BilateralLevelFilter(const FeatureMap& image, const CrfConfig& config)
        : h_(image.height), w_(image.width), levels_(config.intensity_levels) {
        radius_ = static_cast<int>(std::ceil(3.0 * config.appearance_sigma_xy));
        taps_ = gaussian_taps(config.appearance_sigma_xy, radius_);

        // Min-max normalize, then quantize to level indices. A constant image
        // puts every pixel in level 0, reducing the kernel to pure spatial.
        float lo = image.data[0], hi = image.data[0];
        for (float v : image.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const size_t n = static_cast<size_t>(h_) * w_;
        level_of_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            int b = 0;
            if (hi > lo) {
                const double u = (static_cast<double>(image.data[i]) - lo) /
                                 (static_cast<double>(hi) - lo);
                b = std::min(levels_ - 1, static_cast<int>(u * levels_));
            }
            level_of_[i] = b;
        }

        pixels_by_level_.resize(levels_);
        rows_by_level_.resize(levels_);
        std::vector<char> row_seen(static_cast<size_t>(levels_) * h_, 0);
        for (size_t i = 0; i < n; ++i) {
            const int b = level_of_[i];
            pixels_by_level_[b].push_back(static_cast<int>(i));
            const int y = static_cast<int>(i) / w_;
            if (!row_seen[static_cast<size_t>(b) * h_ + y]) {
                row_seen[static_cast<size_t>(b) * h_ + y] = 1;
                rows_by_level_[b].push_back(y);
            }
        }

        // Level-pair intensity weights on level centers (a + 0.5) / levels.
        table_.assign(static_cast<size_t>(levels_) * levels_, 0.0);
        const double sig = config.appearance_sigma_intensity;
        for (int a = 0; a < levels_; ++a)
            for (int b = 0; b < levels_; ++b) {
                const double d = (static_cast<double>(a) - b) / levels_;
                if (std::abs(d) <= 3.0 * sig)
                    table_[static_cast<size_t>(a) * levels_ + b] =
                        std::exp(-d * d / (2.0 * sig * sig));
            }

        conv_x_.resize(n);
        conv_xy_.resize(n);
        dirty_.resize(h_);
    }

    /// out(i) = sum_j k_bilateral(i, j) q(j), self included.
    void apply(const double* q, double* out) const {
        const size_t n = static_cast<size_t>(h_) * w_;
        std::fill(out, out + n, 0.0);
        for (int b = 0; b < levels_; ++b) {
            const std::vector<int>& pix = pixels_by_level_[b];
            if (pix.empty()) continue;
            const std::vector<int>& rows = rows_by_level_[b];

            for (int y : rows)
                std::fill(conv_x_.begin() + static_cast<size_t>(y) * w_,
                          conv_x_.begin() + static_cast<size_t>(y + 1) * w_, 0.0);
            for (int i : pix) {
                const int y = i / w_;
                const int x = i % w_;
                const double v = q[i];
                double* row = conv_x_.data() + static_cast<size_t>(y) * w_;
                const int lo = std::max(-radius_, -x);
                const int hi = std::min(radius_, w_ - 1 - x);
                for (int t = lo; t <= hi; ++t) row[x + t] += v * taps_[t + radius_];
            }

            std::fill(dirty_.begin(), dirty_.end(), 0);
            for (int ys : rows) {
                const int lo = std::max(0, ys - radius_);
                const int hi = std::min(h_ - 1, ys + radius_);
                for (int y = lo; y <= hi; ++y) dirty_[y] = 1;
            }
            for (int y = 0; y < h_; ++y)
                if (dirty_[y])
                    std::fill(conv_xy_.begin() + static_cast<size_t>(y) * w_,
                              conv_xy_.begin() + static_cast<size_t>(y + 1) * w_, 0.0);
            for (int ys : rows) {
                const double* src = conv_x_.data() + static_cast<size_t>(ys) * w_;
                const int lo = std::max(-radius_, -ys);
                const int hi = std::min(radius_, h_ - 1 - ys);
                for (int t = lo; t <= hi; ++t) {
                    const double tap = taps_[t + radius_];
                    double* dst = conv_xy_.data() + static_cast<size_t>(ys + t) * w_;
                    for (int x = 0; x < w_; ++x) dst[x] += tap * src[x];
                }
            }

            const double* tab = table_.data() + b;  // column b, stride = levels_
            for (int y = 0; y < h_; ++y) {
                if (!dirty_[y]) continue;
                const size_t base = static_cast<size_t>(y) * w_;
                for (int x = 0; x < w_; ++x) {
                    const double k = tab[static_cast<size_t>(level_of_[base + x]) * levels_];
                    if (k != 0.0) out[base + x] += k * conv_xy_[base + x];
                }
            }
        }
    }

  private:
    int h_;
    int w_;
    int levels_;
    int radius_;
    std::vector<double> taps_;
    std::vector<int> level_of_;
    std::vector<std::vector<int>> pixels_by_level_;
    std::vector<std::vector<int>> rows_by_level_;
    std::vector<double> table_;
    mutable std::vector<double> conv_x_;
    mutable std::vector<double> conv_xy_;
    mutable std::vector<char> dirty_;
};

}  // namespace detail

/// Damped synchronous mean-field marginals for a grid CRF with Potts
/// compatibility: unaries -log(clamp(probs, 1e-10)), one spatial Gaussian
/// kernel and one bilateral (spatial x intensity) kernel, both truncated at
/// 3 sigma. Each kernel's message is the kernel-weighted average of the
/// OTHER pixels' marginals (self excluded, mass normalized per pixel), so
/// the pairwise weights bound the Potts penalty regardless of sigma or image
/// size. Each iteration reads only the previous marginals, so the result is
/// independent of pixel order; new marginals are averaged 50/50 with the
/// previous ones.
inline ProbabilityMap mean_field_marginals(const ProbabilityMap& probs, const FeatureMap& image,
                                           const CrfConfig& config) {
    detail::validate_crf_inputs(probs, image, config);
    const int h = probs.height;
    const int w = probs.width;
    const size_t n = static_cast<size_t>(h) * w;

    // Plane-major copies: plane l holds Q_l over all pixels.
    std::vector<double> unary(n * kNumClasses);
    std::vector<double> q(n * kNumClasses);
    for (size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
            const double p = std::max(probs.values[i * kNumClasses + k], 1e-10);
            unary[static_cast<size_t>(k) * n + i] = -std::log(p);
            q[static_cast<size_t>(k) * n + i] = p;
            sum += p;
        }
        for (int k = 0; k < kNumClasses; ++k) q[static_cast<size_t>(k) * n + i] /= sum;
    }

    const bool use_spatial = config.spatial_weight > 0.0;
    const bool use_bilateral = config.appearance_weight > 0.0;
    const int spatial_radius = static_cast<int>(std::ceil(3.0 * config.spatial_sigma));
    const std::vector<double> spatial_taps =
        detail::gaussian_taps(config.spatial_sigma, spatial_radius);

    std::unique_ptr<detail::BilateralLevelFilter> bilateral;
    if (use_bilateral && config.iterations > 0)
        bilateral = std::make_unique<detail::BilateralLevelFilter>(image, config);

    std::vector<double> pairwise(n * kNumClasses);
    std::vector<double> message(n);
    std::vector<double> scratch(n);

    // Reciprocal neighbor mass per pixel and kernel: 1 / (sum_j k(i,j) - 1).
    // The self weight is exactly 1 in both kernels. Pixels without reachable
    // neighbors (e.g. a 1x1 image) get a zero message.
    std::vector<double> inv_spatial_mass, inv_bilateral_mass;
    if (config.iterations > 0) {
        const std::vector<double> ones(n, 1.0);
        if (use_spatial) {
            inv_spatial_mass.resize(n);
            detail::separable_gaussian_sum(ones.data(), inv_spatial_mass.data(), h, w,
                                           spatial_taps, spatial_radius, scratch);
            for (double& m : inv_spatial_mass) m = m - 1.0 > 1e-12 ? 1.0 / (m - 1.0) : 0.0;
        }
        if (use_bilateral) {
            inv_bilateral_mass.resize(n);
            bilateral->apply(ones.data(), inv_bilateral_mass.data());
            for (double& m : inv_bilateral_mass) m = m - 1.0 > 1e-12 ? 1.0 / (m - 1.0) : 0.0;
        }
    }

    for (int it = 0; it < config.iterations; ++it) {
        std::fill(pairwise.begin(), pairwise.end(), 0.0);
        for (int k = 0; k < kNumClasses; ++k) {
            const double* qk = q.data() + static_cast<size_t>(k) * n;
            double* ek = pairwise.data() + static_cast<size_t>(k) * n;
            if (use_spatial) {
                detail::separable_gaussian_sum(qk, message.data(), h, w, spatial_taps,
                                               spatial_radius, scratch);
                for (size_t i = 0; i < n; ++i)
                    ek[i] += config.spatial_weight * (message[i] - qk[i]) * inv_spatial_mass[i];
            }
            if (use_bilateral) {
                bilateral->apply(qk, message.data());
                for (size_t i = 0; i < n; ++i)
                    ek[i] +=
                        config.appearance_weight * (message[i] - qk[i]) * inv_bilateral_mass[i];
            }
        }
        // Potts: label l is penalized by every other label's kernel mass.
        for (size_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (int k = 0; k < kNumClasses; ++k) total += pairwise[static_cast<size_t>(k) * n + i];
            double logits[kNumClasses];
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < kNumClasses; ++k) {
                logits[k] = -unary[static_cast<size_t>(k) * n + i] -
                            (total - pairwise[static_cast<size_t>(k) * n + i]);
                mx = std::max(mx, logits[k]);
            }
            double denom = 0.0;
            for (int k = 0; k < kNumClasses; ++k) {
                logits[k] = std::exp(logits[k] - mx);
                denom += logits[k];
            }
            for (int k = 0; k < kNumClasses; ++k) {
                double& slot = q[static_cast<size_t>(k) * n + i];
                slot = 0.5 * slot + 0.5 * (logits[k] / denom);
            }
        }
    }

    ProbabilityMap out;
    out.height = h;
    out.width = w;
    out.values.resize(n * kNumClasses);
    for (size_t i = 0; i < n; ++i)
        for (int k = 0; k < kNumClasses; ++k)
            out.values[i * kNumClasses + k] = q[static_cast<size_t>(k) * n + i];
    return out;
}

/// Final refinement: mean-field marginals followed by per-pixel argmax. With
/// zero iterations or both pairwise weights zero this is exactly the argmax
/// of the input probabilities.
inline LabelMap mean_field_refine(const ProbabilityMap& probs, const FeatureMap& image,
                                  const CrfConfig& config) {
    detail::validate_crf_inputs(probs, image, config);
    if (config.iterations == 0 ||
        (config.spatial_weight == 0.0 && config.appearance_weight == 0.0))
        return argmax_labels(probs);
    return argmax_labels(mean_field_marginals(probs, image, config));
}

}  // namespace sslseg
