#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sslseg/feature_map.hpp"

namespace sslseg {

/// Synthetic short-axis cardiac slice: a left-ventricle disc inside a
/// myocardium ring, with a right-ventricle crescent attached to the ring's
/// left side, over background. Labels are exact; only intensities are noisy.
struct PhantomSpec {
    uint64_t seed = 0;
    int image_size = 224;
    double noise_sigma = 0.08;
    double lv_radius_min = 12.0;
    double lv_radius_max = 30.0;
    double myo_thickness_min = 5.0;
    double myo_thickness_max = 12.0;
    double rv_radius_fraction_min = 0.55;  // of the ring's outer radius
    double rv_radius_fraction_max = 0.85;
    double mean_background = 0.2;
    double mean_rv = 0.55;
    double mean_myo = 0.4;
    double mean_lv = 0.75;
};

namespace detail {

/// Uniform in [0, 1) from the top 53 bits; avoids distribution objects whose
/// output is implementation-defined.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * unit_uniform(rng);
}

}  // namespace detail

inline std::pair<FeatureMap, LabelMap> generate_phantom(const PhantomSpec& spec) {
    if (spec.image_size < 16) throw std::invalid_argument("phantom: image too small");
    if (spec.noise_sigma < 0.0) throw std::invalid_argument("phantom: negative noise sigma");
    if (spec.lv_radius_min > spec.lv_radius_max || spec.lv_radius_min <= 0.0 ||
        spec.myo_thickness_min > spec.myo_thickness_max || spec.myo_thickness_min <= 0.0 ||
        spec.rv_radius_fraction_min > spec.rv_radius_fraction_max ||
        spec.rv_radius_fraction_min <= 0.0)
        throw std::invalid_argument("phantom: empty geometry range");

    std::mt19937_64 rng(spec.seed);
    const double lv_radius = detail::uniform_in(rng, spec.lv_radius_min, spec.lv_radius_max);
    const double thickness = detail::uniform_in(rng, spec.myo_thickness_min, spec.myo_thickness_max);
    const double outer = lv_radius + thickness;
    const double rv_radius =
        outer * detail::uniform_in(rng, spec.rv_radius_fraction_min, spec.rv_radius_fraction_max);

    // The RV disc is centered on the ring's left edge, so the union spans
    // [cx - outer - rv_radius, cx + outer] horizontally.
    const double margin = 2.0;
    const double cx_lo = outer + rv_radius + margin;
    const double cx_hi = spec.image_size - 1 - outer - margin;
    const double cy_lo = outer + margin;
    const double cy_hi = spec.image_size - 1 - outer - margin;
    if (cx_lo > cx_hi || cy_lo > cy_hi)
        throw std::invalid_argument("phantom: geometry does not fit in the image");
    const double cx = detail::uniform_in(rng, cx_lo, cx_hi);
    const double cy = detail::uniform_in(rng, cy_lo, cy_hi);
    const double rv_cx = cx - outer;

    const int s = spec.image_size;
    FeatureMap image(s, s, 1);
    LabelMap labels;
    labels.height = s;
    labels.width = s;
    labels.data.resize(static_cast<size_t>(s) * s);

    const double means[kNumClasses] = {spec.mean_background, spec.mean_rv, spec.mean_myo,
                                       spec.mean_lv};
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double dy = y - cy;
            const double dx = x - cx;
            const double d_lv = std::sqrt(dx * dx + dy * dy);
            const double rdx = x - rv_cx;
            const double d_rv = std::sqrt(rdx * rdx + dy * dy);
            int cls = kBackground;
            if (d_lv <= lv_radius)
                cls = kLeftVentricle;
            else if (d_lv <= outer)
                cls = kMyocardium;
            else if (d_rv <= rv_radius)
                cls = kRightVentricle;
            labels.data[static_cast<size_t>(y) * s + x] = static_cast<uint8_t>(cls);
            image.at(y, x, 0) = static_cast<float>(means[cls]);
        }

    if (spec.noise_sigma > 0.0) {
        // Box-Muller pairs from explicit uniforms, one pair per two pixels.
        const size_t n = image.data.size();
        for (size_t i = 0; i < n; i += 2) {
            const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
            const double u2 = detail::unit_uniform(rng);
            const double r = std::sqrt(-2.0 * std::log(u1)) * spec.noise_sigma;
            image.data[i] += static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * u2));
            if (i + 1 < n)
                image.data[i + 1] +=
                    static_cast<float>(r * std::sin(2.0 * 3.14159265358979323846 * u2));
        }
    }
    return {std::move(image), std::move(labels)};
}

}  // namespace sslseg
