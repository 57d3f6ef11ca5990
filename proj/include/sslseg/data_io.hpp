#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/feature_map.hpp"

namespace sslseg {

struct SliceRecord {
    std::string subject_id;
    std::string image_path;
    std::string label_path;  // empty when no labels
    std::string split;       // train | val | test
};

struct DatasetManifest {
    std::vector<SliceRecord> records;
    std::filesystem::path base_dir;  // relative record paths resolve against this
};

struct LoadedSlice {
    FeatureMap image;
    bool has_labels = false;
    LabelMap labels;
};

namespace detail {

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path.string());
}

/// PGM header tokens: whitespace-separated decimals, # comments to end of line.
struct PgmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
    size_t data_offset = 0;
};

inline PgmHeader parse_pgm_header(const std::vector<uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw FormatError("not a binary PGM: " + name);
    size_t pos = 2;
    int fields[3];
    for (int f = 0; f < 3; ++f) {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
            throw FormatError("truncated PGM header: " + name);
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000'000) throw FormatError("oversized PGM field: " + name);
            ++pos;
        }
        fields[f] = static_cast<int>(v);
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw FormatError("truncated PGM header: " + name);
    ++pos;  // single whitespace byte before the raster
    PgmHeader h;
    h.width = fields[0];
    h.height = fields[1];
    h.maxval = fields[2];
    h.data_offset = pos;
    if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 65535)
        throw FormatError("invalid PGM dimensions: " + name);
    return h;
}

/// Raw 16-bit-or-8-bit PGM samples; 16-bit samples are big-endian per the format.
inline std::vector<uint32_t> pgm_samples(const std::vector<uint8_t>& bytes, const PgmHeader& h,
                                         const std::string& name) {
    const size_t n = static_cast<size_t>(h.width) * h.height;
    const int bpp = h.maxval > 255 ? 2 : 1;
    if (bytes.size() < h.data_offset + n * bpp)
        throw FormatError("truncated PGM payload: " + name);
    std::vector<uint32_t> out(n);
    const uint8_t* p = bytes.data() + h.data_offset;
    if (bpp == 1)
        for (size_t i = 0; i < n; ++i) out[i] = p[i];
    else
        for (size_t i = 0; i < n; ++i)
            out[i] = (static_cast<uint32_t>(p[2 * i]) << 8) | p[2 * i + 1];
    return out;
}

inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline uint32_t get_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Grayscale PGM as intensities scaled by maxval into [0, 1].
inline FeatureMap load_pgm_image(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
    const detail::PgmHeader h = detail::parse_pgm_header(bytes, path.string());
    const std::vector<uint32_t> samples = detail::pgm_samples(bytes, h, path.string());
    FeatureMap out(h.height, h.width, 1);
    const float scale = 1.0f / static_cast<float>(h.maxval);
    for (size_t i = 0; i < samples.size(); ++i)
        out.data[i] = static_cast<float>(samples[i]) * scale;
    return out;
}

/// Label PGM: raw sample values are class ids and must lie in {0..3}.
inline LabelMap load_pgm_labels(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
    const detail::PgmHeader h = detail::parse_pgm_header(bytes, path.string());
    const std::vector<uint32_t> samples = detail::pgm_samples(bytes, h, path.string());
    LabelMap out;
    out.height = h.height;
    out.width = h.width;
    out.data.resize(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        if (samples[i] >= kNumClasses)
            throw FormatError("label value out of range in " + path.string());
        out.data[i] = static_cast<uint8_t>(samples[i]);
    }
    return out;
}

inline void save_pgm_labels(const LabelMap& labels, const std::filesystem::path& path) {
    std::vector<uint8_t> bytes;
    const std::string header =
        "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n3\n";
    bytes.insert(bytes.end(), header.begin(), header.end());
    bytes.insert(bytes.end(), labels.data.begin(), labels.data.end());
    detail::write_file_bytes(path, bytes);
}

/// Raw tensor format: magic "SST1", u32 little-endian H, W, C, then H*W*C
/// little-endian f32 values in row-major (H, W, C) order.
inline void save_raw_tensor(const FeatureMap& map, const std::filesystem::path& path) {
    std::vector<uint8_t> bytes;
    bytes.reserve(16 + map.data.size() * 4);
    bytes.insert(bytes.end(), {'S', 'S', 'T', '1'});
    detail::put_u32le(bytes, static_cast<uint32_t>(map.height));
    detail::put_u32le(bytes, static_cast<uint32_t>(map.width));
    detail::put_u32le(bytes, static_cast<uint32_t>(map.channels));
    for (float v : map.data) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        detail::put_u32le(bytes, u);
    }
    detail::write_file_bytes(path, bytes);
}

inline FeatureMap load_raw_tensor(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "SST1", 4) != 0)
        throw FormatError("not a raw tensor (bad magic): " + path.string());
    const uint32_t h = detail::get_u32le(bytes.data() + 4);
    const uint32_t w = detail::get_u32le(bytes.data() + 8);
    const uint32_t c = detail::get_u32le(bytes.data() + 12);
    if (h < 1 || w < 1 || c < 1 || h > 1'000'000 || w > 1'000'000 || c > 1'000'000)
        throw FormatError("invalid tensor dimensions: " + path.string());
    const size_t n = static_cast<size_t>(h) * w * c;
    if (bytes.size() < 16 + n * 4)
        throw FormatError("truncated tensor payload: " + path.string());
    FeatureMap out(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (size_t i = 0; i < n; ++i) {
        const uint32_t u = detail::get_u32le(bytes.data() + 16 + i * 4);
        std::memcpy(&out.data[i], &u, 4);
    }
    return out;
}

/// Dispatch on magic bytes: "P5" grayscale PGM or "SST1" raw tensor for the
/// image; labels (when the record has them) are a PGM of class ids.
inline LoadedSlice load_slice(const SliceRecord& record, const std::filesystem::path& base_dir) {
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base_dir / fp;
    };
    const std::filesystem::path image_path = resolve(record.image_path);
    const std::vector<uint8_t> head = detail::read_file_bytes(image_path);
    LoadedSlice out;
    if (head.size() >= 4 && std::memcmp(head.data(), "SST1", 4) == 0) {
        out.image = load_raw_tensor(image_path);
        if (out.image.channels != 1)
            throw FormatError("expected a single-channel image: " + image_path.string());
    } else if (head.size() >= 2 && head[0] == 'P' && head[1] == '5') {
        out.image = load_pgm_image(image_path);
    } else {
        throw FormatError("unknown image magic in " + image_path.string());
    }
    if (!record.label_path.empty()) {
        out.labels = load_pgm_labels(resolve(record.label_path));
        out.has_labels = true;
        if (out.labels.height != out.image.height || out.labels.width != out.image.width)
            throw FormatError("label shape does not match image for " + image_path.string());
    }
    return out;
}

/// Bilinear resize with pixel-center alignment, then per-slice standardization
/// to zero mean and unit variance. A (numerically) constant slice maps to all
/// zeros instead of amplifying rounding noise.
inline FeatureMap preprocess(const FeatureMap& image, int target = 224) {
    if (image.channels != 1) throw std::invalid_argument("preprocess: expected one channel");
    if (image.height < 16 || image.width < 16)
        throw std::invalid_argument("preprocess: image smaller than 16x16");

    FeatureMap resized(target, target, 1);
    const double sy = static_cast<double>(image.height) / target;
    const double sx = static_cast<double>(image.width) / target;
    for (int y = 0; y < target; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, image.height - 1);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < target; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, image.width - 1);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            const double v00 = image.at(y0, x0, 0);
            const double v01 = image.at(y0, x1, 0);
            const double v10 = image.at(y1, x0, 0);
            const double v11 = image.at(y1, x1, 0);
            const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                             wy * ((1.0 - wx) * v10 + wx * v11);
            resized.at(y, x, 0) = static_cast<float>(v);
        }
    }

    double mean = 0.0;
    for (float v : resized.data) mean += v;
    mean /= static_cast<double>(resized.data.size());
    double var = 0.0;
    for (float v : resized.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(resized.data.size());
    if (var <= 1e-12 * std::max(1.0, mean * mean)) {
        std::fill(resized.data.begin(), resized.data.end(), 0.0f);
        return resized;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    for (float& v : resized.data) v = static_cast<float>((v - mean) * inv_sd);
    return resized;
}

/// Nearest-neighbor label resize; class ids are never interpolated.
inline LabelMap preprocess_labels(const LabelMap& labels, int target = 224) {
    if (labels.height == target && labels.width == target) return labels;
    LabelMap out;
    out.height = target;
    out.width = target;
    out.data.resize(static_cast<size_t>(target) * target);
    const double sy = static_cast<double>(labels.height) / target;
    const double sx = static_cast<double>(labels.width) / target;
    for (int y = 0; y < target; ++y) {
        const int ys = std::min(labels.height - 1, static_cast<int>((y + 0.5) * sy));
        for (int x = 0; x < target; ++x) {
            const int xs = std::min(labels.width - 1, static_cast<int>((x + 0.5) * sx));
            out.data[static_cast<size_t>(y) * target + x] =
                labels.data[static_cast<size_t>(ys) * labels.width + xs];
        }
    }
    return out;
}

/// Manifest: one record per line, tab-separated
/// subject_id <TAB> image_path <TAB> label_path-or-"-" <TAB> split.
inline DatasetManifest parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    DatasetManifest manifest;
    manifest.base_dir = path.has_parent_path() ? path.parent_path() : ".";
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4)
            throw FormatError("manifest line " + std::to_string(line_no) + " needs 4 fields: " +
                              path.string());
        SliceRecord r;
        r.subject_id = fields[0];
        r.image_path = fields[1];
        r.label_path = fields[2] == "-" ? "" : fields[2];
        r.split = fields[3];
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw FormatError("manifest line " + std::to_string(line_no) + " has unknown split '" +
                              r.split + "': " + path.string());
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    for (const SliceRecord& r : manifest.records)
        out << r.subject_id << '\t' << r.image_path << '\t'
            << (r.label_path.empty() ? "-" : r.label_path) << '\t' << r.split << '\n';
    if (!out) throw FormatError("failed writing " + path.string());
}

/// Assign splits by subject, never by slice: subjects are shuffled
/// deterministically by seed and dealt into train/val/test counts; records of
/// subjects beyond the requested counts are dropped.
inline std::vector<SliceRecord> split_manifest(const std::vector<SliceRecord>& records,
                                               uint64_t seed, int train_count, int val_count,
                                               int test_count) {
    if (train_count < 0 || val_count < 0 || test_count < 0)
        throw std::invalid_argument("split_manifest: negative split count");
    std::vector<std::string> subjects;
    for (const SliceRecord& r : records)
        if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end())
            subjects.push_back(r.subject_id);
    const int total_needed = train_count + val_count + test_count;
    if (total_needed > static_cast<int>(subjects.size()))
        throw std::invalid_argument("split_manifest: not enough subjects");

    std::mt19937_64 rng(seed);
    for (size_t i = 0; i + 1 < subjects.size(); ++i) {
        const size_t j = i + static_cast<size_t>(rng() % (subjects.size() - i));
        std::swap(subjects[i], subjects[j]);
    }

    std::vector<SliceRecord> out;
    out.reserve(records.size());
    auto split_of = [&](const std::string& id) -> const char* {
        for (int i = 0; i < total_needed; ++i)
            if (subjects[i] == id)
                return i < train_count ? "train" : (i < train_count + val_count ? "val" : "test");
        return nullptr;
    };
    for (const SliceRecord& r : records) {
        const char* s = split_of(r.subject_id);
        if (!s) continue;
        SliceRecord copy = r;
        copy.split = s;
        out.push_back(std::move(copy));
    }
    return out;
}

/// P6 overlay: grayscale base (min-max scaled) blended half-and-half with
/// fixed class colors (RV red, MYO green, LV blue); background stays gray.
inline void save_overlay_ppm(const FeatureMap& image, const LabelMap& labels,
                             const std::filesystem::path& path) {
    if (image.height != labels.height || image.width != labels.width || image.channels != 1)
        throw std::invalid_argument("overlay: image/label shape mismatch");
    float lo = image.data[0], hi = image.data[0];
    for (float v : image.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float range = hi > lo ? hi - lo : 1.0f;
    static const int colors[kNumClasses][3] = {{0, 0, 0}, {255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
    std::vector<uint8_t> bytes;
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    bytes.insert(bytes.end(), header.begin(), header.end());
    for (size_t i = 0; i < image.data.size(); ++i) {
        const int gray = static_cast<int>((image.data[i] - lo) / range * 255.0f);
        const int cls = labels.data[i];
        for (int ch = 0; ch < 3; ++ch) {
            const int v = cls == kBackground ? gray : (gray + colors[cls][ch]) / 2;
            bytes.push_back(static_cast<uint8_t>(std::clamp(v, 0, 255)));
        }
    }
    detail::write_file_bytes(path, bytes);
}

}  // namespace sslseg
