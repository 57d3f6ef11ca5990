#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "sslseg/cascade.hpp"
#include "sslseg/crf.hpp"
#include "sslseg/data_io.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/gbdt.hpp"

namespace sslseg {

constexpr uint32_t kBundleVersion = 1;

/// Everything needed to reproduce predictions: the fitted cascade, the
/// channel-selection mask with its entropy scores and histogram ranges, the
/// boosted ensemble, and the CRF configuration (stored verbatim, not learned).
struct ModelBundle {
    uint32_t format_version = kBundleVersion;
    SslCascade cascade;
    std::vector<uint8_t> keep_mask;          // per cascade channel, unit-major
    std::vector<double> channel_entropies;   // selection scores
    std::vector<float> channel_min;          // entropy histogram ranges
    std::vector<float> channel_max;
    double keep_ratio = 0.8;
    TreeEnsemble ensemble;
    CrfConfig crf;
    bool crf_enabled = true;
    int preprocess_size = 224;
    uint64_t seed = 0;

    int num_kept_channels() const {
        int n = 0;
        for (uint8_t k : keep_mask) n += k;
        return n;
    }
};

namespace detail {

class ByteWriter {
  public:
    void u8(uint8_t v) { bytes_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void f64(double v) {
        uint64_t u;
        std::memcpy(&u, &v, 8);
        u64(u);
    }
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<uint8_t>& bytes() { return bytes_; }

  private:
    std::vector<uint8_t> bytes_;
};

class ByteReader {
  public:
    ByteReader(const uint8_t* data, size_t size, std::string origin)
        : data_(data), size_(size), origin_(std::move(origin)) {}

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32() {
        const uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    double f64() {
        const uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    void tag(const char expected[5]) {
        need(4);
        if (std::memcmp(data_ + pos_, expected, 4) != 0)
            throw FormatError("unexpected block '" +
                              std::string(reinterpret_cast<const char*>(data_ + pos_), 4) +
                              "' (wanted '" + expected + "') in " + origin_);
        pos_ += 4;
    }
    size_t pos() const { return pos_; }
    size_t remaining() const { return size_ - pos_; }

  private:
    void need(size_t n) {
        if (size_ - pos_ < n) throw FormatError("truncated bundle: " + origin_);
    }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    std::string origin_;
};

inline void write_block(ByteWriter& out, const char tag[5], ByteWriter& payload) {
    out.raw(tag, 4);
    out.u64(payload.bytes().size());
    out.raw(payload.bytes().data(), payload.bytes().size());
}

inline void write_tree_node(ByteWriter& w, const RegressionTree& tree, int index) {
    const TreeNode& n = tree.nodes[index];
    w.i32(n.feature);
    w.f64(n.threshold);
    w.f64(n.weight);
    if (n.feature >= 0) {
        write_tree_node(w, tree, n.left);
        write_tree_node(w, tree, n.right);
    }
}

inline int read_tree_node(ByteReader& r, RegressionTree& tree, int depth) {
    if (depth > 64) throw FormatError("tree nesting too deep in bundle");
    const int index = static_cast<int>(tree.nodes.size());
    TreeNode node;
    node.feature = r.i32();
    node.threshold = r.f64();
    node.weight = r.f64();
    tree.nodes.push_back(node);
    if (node.feature >= 0) {
        const int left = read_tree_node(r, tree, depth + 1);
        const int right = read_tree_node(r, tree, depth + 1);
        tree.nodes[index].left = left;
        tree.nodes[index].right = right;
    }
    return index;
}

inline void check_bundle_consistency(const ModelBundle& b, const std::string& origin) {
    const int total = b.cascade.total_channels();
    if (static_cast<int>(b.keep_mask.size()) != total ||
        static_cast<int>(b.channel_entropies.size()) != total ||
        static_cast<int>(b.channel_min.size()) != total ||
        static_cast<int>(b.channel_max.size()) != total)
        throw FormatError("selection width does not match cascade channels in " + origin);
    if (b.ensemble.num_features != b.num_kept_channels())
        throw FormatError("ensemble feature width does not match kept channels in " + origin);
}

}  // namespace detail

inline std::vector<uint8_t> bundle_to_bytes(const ModelBundle& bundle) {
    detail::check_bundle_consistency(bundle, "in-memory bundle");
    detail::ByteWriter out;
    out.raw("SSLB", 4);
    out.u32(bundle.format_version);

    detail::ByteWriter meta;
    meta.u32(static_cast<uint32_t>(bundle.preprocess_size));
    meta.u64(bundle.seed);
    meta.u8(bundle.crf_enabled ? 1 : 0);
    meta.f64(bundle.keep_ratio);
    detail::write_block(out, "META", meta);

    // Anchors as one f32 tensor per unit, DC row first, then the AC rows.
    detail::ByteWriter casc;
    casc.u32(static_cast<uint32_t>(bundle.cascade.window));
    casc.u32(static_cast<uint32_t>(bundle.cascade.banks.size()));
    for (const SaabKernelBank& bank : bundle.cascade.banks) {
        casc.u32(static_cast<uint32_t>(bank.input_dim));
        casc.u32(static_cast<uint32_t>(bank.num_kernels));
        for (double v : bank.dc_anchor) casc.f32(static_cast<float>(v));
        for (double v : bank.ac_anchors) casc.f32(static_cast<float>(v));
        for (double v : bank.mean_vector) casc.f32(static_cast<float>(v));
        casc.f32(static_cast<float>(bank.bias.empty() ? 0.0 : bank.bias[0]));
    }
    detail::write_block(out, "CASC", casc);

    detail::ByteWriter sele;
    const uint32_t channels = static_cast<uint32_t>(bundle.keep_mask.size());
    sele.u32(channels);
    for (uint32_t base = 0; base < channels; base += 8) {
        uint8_t packed = 0;
        for (uint32_t bit = 0; bit < 8 && base + bit < channels; ++bit)
            if (bundle.keep_mask[base + bit]) packed |= static_cast<uint8_t>(1u << bit);
        sele.u8(packed);
    }
    for (double v : bundle.channel_entropies) sele.f64(v);
    for (float v : bundle.channel_min) sele.f32(v);
    for (float v : bundle.channel_max) sele.f32(v);
    detail::write_block(out, "SELE", sele);

    detail::ByteWriter tree;
    tree.u32(static_cast<uint32_t>(bundle.ensemble.num_classes));
    tree.u32(static_cast<uint32_t>(bundle.ensemble.num_features));
    tree.f64(bundle.ensemble.learning_rate);
    tree.u32(static_cast<uint32_t>(bundle.ensemble.trees.size()));
    for (const RegressionTree& t : bundle.ensemble.trees) {
        tree.u32(static_cast<uint32_t>(t.nodes.size()));
        if (!t.nodes.empty()) detail::write_tree_node(tree, t, 0);
    }
    detail::write_block(out, "TREE", tree);

    detail::ByteWriter crf;
    crf.u32(static_cast<uint32_t>(bundle.crf.iterations));
    crf.f64(bundle.crf.spatial_weight);
    crf.f64(bundle.crf.appearance_weight);
    crf.f64(bundle.crf.spatial_sigma);
    crf.f64(bundle.crf.appearance_sigma_xy);
    crf.f64(bundle.crf.appearance_sigma_intensity);
    crf.u32(static_cast<uint32_t>(bundle.crf.intensity_levels));
    detail::write_block(out, "CRFC", crf);

    return std::move(out.bytes());
}

inline ModelBundle bundle_from_bytes(const std::vector<uint8_t>& bytes, const std::string& origin) {
    detail::ByteReader r(bytes.data(), bytes.size(), origin);
    {
        char magic[4];
        if (bytes.size() < 4) throw FormatError("truncated bundle: " + origin);
        std::memcpy(magic, bytes.data(), 4);
        if (std::memcmp(magic, "SSLB", 4) != 0)
            throw FormatError("not a model bundle (bad magic): " + origin);
    }
    r.tag("SSLB");
    ModelBundle b;
    b.format_version = r.u32();
    if (b.format_version != kBundleVersion)
        throw FormatError("unsupported bundle version " + std::to_string(b.format_version) +
                          " in " + origin);

    auto open_block = [&](const char tag[5]) {
        r.tag(tag);
        const uint64_t len = r.u64();
        if (len > r.remaining()) throw FormatError("truncated bundle: " + origin);
        return r.pos() + len;
    };
    auto close_block = [&](size_t end, const char* tag) {
        if (r.pos() != end)
            throw FormatError(std::string("corrupt ") + tag + " block in " + origin);
    };

    size_t end = open_block("META");
    b.preprocess_size = static_cast<int>(r.u32());
    b.seed = r.u64();
    b.crf_enabled = r.u8() != 0;
    b.keep_ratio = r.f64();
    close_block(end, "META");

    end = open_block("CASC");
    b.cascade.window = static_cast<int>(r.u32());
    const uint32_t units = r.u32();
    if (units > 64) throw FormatError("implausible unit count in " + origin);
    b.cascade.banks.resize(units);
    for (SaabKernelBank& bank : b.cascade.banks) {
        bank.input_dim = static_cast<int>(r.u32());
        bank.num_kernels = static_cast<int>(r.u32());
        if (bank.input_dim < 1 || bank.num_kernels < 2 || bank.num_kernels > bank.input_dim)
            throw FormatError("invalid kernel bank shape in " + origin);
        bank.dc_anchor.resize(bank.input_dim);
        for (double& v : bank.dc_anchor) v = r.f32();
        bank.ac_anchors.resize(static_cast<size_t>(bank.num_kernels - 1) * bank.input_dim);
        for (double& v : bank.ac_anchors) v = r.f32();
        bank.mean_vector.resize(bank.input_dim);
        for (double& v : bank.mean_vector) v = r.f32();
        const double bias = r.f32();
        bank.bias.assign(bank.num_kernels, bias);
        bank.bias_scale = bias / std::sqrt(static_cast<double>(bank.num_kernels));
    }
    close_block(end, "CASC");

    end = open_block("SELE");
    const uint32_t channels = r.u32();
    if (channels > 1'000'000) throw FormatError("implausible channel count in " + origin);
    b.keep_mask.resize(channels);
    for (uint32_t base = 0; base < channels; base += 8) {
        const uint8_t packed = r.u8();
        for (uint32_t bit = 0; bit < 8 && base + bit < channels; ++bit)
            b.keep_mask[base + bit] = (packed >> bit) & 1;
    }
    b.channel_entropies.resize(channels);
    for (double& v : b.channel_entropies) v = r.f64();
    b.channel_min.resize(channels);
    for (float& v : b.channel_min) v = r.f32();
    b.channel_max.resize(channels);
    for (float& v : b.channel_max) v = r.f32();
    close_block(end, "SELE");

    end = open_block("TREE");
    b.ensemble.num_classes = static_cast<int>(r.u32());
    b.ensemble.num_features = static_cast<int>(r.u32());
    b.ensemble.learning_rate = r.f64();
    const uint32_t num_trees = r.u32();
    if (b.ensemble.num_classes != kNumClasses)
        throw FormatError("unexpected class count in " + origin);
    if (num_trees % kNumClasses != 0)
        throw FormatError("tree count is not a whole number of rounds in " + origin);
    b.ensemble.trees.resize(num_trees);
    for (RegressionTree& t : b.ensemble.trees) {
        const uint32_t declared = r.u32();
        if (declared < 1) throw FormatError("empty tree in " + origin);
        t.nodes.reserve(declared);
        detail::read_tree_node(r, t, 0);
        if (t.nodes.size() != declared)
            throw FormatError("tree node count mismatch in " + origin);
    }
    close_block(end, "TREE");

    end = open_block("CRFC");
    b.crf.iterations = static_cast<int>(r.u32());
    b.crf.spatial_weight = r.f64();
    b.crf.appearance_weight = r.f64();
    b.crf.spatial_sigma = r.f64();
    b.crf.appearance_sigma_xy = r.f64();
    b.crf.appearance_sigma_intensity = r.f64();
    b.crf.intensity_levels = static_cast<int>(r.u32());
    close_block(end, "CRFC");

    if (r.remaining() != 0) throw FormatError("trailing bytes in " + origin);
    detail::check_bundle_consistency(b, origin);
    return b;
}

inline void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    detail::write_file_bytes(path, bundle_to_bytes(bundle));
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
    return bundle_from_bytes(detail::read_file_bytes(path), path.string());
}

}  // namespace sslseg
