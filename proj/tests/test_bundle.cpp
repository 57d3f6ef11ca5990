#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "sslseg/bundle.hpp"
#include "sslseg/entropy_select.hpp"

using namespace sslseg;
namespace fs = std::filesystem;

namespace {

FeatureMap random_image(int h, int w, uint64_t seed) {
    FeatureMap t(h, w, 1);
    std::mt19937_64 rng(seed);
    for (float& v : t.data)
        v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    return t;
}

/// A small but fully populated bundle with real fitted pieces.
ModelBundle make_bundle() {
    CascadeConfig cascade_cfg;
    cascade_cfg.num_units = 2;
    cascade_cfg.kernels_per_unit = {4, 6};
    cascade_cfg.seed = 5;

    ModelBundle b;
    b.cascade = fit_cascade({random_image(32, 32, 1), random_image(32, 32, 2)}, cascade_cfg);

    const int total = b.cascade.total_channels();  // 10
    std::mt19937_64 rng(77);
    b.channel_entropies.resize(total);
    for (double& v : b.channel_entropies) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 3.0;
    b.channel_min.resize(total);
    b.channel_max.resize(total);
    for (int c = 0; c < total; ++c) {
        b.channel_min[c] = static_cast<float>(c) * 0.5f;
        b.channel_max[c] = b.channel_min[c] + 1.0f + static_cast<float>(c % 3);
    }
    b.keep_mask = select_channels(b.channel_entropies, 0.7).keep_mask;
    b.keep_ratio = 0.7;

    const int kept = b.num_kept_channels();
    FeatureMatrix x(80, kept);
    std::vector<uint8_t> y(80);
    for (float& v : x.values) v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53);
    for (auto& l : y) l = static_cast<uint8_t>(rng() % 4);
    GbdtConfig gbdt_cfg;
    gbdt_cfg.num_rounds = 3;
    gbdt_cfg.max_depth = 3;
    gbdt_cfg.seed = 11;
    b.ensemble = fit_gbdt(x, y, gbdt_cfg);

    b.crf.iterations = 4;
    b.crf.spatial_weight = 2.5;
    b.crf.appearance_weight = 4.5;
    b.crf.spatial_sigma = 2.0;
    b.crf.appearance_sigma_xy = 12.0;
    b.crf.appearance_sigma_intensity = 0.2;
    b.crf.intensity_levels = 16;
    b.crf_enabled = false;
    b.preprocess_size = 96;
    b.seed = 123456789ull;
    return b;
}

}  // namespace

TEST_CASE("bundles survive a byte round trip with every field intact") {
    ModelBundle original = make_bundle();
    std::vector<uint8_t> bytes = bundle_to_bytes(original);
    ModelBundle loaded = bundle_from_bytes(bytes, "test");

    CHECK(loaded.format_version == kBundleVersion);
    CHECK(loaded.preprocess_size == 96);
    CHECK(loaded.seed == 123456789ull);
    CHECK(loaded.crf_enabled == false);
    CHECK(loaded.keep_ratio == 0.7);

    REQUIRE(loaded.cascade.num_units() == original.cascade.num_units());
    CHECK(loaded.cascade.window == original.cascade.window);
    for (int u = 0; u < loaded.cascade.num_units(); ++u) {
        const SaabKernelBank& a = loaded.cascade.banks[u];
        const SaabKernelBank& e = original.cascade.banks[u];
        CHECK(a.input_dim == e.input_dim);
        CHECK(a.num_kernels == e.num_kernels);
        // Cascade parameters are f32-valued doubles, so f32 storage is lossless.
        CHECK(a.dc_anchor == e.dc_anchor);
        CHECK(a.ac_anchors == e.ac_anchors);
        CHECK(a.mean_vector == e.mean_vector);
        CHECK(a.bias == e.bias);
        CHECK(a.bias_scale == e.bias_scale);
    }

    CHECK(loaded.keep_mask == original.keep_mask);
    CHECK(loaded.channel_entropies == original.channel_entropies);
    CHECK(loaded.channel_min == original.channel_min);
    CHECK(loaded.channel_max == original.channel_max);

    CHECK(loaded.ensemble.num_features == original.ensemble.num_features);
    CHECK(loaded.ensemble.learning_rate == original.ensemble.learning_rate);
    REQUIRE(loaded.ensemble.trees.size() == original.ensemble.trees.size());
    for (size_t t = 0; t < loaded.ensemble.trees.size(); ++t) {
        const auto& got = loaded.ensemble.trees[t].nodes;
        const auto& want = original.ensemble.trees[t].nodes;
        REQUIRE(got.size() == want.size());
        for (size_t n = 0; n < got.size(); ++n) {
            CHECK(got[n].feature == want[n].feature);
            CHECK(got[n].threshold == want[n].threshold);
            CHECK(got[n].weight == want[n].weight);
            CHECK(got[n].left == want[n].left);
            CHECK(got[n].right == want[n].right);
        }
    }

    CHECK(loaded.crf.iterations == 4);
    CHECK(loaded.crf.spatial_weight == 2.5);
    CHECK(loaded.crf.appearance_weight == 4.5);
    CHECK(loaded.crf.spatial_sigma == 2.0);
    CHECK(loaded.crf.appearance_sigma_xy == 12.0);
    CHECK(loaded.crf.appearance_sigma_intensity == 0.2);
    CHECK(loaded.crf.intensity_levels == 16);

    // Serializing the reloaded bundle reproduces the bytes exactly.
    CHECK(bundle_to_bytes(loaded) == bytes);
}

TEST_CASE("bundles written to disk reload identically") {
    ModelBundle original = make_bundle();
    const fs::path dir = fs::temp_directory_path() / "sslseg_bundle_tests";
    fs::create_directories(dir);
    const fs::path p = dir / "model.sslb";
    save_bundle(original, p);
    ModelBundle loaded = load_bundle(p);

    const fs::path p2 = dir / "model2.sslb";
    save_bundle(loaded, p2);
    CHECK(detail::read_file_bytes(p) == detail::read_file_bytes(p2));
}

TEST_CASE("round-tripped models predict bit-identically") {
    ModelBundle original = make_bundle();
    ModelBundle loaded = bundle_from_bytes(bundle_to_bytes(original), "test");

    FeatureMap probe = random_image(32, 32, 50);
    std::vector<FeatureMap> a = transform_cascade(original.cascade, probe);
    std::vector<FeatureMap> b = transform_cascade(loaded.cascade, probe);
    REQUIRE(a.size() == b.size());
    for (size_t u = 0; u < a.size(); ++u) CHECK(a[u].data == b[u].data);

    FeatureMatrix x(40, original.ensemble.num_features);
    std::mt19937_64 rng(51);
    for (float& v : x.values) v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53);
    CHECK(predict_proba(original.ensemble, x) == predict_proba(loaded.ensemble, x));
}

TEST_CASE("corrupt bundles fail with distinct errors") {
    ModelBundle original = make_bundle();
    std::vector<uint8_t> bytes = bundle_to_bytes(original);

    std::vector<uint8_t> bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        bundle_from_bytes(bad_magic, "t");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    std::vector<uint8_t> bad_version = bytes;
    bad_version[4] = 9;
    try {
        bundle_from_bytes(bad_version, "t");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }

    for (size_t keep : {3u, 10u, 60u}) {
        std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + keep);
        CHECK_THROWS_AS(bundle_from_bytes(cut, "t"), FormatError);
    }
    std::vector<uint8_t> almost(bytes.begin(), bytes.end() - 1);
    CHECK_THROWS_AS(bundle_from_bytes(almost, "t"), FormatError);

    std::vector<uint8_t> trailing = bytes;
    trailing.push_back(0);
    try {
        bundle_from_bytes(trailing, "t");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("trailing") != std::string::npos);
    }
}

TEST_CASE("a tampered feature width is rejected as inconsistent") {
    ModelBundle original = make_bundle();
    std::vector<uint8_t> bytes = bundle_to_bytes(original);

    // num_features sits right after the TREE tag, its length, and num_classes.
    const uint8_t tag[4] = {'T', 'R', 'E', 'E'};
    size_t at = 0;
    for (size_t i = 0; i + 4 <= bytes.size(); ++i)
        if (std::memcmp(bytes.data() + i, tag, 4) == 0) {
            at = i;
            break;
        }
    REQUIRE(at != 0);
    const size_t field = at + 4 + 8 + 4;
    bytes[field] = static_cast<uint8_t>(original.ensemble.num_features + 1);

    try {
        bundle_from_bytes(bytes, "t");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("feature width") != std::string::npos);
    }
}

TEST_CASE("saving validates consistency up front") {
    ModelBundle broken = make_bundle();
    broken.keep_mask.pop_back();
    CHECK_THROWS_AS(bundle_to_bytes(broken), FormatError);

    ModelBundle wrong_width = make_bundle();
    wrong_width.ensemble.num_features += 1;
    CHECK_THROWS_AS(bundle_to_bytes(wrong_width), FormatError);
}
