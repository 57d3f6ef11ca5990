#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sslseg/phantom.hpp"
#include "sslseg/pipeline.hpp"
#include "sslseg/tensor_ops.hpp"

using namespace sslseg;

namespace {

/// Phantom corpus on disk plus one trained model, built once and shared.
/// Subjects p00..p05 train (one slice), p06..p07 val (one slice), p08..p09
/// test (two slices each).
struct Fixture {
    std::filesystem::path dir;
    DatasetManifest manifest;
    PipelineConfig config;
    ModelBundle bundle;
};

PhantomSpec small_phantom(uint64_t seed) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.image_size = 64;
    spec.noise_sigma = 0.05;
    spec.lv_radius_min = 6.0;
    spec.lv_radius_max = 10.0;
    spec.myo_thickness_min = 3.0;
    spec.myo_thickness_max = 4.0;
    return spec;
}

const Fixture& fixture() {
    static const Fixture fx = [] {
        Fixture f;
        f.dir = std::filesystem::temp_directory_path() / "sslseg_pipeline_tests";
        std::filesystem::remove_all(f.dir);
        std::filesystem::create_directories(f.dir);
        f.manifest.base_dir = f.dir;

        uint64_t seed = 1000;
        auto add_slice = [&](const std::string& subject, int slice, const std::string& split) {
            auto [image, labels] = generate_phantom(small_phantom(seed++));
            const std::string stem = subject + "_s" + std::to_string(slice);
            save_raw_tensor(image, f.dir / (stem + ".raw"));
            save_pgm_labels(labels, f.dir / (stem + ".pgm"));
            f.manifest.records.push_back({subject, stem + ".raw", stem + ".pgm", split});
        };
        for (int i = 0; i < 6; ++i) add_slice("p0" + std::to_string(i), 0, "train");
        for (int i = 6; i < 8; ++i) add_slice("p0" + std::to_string(i), 0, "val");
        for (int i = 8; i < 10; ++i) {
            add_slice("p0" + std::to_string(i), 0, "test");
            add_slice("p0" + std::to_string(i), 1, "test");
        }

        f.config.cascade.num_units = 3;
        f.config.cascade.kernels_per_unit = {4, 8, 16};
        f.config.gbdt.num_rounds = 15;
        f.config.gbdt.max_depth = 4;
        f.config.preprocess_size = 64;
        f.config.seed = 77;
        f.bundle = train_pipeline(f.manifest, f.config);
        return f;
    }();
    return fx;
}

LabelMap make_labels(int h, int w, const std::vector<uint8_t>& data) {
    LabelMap m;
    m.height = h;
    m.width = w;
    m.data = data;
    return m;
}

std::vector<int> class_counts(const LabelMap& labels, const std::vector<int>& pixels) {
    std::vector<int> counts(kNumClasses, 0);
    for (int p : pixels) ++counts[labels.data[p]];
    return counts;
}

}  // namespace

TEST_CASE("balanced sampling keeps all foreground and caps background") {
    // 10x10: 3 RV, 5 MYO, 2 LV, 90 background. Cap 2 x 5 = 10 background.
    std::vector<uint8_t> data(100, 0);
    data[0] = data[1] = data[2] = 1;
    data[10] = data[11] = data[12] = data[13] = data[14] = 2;
    data[20] = data[21] = 3;
    const LabelMap labels = make_labels(10, 10, data);

    std::mt19937_64 rng(5);
    const std::vector<int> pixels = sample_training_pixels(labels, 2, 3000, rng);
    const std::vector<int> counts = class_counts(labels, pixels);
    CHECK(counts[0] == 10);
    CHECK(counts[1] == 3);
    CHECK(counts[2] == 5);
    CHECK(counts[3] == 2);
    CHECK(std::is_sorted(pixels.begin(), pixels.end()));
    CHECK(std::adjacent_find(pixels.begin(), pixels.end()) == pixels.end());
}

TEST_CASE("balanced sampling falls back to max_pixels on background-only slices") {
    const LabelMap labels = make_labels(10, 10, std::vector<uint8_t>(100, 0));
    std::mt19937_64 rng(1);
    const std::vector<int> pixels = sample_training_pixels(labels, 2, 50, rng);
    CHECK(pixels.size() == 50);
    CHECK(std::is_sorted(pixels.begin(), pixels.end()));
}

TEST_CASE("balanced sampling shrinks classes proportionally toward max_pixels") {
    // 40 RV pixels, background capped at 80, total 120 against a budget of 60:
    // quotas floor to 40 * 60 / 120 = 20 and 80 * 60 / 120 = 40.
    std::vector<uint8_t> data(400, 0);
    for (int i = 0; i < 40; ++i) data[i] = 1;
    const LabelMap labels = make_labels(20, 20, data);

    std::mt19937_64 rng(9);
    const std::vector<int> pixels = sample_training_pixels(labels, 2, 60, rng);
    const std::vector<int> counts = class_counts(labels, pixels);
    CHECK(counts[0] == 40);
    CHECK(counts[1] == 20);
    CHECK(pixels.size() == 60);
}

TEST_CASE("balanced sampling is deterministic in the rng seed") {
    std::vector<uint8_t> data(400, 0);
    for (int i = 0; i < 30; ++i) data[i * 3] = 1;
    const LabelMap labels = make_labels(20, 20, data);

    std::mt19937_64 a(42), b(42), c(43);
    const std::vector<int> first = sample_training_pixels(labels, 2, 70, a);
    const std::vector<int> second = sample_training_pixels(labels, 2, 70, b);
    const std::vector<int> third = sample_training_pixels(labels, 2, 70, c);
    CHECK(first == second);
    CHECK(first != third);
}

TEST_CASE("balanced sampling validates its arguments") {
    const LabelMap labels = make_labels(4, 4, std::vector<uint8_t>(16, 0));
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(sample_training_pixels(labels, 0, 100, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_training_pixels(labels, 2, 3, rng), std::invalid_argument);
    LabelMap bad = labels;
    bad.data[5] = 4;
    CHECK_THROWS_AS(sample_training_pixels(bad, 2, 100, rng), std::invalid_argument);
}

TEST_CASE("gather_features validates mask and shapes") {
    FeatureMap u0(4, 4, 2), u1(2, 2, 1);
    std::iota(u0.data.begin(), u0.data.end(), 0.0f);
    std::iota(u1.data.begin(), u1.data.end(), 100.0f);
    const std::vector<FeatureMap> units = {u0, u1};

    CHECK_THROWS_AS(gather_features({}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(gather_features(units, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(gather_features(units, {1, 1, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(gather_features(units, {0, 0, 0}), std::invalid_argument);

    FeatureMap odd(3, 3, 1);
    CHECK_THROWS_AS(gather_features({u0, odd}, {1, 1, 1}), std::invalid_argument);
}

TEST_CASE("gather_features reads native-resolution outputs through index mapping") {
    FeatureMap u0(4, 4, 2), u1(2, 2, 3);
    std::mt19937_64 rng(11);
    for (float& v : u0.data) v = static_cast<float>(rng() % 1000) * 0.01f;
    for (float& v : u1.data) v = static_cast<float>(rng() % 1000) * 0.01f;
    const std::vector<FeatureMap> units = {u0, u1};
    const std::vector<uint8_t> mask = {1, 0, 1, 1, 0};

    const FeatureMatrix full = gather_features(units, mask);
    REQUIRE(full.rows == 16);
    REQUIRE(full.cols == 3);

    // Same values as reading the upsampled concatenation at the kept channels.
    const FeatureMap stacked =
        concat_channels({u0, upsample_nearest(u1, 4, 4)});
    const int kept[3] = {0, 2, 3};
    for (int p = 0; p < 16; ++p)
        for (int j = 0; j < 3; ++j)
            CHECK(full.row(p)[j] == stacked.at(p / 4, p % 4, kept[j]));

    // Pixel-subset rows match the corresponding full rows exactly.
    const std::vector<int> pixels = {0, 5, 6, 15};
    const FeatureMatrix sub = gather_features(units, mask, pixels);
    REQUIRE(sub.rows == 4);
    for (int i = 0; i < sub.rows; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(sub.row(i)[j] == full.row(pixels[i])[j]);
}

TEST_CASE("trained bundle has the expected shape") {
    const Fixture& fx = fixture();
    const ModelBundle& b = fx.bundle;

    REQUIRE(b.cascade.banks.size() == 3);
    CHECK(b.cascade.banks[0].input_dim == 9);
    CHECK(b.cascade.banks[1].input_dim == 36);
    CHECK(b.cascade.banks[2].input_dim == 72);
    CHECK(b.cascade.total_channels() == 28);

    // floor(0.8 * 28) = 22 kept channels feed the ensemble.
    REQUIRE(b.keep_mask.size() == 28);
    CHECK(b.num_kept_channels() == 22);
    CHECK(b.ensemble.num_features == 22);
    CHECK(b.ensemble.trees.size() == 4 * 15);
    CHECK(b.ensemble.train_loss.size() == 16);

    CHECK(b.channel_entropies.size() == 28);
    for (double e : b.channel_entropies) CHECK(std::isfinite(e));
    REQUIRE(b.channel_min.size() == 28);
    REQUIRE(b.channel_max.size() == 28);
    for (size_t c = 0; c < 28; ++c) CHECK(b.channel_min[c] <= b.channel_max[c]);

    CHECK(b.preprocess_size == 64);
    CHECK(b.seed == 77);
    CHECK(b.crf_enabled);
    CHECK(b.keep_ratio == 0.8);
}

TEST_CASE("training is deterministic") {
    const Fixture& fx = fixture();
    const ModelBundle again = train_pipeline(fx.manifest, fx.config);
    CHECK(bundle_to_bytes(again) == bundle_to_bytes(fx.bundle));
}

TEST_CASE("prediction reuses the training feature path") {
    const Fixture& fx = fixture();
    const SliceRecord& record = fx.manifest.records.front();
    const LoadedSlice slice = load_slice(record, fx.manifest.base_dir);

    const PredictResult result = predict(fx.bundle, slice.image);
    const FeatureMap pre = preprocess(slice.image, 64);
    CHECK(result.preprocessed.data == pre.data);

    const std::vector<FeatureMap> units = transform_cascade(fx.bundle.cascade, pre);
    const FeatureMatrix features = gather_features(units, fx.bundle.keep_mask);
    const std::vector<double> probs = predict_proba(fx.bundle.ensemble, features);
    CHECK(result.probs.values == probs);

    // Rows are proper distributions.
    for (int p = 0; p < 64 * 64; ++p) {
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
            const double v = result.probs.values[static_cast<size_t>(p) * kNumClasses + k];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            sum += v;
        }
        if (p % 257 == 0) CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }

    const LabelMap hard = argmax_labels(result.probs);
    CHECK(result.before_crf.data == hard.data);
    const LabelMap refined = mean_field_refine(result.probs, result.preprocessed, fx.bundle.crf);
    CHECK(result.after_crf.data == refined.data);
}

TEST_CASE("disabling the CRF returns the plain argmax labels") {
    const Fixture& fx = fixture();
    ModelBundle plain = fx.bundle;
    plain.crf_enabled = false;

    const SliceRecord& record = fx.manifest.records.back();
    const LoadedSlice slice = load_slice(record, fx.manifest.base_dir);
    const PredictResult result = predict(plain, slice.image);
    CHECK(result.after_crf.data == result.before_crf.data);
}

TEST_CASE("bundle round trip preserves predictions bit for bit") {
    const Fixture& fx = fixture();
    const ModelBundle reloaded = bundle_from_bytes(bundle_to_bytes(fx.bundle), "round trip");

    const SliceRecord& record = fx.manifest.records[8];
    const LoadedSlice slice = load_slice(record, fx.manifest.base_dir);
    const PredictResult a = predict(fx.bundle, slice.image);
    const PredictResult b = predict(reloaded, slice.image);
    CHECK(a.probs.values == b.probs.values);
    CHECK(a.after_crf.data == b.after_crf.data);
}

TEST_CASE("held-out phantoms segment well") {
    const Fixture& fx = fixture();

    EvalOptions raw;
    raw.use_crf_output = false;
    const DiceReport before = evaluate_manifest(fx.bundle, fx.manifest, raw);
    CHECK(before.num_slices == 4);
    CHECK(before.average >= 0.65);

    const DiceReport after = evaluate_manifest(fx.bundle, fx.manifest, {});
    CHECK(after.num_slices == 4);
    CHECK(after.average >= 0.65);
    for (double d : after.per_class) {
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("per-subject evaluation pools counts before averaging") {
    const Fixture& fx = fixture();
    EvalOptions options;
    options.per_subject = true;
    const DiceReport report = evaluate_manifest(fx.bundle, fx.manifest, options);
    CHECK(report.num_slices == 4);
    for (double d : report.per_class) {
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
    const double mean = (report.per_class[0] + report.per_class[1] + report.per_class[2]) / 3.0;
    CHECK(report.average == Catch::Approx(mean).margin(1e-12));
}

TEST_CASE("disabling selection keeps every channel") {
    const Fixture& fx = fixture();
    PipelineConfig config = fx.config;
    config.use_featsel = false;
    config.gbdt.num_rounds = 4;

    const ModelBundle bundle = train_pipeline(fx.manifest, config);
    CHECK(bundle.num_kept_channels() == 28);
    CHECK(bundle.keep_ratio == 1.0);
    CHECK(bundle.ensemble.num_features == 28);
    for (uint8_t k : bundle.keep_mask) CHECK(k == 1);
}

TEST_CASE("unit-count sweep re-deals train and val per seed") {
    const Fixture& fx = fixture();
    PipelineConfig base = fx.config;
    base.gbdt.num_rounds = 4;
    base.use_crf = false;

    const std::vector<SweepRow> rows = sweep_units(fx.manifest, {1, 2}, base, 1);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].units == 1);
    CHECK(rows[1].units == 2);
    for (const SweepRow& row : rows) {
        CHECK(row.mean_dice >= 0.0);
        CHECK(row.mean_dice <= 1.0);
        CHECK(row.std_dice == 0.0);  // population std over a single seed
    }
}

TEST_CASE("sweep validates its arguments") {
    const Fixture& fx = fixture();
    CHECK_THROWS_AS(sweep_units(fx.manifest, {}, fx.config, 1), std::invalid_argument);
    CHECK_THROWS_AS(sweep_units(fx.manifest, {0}, fx.config, 1), std::invalid_argument);
    CHECK_THROWS_AS(sweep_units(fx.manifest, {1}, fx.config, 0), std::invalid_argument);

    DatasetManifest no_val;
    no_val.base_dir = fx.manifest.base_dir;
    for (const SliceRecord& r : fx.manifest.records)
        if (r.split == "train") no_val.records.push_back(r);
    CHECK_THROWS_AS(sweep_units(no_val, {1}, fx.config, 1), std::invalid_argument);
}

TEST_CASE("training rejects unusable manifests") {
    const Fixture& fx = fixture();

    DatasetManifest empty;
    empty.base_dir = fx.manifest.base_dir;
    CHECK_THROWS_AS(train_pipeline(empty, fx.config), std::invalid_argument);

    // A train record without labels fails while loading the split.
    DatasetManifest unlabeled;
    unlabeled.base_dir = fx.manifest.base_dir;
    SliceRecord record = fx.manifest.records.front();
    record.label_path.clear();
    unlabeled.records.push_back(record);
    CHECK_THROWS_AS(train_pipeline(unlabeled, fx.config), std::invalid_argument);

    DatasetManifest one;
    one.base_dir = fx.manifest.base_dir;
    one.records.push_back(fx.manifest.records.front());
    PipelineConfig bad = fx.config;
    bad.keep_ratio = 0.0;
    CHECK_THROWS_AS(train_pipeline(one, bad), std::invalid_argument);
}

TEST_CASE("evaluation rejects empty splits") {
    const Fixture& fx = fixture();
    EvalOptions options;
    options.split = "nope";
    CHECK_THROWS_AS(evaluate_manifest(fx.bundle, fx.manifest, options), std::invalid_argument);
}
