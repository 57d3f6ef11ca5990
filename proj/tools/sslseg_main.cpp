// Command-line surface for the segmentation toolkit: train, predict, eval,
// phantom-gen, sweep, inspect. Exit codes: 0 success, 2 argument error,
// 3 data/format error, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sslseg/sslseg.hpp"

namespace {

namespace fs = std::filesystem;

std::string zero_pad(int value, int width) {
    std::ostringstream out;
    out << std::setw(width) << std::setfill('0') << value;
    return out.str();
}

sslseg::FeatureMap load_image_file(const std::string& path) {
    sslseg::SliceRecord record;
    record.image_path = path;
    record.split = "test";
    return sslseg::load_slice(record, fs::current_path()).image;
}

void print_report(const sslseg::DiceReport& report) {
    std::cout << std::setprecision(6) << std::fixed;
    std::cout << "rv_dice\t" << report.per_class[0] << "\n";
    std::cout << "myo_dice\t" << report.per_class[1] << "\n";
    std::cout << "lv_dice\t" << report.per_class[2] << "\n";
    std::cout << "average_dice\t" << report.average << "\n";
    std::cout << "num_slices\t" << report.num_slices << "\n";
}

struct TrainArgs {
    std::string manifest_path;
    std::string out_path;
    int units = 4;
    std::vector<int> kernels = {5, 10, 30, 100};
    double keep_ratio = 0.8;
    int rounds = 100;
    int depth = 6;
    uint64_t seed = 0;
    bool no_crf = false;
    bool no_featsel = false;
    bool units_given = false;
    bool kernels_given = false;
};

int run_train(const TrainArgs& args) {
    if (args.kernels_given && args.units_given &&
        static_cast<int>(args.kernels.size()) != args.units)
        throw std::invalid_argument("--kernels length must equal --units");

    sslseg::PipelineConfig config;
    config.cascade.kernels_per_unit = args.kernels;
    if (args.kernels_given && !args.units_given) {
        config.cascade.num_units = static_cast<int>(args.kernels.size());
    } else {
        config.cascade.num_units = args.units;
        if (!args.kernels_given) {
            config.cascade.kernels_per_unit.resize(
                std::min<size_t>(config.cascade.kernels_per_unit.size(),
                                 static_cast<size_t>(args.units)));
            while (static_cast<int>(config.cascade.kernels_per_unit.size()) < args.units)
                config.cascade.kernels_per_unit.push_back(
                    config.cascade.kernels_per_unit.back());
        }
    }
    config.keep_ratio = args.keep_ratio;
    config.gbdt.num_rounds = args.rounds;
    config.gbdt.max_depth = args.depth;
    config.seed = args.seed;
    config.use_crf = !args.no_crf;
    config.use_featsel = !args.no_featsel;

    const sslseg::DatasetManifest manifest = sslseg::parse_manifest(args.manifest_path);
    const sslseg::ModelBundle bundle = sslseg::train_pipeline(manifest, config, &std::cerr);
    sslseg::save_bundle(bundle, args.out_path);

    std::cout << "bundle\t" << args.out_path << "\n";
    std::cout << "cascade_params\t" << sslseg::count_params(bundle.cascade.banks) << "\n";
    std::cout << "kept_channels\t" << bundle.num_kept_channels() << "\n";
    std::cout << "trees\t" << bundle.ensemble.trees.size() << "\n";
    return 0;
}

int run_predict(const std::string& bundle_path, const std::string& image_path,
                const std::string& out_labels, const std::string& out_probs,
                const std::string& overlay) {
    const sslseg::ModelBundle bundle = sslseg::load_bundle(bundle_path);
    const sslseg::FeatureMap image = load_image_file(image_path);
    const sslseg::PredictResult result = sslseg::predict(bundle, image);
    sslseg::save_pgm_labels(result.after_crf, out_labels);
    if (!out_probs.empty()) {
        sslseg::FeatureMap probs(result.probs.height, result.probs.width, sslseg::kNumClasses);
        for (size_t i = 0; i < probs.data.size(); ++i)
            probs.data[i] = static_cast<float>(result.probs.values[i]);
        sslseg::save_raw_tensor(probs, out_probs);
    }
    if (!overlay.empty())
        sslseg::save_overlay_ppm(result.preprocessed, result.after_crf, overlay);
    std::cout << "labels\t" << out_labels << "\n";
    return 0;
}

int run_eval(const std::string& bundle_path, const std::string& manifest_path,
             const std::string& split, bool per_subject) {
    const sslseg::ModelBundle bundle = sslseg::load_bundle(bundle_path);
    const sslseg::DatasetManifest manifest = sslseg::parse_manifest(manifest_path);
    sslseg::EvalOptions options;
    options.split = split;
    options.per_subject = per_subject;
    print_report(sslseg::evaluate_manifest(bundle, manifest, options));
    return 0;
}

int run_phantom_gen(int count, const std::string& out_dir, uint64_t seed, double noise) {
    if (count < 1) throw std::invalid_argument("--count must be positive");
    fs::create_directories(out_dir);

    std::vector<sslseg::SliceRecord> records;
    for (int i = 0; i < count; ++i) {
        sslseg::PhantomSpec spec;
        spec.seed = seed + static_cast<uint64_t>(i);
        spec.noise_sigma = noise;
        const auto [image, labels] = sslseg::generate_phantom(spec);
        const std::string stem = "phantom-" + zero_pad(i, 3);
        sslseg::save_raw_tensor(image, fs::path(out_dir) / (stem + ".raw"));
        sslseg::save_pgm_labels(labels, fs::path(out_dir) / (stem + "_labels.pgm"));
        sslseg::SliceRecord r;
        r.subject_id = stem;
        r.image_path = stem + ".raw";
        r.label_path = stem + "_labels.pgm";
        r.split = "train";
        records.push_back(std::move(r));
    }

    const int train_n = count * 6 / 10;
    const int val_n = count * 2 / 10;
    const int test_n = count - train_n - val_n;
    sslseg::DatasetManifest manifest;
    manifest.records = sslseg::split_manifest(records, seed, train_n, val_n, test_n);
    manifest.base_dir = out_dir;
    sslseg::write_manifest(manifest, fs::path(out_dir) / "manifest.tsv");

    std::cout << "out_dir\t" << out_dir << "\n";
    std::cout << "slices\t" << count << "\n";
    std::cout << "splits\t" << train_n << "/" << val_n << "/" << test_n << "\n";
    return 0;
}

int run_sweep(const std::string& manifest_path, const std::vector<int>& units, int seeds) {
    const sslseg::DatasetManifest manifest = sslseg::parse_manifest(manifest_path);
    sslseg::PipelineConfig base;
    const std::vector<sslseg::SweepRow> rows =
        sslseg::sweep_units(manifest, units, base, seeds, &std::cerr);
    std::cout << "units\tmean_dice\tstd_dice\n" << std::setprecision(6) << std::fixed;
    for (const sslseg::SweepRow& row : rows)
        std::cout << row.units << "\t" << row.mean_dice << "\t" << row.std_dice << "\n";
    return 0;
}

int run_inspect(const std::string& bundle_path) {
    const sslseg::ModelBundle bundle = sslseg::load_bundle(bundle_path);
    std::cout << "format_version\t" << bundle.format_version << "\n";
    std::cout << "preprocess_size\t" << bundle.preprocess_size << "\n";
    std::cout << "seed\t" << bundle.seed << "\n";
    std::cout << "crf_enabled\t" << (bundle.crf_enabled ? 1 : 0) << "\n";
    std::cout << "keep_ratio\t" << bundle.keep_ratio << "\n";
    std::cout << "cascade_units\t" << bundle.cascade.num_units() << "\n";
    std::cout << "cascade_params\t" << sslseg::count_params(bundle.cascade.banks) << "\n";
    for (size_t u = 0; u < bundle.cascade.banks.size(); ++u) {
        const sslseg::SaabKernelBank& bank = bundle.cascade.banks[u];
        std::cout << "unit\t" << u + 1 << "\tinput_dim\t" << bank.input_dim << "\tkernels\t"
                  << bank.num_kernels << "\n";
    }
    std::cout << "ensemble_rounds\t" << bundle.ensemble.num_rounds() << "\n";
    std::cout << "ensemble_trees\t" << bundle.ensemble.trees.size() << "\n";
    std::cout << "ensemble_nodes\t" << bundle.ensemble.total_nodes() << "\n";
    std::cout << "ensemble_features\t" << bundle.ensemble.num_features << "\n";
    std::cout << "kept_channels\t" << bundle.num_kept_channels() << "\n";

    std::cout << "channel\tunit\tindex\tentropy\tkept\n" << std::setprecision(6) << std::fixed;
    int unit = 0;
    int within = 0;
    for (size_t c = 0; c < bundle.keep_mask.size(); ++c) {
        while (unit < bundle.cascade.num_units() &&
               within >= bundle.cascade.banks[unit].num_kernels) {
            within = 0;
            ++unit;
        }
        std::cout << c << "\t" << unit + 1 << "\t" << within << "\t"
                  << bundle.channel_entropies[c] << "\t" << int(bundle.keep_mask[c]) << "\n";
        ++within;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cardiac MRI segmentation with a feed-forward subspace cascade, "
                 "entropy-guided channel selection, boosted trees, and CRF refinement"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Fit a model from a labeled manifest");
    train->add_option("--manifest", train_args.manifest_path, "Dataset manifest (TSV)")
        ->required();
    train->add_option("--out", train_args.out_path, "Output bundle path")->required();
    auto* units_opt = train->add_option("--units", train_args.units, "Number of cascade units");
    auto* kernels_opt = train
                            ->add_option("--kernels", train_args.kernels,
                                         "Kernels per unit, comma-separated")
                            ->delimiter(',');
    train->add_option("--keep-ratio", train_args.keep_ratio, "Fraction of channels to keep");
    train->add_option("--rounds", train_args.rounds, "Boosting rounds");
    train->add_option("--depth", train_args.depth, "Maximum tree depth");
    train->add_option("--seed", train_args.seed, "Training seed");
    train->add_flag("--no-crf", train_args.no_crf, "Disable CRF refinement at predict time");
    train->add_flag("--no-featsel", train_args.no_featsel, "Keep all channels");

    std::string bundle_path, image_path, out_labels, out_probs, overlay;
    CLI::App* predict = app.add_subcommand("predict", "Segment one image");
    predict->add_option("--bundle", bundle_path, "Model bundle")->required();
    predict->add_option("--image", image_path, "Input image (PGM or raw tensor)")->required();
    predict->add_option("--out-labels", out_labels, "Output label PGM")->required();
    predict->add_option("--out-probs", out_probs, "Optional probability tensor output");
    predict->add_option("--overlay", overlay, "Optional color overlay PPM");

    std::string eval_bundle, eval_manifest, eval_split = "test";
    bool per_subject = false;
    CLI::App* eval = app.add_subcommand("eval", "Score a manifest split");
    eval->add_option("--bundle", eval_bundle, "Model bundle")->required();
    eval->add_option("--manifest", eval_manifest, "Dataset manifest (TSV)")->required();
    eval->add_option("--split", eval_split, "Split to score")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_flag("--per-subject", per_subject, "Pool slices per subject before averaging");

    int phantom_count = 0;
    std::string phantom_dir;
    uint64_t phantom_seed = 0;
    double phantom_noise = 0.08;
    CLI::App* phantom = app.add_subcommand("phantom-gen", "Generate synthetic labeled slices");
    phantom->add_option("--count", phantom_count, "Number of phantoms")->required();
    phantom->add_option("--out-dir", phantom_dir, "Output directory")->required();
    phantom->add_option("--seed", phantom_seed, "Generator seed")->required();
    phantom->add_option("--noise", phantom_noise, "Intensity noise sigma");

    std::string sweep_manifest;
    std::vector<int> sweep_unit_list;
    int sweep_seeds = 5;
    CLI::App* sweep = app.add_subcommand("sweep", "Depth sensitivity over re-dealt splits");
    sweep->add_option("--manifest", sweep_manifest, "Dataset manifest (TSV)")->required();
    sweep->add_option("--units", sweep_unit_list, "Unit counts, comma-separated")
        ->required()
        ->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "Number of split seeds");

    std::string inspect_bundle;
    CLI::App* inspect = app.add_subcommand("inspect", "Describe a model bundle");
    inspect->add_option("--bundle", inspect_bundle, "Model bundle")->required();

    try {
        app.parse(argc, argv);
        train_args.units_given = units_opt->count() > 0;
        train_args.kernels_given = kernels_opt->count() > 0;
        if (train->parsed()) return run_train(train_args);
        if (predict->parsed())
            return run_predict(bundle_path, image_path, out_labels, out_probs, overlay);
        if (eval->parsed()) return run_eval(eval_bundle, eval_manifest, eval_split, per_subject);
        if (phantom->parsed())
            return run_phantom_gen(phantom_count, phantom_dir, phantom_seed, phantom_noise);
        if (sweep->parsed()) return run_sweep(sweep_manifest, sweep_unit_list, sweep_seeds);
        if (inspect->parsed()) return run_inspect(inspect_bundle);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const sslseg::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const sslseg::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
