#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "radiomap/error.hpp"
#include "radiomap/eval.hpp"
#include "radiomap/io.hpp"
#include "radiomap/model.hpp"
#include "radiomap/oracle.hpp"
#include "radiomap/parallel.hpp"
#include "radiomap/run_config.hpp"
#include "radiomap/train.hpp"

namespace fs = std::filesystem;
using namespace radiomap;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string variant = "full";
    std::string tta = "d4";
    std::vector<std::string> run_dirs;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    int size = 0;
};

fs::path resolve_manifest(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "manifest.json";
    if (!fs::exists(p)) throw IoError("dataset manifest not found: " + p.string());
    return p;
}

std::string entry_stem(const std::string& scene_path) {
    return fs::path(scene_path).stem().stem().string();
}

// Precedence: an explicit --config, then the snapshot stored next to the
// dataset, then built-in defaults.
RunConfig config_for(const Options& opts, const fs::path& manifest) {
    if (!opts.config.empty()) return load_run_config(opts.config);
    const fs::path snapshot = manifest.parent_path() / "config.json";
    if (fs::exists(snapshot)) return load_run_config(snapshot);
    return default_run_config();
}

PipelineVariant resolve_variant(const Options& opts) {
    PipelineVariant v = variant_from_string(opts.variant);
    if (v == PipelineVariant::Full && opts.tta == "none") v = PipelineVariant::TwoStage;
    return v;
}

Pipeline load_pipeline(const RunConfig& cfg, const fs::path& ckpt_dir, PipelineVariant variant,
                       const NormalizationSpec& norm) {
    Pipeline p;
    p.variant = variant;
    p.coarse_cfg = cfg.coarse_model;
    p.fine_cfg = cfg.fine_model;
    p.features = cfg.features;
    p.norm = norm;
    p.coarse = load_model((ckpt_dir / "coarse.ckpt").string());
    if (variant != PipelineVariant::CoarseOnly) {
        p.fine = load_model((ckpt_dir / "fine.ckpt").string());
    }
    return p;
}

void write_timing(const fs::path& path, double seconds) {
    nlohmann::ordered_json j;
    j["wall_seconds"] = seconds;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

int cmd_gen_data(const Options& opts) {
    RunConfig cfg = opts.config.empty() ? default_run_config() : load_run_config(opts.config);
    if (opts.seed_set) cfg.generator.seed = opts.seed;
    if (opts.size > 0) {
        cfg.generator.height = opts.size;
        cfg.generator.width = opts.size;
    }
    cfg.finalize();
    const fs::path out(opts.out);
    const DatasetManifest manifest =
        build_dataset(cfg.generator, cfg.trace, cfg.counts, cfg.generator.seed, out);
    save_run_config(cfg, out / "config.json");
    std::cout << "dataset: " << manifest.scenes.size() << " scenes under " << out.string()
              << "\n";
    return 0;
}

int cmd_features(const Options& opts) {
    const fs::path manifest_path = resolve_manifest(opts.data);
    RunConfig cfg = config_for(opts, manifest_path);
    cfg.finalize();
    const DatasetManifest manifest = load_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();
    const fs::path out(opts.out);
    fs::create_directories(out);
    for (const auto& entry : manifest.scenes) {
        const Scene scene = load_scene(root / entry.scene_path);
        const FeatureStack stack = assemble_features(scene, cfg.features);
        write_tensor(stack, out / (entry_stem(entry.scene_path) + ".features.rmt"));
    }
    std::cout << "features: " << manifest.scenes.size() << " stacks under " << out.string()
              << "\n";
    return 0;
}

int cmd_train(const Options& opts) {
    const fs::path manifest_path = resolve_manifest(opts.data);
    RunConfig cfg = config_for(opts, manifest_path);
    if (opts.seed_set) {
        cfg.train_coarse.seed = opts.seed;
        cfg.train_fine.seed = opts.seed + 1;
    }
    cfg.finalize();

    const TrainDataset dataset = load_training_data(manifest_path);
    const fs::path out(opts.out);
    fs::create_directories(out);
    save_run_config(cfg, out / "config.json");

    const auto t0 = std::chrono::steady_clock::now();
    const TwoStageResult result = train_two_stage(dataset, cfg.coarse_model, cfg.fine_model,
                                                  cfg.features, cfg.train_coarse, cfg.train_fine);
    const auto t1 = std::chrono::steady_clock::now();

    save_model((out / "coarse.ckpt").string(), result.coarse);
    save_model((out / "fine.ckpt").string(), result.fine);
    write_history(result.coarse_history, out / "history_coarse.csv");
    write_history(result.fine_history, out / "history_fine.csv");
    write_timing(out / "timing.json", std::chrono::duration<double>(t1 - t0).count());

    Pipeline pipeline;
    pipeline.variant = cfg.tta ? PipelineVariant::Full : PipelineVariant::TwoStage;
    pipeline.coarse_cfg = cfg.coarse_model;
    pipeline.coarse = result.coarse;
    pipeline.fine_cfg = cfg.fine_model;
    pipeline.fine = result.fine;
    pipeline.features = cfg.features;
    pipeline.norm = dataset.norm;
    emit_scene_heatmaps(out / "heatmaps", "val0", dataset.val.front().scene, pipeline,
                        dataset.val.front().target_db);

    std::cout << "train: coarse best val " << result.coarse_history.best_val_rmse_db
              << " dB, fine best val " << result.fine_history.best_val_rmse_db << " dB\n";
    return 0;
}

int cmd_predict(const Options& opts) {
    const fs::path manifest_path = resolve_manifest(opts.data);
    const fs::path ckpt(opts.checkpoint);
    RunConfig cfg = load_run_config(ckpt / "config.json");
    cfg.finalize();
    const DatasetManifest manifest = load_manifest(manifest_path);
    const Pipeline pipeline =
        load_pipeline(cfg, ckpt, resolve_variant(opts), manifest.normalization);

    const fs::path root = manifest_path.parent_path();
    const fs::path out(opts.out);
    fs::create_directories(out);
    int produced = 0;
    for (const auto& entry : manifest.scenes) {
        if (entry.split != Split::Test) continue;
        const Scene scene = load_scene(root / entry.scene_path);
        const Grid pred = pipeline.predict(scene);
        const std::string stem = entry_stem(entry.scene_path);
        write_grid(pred, out / (stem + ".pred.rmt"));
        emit_heatmap(pred, pipeline.norm.lo_db, pipeline.norm.hi_db,
                     out / (stem + ".pred.ppm"));
        produced += 1;
    }
    if (produced == 0) throw ValidationError("manifest has no test scenes to predict");
    std::cout << "predict: " << produced << " maps under " << out.string() << "\n";
    return 0;
}

int cmd_eval(const Options& opts) {
    const fs::path manifest_path = resolve_manifest(opts.data);
    const fs::path ckpt(opts.checkpoint);
    RunConfig cfg = load_run_config(ckpt / "config.json");
    cfg.finalize();
    const DatasetManifest manifest = load_manifest(manifest_path);
    const Pipeline pipeline =
        load_pipeline(cfg, ckpt, resolve_variant(opts), manifest.normalization);

    const fs::path out(opts.out);
    EvalOptions eval_opts;
    eval_opts.emit_heatmaps = true;
    eval_opts.heatmap_dir = out / "heatmaps";
    const EvalReport report = evaluate(manifest_path, pipeline, eval_opts);
    write_report(report, out);
    std::cout << "eval " << report.variant << ": overall " << report.overall_db << " dB (tasks "
              << report.task_rmse_db[0] << " / " << report.task_rmse_db[1] << " / "
              << report.task_rmse_db[2] << ")\n";
    return 0;
}

int cmd_report(const Options& opts) {
    std::vector<EvalReport> reports;
    for (const auto& dir : opts.run_dirs) reports.push_back(load_report(dir));
    write_ablation_table(reports, opts.out);
    std::cout << "report: " << reports.size() << " variants -> " << opts.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic indoor pathloss pipeline: data generation, training, evaluation"};
    app.require_subcommand(1);
    Options opts;

    app.add_option("--threads", opts.threads, "cap worker threads (0 = hardware)");

    auto add_common = [&](CLI::App* cmd, bool needs_out) {
        cmd->fallthrough();
        cmd->add_option("--config", opts.config, "JSON config file");
        auto* seed = cmd->add_option("--seed", opts.seed, "seed override");
        seed->each([&](const std::string&) { opts.seed_set = true; });
        auto* out = cmd->add_option("--out", opts.out, "output directory");
        if (needs_out) out->required();
        return cmd;
    };

    auto* gen = add_common(app.add_subcommand("gen-data", "generate scenes + ground truth"),
                           true);
    gen->add_option("--size", opts.size, "square scene size in cells")
        ->check(CLI::IsMember({64, 128, 384}));

    auto* features =
        add_common(app.add_subcommand("features", "persist feature stacks"), true);
    features->add_option("--data", opts.data, "dataset dir or manifest")->required();

    auto* train = add_common(app.add_subcommand("train", "two-stage training"), true);
    train->add_option("--data", opts.data, "dataset dir or manifest")->required();

    auto* predict = add_common(app.add_subcommand("predict", "write prediction maps"), true);
    predict->add_option("--data", opts.data, "dataset dir or manifest")->required();
    predict->add_option("--checkpoint", opts.checkpoint, "training run directory")->required();
    predict->add_option("--variant", opts.variant, "pipeline variant")
        ->check(CLI::IsMember({"coarse_only", "two_stage", "full"}));
    predict->add_option("--tta", opts.tta, "ensembling for the full variant")
        ->check(CLI::IsMember({"none", "d4"}));

    auto* eval = add_common(app.add_subcommand("eval", "score the test tasks"), true);
    eval->add_option("--data", opts.data, "dataset dir or manifest")->required();
    eval->add_option("--checkpoint", opts.checkpoint, "training run directory")->required();
    eval->add_option("--variant", opts.variant, "pipeline variant")
        ->check(CLI::IsMember({"coarse_only", "two_stage", "full"}));
    eval->add_option("--tta", opts.tta, "ensembling for the full variant")
        ->check(CLI::IsMember({"none", "d4"}));

    auto* report = app.add_subcommand("report", "merge eval reports into an ablation table");
    report->fallthrough();
    report->add_option("--out", opts.out, "output table file")->required();
    report->add_option("runs", opts.run_dirs, "run directories containing report.json")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    }

    try {
        if (opts.threads > 0) set_max_threads(opts.threads);
        if (gen->parsed()) return cmd_gen_data(opts);
        if (features->parsed()) return cmd_features(opts);
        if (train->parsed()) return cmd_train(opts);
        if (predict->parsed()) return cmd_predict(opts);
        if (eval->parsed()) return cmd_eval(opts);
        if (report->parsed()) return cmd_report(opts);
        std::cerr << "error: usage: no subcommand\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: validation: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 3;
    }
}
