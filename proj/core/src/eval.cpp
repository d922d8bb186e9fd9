#include "radiomap/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "radiomap/error.hpp"
#include "radiomap/io.hpp"

namespace radiomap {

double rmse_db(const Grid& pred_db, const Grid& target_db) {
    if (pred_db.height() != target_db.height() || pred_db.width() != target_db.width()) {
        throw ValidationError("rmse_db: grid dims mismatch");
    }
    if (pred_db.empty()) throw ValidationError("rmse_db: empty grids");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred_db.data().size(); ++i) {
        const double d =
            static_cast<double>(pred_db.data()[i]) - static_cast<double>(target_db.data()[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred_db.data().size()));
}

double weighted_score(double t1, double t2, double t3) {
    if (!std::isfinite(t1) || !std::isfinite(t2) || !std::isfinite(t3)) {
        throw ValidationError("weighted_score: non-finite task RMSE");
    }
    return 0.3 * t1 + 0.3 * t2 + 0.4 * t3;
}

Grid tta_predict(const Predictor& predict, const Scene& scene,
                 const std::vector<D4Element>& transforms) {
    if (transforms.empty()) throw ValidationError("tta_predict: empty transform list");
    if (scene.height() != scene.width()) {
        throw ValidationError("tta_predict requires square scenes");
    }
    std::vector<double> acc(static_cast<std::size_t>(scene.height()) * scene.width(), 0.0);
    for (const D4Element& e : transforms) {
        const Scene transformed = d4_transform_scene(scene, e);
        const Grid pred = predict(transformed);
        if (pred.height() != scene.height() || pred.width() != scene.width()) {
            throw ValidationError("prediction dims do not match the scene");
        }
        const Grid back = d4_transform(pred, d4_inverse(e));
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc[i] += static_cast<double>(back.data()[i]);
        }
    }
    Grid out(scene.height(), scene.width());
    const double inv = 1.0 / static_cast<double>(transforms.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out.data()[i] = static_cast<float>(acc[i] * inv);
    }
    return out;
}

std::string to_string(PipelineVariant v) {
    switch (v) {
    case PipelineVariant::CoarseOnly: return "coarse_only";
    case PipelineVariant::TwoStage: return "two_stage";
    case PipelineVariant::Full: return "full";
    }
    throw ValidationError("unknown pipeline variant");
}

PipelineVariant variant_from_string(const std::string& s) {
    if (s == "coarse_only") return PipelineVariant::CoarseOnly;
    if (s == "two_stage") return PipelineVariant::TwoStage;
    if (s == "full") return PipelineVariant::Full;
    throw ValidationError("unknown pipeline variant: " + s);
}

Grid Pipeline::predict(const Scene& scene) const {
    const auto two_stage = [this](const Scene& s) {
        return predict_pathloss(fine, fine_cfg, coarse, coarse_cfg, s, features, norm);
    };
    switch (variant) {
    case PipelineVariant::CoarseOnly:
        return predict_pathloss(coarse, coarse_cfg, scene, features, norm);
    case PipelineVariant::TwoStage:
        return two_stage(scene);
    case PipelineVariant::Full: {
        std::vector<D4Element> elements = tta_elements;
        if (elements.empty()) {
            const auto all = d4_all();
            elements.assign(all.begin(), all.end());
        }
        return tta_predict(two_stage, scene, elements);
    }
    }
    throw ValidationError("unknown pipeline variant");
}

EvalReport evaluate(const std::filesystem::path& manifest_path, const Pipeline& pipeline,
                    const EvalOptions& options) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    const std::filesystem::path root = manifest_path.parent_path();

    EvalReport report;
    report.variant = to_string(pipeline.variant);
    std::array<double, 3> sq{};
    std::array<std::int64_t, 3> px{};
    std::array<bool, 3> heatmap_done{};
    double seconds = 0.0;
    int predicted = 0;

    for (const auto& entry : manifest.scenes) {
        if (entry.split != Split::Test) continue;
        const Scene scene = load_scene(root / entry.scene_path);
        const Grid target = read_grid(root / entry.ground_truth_path);

        const auto t0 = std::chrono::steady_clock::now();
        const Grid pred = pipeline.predict(scene);
        const auto t1 = std::chrono::steady_clock::now();
        seconds += std::chrono::duration<double>(t1 - t0).count();
        predicted += 1;

        const std::size_t task = static_cast<std::size_t>(entry.task_id - 1);
        for (std::size_t i = 0; i < pred.data().size(); ++i) {
            const double d =
                static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
            sq[task] += d * d;
        }
        px[task] += static_cast<std::int64_t>(pred.data().size());

        SceneScore score;
        score.name = std::filesystem::path(entry.scene_path).stem().stem().string();
        score.task_id = entry.task_id;
        score.rmse_db = rmse_db(pred, target);
        report.per_scene.push_back(std::move(score));

        if (options.emit_heatmaps && !heatmap_done[task]) {
            heatmap_done[task] = true;
            emit_scene_heatmaps(options.heatmap_dir,
                                "task" + std::to_string(entry.task_id), scene, pipeline,
                                target);
        }
    }

    for (std::size_t t = 0; t < 3; ++t) {
        if (px[t] == 0) {
            throw ValidationError("manifest has no scenes for task " + std::to_string(t + 1));
        }
        report.task_rmse_db[t] = std::sqrt(sq[t] / static_cast<double>(px[t]));
    }
    report.overall_db =
        weighted_score(report.task_rmse_db[0], report.task_rmse_db[1], report.task_rmse_db[2]);
    report.mean_inference_seconds = seconds / static_cast<double>(predicted);
    return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json j;
    j["variant"] = report.variant;
    j["task_rmse_db"] = report.task_rmse_db;
    j["overall_db"] = report.overall_db;
    auto& scenes = j["per_scene"] = nlohmann::ordered_json::array();
    for (const auto& s : report.per_scene) {
        scenes.push_back({{"name", s.name}, {"task_id", s.task_id}, {"rmse_db", s.rmse_db}});
    }
    std::ofstream jf(dir / "report.json", std::ios::binary);
    if (!jf) throw IoError("cannot write " + (dir / "report.json").string());
    jf << j.dump(2) << "\n";

    std::ofstream tf(dir / "report.txt", std::ios::binary);
    if (!tf) throw IoError("cannot write " + (dir / "report.txt").string());
    char buf[160];
    tf << "variant: " << report.variant << "\n\n";
    tf << "task  rmse_db\n";
    for (std::size_t t = 0; t < 3; ++t) {
        std::snprintf(buf, sizeof buf, "%4zu  %8.4f\n", t + 1, report.task_rmse_db[t]);
        tf << buf;
    }
    std::snprintf(buf, sizeof buf, "\noverall (0.3/0.3/0.4): %8.4f dB\n", report.overall_db);
    tf << buf;
    tf << "\nscene                 task  rmse_db\n";
    for (const auto& s : report.per_scene) {
        std::snprintf(buf, sizeof buf, "%-20s  %4d  %8.4f\n", s.name.c_str(), s.task_id,
                      s.rmse_db);
        tf << buf;
    }

    nlohmann::ordered_json timing;
    timing["mean_inference_seconds"] = report.mean_inference_seconds;
    std::ofstream mf(dir / "timing.json", std::ios::binary);
    if (!mf) throw IoError("cannot write " + (dir / "timing.json").string());
    mf << timing.dump(2) << "\n";
}

EvalReport load_report(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.json", std::ios::binary);
    if (!in) throw IoError("cannot read " + (dir / "report.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad report.json: " + std::string(e.what()));
    }
    EvalReport report;
    try {
        report.variant = j.at("variant").get<std::string>();
        report.task_rmse_db = j.at("task_rmse_db").get<std::array<double, 3>>();
        report.overall_db = j.at("overall_db").get<double>();
        for (const auto& s : j.at("per_scene")) {
            SceneScore score;
            score.name = s.at("name").get<std::string>();
            score.task_id = s.at("task_id").get<int>();
            score.rmse_db = s.at("rmse_db").get<double>();
            report.per_scene.push_back(std::move(score));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report.json missing fields: " + std::string(e.what()));
    }
    return report;
}

void write_ablation_table(const std::vector<EvalReport>& reports,
                          const std::filesystem::path& file) {
    if (reports.empty()) throw ValidationError("no reports to merge");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    out << "variant       task1    task2    task3    overall (dB)\n";
    char buf[160];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %8.4f\n", r.variant.c_str(),
                      r.task_rmse_db[0], r.task_rmse_db[1], r.task_rmse_db[2], r.overall_db);
        out << buf;
    }
}

void emit_scene_heatmaps(const std::filesystem::path& dir, const std::string& stem,
                         const Scene& scene, const Pipeline& pipeline, const Grid& target_db) {
    std::filesystem::create_directories(dir);
    const double lo = pipeline.norm.lo_db, hi = pipeline.norm.hi_db;

    const Grid& input = scene.transmittance_db_per_m;
    const double in_hi = std::max(1.0, static_cast<double>(input.max_value()));
    emit_heatmap(input, 0.0, in_hi, dir / (stem + "_input.ppm"));

    Pipeline coarse_only = pipeline;
    coarse_only.variant = PipelineVariant::CoarseOnly;
    emit_heatmap(coarse_only.predict(scene), lo, hi, dir / (stem + "_coarse.ppm"));

    if (pipeline.variant != PipelineVariant::CoarseOnly) {
        Pipeline two_stage = pipeline;
        two_stage.variant = PipelineVariant::TwoStage;
        emit_heatmap(two_stage.predict(scene), lo, hi, dir / (stem + "_fine.ppm"));
    }
    if (pipeline.variant == PipelineVariant::Full) {
        emit_heatmap(pipeline.predict(scene), lo, hi, dir / (stem + "_post.ppm"));
    }
    emit_heatmap(target_db, lo, hi, dir / (stem + "_target.ppm"));
}

} // namespace radiomap
