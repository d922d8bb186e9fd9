#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "radiomap/features.hpp"
#include "radiomap/grid.hpp"
#include "radiomap/model.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

// Root mean squared error in dB, pooled over every pixel.
double rmse_db(const Grid& pred_db, const Grid& target_db);

// Task-weighted overall score: 0.3*t1 + 0.3*t2 + 0.4*t3.
double weighted_score(double t1, double t2, double t3);

using Predictor = std::function<Grid(const Scene&)>;

// Symmetry ensembling: the scene is transformed by each element (materials,
// transmitter position, antenna orientation all move together), predicted,
// mapped back by the inverse element, and the dB maps are averaged.
Grid tta_predict(const Predictor& predict, const Scene& scene,
                 const std::vector<D4Element>& transforms);

enum class PipelineVariant { CoarseOnly, TwoStage, Full };

std::string to_string(PipelineVariant v);
PipelineVariant variant_from_string(const std::string& s);

// A fully loaded prediction pipeline. CoarseOnly uses just the coarse net,
// TwoStage adds the residual refinement, Full additionally ensembles over
// the square symmetries.
struct Pipeline {
    PipelineVariant variant = PipelineVariant::Full;
    ModelConfig coarse_cfg;
    ModelParams coarse;
    ModelConfig fine_cfg;
    ModelParams fine;
    FeatureConfig features;
    NormalizationSpec norm;
    std::vector<D4Element> tta_elements; // empty selects all 8

    Grid predict(const Scene& scene) const;
};

struct SceneScore {
    std::string name;
    int task_id = 0;
    double rmse_db = 0.0;
};

struct EvalReport {
    std::string variant;
    std::array<double, 3> task_rmse_db{};
    double overall_db = 0.0;
    std::vector<SceneScore> per_scene;
    double mean_inference_seconds = 0.0; // written to a separate timing file
};

struct EvalOptions {
    bool emit_heatmaps = false;
    std::filesystem::path heatmap_dir;
};

// Scores the manifest's test scenes per task (pooled over pixels), then the
// 30/30/40 combination. Every task must be present.
EvalReport evaluate(const std::filesystem::path& manifest_path, const Pipeline& pipeline,
                    const EvalOptions& options = {});

// report.json + aligned report.txt; the measured timing goes to timing.json
// so the deterministic outputs stay byte-comparable.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport load_report(const std::filesystem::path& dir);

// Merges reports (one per pipeline variant) into an aligned ablation table.
void write_ablation_table(const std::vector<EvalReport>& reports,
                          const std::filesystem::path& file);

// Side-by-side maps for one scene: the material input, each pipeline stage
// and the target, as fixed-palette heatmaps.
void emit_scene_heatmaps(const std::filesystem::path& dir, const std::string& stem,
                         const Scene& scene, const Pipeline& pipeline, const Grid& target_db);

} // namespace radiomap
