#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "radiomap/features.hpp"
#include "radiomap/grid.hpp"
#include "radiomap/model.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

enum class TrainStage { Coarse, Fine };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 4;
    double base_lr = 1e-4;
    std::uint64_t seed = 1;
    TrainStage stage = TrainStage::Coarse;
    // The fine stage always runs against a frozen coarse model; flipping this
    // off is rejected at validation.
    bool freeze_coarse = true;
    bool augment = true;
    // Fine stage only: zero the head conv so training starts exactly at the
    // coarse prediction instead of a random residual.
    bool zero_residual_init = true;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;  // normalized-space MSE per epoch
    std::vector<double> val_rmse_db; // pooled over every val pixel
    std::vector<double> lr;
    int best_epoch = -1;
    double best_val_rmse_db = 0.0;
};

// Piecewise-constant schedule: base_lr, halved at floor(0.5*total) and again
// at floor(0.75*total). Throws on epoch outside [0, total).
double lr_at(int epoch, int total_epochs, double base_lr);

// Applies one uniformly drawn square symmetry to every feature channel and
// the target. Channels encoding absolute pixel coordinates or the frequency
// are left as-is (the transformed image has the same coordinate embedding).
std::pair<FeatureStack, Grid> augment_sample(const FeatureStack& features, const Grid& target,
                                             Rng& rng);

struct TrainSample {
    Scene scene;
    Grid target_db;
};

struct TrainDataset {
    std::vector<TrainSample> train;
    std::vector<TrainSample> val;
    NormalizationSpec norm;
};

// Loads the train and val splits referenced by a dataset manifest.
TrainDataset load_training_data(const std::filesystem::path& manifest_path);

struct StageResult {
    ModelParams params; // best-val checkpoint
    TrainHistory history;
};

// Minibatch Adam on MSE over normalized targets. The fine stage consumes the
// frozen coarse model's prediction as an extra input channel and is scored on
// the combined bounded-residual map. Deterministic for a fixed config.
StageResult train_stage(const TrainDataset& data, const ModelConfig& mcfg,
                        const FeatureConfig& fcfg, const TrainConfig& tcfg,
                        const ModelParams* coarse_params = nullptr,
                        const ModelConfig* coarse_cfg = nullptr);

struct TwoStageResult {
    ModelParams coarse;
    TrainHistory coarse_history;
    ModelParams fine;
    TrainHistory fine_history;
};

// Stage 1 trains the coarse net; stage 2 feeds the frozen best coarse
// checkpoint's predictions into the fine net.
TwoStageResult train_two_stage(const TrainDataset& data, const ModelConfig& coarse_cfg,
                               const ModelConfig& fine_cfg, const FeatureConfig& fcfg,
                               const TrainConfig& coarse_tcfg, const TrainConfig& fine_tcfg);

// History as a small CSV: epoch, lr, train_loss, val_rmse_db.
void write_history(const TrainHistory& history, const std::filesystem::path& path);

} // namespace radiomap
