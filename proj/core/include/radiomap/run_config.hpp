#pragma once

#include <filesystem>
#include <string>

#include "radiomap/features.hpp"
#include "radiomap/grid.hpp"
#include "radiomap/model.hpp"
#include "radiomap/oracle.hpp"
#include "radiomap/train.hpp"

namespace radiomap {

// Every knob of the pipeline in one place. Loaded from a JSON file where all
// fields are optional; the snapshot written into each run directory is the
// fully resolved version.
struct RunConfig {
    GeneratorParams generator;
    TraceConfig trace;
    DatasetCounts counts;
    FeatureConfig features;
    ModelConfig coarse_model;
    ModelConfig fine_model;
    TrainConfig train_coarse;
    TrainConfig train_fine;
    NormalizationSpec norm;
    bool tta = true;

    // Derives dependent fields (model input widths, stage tags) and
    // validates everything.
    void finalize();
};

RunConfig default_run_config();

// Maps a pattern name ("isotropic", "cardioid", "two_lobe", "narrow_beam")
// to its 360-entry gain table.
AntennaPattern antenna_by_name(const std::string& name);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

} // namespace radiomap
