#pragma once

#include <string>
#include <vector>

#include "radiomap/grid.hpp"

namespace radiomap {

// Transmitter antenna pattern: gain in dB at integer azimuth degrees
// relative to boresight. Patterns are peak-normalized (max entry 0 dB), so
// the isotropic pattern is all zeros.
struct AntennaPattern {
    std::string name = "isotropic";
    std::vector<float> gains_db = std::vector<float>(360, 0.0f);

    void validate() const;
    // Gain at a relative azimuth (degrees, any range); linear interpolation
    // between integer-degree entries.
    double gain_at(double relative_deg) const;
    // The pattern seen by a horizontally mirrored scene.
    AntennaPattern mirrored() const;

    bool operator==(const AntennaPattern&) const = default;
};

// One floor plan + transmitter configuration; the unit of prediction.
// Azimuths are measured in degrees from the +col axis towards the +row axis.
struct Scene {
    Grid reflectance_db;          // specular reflection loss per bounce
    Grid transmittance_db_per_m;  // attenuation per meter of chord
    double cell_size_m = 0.25;
    double tx_row = 0.0; // fractional cell coordinates
    double tx_col = 0.0;
    double frequency_mhz = 868.0;
    AntennaPattern antenna;
    double orientation_deg = 0.0; // boresight azimuth

    int height() const { return reflectance_db.height(); }
    int width() const { return reflectance_db.width(); }

    void validate() const; // throws ValidationError on any invariant breach
};

// Applies a D4 symmetry to the whole scene: rasters permuted, tx and
// orientation mapped, and the pattern mirrored for flip elements, so the
// result is physically consistent with the original.
Scene d4_transform_scene(const Scene& scene, const D4Element& e);

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One dataset row: where the scene and its traced ground truth live.
// task_id is 1/2/3 for test scenes (geometry / frequency / antenna
// generalization) and 0 for train/val.
struct ManifestEntry {
    std::string scene_path;
    std::string ground_truth_path;
    Split split = Split::Train;
    int task_id = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> scenes;
    NormalizationSpec normalization;
    std::uint64_t generator_seed = 0;

    void validate() const;
    std::vector<const ManifestEntry*> entries(Split split) const;
};

} // namespace radiomap
