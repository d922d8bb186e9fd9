#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "radiomap/grid.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

// Ray-tracing ground truth settings.
//
// The straight (0-bounce) path to every pixel center is integrated exactly,
// so every pixel is always reached and matches the closed-form
// fspl + transmission value; the uniform ray fan only carries reflected
// energy, deposited into capture discs around pixel centers. Reflected
// branches are killed once their accumulated loss exceeds min_power_db.
struct TraceConfig {
    int rays_per_tx = 720;
    int max_bounces = 2;
    double rx_capture_radius_m = 0.2;
    double min_power_db = 200.0; // kill threshold for reflected branches
    double d_min_m = 0.125;      // distance clamp, shared with the feature channels
    std::uint64_t ray_seed = 0;  // stratified jitter of launch angles
    bool include_antenna_gain = true;

    void validate() const;
};

// -10*log10(sum of 10^(-PL_i/10)). Throws ValidationError on empty input.
double combine_path_powers(const std::vector<double>& path_losses_db);

// Traces a pathloss map. Deterministic for (scene, cfg): bit-identical
// across thread counts because reflected deposits accumulate in
// fixed-point integers per pixel.
Grid trace_pathloss(const Scene& scene, const TraceConfig& cfg);

// Synthetic floor-plan generator settings. Frequencies and antenna
// patterns come in seen/held-out pairs so the dataset builder can
// construct generalization test splits.
struct GeneratorParams {
    int height = 64;
    int width = 64;
    double cell_size_m = 0.25;
    int min_rooms = 2;
    int max_rooms = 6;
    int min_wall_cells = 1;
    int max_wall_cells = 2;
    int door_cells = 2;
    int min_room_cells = 8; // smallest interior extent a BSP split may leave
    double min_transmittance_db_per_m = 20.0;
    double max_transmittance_db_per_m = 80.0;
    double min_reflectance_db = 3.0;
    double max_reflectance_db = 12.0;
    std::vector<double> seen_frequencies_mhz{868.0, 1800.0, 2400.0, 3500.0};
    std::vector<double> heldout_frequencies_mhz{5800.0};
    std::vector<AntennaPattern> seen_antennas;    // defaulted in validate-time helper
    std::vector<AntennaPattern> heldout_antennas; // "
    std::uint64_t seed = 1; // default master seed; explicit arguments override

    void validate() const;
};

// Built-in peak-normalized patterns (max entry exactly 0 dB).
AntennaPattern isotropic_antenna();
AntennaPattern cardioid_antenna();
AntennaPattern two_lobe_antenna();
AntennaPattern narrow_beam_antenna();

// params with the default antenna pools filled in: seen = isotropic,
// cardioid, two-lobe; held out = narrow beam.
GeneratorParams default_generator_params();

// Deterministically generates one floor plan: exterior walls, BSP-split
// rooms with door gaps, per-scene materials, tx on the 1/8-cell lattice in
// free space, integer orientation, frequency and antenna from the seen
// pools.
Scene generate_scene(const GeneratorParams& params, std::uint64_t seed);

struct DatasetCounts {
    int train = 8;
    int val = 2;
    int test_per_task = 2;
};

// Generates scenes, traces ground truth, persists everything under
// out_dir (scenes/, gt/, manifest.json) and returns the manifest with
// paths relative to out_dir. Test task 1 varies geometry only, task 2
// uses held-out frequencies, task 3 held-out antenna patterns; train/val
// never see the held-out pools.
DatasetManifest build_dataset(const GeneratorParams& params, const TraceConfig& trace_cfg,
                              const DatasetCounts& counts, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

} // namespace radiomap
