#pragma once

#include <vector>

#include "radiomap/grid.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

// Input-channel configuration for both model stages. Band counts control
// the sinusoidal embeddings; include flags drop individual physical
// channels (all on by default).
struct FeatureConfig {
    int n_pos_bands = 4;  // 4 channels each: sin/cos(2^k pi u), sin/cos(2^k pi v)
    int n_freq_bands = 4; // 2 constant channels each: sin/cos(2^k pi phi)
    double d_min_m = 0.125;
    double freq_lo_mhz = 100.0;
    double freq_hi_mhz = 10000.0;
    bool include_reflectance = true;
    bool include_transmittance = true;
    bool include_distance = true;
    bool include_fspl = true;
    bool include_transmission_ray = true;
    bool include_antenna_gain = true;

    void validate() const; // n_pos_bands >= 1, n_freq_bands >= 0, d_min_m > 0, freq_lo < freq_hi

    // Channel count of assemble_features without / with the coarse channel.
    int channel_count(bool with_coarse) const;
    std::vector<std::string> channel_names(bool with_coarse) const;
};

// One cell visited by a ray, with the length of ray inside it.
struct CellCrossing {
    int row = 0;
    int col = 0;
    double chord_m = 0.0;
};

// Walks the segment p0 -> p1 (fractional cell coordinates, both inside
// [0,height] x [0,width]) across the cell grid and reports every cell
// visited, in order, with its chord length in meters. Chords sum to
// |p1-p0| * cell_size_m. Grid-stepping with parametric boundary
// distances; a tie at a cell corner steps the row axis first, emitting a
// zero chord for the intermediate cell. p0 == p1 yields an empty list.
std::vector<CellCrossing> traverse_cells(const Point& p0, const Point& p1, int height, int width,
                                         double cell_size_m);

// Per-pixel Euclidean distance in meters from pixel center to the
// transmitter, clamped below at d_min_m.
Grid distance_channel(const Scene& scene, double d_min_m);

// Free-space pathloss 20*log10(4 pi d f / c), d from distance_channel.
Grid fspl_channel(const Scene& scene, double d_min_m);

// Accumulated transmission loss in dB along the straight segment from the
// transmitter to each pixel center: sum of transmittance_db_per_m * chord.
Grid transmission_ray_channel(const Scene& scene);

// Antenna gain in dB toward each pixel: the pattern sampled at
// (azimuth(pixel - tx) - orientation_deg) mod 360. The interpolation
// parameter is quantized to 2^-20 degree so that the channel commutes
// bit-exactly with d4_transform_scene when the transmitter sits on the
// 1/8-cell lattice and orientation_deg is integer. The pixel containing
// the transmitter uses the boresight entry.
Grid antenna_gain_channel(const Scene& scene);

// Sinusoidal position and frequency embeddings. u = col/(width-1),
// v = row/(height-1) (0 when the dimension is 1); channel order per band
// is sin_u, cos_u, sin_v, cos_v, then per frequency band sin, cos of
// 2^k pi phi with phi = log10(f/f_lo)/log10(f_hi/f_lo). Frequencies
// outside [f_lo, f_hi] clamp and record a warning.
FeatureStack spatial_frequency_embedding(const Scene& scene, const FeatureConfig& cfg);

// Full standardized model input. Channel order: reflectance_db,
// transmittance_db_per_m, distance, fspl, transmission_ray, antenna_gain,
// embeddings, then coarse_pred last when given. Standardization constants
// are documented in docs/FORMATS.md. coarse_pred must match the scene
// dimensions and hold normalized [0,1] values.
FeatureStack assemble_features(const Scene& scene, const FeatureConfig& cfg,
                               const Grid* coarse_pred = nullptr);

// fspl_channel + transmission_ray_channel, in dB. The straight-path
// physics estimate used as a reference predictor.
Grid physics_baseline(const Scene& scene, double d_min_m);

// Applies a symmetry to an assembled stack so that the result matches
// assemble_features(d4_transform_scene(scene, e), ...): physical and
// coarse channels are index-permuted, pos_*/freq_* channels are functions
// of pixel index and frequency alone and stay put. Square grids only.
FeatureStack transform_features(const FeatureStack& stack, const D4Element& e);

} // namespace radiomap
