#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "radiomap/grid.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

// ---- Tensor container (.rmt) ------------------------------------------
// Layout: magic "RMT1", u32le {channels, height, width}, per-channel
// length-prefixed UTF-8 names, then row-major f32le data per channel.
// Same logical content always produces identical bytes.

void write_tensor(const FeatureStack& stack, const std::filesystem::path& path);
FeatureStack read_tensor(const std::filesystem::path& path);

// Single-grid convenience wrappers (one channel named "value").
void write_grid(const Grid& grid, const std::filesystem::path& path);
Grid read_grid(const std::filesystem::path& path);

// ---- Scene manifests (.scene.json) -------------------------------------
// Human-readable sidecar with explicit units in field names; material grids
// live in a companion .rmt (channels "reflectance_db",
// "transmittance_db_per_m"). Loading validates every Scene invariant.

void save_scene(const Scene& scene, const std::filesystem::path& manifest_path);
Scene load_scene(const std::filesystem::path& manifest_path);

// ---- Dataset manifests --------------------------------------------------

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// ---- Heatmaps (binary PPM, P6) -------------------------------------------
// `lo` maps to the coldest entry of the fixed 256-color table, `hi` to the
// hottest; output bytes are deterministic for identical input.

void emit_heatmap(const Grid& grid, double lo, double hi, const std::filesystem::path& path);

// The fixed colormap, 256 RGB triples.
const std::array<std::array<std::uint8_t, 3>, 256>& heatmap_colormap();

// ---- Named-tensor checkpoints (.ckpt, magic "RMP1") ----------------------
// Same conventions as .rmt (length-prefixed names, u32le dims, f32le data)
// generalized to per-entry shapes. Bit-exact round-trip.

struct NamedTensorEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    bool operator==(const NamedTensorEntry&) const = default;
};

void write_named_tensors(const std::vector<NamedTensorEntry>& entries,
                         const std::filesystem::path& path);
std::vector<NamedTensorEntry> read_named_tensors(const std::filesystem::path& path);

} // namespace radiomap
