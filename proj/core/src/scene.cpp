#include "radiomap/scene.hpp"

#include <cmath>

#include "radiomap/error.hpp"

namespace radiomap {

void AntennaPattern::validate() const {
    if (gains_db.size() != 360) {
        throw ValidationError("antenna pattern must have exactly 360 entries, got " +
                              std::to_string(gains_db.size()));
    }
    for (float g : gains_db) {
        if (!std::isfinite(g)) throw ValidationError("antenna pattern contains non-finite gain");
    }
}

double AntennaPattern::gain_at(double relative_deg) const {
    double a = std::fmod(relative_deg, 360.0);
    if (a < 0) a += 360.0;
    int i0 = static_cast<int>(a); // a in [0, 360)
    if (i0 > 359) i0 = 359;
    const double frac = a - i0;
    const int i1 = (i0 + 1) % 360;
    const double g0 = gains_db[static_cast<std::size_t>(i0)];
    const double g1 = gains_db[static_cast<std::size_t>(i1)];
    return g0 + frac * (g1 - g0);
}

AntennaPattern AntennaPattern::mirrored() const {
    AntennaPattern out = *this;
    out.name = name + "_mirrored";
    for (int i = 0; i < 360; ++i) {
        out.gains_db[static_cast<std::size_t>(i)] = gains_db[static_cast<std::size_t>((360 - i) % 360)];
    }
    return out;
}

void Scene::validate() const {
    if (reflectance_db.height() <= 0 || reflectance_db.width() <= 0) {
        throw ValidationError("scene grids must be non-empty");
    }
    if (reflectance_db.height() != transmittance_db_per_m.height() ||
        reflectance_db.width() != transmittance_db_per_m.width()) {
        throw ValidationError("reflectance and transmittance grids must share dimensions");
    }
    if (!(cell_size_m > 0)) throw ValidationError("cell_size_m must be positive");
    if (!(frequency_mhz > 0)) throw ValidationError("frequency_mhz must be positive");
    if (!(tx_row >= 0 && tx_row < height() && tx_col >= 0 && tx_col < width())) {
        throw ValidationError("transmitter position outside grid bounds");
    }
    if (!std::isfinite(orientation_deg)) throw ValidationError("orientation_deg must be finite");
    if (!reflectance_db.all_finite() || !transmittance_db_per_m.all_finite()) {
        throw ValidationError("material grids contain non-finite values");
    }
    if (reflectance_db.min_value() < 0 || transmittance_db_per_m.min_value() < 0) {
        throw ValidationError("material attenuation grids must be non-negative");
    }
    antenna.validate();
}

Scene d4_transform_scene(const Scene& scene, const D4Element& e) {
    Scene out = scene;
    out.reflectance_db = d4_transform(scene.reflectance_db, e);
    out.transmittance_db_per_m = d4_transform(scene.transmittance_db_per_m, e);
    const Point tx = d4_map_point({scene.tx_row, scene.tx_col},
                                  scene.height(), scene.width(), e);
    out.tx_row = tx.row;
    out.tx_col = tx.col;
    out.orientation_deg = d4_map_azimuth(scene.orientation_deg, e);
    if (e.flip_horizontal) out.antenna = scene.antenna.mirrored();
    return out;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ValidationError("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
    normalization.validate();
    for (const auto& entry : scenes) {
        if (entry.scene_path.empty() || entry.ground_truth_path.empty()) {
            throw ValidationError("manifest entry with empty path");
        }
        if (entry.split == Split::Test) {
            if (entry.task_id < 1 || entry.task_id > 3) {
                throw ValidationError("test scene must carry task_id in {1,2,3}");
            }
        } else if (entry.task_id != 0) {
            throw ValidationError("train/val scenes must not carry a task_id");
        }
    }
}

std::vector<const ManifestEntry*> DatasetManifest::entries(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& entry : scenes) {
        if (entry.split == split) out.push_back(&entry);
    }
    return out;
}

} // namespace radiomap
