#include "radiomap/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

#include "radiomap/error.hpp"
#include "radiomap/log.hpp"
#include "radiomap/parallel.hpp"

namespace radiomap {

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kPi = std::numbers::pi;

// Microdegree lattice for antenna lookups, see antenna_gain_channel below.
constexpr std::int64_t kMicrodegScale = 1 << 20;
constexpr std::int64_t kMicrodegTurn = 360 * kMicrodegScale;

// Cell that owns point x when traveling with velocity d along one axis.
// Points exactly on a boundary belong to the cell ahead of the motion;
// for d == 0 they belong to the higher-index cell, clamped at the edge.
int initial_cell(double x, double d, int n) {
    const double f = std::floor(x);
    int c = static_cast<int>(f);
    if (x == f && d < 0.0) c -= 1;
    if (c < 0) c = 0;
    if (c > n - 1) c = n - 1;
    return c;
}

// First integer grid line ahead of x along direction d (d != 0).
std::int64_t initial_boundary(double x, double d) {
    if (d > 0.0) return static_cast<std::int64_t>(std::floor(x)) + 1;
    return static_cast<std::int64_t>(std::ceil(x)) - 1;
}

// Walks the cells of the segment p0 -> p1, invoking fn(row, col, chord_m)
// in traversal order. Boundary-crossing parameters are derived directly
// from grid-line positions, never accumulated, so corresponding chords are
// bit-identical across D4-mapped segments.
template <typename Fn>
void walk_segment(const Point& p0, const Point& p1, int height, int width, double cell_size_m,
                  Fn&& fn) {
    const double dr = p1.row - p0.row;
    const double dc = p1.col - p0.col;
    if (dr == 0.0 && dc == 0.0) return;
    const double length_m = std::sqrt(dr * dr + dc * dc) * cell_size_m;

    constexpr double kInf = std::numeric_limits<double>::infinity();
    int ci = initial_cell(p0.row, dr, height);
    int cj = initial_cell(p0.col, dc, width);
    std::int64_t bi = dr != 0.0 ? initial_boundary(p0.row, dr) : 0;
    std::int64_t bj = dc != 0.0 ? initial_boundary(p0.col, dc) : 0;
    const int si = dr > 0.0 ? 1 : -1;
    const int sj = dc > 0.0 ? 1 : -1;

    double t_prev = 0.0;
    while (true) {
        const double tr = dr != 0.0 ? (static_cast<double>(bi) - p0.row) / dr : kInf;
        const double tc = dc != 0.0 ? (static_cast<double>(bj) - p0.col) / dc : kInf;
        const double t_next = tr <= tc ? tr : tc;
        if (t_next >= 1.0) {
            fn(ci, cj, (1.0 - t_prev) * length_m);
            return;
        }
        fn(ci, cj, (t_next - t_prev) * length_m);
        t_prev = t_next;
        if (tr <= tc) { // corner ties step the row axis first
            ci += si;
            bi += si;
            if (ci < 0 || ci >= height) return;
        } else {
            cj += sj;
            bj += sj;
            if (cj < 0 || cj >= width) return;
        }
    }
}

void check_point(const Point& p, int height, int width, const char* which) {
    if (!(p.row >= 0.0 && p.row <= height && p.col >= 0.0 && p.col <= width)) {
        throw ValidationError(std::string(which) + " lies outside the grid bounds");
    }
}

Grid scaled(const Grid& g, double mul, double sub = 0.0) {
    Grid out(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.data()[i] = static_cast<float>((static_cast<double>(g.data()[i]) - sub) * mul);
    }
    return out;
}

} // namespace

void FeatureConfig::validate() const {
    if (n_pos_bands < 1) throw ValidationError("n_pos_bands must be at least 1");
    if (n_freq_bands < 0) throw ValidationError("n_freq_bands must be non-negative");
    if (n_pos_bands > 16 || n_freq_bands > 16) throw ValidationError("embedding band count too large");
    if (!(d_min_m > 0.0)) throw ValidationError("d_min_m must be positive");
    if (!(freq_lo_mhz > 0.0) || !(freq_hi_mhz > freq_lo_mhz)) {
        throw ValidationError("frequency band edges must satisfy 0 < f_lo < f_hi");
    }
}

int FeatureConfig::channel_count(bool with_coarse) const {
    int n = 0;
    n += include_reflectance ? 1 : 0;
    n += include_transmittance ? 1 : 0;
    n += include_distance ? 1 : 0;
    n += include_fspl ? 1 : 0;
    n += include_transmission_ray ? 1 : 0;
    n += include_antenna_gain ? 1 : 0;
    n += 4 * n_pos_bands + 2 * n_freq_bands;
    n += with_coarse ? 1 : 0;
    return n;
}

std::vector<std::string> FeatureConfig::channel_names(bool with_coarse) const {
    std::vector<std::string> names;
    if (include_reflectance) names.push_back("reflectance_db");
    if (include_transmittance) names.push_back("transmittance_db_per_m");
    if (include_distance) names.push_back("distance");
    if (include_fspl) names.push_back("fspl");
    if (include_transmission_ray) names.push_back("transmission_ray");
    if (include_antenna_gain) names.push_back("antenna_gain");
    for (int k = 0; k < n_pos_bands; ++k) {
        const std::string b = std::to_string(k);
        names.push_back("pos_sin_u" + b);
        names.push_back("pos_cos_u" + b);
        names.push_back("pos_sin_v" + b);
        names.push_back("pos_cos_v" + b);
    }
    for (int k = 0; k < n_freq_bands; ++k) {
        const std::string b = std::to_string(k);
        names.push_back("freq_sin" + b);
        names.push_back("freq_cos" + b);
    }
    if (with_coarse) names.push_back("coarse_pred");
    return names;
}

std::vector<CellCrossing> traverse_cells(const Point& p0, const Point& p1, int height, int width,
                                         double cell_size_m) {
    if (height <= 0 || width <= 0) throw ValidationError("traversal grid must be non-empty");
    if (!(cell_size_m > 0.0)) throw ValidationError("cell_size_m must be positive");
    check_point(p0, height, width, "p0");
    check_point(p1, height, width, "p1");
    std::vector<CellCrossing> out;
    walk_segment(p0, p1, height, width, cell_size_m,
                 [&](int r, int c, double chord) { out.push_back({r, c, chord}); });
    return out;
}

Grid distance_channel(const Scene& scene, double d_min_m) {
    if (!(d_min_m > 0.0)) throw ValidationError("d_min_m must be positive");
    const int h = scene.height();
    const int w = scene.width();
    Grid out(h, w);
    for (int r = 0; r < h; ++r) {
        const double dr = (r + 0.5) - scene.tx_row;
        for (int c = 0; c < w; ++c) {
            const double dc = (c + 0.5) - scene.tx_col;
            const double d = std::sqrt(dr * dr + dc * dc) * scene.cell_size_m;
            out.at(r, c) = static_cast<float>(d < d_min_m ? d_min_m : d);
        }
    }
    return out;
}

Grid fspl_channel(const Scene& scene, double d_min_m) {
    Grid d = distance_channel(scene, d_min_m);
    const double k = 4.0 * kPi * (scene.frequency_mhz * 1.0e6) / kSpeedOfLight;
    Grid out(scene.height(), scene.width());
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.data()[i] = static_cast<float>(20.0 * std::log10(static_cast<double>(d.data()[i]) * k));
    }
    return out;
}

Grid transmission_ray_channel(const Scene& scene) {
    const int h = scene.height();
    const int w = scene.width();
    const Point tx{scene.tx_row, scene.tx_col};
    Grid out(h, w);
    parallel_for_each(static_cast<std::size_t>(h), [&](std::size_t r) {
        for (int c = 0; c < w; ++c) {
            double loss = 0.0;
            walk_segment(tx, Point{static_cast<int>(r) + 0.5, c + 0.5}, h, w, scene.cell_size_m,
                         [&](int rr, int cc, double chord) {
                             loss += static_cast<double>(scene.transmittance_db_per_m.at(rr, cc)) *
                                     chord;
                         });
            out.at(static_cast<int>(r), c) = static_cast<float>(loss);
        }
    });
    return out;
}

namespace {

// Azimuth of (dr, dc) decomposed as q*90 + s*phi with phi = atan(min/max)
// of the absolute components, in [0, 45]. min and max are invariant under
// all 8 square symmetries, so phi is bit-identical across D4 images of the
// same pixel and only the exact integers q and s change.
struct Octant {
    int q;
    int s;
    double phi_deg;
};

Octant azimuth_octant(double dr, double dc) {
    const double adr = std::abs(dr);
    const double adc = std::abs(dc);
    const double lo = adr < adc ? adr : adc;
    const double hi = adr < adc ? adc : adr;
    double phi;
    if (lo == 0.0) {
        phi = 0.0;
    } else if (lo == hi) {
        phi = 45.0;
    } else {
        phi = std::atan(lo / hi) * (180.0 / kPi);
    }
    if (dc > 0.0 && dr >= 0.0 && adr <= adc) return {0, +1, phi};
    if (dr > 0.0 && dc > 0.0) return {1, -1, phi};
    if (dr > 0.0 && dc <= 0.0 && adc <= adr) return {1, +1, phi};
    if (dr > 0.0 && dc < 0.0) return {2, -1, phi};
    if (dc < 0.0 && dr <= 0.0 && adr <= adc) return {2, +1, phi};
    if (dr < 0.0 && dc < 0.0) return {3, -1, phi};
    if (dr < 0.0 && dc >= 0.0 && adc <= adr) return {3, +1, phi};
    return {4, -1, phi};
}

} // namespace

Grid antenna_gain_channel(const Scene& scene) {
    const int h = scene.height();
    const int w = scene.width();
    const auto& pat = scene.antenna.gains_db;
    // The relative angle is carried in integer 2^-20 degree units so that
    // rotations of the scene reproduce the channel bit-exactly and flips
    // land on the mirrored interpolation weights with no extra rounding.
    const std::int64_t orient = std::llround(scene.orientation_deg * kMicrodegScale);
    const int tx_r = std::min(static_cast<int>(std::floor(scene.tx_row)), h - 1);
    const int tx_c = std::min(static_cast<int>(std::floor(scene.tx_col)), w - 1);
    Grid out(h, w);
    for (int r = 0; r < h; ++r) {
        const double dr = (r + 0.5) - scene.tx_row;
        for (int c = 0; c < w; ++c) {
            if (r == tx_r && c == tx_c) {
                out.at(r, c) = pat[0]; // boresight for the cell holding the tx
                continue;
            }
            const double dc = (c + 0.5) - scene.tx_col;
            const Octant o = azimuth_octant(dr, dc);
            std::int64_t rel = static_cast<std::int64_t>(o.q) * 90 * kMicrodegScale - orient +
                               o.s * std::llround(o.phi_deg * kMicrodegScale);
            rel = ((rel % kMicrodegTurn) + kMicrodegTurn) % kMicrodegTurn;
            const int j = static_cast<int>(rel / kMicrodegScale);
            const double f =
                static_cast<double>(rel % kMicrodegScale) * (1.0 / static_cast<double>(kMicrodegScale));
            const double a = pat[static_cast<std::size_t>(j)];
            const double b = pat[static_cast<std::size_t>((j + 1) % 360)];
            out.at(r, c) = static_cast<float>((1.0 - f) * a + f * b);
        }
    }
    return out;
}

FeatureStack spatial_frequency_embedding(const Scene& scene, const FeatureConfig& cfg) {
    cfg.validate();
    const int h = scene.height();
    const int w = scene.width();
    FeatureStack out;
    for (int k = 0; k < cfg.n_pos_bands; ++k) {
        const double omega = std::ldexp(kPi, k);
        Grid su(h, w), cu(h, w), sv(h, w), cv(h, w);
        for (int r = 0; r < h; ++r) {
            const double v = h > 1 ? static_cast<double>(r) / (h - 1) : 0.0;
            const double sv_r = std::sin(omega * v);
            const double cv_r = std::cos(omega * v);
            for (int c = 0; c < w; ++c) {
                const double u = w > 1 ? static_cast<double>(c) / (w - 1) : 0.0;
                su.at(r, c) = static_cast<float>(std::sin(omega * u));
                cu.at(r, c) = static_cast<float>(std::cos(omega * u));
                sv.at(r, c) = static_cast<float>(sv_r);
                cv.at(r, c) = static_cast<float>(cv_r);
            }
        }
        const std::string b = std::to_string(k);
        out.add("pos_sin_u" + b, std::move(su));
        out.add("pos_cos_u" + b, std::move(cu));
        out.add("pos_sin_v" + b, std::move(sv));
        out.add("pos_cos_v" + b, std::move(cv));
    }
    double phi = 0.0;
    if (cfg.n_freq_bands > 0) {
        double f = scene.frequency_mhz;
        if (f < cfg.freq_lo_mhz || f > cfg.freq_hi_mhz) {
            log_warn("frequency " + std::to_string(f) + " MHz outside embedding band [" +
                     std::to_string(cfg.freq_lo_mhz) + ", " + std::to_string(cfg.freq_hi_mhz) +
                     "], clamped");
            f = std::clamp(f, cfg.freq_lo_mhz, cfg.freq_hi_mhz);
        }
        phi = std::log10(f / cfg.freq_lo_mhz) / std::log10(cfg.freq_hi_mhz / cfg.freq_lo_mhz);
    }
    for (int k = 0; k < cfg.n_freq_bands; ++k) {
        const double omega = std::ldexp(kPi, k);
        const std::string b = std::to_string(k);
        out.add("freq_sin" + b, Grid(h, w, static_cast<float>(std::sin(omega * phi))));
        out.add("freq_cos" + b, Grid(h, w, static_cast<float>(std::cos(omega * phi))));
    }
    return out;
}

FeatureStack assemble_features(const Scene& scene, const FeatureConfig& cfg,
                               const Grid* coarse_pred) {
    cfg.validate();
    scene.validate();
    FeatureStack out;
    // Standardization constants per docs/FORMATS.md.
    if (cfg.include_reflectance) out.add("reflectance_db", scaled(scene.reflectance_db, 1.0 / 20.0));
    if (cfg.include_transmittance) {
        out.add("transmittance_db_per_m", scaled(scene.transmittance_db_per_m, 1.0 / 20.0));
    }
    if (cfg.include_distance) {
        Grid d = distance_channel(scene, cfg.d_min_m);
        Grid logd(d.height(), d.width());
        for (std::size_t i = 0; i < d.size(); ++i) {
            logd.data()[i] = static_cast<float>(std::log10(static_cast<double>(d.data()[i])) * 0.5);
        }
        out.add("distance", std::move(logd));
    }
    if (cfg.include_fspl) out.add("fspl", scaled(fspl_channel(scene, cfg.d_min_m), 1.0 / 40.0, 80.0));
    if (cfg.include_transmission_ray) {
        out.add("transmission_ray", scaled(transmission_ray_channel(scene), 1.0 / 60.0));
    }
    if (cfg.include_antenna_gain) out.add("antenna_gain", scaled(antenna_gain_channel(scene), 1.0 / 20.0));
    FeatureStack emb = spatial_frequency_embedding(scene, cfg);
    for (std::size_t i = 0; i < emb.channel_count(); ++i) {
        out.add(emb.name(i), std::move(emb.channel(i)));
    }
    if (coarse_pred != nullptr) {
        if (coarse_pred->height() != scene.height() || coarse_pred->width() != scene.width()) {
            throw ValidationError("coarse prediction does not match the scene dimensions");
        }
        if (!coarse_pred->all_finite() || coarse_pred->min_value() < 0.0f ||
            coarse_pred->max_value() > 1.0f) {
            throw ValidationError("coarse prediction must be normalized to [0, 1]");
        }
        out.add("coarse_pred", *coarse_pred);
    }
    return out;
}

Grid physics_baseline(const Scene& scene, double d_min_m) {
    Grid fspl = fspl_channel(scene, d_min_m);
    const Grid trans = transmission_ray_channel(scene);
    for (std::size_t i = 0; i < fspl.size(); ++i) fspl.data()[i] += trans.data()[i];
    return fspl;
}

FeatureStack transform_features(const FeatureStack& stack, const D4Element& e) {
    if (stack.channel_count() > 0 && stack.height() != stack.width()) {
        throw ValidationError("feature transforms require square grids");
    }
    FeatureStack out;
    for (std::size_t i = 0; i < stack.channel_count(); ++i) {
        const std::string& n = stack.name(i);
        const bool positional = n.rfind("pos_", 0) == 0 || n.rfind("freq_", 0) == 0;
        out.add(n, positional ? stack.channel(i) : d4_transform(stack.channel(i), e));
    }
    return out;
}

} // namespace radiomap
