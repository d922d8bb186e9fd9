#include "radiomap/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>

#include "radiomap/error.hpp"
#include "radiomap/io.hpp"
#include "radiomap/parallel.hpp"
#include "radiomap/rng.hpp"

namespace radiomap {

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kPi = std::numbers::pi;

// Reflected-path deposits accumulate as linear power in unsigned 128-bit
// fixed point (scale 2^108). Integer addition is exact and associative, so
// the merged total is independent of how rays are partitioned over threads.
using u128 = unsigned __int128;
constexpr int kFixedBits = 108;

double fspl_db(double d_m, double f_mhz) {
    return 20.0 * std::log10(4.0 * kPi * d_m * (f_mhz * 1.0e6) / kSpeedOfLight);
}

int own_cell(double x, double d, int n) {
    const double f = std::floor(x);
    int c = static_cast<int>(f);
    if (x == f && d < 0.0) c -= 1;
    return std::clamp(c, 0, n - 1);
}

// Straight-path loss tx -> pixel center: FSPL at the clamped distance plus
// transmission chords, minus antenna gain. Marched with incrementally
// accumulated boundary parameters; the feature channels derive each
// boundary crossing independently, so agreement between the two is a real
// cross-check of the traversal geometry.
double direct_loss_db(const Scene& scene, const TraceConfig& cfg, int pr, int pc, int tx_r,
                      int tx_c) {
    const int h = scene.height();
    const int w = scene.width();
    const double dr = (pr + 0.5) - scene.tx_row;
    const double dc = (pc + 0.5) - scene.tx_col;
    const double dist_cells = std::hypot(dr, dc);
    const double d_m = dist_cells * scene.cell_size_m;

    double trans = 0.0;
    if (dist_cells > 0.0) {
        constexpr double kInf = std::numeric_limits<double>::infinity();
        int ci = own_cell(scene.tx_row, dr, h);
        int cj = own_cell(scene.tx_col, dc, w);
        const int si = dr > 0.0 ? 1 : -1;
        const int sj = dc > 0.0 ? 1 : -1;
        const double t_delta_r = dr != 0.0 ? 1.0 / std::abs(dr) : kInf;
        const double t_delta_c = dc != 0.0 ? 1.0 / std::abs(dc) : kInf;
        double t_max_r = kInf;
        double t_max_c = kInf;
        if (dr != 0.0) {
            const double b = dr > 0.0 ? std::floor(scene.tx_row) + 1.0 : std::ceil(scene.tx_row) - 1.0;
            t_max_r = (b - scene.tx_row) / dr;
        }
        if (dc != 0.0) {
            const double b = dc > 0.0 ? std::floor(scene.tx_col) + 1.0 : std::ceil(scene.tx_col) - 1.0;
            t_max_c = (b - scene.tx_col) / dc;
        }
        double t_prev = 0.0;
        while (true) {
            const double t_next = std::min({t_max_r, t_max_c, 1.0});
            trans += static_cast<double>(scene.transmittance_db_per_m.at(ci, cj)) *
                     (t_next - t_prev) * d_m;
            if (t_next >= 1.0) break;
            t_prev = t_next;
            if (t_max_r <= t_max_c) {
                ci += si;
                t_max_r += t_delta_r;
                if (ci < 0 || ci >= h) break;
            } else {
                cj += sj;
                t_max_c += t_delta_c;
                if (cj < 0 || cj >= w) break;
            }
        }
    }

    double loss = fspl_db(std::max(d_m, cfg.d_min_m), scene.frequency_mhz) + trans;
    if (cfg.include_antenna_gain) {
        double gain;
        if (pr == tx_r && pc == tx_c) {
            gain = scene.antenna.gains_db[0]; // boresight for the cell holding the tx
        } else {
            const double az = std::atan2(dr, dc) * (180.0 / kPi);
            gain = scene.antenna.gain_at(az - scene.orientation_deg);
        }
        loss -= gain;
    }
    return loss;
}

struct Vec2 {
    double r;
    double c;
};

// Marches one reflected-branch segment; deposits into acc when
// bounces >= 1 and spawns children at free-to-wall interfaces.
struct PendingRay {
    Vec2 pos;
    Vec2 dir; // unit
    double path_m;
    double loss_db; // transmission + reflections + launch gain, no FSPL
    int bounces;
};

void march_ray(const Scene& scene, const TraceConfig& cfg, PendingRay ray,
               std::vector<PendingRay>& pending, std::vector<u128>& acc) {
    const int h = scene.height();
    const int w = scene.width();
    const double cell = scene.cell_size_m;
    const double radius_cells = cfg.rx_capture_radius_m / cell;
    const int reach = static_cast<int>(std::ceil(radius_cells));
    const double radius_sq = radius_cells * radius_cells;
    const bool deposits = ray.bounces >= 1;

    constexpr double kInf = std::numeric_limits<double>::infinity();
    int ci = own_cell(ray.pos.r, ray.dir.r, h);
    int cj = own_cell(ray.pos.c, ray.dir.c, w);
    const int si = ray.dir.r > 0.0 ? 1 : -1;
    const int sj = ray.dir.c > 0.0 ? 1 : -1;
    const double s_delta_r = ray.dir.r != 0.0 ? 1.0 / std::abs(ray.dir.r) : kInf;
    const double s_delta_c = ray.dir.c != 0.0 ? 1.0 / std::abs(ray.dir.c) : kInf;
    double s_max_r = kInf;
    double s_max_c = kInf;
    if (ray.dir.r != 0.0) {
        const double b = ray.dir.r > 0.0 ? std::floor(ray.pos.r) + 1.0 : std::ceil(ray.pos.r) - 1.0;
        s_max_r = (b - ray.pos.r) / ray.dir.r;
    }
    if (ray.dir.c != 0.0) {
        const double b = ray.dir.c > 0.0 ? std::floor(ray.pos.c) + 1.0 : std::ceil(ray.pos.c) - 1.0;
        s_max_c = (b - ray.pos.c) / ray.dir.c;
    }

    double s_enter = 0.0;
    double loss = ray.loss_db;
    while (true) {
        const double s_exit = std::min(s_max_r, s_max_c);
        if (deposits) {
            for (int dn = -reach; dn <= reach; ++dn) {
                const int ni = ci + dn;
                if (ni < 0 || ni >= h) continue;
                for (int dm = -reach; dm <= reach; ++dm) {
                    const int nj = cj + dm;
                    if (nj < 0 || nj >= w) continue;
                    const double ar = (ni + 0.5) - ray.pos.r;
                    const double ac = (nj + 0.5) - ray.pos.c;
                    const double foot = ar * ray.dir.r + ac * ray.dir.c;
                    if (!(foot >= s_enter && foot < s_exit)) continue;
                    const double perp_sq = ar * ar + ac * ac - foot * foot;
                    if (perp_sq > radius_sq) continue;
                    const double unfolded_m = std::max(ray.path_m + foot * cell, cfg.d_min_m);
                    const double pl =
                        fspl_db(unfolded_m, scene.frequency_mhz) + loss +
                        static_cast<double>(scene.transmittance_db_per_m.at(ci, cj)) *
                            (foot - s_enter) * cell;
                    if (pl <= cfg.min_power_db) {
                        // One reflected path family is sampled by every fan
                        // ray whose angle falls inside the arc the capture
                        // disc subtends at the unfolded distance; scale each
                        // deposit by spacing/arc so the family counts once.
                        const double subtended =
                            2.0 * std::asin(std::min(1.0, cfg.rx_capture_radius_m / unfolded_m));
                        const double weight = (2.0 * kPi / cfg.rays_per_tx) / subtended;
                        acc[static_cast<std::size_t>(ni) * w + nj] += static_cast<u128>(
                            std::ldexp(std::pow(10.0, -pl / 10.0) * weight, kFixedBits));
                    }
                }
            }
        }
        loss += static_cast<double>(scene.transmittance_db_per_m.at(ci, cj)) *
                (s_exit - s_enter) * cell;
        if (fspl_db(std::max(ray.path_m + s_exit * cell, cfg.d_min_m), scene.frequency_mhz) + loss >
            cfg.min_power_db) {
            return; // branch killed
        }

        const bool step_row = s_max_r <= s_max_c; // corner ties take the row face
        const double s_cross = step_row ? s_max_r : s_max_c;
        int ni = ci;
        int nj = cj;
        if (step_row) {
            ni += si;
            s_max_r += s_delta_r;
        } else {
            nj += sj;
            s_max_c += s_delta_c;
        }
        if (ni < 0 || ni >= h || nj < 0 || nj >= w) return;

        if (scene.reflectance_db.at(ni, nj) > 0.0f && scene.reflectance_db.at(ci, cj) == 0.0f &&
            ray.bounces < cfg.max_bounces) {
            const double child_loss =
                loss + static_cast<double>(scene.reflectance_db.at(ni, nj));
            const Vec2 q{ray.pos.r + s_cross * ray.dir.r, ray.pos.c + s_cross * ray.dir.c};
            const Vec2 child_dir =
                step_row ? Vec2{-ray.dir.r, ray.dir.c} : Vec2{ray.dir.r, -ray.dir.c};
            const double child_path = ray.path_m + s_cross * cell;
            if (fspl_db(std::max(child_path, cfg.d_min_m), scene.frequency_mhz) + child_loss <=
                cfg.min_power_db) {
                pending.push_back({q, child_dir, child_path, child_loss, ray.bounces + 1});
            }
        }
        ci = ni;
        cj = nj;
        s_enter = s_cross;
    }
}

} // namespace

void TraceConfig::validate() const {
    if (rays_per_tx < 1) throw ValidationError("rays_per_tx must be at least 1");
    if (max_bounces < 0) throw ValidationError("max_bounces must be non-negative");
    if (!(rx_capture_radius_m > 0.0)) throw ValidationError("rx_capture_radius_m must be positive");
    if (!(min_power_db > 0.0)) throw ValidationError("min_power_db must be positive");
    if (!(d_min_m > 0.0)) throw ValidationError("d_min_m must be positive");
}

double combine_path_powers(const std::vector<double>& path_losses_db) {
    if (path_losses_db.empty()) {
        throw ValidationError("combine_path_powers requires at least one path");
    }
    double power = 0.0;
    for (double pl : path_losses_db) power += std::pow(10.0, -pl / 10.0);
    return -10.0 * std::log10(power);
}

Grid trace_pathloss(const Scene& scene, const TraceConfig& cfg) {
    scene.validate();
    cfg.validate();
    const int h = scene.height();
    const int w = scene.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const int tx_r = std::min(static_cast<int>(std::floor(scene.tx_row)), h - 1);
    const int tx_c = std::min(static_cast<int>(std::floor(scene.tx_col)), w - 1);

    Grid direct(h, w);
    parallel_for_each(h, [&](std::int64_t r) {
        for (int c = 0; c < w; ++c) {
            direct.at(static_cast<int>(r), c) = static_cast<float>(
                direct_loss_db(scene, cfg, static_cast<int>(r), c, tx_r, tx_c));
        }
    });

    std::vector<u128> acc(n, 0);
    if (cfg.max_bounces > 0) {
        // Launch directions are fixed up front so the fan does not depend
        // on how rays are split across threads.
        Rng rng(cfg.ray_seed);
        std::vector<double> angle(static_cast<std::size_t>(cfg.rays_per_tx));
        for (auto& a : angle) a = rng.uniform();
        std::mutex merge_mutex;
        parallel_for(cfg.rays_per_tx, [&](std::int64_t begin, std::int64_t end) {
            std::vector<u128> local(n, 0);
            std::vector<PendingRay> pending;
            for (std::int64_t i = begin; i < end; ++i) {
                const double az_rad =
                    2.0 * kPi * (static_cast<double>(i) + angle[static_cast<std::size_t>(i)]) /
                    cfg.rays_per_tx;
                double loss0 = 0.0;
                if (cfg.include_antenna_gain) {
                    loss0 = -scene.antenna.gain_at(az_rad * (180.0 / kPi) - scene.orientation_deg);
                }
                pending.push_back({{scene.tx_row, scene.tx_col},
                                   {std::sin(az_rad), std::cos(az_rad)},
                                   0.0,
                                   loss0,
                                   0});
                while (!pending.empty()) {
                    const PendingRay ray = pending.back();
                    pending.pop_back();
                    march_ray(scene, cfg, ray, pending, local);
                }
            }
            const std::lock_guard lock(merge_mutex);
            for (std::size_t k = 0; k < n; ++k) acc[k] += local[k];
        });
    }

    Grid out(h, w);
    parallel_for_each(h, [&](std::int64_t r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * w + c;
            const double d = direct.at(static_cast<int>(r), c);
            if (acc[k] == 0) {
                out.at(static_cast<int>(r), c) = static_cast<float>(d);
            } else {
                const double total =
                    std::pow(10.0, -d / 10.0) + std::ldexp(static_cast<double>(acc[k]), -kFixedBits);
                out.at(static_cast<int>(r), c) = static_cast<float>(-10.0 * std::log10(total));
            }
        }
    });
    return out;
}

namespace {

AntennaPattern shaped_pattern(std::string name, double exponent, double floor_lin) {
    AntennaPattern p;
    p.name = std::move(name);
    for (int i = 0; i < 360; ++i) {
        const double theta = i * (kPi / 180.0);
        const double lin = std::pow((1.0 + std::cos(theta)) / 2.0, exponent);
        p.gains_db[static_cast<std::size_t>(i)] =
            static_cast<float>(20.0 * std::log10(std::max(lin, floor_lin)));
    }
    p.gains_db[0] = 0.0f; // exact peak
    return p;
}

} // namespace

AntennaPattern isotropic_antenna() {
    return AntennaPattern{};
}

AntennaPattern cardioid_antenna() {
    return shaped_pattern("cardioid", 1.0, 1.0e-2);
}

AntennaPattern two_lobe_antenna() {
    AntennaPattern p;
    p.name = "two_lobe";
    for (int i = 0; i < 360; ++i) {
        const double theta = i * (kPi / 180.0);
        p.gains_db[static_cast<std::size_t>(i)] =
            static_cast<float>(20.0 * std::log10(std::max(std::abs(std::cos(theta)), 1.0e-2)));
    }
    p.gains_db[0] = 0.0f;
    p.gains_db[180] = 0.0f;
    return p;
}

AntennaPattern narrow_beam_antenna() {
    return shaped_pattern("narrow_beam", 8.0, 1.0e-2);
}

GeneratorParams default_generator_params() {
    GeneratorParams p;
    p.seen_antennas = {isotropic_antenna(), cardioid_antenna(), two_lobe_antenna()};
    p.heldout_antennas = {narrow_beam_antenna()};
    return p;
}

void GeneratorParams::validate() const {
    if (height < 16 || width < 16) throw ValidationError("generator grids must be at least 16x16");
    if (!(cell_size_m > 0.0)) throw ValidationError("cell_size_m must be positive");
    if (min_rooms < 1 || max_rooms < min_rooms) throw ValidationError("bad room count range");
    if (min_wall_cells < 1 || max_wall_cells < min_wall_cells) {
        throw ValidationError("bad wall thickness range");
    }
    if (door_cells < 1) throw ValidationError("door_cells must be at least 1");
    if (min_room_cells < 4) throw ValidationError("min_room_cells must be at least 4");
    if (min_transmittance_db_per_m < 0.0 ||
        max_transmittance_db_per_m < min_transmittance_db_per_m) {
        throw ValidationError("bad transmittance range");
    }
    if (min_reflectance_db < 0.0 || max_reflectance_db < min_reflectance_db) {
        throw ValidationError("bad reflectance range");
    }
    if (seen_frequencies_mhz.empty()) throw ValidationError("seen frequency pool is empty");
    if (seen_antennas.empty()) throw ValidationError("seen antenna pool is empty");
    for (double f : seen_frequencies_mhz) {
        if (!(f > 0.0)) throw ValidationError("frequencies must be positive");
        if (std::find(heldout_frequencies_mhz.begin(), heldout_frequencies_mhz.end(), f) !=
            heldout_frequencies_mhz.end()) {
            throw ValidationError("frequency pools must be disjoint");
        }
    }
    for (double f : heldout_frequencies_mhz) {
        if (!(f > 0.0)) throw ValidationError("frequencies must be positive");
    }
    for (const auto& a : seen_antennas) {
        a.validate();
        for (const auto& b : heldout_antennas) {
            if (a.name == b.name) throw ValidationError("antenna pools must be disjoint");
        }
    }
    for (const auto& a : heldout_antennas) a.validate();
}

namespace {

struct Rect {
    int r0, c0, r1, c1; // half-open
    bool open = true;
    int room_extent(bool rows) const { return rows ? r1 - r0 : c1 - c0; }
};

void paint_rows(Grid& g, int r0, int r1, int c0, int c1, float value) {
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) g.at(r, c) = value;
    }
}

} // namespace

Scene generate_scene(const GeneratorParams& params, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    const int h = params.height;
    const int w = params.width;

    Scene scene;
    scene.cell_size_m = params.cell_size_m;
    scene.reflectance_db = Grid(h, w);
    scene.transmittance_db_per_m = Grid(h, w);

    const float wall_trans = static_cast<float>(
        rng.uniform(params.min_transmittance_db_per_m, params.max_transmittance_db_per_m));
    const float wall_refl =
        static_cast<float>(rng.uniform(params.min_reflectance_db, params.max_reflectance_db));

    Grid wall(h, w); // 1 where wall
    const int outer = static_cast<int>(rng.uniform_int(params.min_wall_cells, params.max_wall_cells));
    paint_rows(wall, 0, outer, 0, w, 1.0f);
    paint_rows(wall, h - outer, h, 0, w, 1.0f);
    paint_rows(wall, 0, h, 0, outer, 1.0f);
    paint_rows(wall, 0, h, w - outer, w, 1.0f);

    std::vector<Rect> rects{{outer, outer, h - outer, w - outer}};
    const int target = static_cast<int>(rng.uniform_int(params.min_rooms, params.max_rooms));
    while (static_cast<int>(rects.size()) < target) {
        // split the largest still-open region
        int best = -1;
        int best_extent = 0;
        for (std::size_t i = 0; i < rects.size(); ++i) {
            if (!rects[i].open) continue;
            const int extent = std::max(rects[i].r1 - rects[i].r0, rects[i].c1 - rects[i].c0);
            if (extent > best_extent) {
                best_extent = extent;
                best = static_cast<int>(i);
            }
        }
        if (best < 0) break;
        Rect& rect = rects[static_cast<std::size_t>(best)];
        const bool split_rows = (rect.r1 - rect.r0) >= (rect.c1 - rect.c0);
        const int wt = static_cast<int>(rng.uniform_int(params.min_wall_cells, params.max_wall_cells));
        const int lo = (split_rows ? rect.r0 : rect.c0) + params.min_room_cells;
        const int hi = (split_rows ? rect.r1 : rect.c1) - wt - params.min_room_cells;
        if (lo > hi) {
            rect.open = false;
            continue;
        }
        const int s = static_cast<int>(rng.uniform_int(lo, hi));
        if (split_rows) {
            const int d0 = static_cast<int>(rng.uniform_int(rect.c0, rect.c1 - params.door_cells));
            paint_rows(wall, s, s + wt, rect.c0, d0, 1.0f);
            paint_rows(wall, s, s + wt, d0 + params.door_cells, rect.c1, 1.0f);
            const Rect bottom{s + wt, rect.c0, rect.r1, rect.c1};
            rect.r1 = s;
            rects.push_back(bottom);
        } else {
            const int d0 = static_cast<int>(rng.uniform_int(rect.r0, rect.r1 - params.door_cells));
            paint_rows(wall, rect.r0, d0, s, s + wt, 1.0f);
            paint_rows(wall, d0 + params.door_cells, rect.r1, s, s + wt, 1.0f);
            const Rect right{rect.r0, s + wt, rect.r1, rect.c1};
            rect.c1 = s;
            rects.push_back(right);
        }
    }

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (wall.at(r, c) != 0.0f) {
                scene.transmittance_db_per_m.at(r, c) = wall_trans;
                scene.reflectance_db.at(r, c) = wall_refl;
            }
        }
    }

    // tx in free space, on the 1/8-cell lattice so symmetry maps are exact
    int tx_cell_r = -1;
    int tx_cell_c = -1;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const int r = static_cast<int>(rng.uniform_int(0, h - 1));
        const int c = static_cast<int>(rng.uniform_int(0, w - 1));
        if (wall.at(r, c) == 0.0f) {
            tx_cell_r = r;
            tx_cell_c = c;
            break;
        }
    }
    if (tx_cell_r < 0) {
        for (int r = 0; r < h && tx_cell_r < 0; ++r) {
            for (int c = 0; c < w; ++c) {
                if (wall.at(r, c) == 0.0f) {
                    tx_cell_r = r;
                    tx_cell_c = c;
                    break;
                }
            }
        }
    }
    if (tx_cell_r < 0) throw ValidationError("generated scene has no free cell for the transmitter");
    scene.tx_row = tx_cell_r + static_cast<double>(rng.uniform_int(1, 7)) / 8.0;
    scene.tx_col = tx_cell_c + static_cast<double>(rng.uniform_int(1, 7)) / 8.0;

    scene.orientation_deg = static_cast<double>(rng.uniform_int(0, 359));
    scene.frequency_mhz = rng.pick(params.seen_frequencies_mhz);
    scene.antenna = rng.pick(params.seen_antennas);

    scene.validate();
    return scene;
}

DatasetManifest build_dataset(const GeneratorParams& params, const TraceConfig& trace_cfg,
                              const DatasetCounts& counts, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
    params.validate();
    trace_cfg.validate();
    if (counts.train < 0 || counts.val < 0 || counts.test_per_task < 0) {
        throw ValidationError("dataset counts must be non-negative");
    }
    if (counts.test_per_task > 0) {
        if (params.heldout_frequencies_mhz.empty()) {
            throw ValidationError("held-out frequency pool is empty but test scenes were requested");
        }
        if (params.heldout_antennas.empty()) {
            throw ValidationError("held-out antenna pool is empty but test scenes were requested");
        }
    }
    std::filesystem::create_directories(out_dir / "scenes");
    std::filesystem::create_directories(out_dir / "gt");

    DatasetManifest manifest;
    manifest.generator_seed = seed;

    std::uint64_t index = 0;
    const auto emit = [&](Split split, int task, const std::string& base) {
        Scene scene = generate_scene(params, seed_for(seed, "scene", index));
        if (task == 2) {
            Rng pick(seed_for(seed, "heldout-freq", index));
            scene.frequency_mhz = pick.pick(params.heldout_frequencies_mhz);
        } else if (task == 3) {
            Rng pick(seed_for(seed, "heldout-antenna", index));
            scene.antenna = pick.pick(params.heldout_antennas);
        }
        TraceConfig cfg = trace_cfg;
        cfg.ray_seed = seed_for(seed, "trace", index);
        const Grid gt = trace_pathloss(scene, cfg);

        ManifestEntry entry;
        entry.scene_path = "scenes/" + base + ".scene.json";
        entry.ground_truth_path = "gt/" + base + ".rmt";
        entry.split = split;
        entry.task_id = task;
        save_scene(scene, out_dir / entry.scene_path);
        write_grid(gt, out_dir / entry.ground_truth_path);
        manifest.scenes.push_back(std::move(entry));
        ++index;
    };

    char buf[32];
    for (int i = 0; i < counts.train; ++i) {
        std::snprintf(buf, sizeof buf, "train_%04d", i);
        emit(Split::Train, 0, buf);
    }
    for (int i = 0; i < counts.val; ++i) {
        std::snprintf(buf, sizeof buf, "val_%04d", i);
        emit(Split::Val, 0, buf);
    }
    for (int task = 1; task <= 3; ++task) {
        for (int i = 0; i < counts.test_per_task; ++i) {
            std::snprintf(buf, sizeof buf, "test%d_%04d", task, i);
            emit(Split::Test, task, buf);
        }
    }

    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

} // namespace radiomap
