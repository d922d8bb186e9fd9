#include "radiomap/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "radiomap/error.hpp"

namespace radiomap {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void reject_unknown(const json& j, const char* section, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) {
            throw ValidationError(std::string("unknown config key ") + section + "." + key);
        }
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (const auto it = j.find(key); it != j.end()) {
        try {
            it->get_to(out);
        } catch (const json::exception&) {
            throw ValidationError(std::string("config field has the wrong type: ") + key);
        }
    }
}

void read_antennas(const json& j, const char* key, std::vector<AntennaPattern>& out) {
    if (const auto it = j.find(key); it != j.end()) {
        std::vector<std::string> names;
        try {
            it->get_to(names);
        } catch (const json::exception&) {
            throw ValidationError(std::string("config field has the wrong type: ") + key);
        }
        out.clear();
        for (const auto& n : names) out.push_back(antenna_by_name(n));
    }
}

json antenna_names(const std::vector<AntennaPattern>& pool) {
    json names = json::array();
    for (const auto& a : pool) names.push_back(a.name);
    return names;
}

} // namespace

AntennaPattern antenna_by_name(const std::string& name) {
    if (name == "isotropic") return isotropic_antenna();
    if (name == "cardioid") return cardioid_antenna();
    if (name == "two_lobe") return two_lobe_antenna();
    if (name == "narrow_beam") return narrow_beam_antenna();
    throw ValidationError("unknown antenna pattern: " + name);
}

void RunConfig::finalize() {
    generator.validate();
    trace.validate();
    features.validate();
    norm.validate();
    coarse_model.in_channels = features.channel_count(false);
    fine_model.in_channels = features.channel_count(true);
    coarse_model.validate();
    fine_model.validate();
    train_coarse.stage = TrainStage::Coarse;
    train_fine.stage = TrainStage::Fine;
    train_coarse.validate();
    train_fine.validate();
    if (counts.train < 0 || counts.val < 0 || counts.test_per_task < 0) {
        throw ValidationError("dataset counts must be non-negative");
    }
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.generator = default_generator_params();
    cfg.train_fine.seed = cfg.train_coarse.seed + 1;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ValidationError("config root must be an object");
    reject_unknown(j, "<root>",
                   {"generator", "trace", "counts", "features", "model", "train",
                    "normalization", "tta"});

    RunConfig cfg = default_run_config();

    if (j.contains("generator")) {
        const json& g = j["generator"];
        reject_unknown(g, "generator",
                       {"height", "width", "cell_size_m", "min_rooms", "max_rooms",
                        "min_wall_cells", "max_wall_cells", "door_cells", "min_room_cells",
                        "min_transmittance_db_per_m", "max_transmittance_db_per_m",
                        "min_reflectance_db", "max_reflectance_db", "seen_frequencies_mhz",
                        "heldout_frequencies_mhz", "seen_antennas", "heldout_antennas",
                        "seed"});
        read_field(g, "height", cfg.generator.height);
        read_field(g, "width", cfg.generator.width);
        read_field(g, "cell_size_m", cfg.generator.cell_size_m);
        read_field(g, "min_rooms", cfg.generator.min_rooms);
        read_field(g, "max_rooms", cfg.generator.max_rooms);
        read_field(g, "min_wall_cells", cfg.generator.min_wall_cells);
        read_field(g, "max_wall_cells", cfg.generator.max_wall_cells);
        read_field(g, "door_cells", cfg.generator.door_cells);
        read_field(g, "min_room_cells", cfg.generator.min_room_cells);
        read_field(g, "min_transmittance_db_per_m", cfg.generator.min_transmittance_db_per_m);
        read_field(g, "max_transmittance_db_per_m", cfg.generator.max_transmittance_db_per_m);
        read_field(g, "min_reflectance_db", cfg.generator.min_reflectance_db);
        read_field(g, "max_reflectance_db", cfg.generator.max_reflectance_db);
        read_field(g, "seen_frequencies_mhz", cfg.generator.seen_frequencies_mhz);
        read_field(g, "heldout_frequencies_mhz", cfg.generator.heldout_frequencies_mhz);
        read_antennas(g, "seen_antennas", cfg.generator.seen_antennas);
        read_antennas(g, "heldout_antennas", cfg.generator.heldout_antennas);
        read_field(g, "seed", cfg.generator.seed);
    }
    if (j.contains("trace")) {
        const json& t = j["trace"];
        reject_unknown(t, "trace",
                       {"rays_per_tx", "max_bounces", "rx_capture_radius_m", "min_power_db",
                        "d_min_m", "include_antenna_gain"});
        read_field(t, "rays_per_tx", cfg.trace.rays_per_tx);
        read_field(t, "max_bounces", cfg.trace.max_bounces);
        read_field(t, "rx_capture_radius_m", cfg.trace.rx_capture_radius_m);
        read_field(t, "min_power_db", cfg.trace.min_power_db);
        read_field(t, "d_min_m", cfg.trace.d_min_m);
        read_field(t, "include_antenna_gain", cfg.trace.include_antenna_gain);
    }
    if (j.contains("counts")) {
        const json& c = j["counts"];
        reject_unknown(c, "counts", {"train", "val", "test_per_task"});
        read_field(c, "train", cfg.counts.train);
        read_field(c, "val", cfg.counts.val);
        read_field(c, "test_per_task", cfg.counts.test_per_task);
    }
    if (j.contains("features")) {
        const json& f = j["features"];
        reject_unknown(f, "features",
                       {"n_pos_bands", "n_freq_bands", "d_min_m", "freq_lo_mhz", "freq_hi_mhz",
                        "include_reflectance", "include_transmittance", "include_distance",
                        "include_fspl", "include_transmission_ray", "include_antenna_gain"});
        read_field(f, "n_pos_bands", cfg.features.n_pos_bands);
        read_field(f, "n_freq_bands", cfg.features.n_freq_bands);
        read_field(f, "d_min_m", cfg.features.d_min_m);
        read_field(f, "freq_lo_mhz", cfg.features.freq_lo_mhz);
        read_field(f, "freq_hi_mhz", cfg.features.freq_hi_mhz);
        read_field(f, "include_reflectance", cfg.features.include_reflectance);
        read_field(f, "include_transmittance", cfg.features.include_transmittance);
        read_field(f, "include_distance", cfg.features.include_distance);
        read_field(f, "include_fspl", cfg.features.include_fspl);
        read_field(f, "include_transmission_ray", cfg.features.include_transmission_ray);
        read_field(f, "include_antenna_gain", cfg.features.include_antenna_gain);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown(m, "model",
                       {"base_width", "n_stages", "attention_stage", "decoder_kernels",
                        "channel_attention_reduction"});
        for (ModelConfig* mc : {&cfg.coarse_model, &cfg.fine_model}) {
            read_field(m, "base_width", mc->base_width);
            read_field(m, "n_stages", mc->n_stages);
            read_field(m, "attention_stage", mc->attention_stage);
            read_field(m, "decoder_kernels", mc->decoder_kernels);
            read_field(m, "channel_attention_reduction", mc->channel_attention_reduction);
        }
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown(t, "train",
                       {"epochs", "batch_size", "base_lr", "seed", "fine_seed", "augment",
                        "zero_residual_init"});
        for (TrainConfig* tc : {&cfg.train_coarse, &cfg.train_fine}) {
            read_field(t, "epochs", tc->epochs);
            read_field(t, "batch_size", tc->batch_size);
            read_field(t, "base_lr", tc->base_lr);
            read_field(t, "augment", tc->augment);
        }
        read_field(t, "seed", cfg.train_coarse.seed);
        cfg.train_fine.seed = cfg.train_coarse.seed + 1;
        read_field(t, "fine_seed", cfg.train_fine.seed);
        read_field(t, "zero_residual_init", cfg.train_fine.zero_residual_init);
    }
    if (j.contains("normalization")) {
        const json& n = j["normalization"];
        reject_unknown(n, "normalization", {"lo_db", "hi_db"});
        read_field(n, "lo_db", cfg.norm.lo_db);
        read_field(n, "hi_db", cfg.norm.hi_db);
    }
    read_field(j, "tta", cfg.tta);
    return cfg;
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    ordered_json j;
    j["generator"] = {{"height", cfg.generator.height},
                      {"width", cfg.generator.width},
                      {"cell_size_m", cfg.generator.cell_size_m},
                      {"min_rooms", cfg.generator.min_rooms},
                      {"max_rooms", cfg.generator.max_rooms},
                      {"min_wall_cells", cfg.generator.min_wall_cells},
                      {"max_wall_cells", cfg.generator.max_wall_cells},
                      {"door_cells", cfg.generator.door_cells},
                      {"min_room_cells", cfg.generator.min_room_cells},
                      {"min_transmittance_db_per_m", cfg.generator.min_transmittance_db_per_m},
                      {"max_transmittance_db_per_m", cfg.generator.max_transmittance_db_per_m},
                      {"min_reflectance_db", cfg.generator.min_reflectance_db},
                      {"max_reflectance_db", cfg.generator.max_reflectance_db},
                      {"seen_frequencies_mhz", cfg.generator.seen_frequencies_mhz},
                      {"heldout_frequencies_mhz", cfg.generator.heldout_frequencies_mhz},
                      {"seen_antennas", antenna_names(cfg.generator.seen_antennas)},
                      {"heldout_antennas", antenna_names(cfg.generator.heldout_antennas)},
                      {"seed", cfg.generator.seed}};
    j["trace"] = {{"rays_per_tx", cfg.trace.rays_per_tx},
                  {"max_bounces", cfg.trace.max_bounces},
                  {"rx_capture_radius_m", cfg.trace.rx_capture_radius_m},
                  {"min_power_db", cfg.trace.min_power_db},
                  {"d_min_m", cfg.trace.d_min_m},
                  {"include_antenna_gain", cfg.trace.include_antenna_gain}};
    j["counts"] = {{"train", cfg.counts.train},
                   {"val", cfg.counts.val},
                   {"test_per_task", cfg.counts.test_per_task}};
    j["features"] = {{"n_pos_bands", cfg.features.n_pos_bands},
                     {"n_freq_bands", cfg.features.n_freq_bands},
                     {"d_min_m", cfg.features.d_min_m},
                     {"freq_lo_mhz", cfg.features.freq_lo_mhz},
                     {"freq_hi_mhz", cfg.features.freq_hi_mhz},
                     {"include_reflectance", cfg.features.include_reflectance},
                     {"include_transmittance", cfg.features.include_transmittance},
                     {"include_distance", cfg.features.include_distance},
                     {"include_fspl", cfg.features.include_fspl},
                     {"include_transmission_ray", cfg.features.include_transmission_ray},
                     {"include_antenna_gain", cfg.features.include_antenna_gain}};
    j["model"] = {{"base_width", cfg.coarse_model.base_width},
                  {"n_stages", cfg.coarse_model.n_stages},
                  {"attention_stage", cfg.coarse_model.attention_stage},
                  {"decoder_kernels", cfg.coarse_model.decoder_kernels},
                  {"channel_attention_reduction", cfg.coarse_model.channel_attention_reduction}};
    j["train"] = {{"epochs", cfg.train_coarse.epochs},
                  {"batch_size", cfg.train_coarse.batch_size},
                  {"base_lr", cfg.train_coarse.base_lr},
                  {"seed", cfg.train_coarse.seed},
                  {"fine_seed", cfg.train_fine.seed},
                  {"augment", cfg.train_coarse.augment},
                  {"zero_residual_init", cfg.train_fine.zero_residual_init}};
    j["normalization"] = {{"lo_db", cfg.norm.lo_db}, {"hi_db", cfg.norm.hi_db}};
    j["tta"] = cfg.tta;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing config " + path.string());
}

} // namespace radiomap
