#include "radiomap/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "radiomap/error.hpp"

namespace radiomap {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint32_t kMaxDim = 1u << 20;

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<unsigned char, 4> b{
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw IoError("truncated file while reading " + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap32(bits);
    }
    os.write(reinterpret_cast<const char*>(&bits), 4);
}

void put_f32_block(std::ostream& os, const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) put_f32(os, data[i]);
    }
}

void get_f32_block(std::istream& is, float* data, std::size_t n, const std::string& what) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4))) {
        throw IoError("truncated file while reading " + what);
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
            data[i] = std::bit_cast<float>(__builtin_bswap32(bits));
        }
    }
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& what) {
    const std::uint32_t len = get_u32(is, what);
    if (len > (1u << 16)) throw IoError("implausible name length in " + what);
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), len)) throw IoError("truncated file while reading " + what);
    return s;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
    return is;
}

} // namespace

void write_tensor(const FeatureStack& stack, const std::filesystem::path& path) {
    if (stack.channel_count() == 0) throw ValidationError("cannot write an empty feature stack");
    auto os = open_out(path);
    os.write("RMT1", 4);
    put_u32(os, static_cast<std::uint32_t>(stack.channel_count()));
    put_u32(os, static_cast<std::uint32_t>(stack.height()));
    put_u32(os, static_cast<std::uint32_t>(stack.width()));
    for (std::size_t i = 0; i < stack.channel_count(); ++i) put_string(os, stack.name(i));
    for (std::size_t i = 0; i < stack.channel_count(); ++i) {
        put_f32_block(os, stack.channel(i).data().data(), stack.channel(i).size());
    }
    if (!os) throw IoError("write failure on '" + path.string() + "'");
}

FeatureStack read_tensor(const std::filesystem::path& path) {
    auto is = open_in(path);
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("truncated file while reading magic");
    if (std::memcmp(magic, "RMT1", 4) != 0) {
        throw IoError("bad magic in '" + path.string() + "' (expected RMT1)");
    }
    const std::uint32_t channels = get_u32(is, "channel count");
    const std::uint32_t height = get_u32(is, "height");
    const std::uint32_t width = get_u32(is, "width");
    if (channels == 0 || channels > 4096 || height == 0 || width == 0 ||
        height > kMaxDim || width > kMaxDim ||
        static_cast<std::uint64_t>(height) * width > (1ull << 28)) {
        throw IoError("implausible tensor dimensions in '" + path.string() + "'");
    }
    std::vector<std::string> names(channels);
    for (auto& n : names) n = get_string(is, "channel name");
    FeatureStack stack;
    for (std::uint32_t c = 0; c < channels; ++c) {
        std::vector<float> data(static_cast<std::size_t>(height) * width);
        get_f32_block(is, data.data(), data.size(), "channel data");
        stack.add(names[c], Grid::from_data(static_cast<int>(height), static_cast<int>(width),
                                            std::move(data)));
    }
    return stack;
}

void write_grid(const Grid& grid, const std::filesystem::path& path) {
    FeatureStack s;
    s.add("value", grid);
    write_tensor(s, path);
}

Grid read_grid(const std::filesystem::path& path) {
    FeatureStack s = read_tensor(path);
    if (s.channel_count() != 1) {
        throw IoError("expected a single-channel tensor in '" + path.string() + "'");
    }
    return s.channel(0);
}

void save_scene(const Scene& scene, const std::filesystem::path& manifest_path) {
    scene.validate();
    const std::filesystem::path grids_path =
        std::filesystem::path(manifest_path).replace_extension().replace_extension(".rmt");
    FeatureStack grids;
    grids.add("reflectance_db", scene.reflectance_db);
    grids.add("transmittance_db_per_m", scene.transmittance_db_per_m);
    write_tensor(grids, grids_path);

    json j;
    j["cell_size_m"] = scene.cell_size_m;
    j["tx_row"] = scene.tx_row;
    j["tx_col"] = scene.tx_col;
    j["frequency_mhz"] = scene.frequency_mhz;
    j["orientation_deg"] = scene.orientation_deg;
    j["antenna"] = {{"name", scene.antenna.name}, {"gains_db", scene.antenna.gains_db}};
    j["grids_rmt"] = grids_path.filename().string();

    auto os = open_out(manifest_path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failure on '" + manifest_path.string() + "'");
}

Scene load_scene(const std::filesystem::path& manifest_path) {
    auto is = open_in(manifest_path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed scene manifest '" + manifest_path.string() + "': " + e.what());
    }
    Scene scene;
    try {
        scene.cell_size_m = j.at("cell_size_m").get<double>();
        scene.tx_row = j.at("tx_row").get<double>();
        scene.tx_col = j.at("tx_col").get<double>();
        scene.frequency_mhz = j.at("frequency_mhz").get<double>();
        scene.orientation_deg = j.at("orientation_deg").get<double>();
        scene.antenna.name = j.at("antenna").at("name").get<std::string>();
        scene.antenna.gains_db = j.at("antenna").at("gains_db").get<std::vector<float>>();
        const auto grids_file = j.at("grids_rmt").get<std::string>();
        const FeatureStack grids = read_tensor(manifest_path.parent_path() / grids_file);
        const int ri = grids.find("reflectance_db");
        const int ti = grids.find("transmittance_db_per_m");
        if (ri < 0 || ti < 0) {
            throw ValidationError("scene grids file lacks reflectance/transmittance channels");
        }
        scene.reflectance_db = grids.channel(static_cast<std::size_t>(ri));
        scene.transmittance_db_per_m = grids.channel(static_cast<std::size_t>(ti));
    } catch (const json::exception& e) {
        throw ValidationError("scene manifest '" + manifest_path.string() +
                              "' missing or mistyped field: " + e.what());
    }
    scene.validate();
    return scene;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    manifest.validate();
    json j;
    j["generator_seed"] = manifest.generator_seed;
    j["normalization"] = {{"lo_db", manifest.normalization.lo_db},
                          {"hi_db", manifest.normalization.hi_db}};
    j["scenes"] = json::array();
    for (const auto& e : manifest.scenes) {
        json row;
        row["scene"] = e.scene_path;
        row["ground_truth"] = e.ground_truth_path;
        row["split"] = to_string(e.split);
        if (e.split == Split::Test) row["task_id"] = e.task_id;
        j["scenes"].push_back(row);
    }
    auto os = open_out(path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failure on '" + path.string() + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    auto is = open_in(path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed dataset manifest '" + path.string() + "': " + e.what());
    }
    DatasetManifest m;
    try {
        m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
        m.normalization.lo_db = j.at("normalization").at("lo_db").get<double>();
        m.normalization.hi_db = j.at("normalization").at("hi_db").get<double>();
        for (const auto& row : j.at("scenes")) {
            ManifestEntry e;
            e.scene_path = row.at("scene").get<std::string>();
            e.ground_truth_path = row.at("ground_truth").get<std::string>();
            e.split = split_from_string(row.at("split").get<std::string>());
            e.task_id = row.value("task_id", 0);
            m.scenes.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw ValidationError("dataset manifest '" + path.string() +
                              "' missing or mistyped field: " + e.what());
    }
    m.validate();
    return m;
}

namespace {

// Fixed 9-stop ramp, linearly interpolated to 256 entries. The stop table is
// documented in docs/FORMATS.md; do not change it, heatmaps are compared
// byte-for-byte.
constexpr std::array<std::array<int, 4>, 9> kColormapStops{{
    {0, 12, 7, 134},
    {32, 69, 3, 158},
    {64, 114, 0, 168},
    {96, 155, 23, 158},
    {128, 188, 54, 133},
    {160, 215, 87, 107},
    {192, 236, 120, 83},
    {224, 249, 160, 63},
    {255, 239, 248, 33},
}};

std::array<std::array<std::uint8_t, 3>, 256> build_colormap() {
    std::array<std::array<std::uint8_t, 3>, 256> map{};
    for (std::size_t s = 0; s + 1 < kColormapStops.size(); ++s) {
        const auto& a = kColormapStops[s];
        const auto& b = kColormapStops[s + 1];
        for (int i = a[0]; i <= b[0]; ++i) {
            const double t = (b[0] == a[0]) ? 0.0 : static_cast<double>(i - a[0]) / (b[0] - a[0]);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = a[ch + 1] + t * (b[ch + 1] - a[ch + 1]);
                map[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)] =
                    static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return map;
}

} // namespace

const std::array<std::array<std::uint8_t, 3>, 256>& heatmap_colormap() {
    static const auto map = build_colormap();
    return map;
}

void emit_heatmap(const Grid& grid, double lo, double hi, const std::filesystem::path& path) {
    if (!(lo < hi)) throw ValidationError("heatmap range requires lo < hi");
    if (grid.empty()) throw ValidationError("cannot render an empty grid");
    const auto& cmap = heatmap_colormap();
    auto os = open_out(path);
    os << "P6\n" << grid.width() << " " << grid.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(grid.width()) * 3);
    const double inv = 1.0 / (hi - lo);
    for (int r = 0; r < grid.height(); ++r) {
        for (int c = 0; c < grid.width(); ++c) {
            const double t = std::clamp((grid.at(r, c) - lo) * inv, 0.0, 1.0);
            const auto idx = static_cast<std::size_t>(std::lround(t * 255.0));
            row[static_cast<std::size_t>(c) * 3 + 0] = cmap[idx][0];
            row[static_cast<std::size_t>(c) * 3 + 1] = cmap[idx][1];
            row[static_cast<std::size_t>(c) * 3 + 2] = cmap[idx][2];
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failure on '" + path.string() + "'");
}

void write_named_tensors(const std::vector<NamedTensorEntry>& entries,
                         const std::filesystem::path& path) {
    auto os = open_out(path);
    os.write("RMP1", 4);
    put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_string(os, e.name);
        put_u32(os, static_cast<std::uint32_t>(e.dims.size()));
        std::uint64_t numel = 1;
        for (std::uint32_t d : e.dims) {
            put_u32(os, d);
            numel *= d;
        }
        if (numel != e.data.size()) {
            throw ValidationError("named tensor '" + e.name + "' data does not match dims");
        }
        put_f32_block(os, e.data.data(), e.data.size());
    }
    if (!os) throw IoError("write failure on '" + path.string() + "'");
}

std::vector<NamedTensorEntry> read_named_tensors(const std::filesystem::path& path) {
    auto is = open_in(path);
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("truncated file while reading magic");
    if (std::memcmp(magic, "RMP1", 4) != 0) {
        throw IoError("bad magic in '" + path.string() + "' (expected RMP1)");
    }
    const std::uint32_t count = get_u32(is, "entry count");
    if (count > (1u << 16)) throw IoError("implausible entry count");
    std::vector<NamedTensorEntry> entries(count);
    for (auto& e : entries) {
        e.name = get_string(is, "tensor name");
        const std::uint32_t ndims = get_u32(is, "dim count");
        if (ndims > 8) throw IoError("implausible dim count for '" + e.name + "'");
        std::uint64_t numel = 1;
        e.dims.resize(ndims);
        for (auto& d : e.dims) {
            d = get_u32(is, "dim");
            if (d == 0 || d > kMaxDim) throw IoError("implausible dim for '" + e.name + "'");
            numel *= d;
        }
        if (numel > (1ull << 28)) throw IoError("implausible tensor size for '" + e.name + "'");
        e.data.resize(numel);
        get_f32_block(is, e.data.data(), e.data.size(), "tensor data");
    }
    return entries;
}

} // namespace radiomap
