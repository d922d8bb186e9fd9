#include "radiomap/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "radiomap/error.hpp"

namespace radiomap {

Grid::Grid(int height, int width, float fill) {
    if (height < 0 || width < 0) throw ValidationError("grid dimensions must be non-negative");
    height_ = height;
    width_ = width;
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

Grid Grid::from_data(int height, int width, std::vector<float> data) {
    if (height < 0 || width < 0) throw ValidationError("grid dimensions must be non-negative");
    if (data.size() != static_cast<std::size_t>(height) * width) {
        throw ValidationError("grid data length does not match height*width");
    }
    Grid g;
    g.height_ = height;
    g.width_ = width;
    g.data_ = std::move(data);
    return g;
}

bool Grid::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

float Grid::min_value() const {
    return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end());
}

float Grid::max_value() const {
    return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end());
}

std::array<D4Element, 8> d4_all() {
    std::array<D4Element, 8> out{};
    std::size_t i = 0;
    for (int flip = 0; flip < 2; ++flip) {
        for (int rot = 0; rot < 4; ++rot) {
            out[i++] = D4Element{rot, flip != 0};
        }
    }
    return out;
}

// With t(e) = F^f . R^k (rotate first, then flip): F R = R^-1 F, so
//   f1 == 0:  k = k2 + k1,     f = f2
//   f1 == 1:  k = k1 - k2,     f = !f2
D4Element d4_compose(const D4Element& second, const D4Element& first) {
    int k;
    bool f;
    if (!first.flip_horizontal) {
        k = second.rotation_quarter_turns + first.rotation_quarter_turns;
        f = second.flip_horizontal;
    } else {
        k = first.rotation_quarter_turns - second.rotation_quarter_turns;
        f = !second.flip_horizontal;
    }
    return D4Element{((k % 4) + 4) % 4, f};
}

D4Element d4_inverse(const D4Element& e) {
    if (e.flip_horizontal) return e; // F R^k is an involution
    return D4Element{(4 - e.rotation_quarter_turns) % 4, false};
}

namespace {

Grid rotate_ccw(const Grid& g) {
    // out[i][j] = in[j][W-1-i]; dims swap
    Grid out(g.width(), g.height());
    for (int i = 0; i < out.height(); ++i) {
        for (int j = 0; j < out.width(); ++j) {
            out.at(i, j) = g.at(j, g.width() - 1 - i);
        }
    }
    return out;
}

Grid mirror_cols(const Grid& g) {
    Grid out(g.height(), g.width());
    for (int r = 0; r < g.height(); ++r) {
        for (int c = 0; c < g.width(); ++c) {
            out.at(r, c) = g.at(r, g.width() - 1 - c);
        }
    }
    return out;
}

} // namespace

Grid d4_transform(const Grid& grid, const D4Element& e) {
    const int rot = ((e.rotation_quarter_turns % 4) + 4) % 4;
    if ((rot % 2) == 1 && grid.height() != grid.width()) {
        throw ValidationError("odd quarter-turn rotation requires a square grid");
    }
    Grid out = grid;
    for (int k = 0; k < rot; ++k) out = rotate_ccw(out);
    if (e.flip_horizontal) out = mirror_cols(out);
    return out;
}

Point d4_map_point(const Point& p, int height, int width, const D4Element& e) {
    const int rot = ((e.rotation_quarter_turns % 4) + 4) % 4;
    Point q = p;
    int h = height;
    int w = width;
    for (int k = 0; k < rot; ++k) {
        // R: (row, col) -> (W - col, row); dims swap
        q = Point{static_cast<double>(w) - q.col, q.row};
        std::swap(h, w);
    }
    if (e.flip_horizontal) q = Point{q.row, static_cast<double>(w) - q.col};
    return q;
}

double d4_map_azimuth(double azimuth_deg, const D4Element& e) {
    const int rot = ((e.rotation_quarter_turns % 4) + 4) % 4;
    double az = azimuth_deg - 90.0 * rot; // R: az -> az - 90
    if (e.flip_horizontal) az = 180.0 - az;
    az = std::fmod(az, 360.0);
    if (az < 0) az += 360.0;
    return az;
}

namespace {

Grid resize_generic(const Grid& grid, int out_h, int out_w, bool bilinear) {
    if (out_h < 1 || out_w < 1) throw ValidationError("resize target dimensions must be >= 1");
    if (grid.height() < 1 || grid.width() < 1) throw ValidationError("cannot resize an empty grid");
    if (out_h == grid.height() && out_w == grid.width()) return grid;

    Grid out(out_h, out_w);
    const double sy = static_cast<double>(grid.height()) / out_h;
    const double sx = static_cast<double>(grid.width()) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double src_y = (oy + 0.5) * sy - 0.5;
        for (int ox = 0; ox < out_w; ++ox) {
            const double src_x = (ox + 0.5) * sx - 0.5;
            if (bilinear) {
                const double fy = std::floor(src_y);
                const double fx = std::floor(src_x);
                const double wy = src_y - fy;
                const double wx = src_x - fx;
                const int y0 = std::clamp(static_cast<int>(fy), 0, grid.height() - 1);
                const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, grid.height() - 1);
                const int x0 = std::clamp(static_cast<int>(fx), 0, grid.width() - 1);
                const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, grid.width() - 1);
                const double top = grid.at(y0, x0) * (1.0 - wx) + grid.at(y0, x1) * wx;
                const double bot = grid.at(y1, x0) * (1.0 - wx) + grid.at(y1, x1) * wx;
                out.at(oy, ox) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            } else {
                const int y = std::clamp(static_cast<int>(std::floor(src_y + 0.5)), 0, grid.height() - 1);
                const int x = std::clamp(static_cast<int>(std::floor(src_x + 0.5)), 0, grid.width() - 1);
                out.at(oy, ox) = grid.at(y, x);
            }
        }
    }
    return out;
}

} // namespace

Grid resize_bilinear(const Grid& grid, int out_h, int out_w) {
    return resize_generic(grid, out_h, out_w, true);
}

Grid resize_nearest(const Grid& grid, int out_h, int out_w) {
    return resize_generic(grid, out_h, out_w, false);
}

void NormalizationSpec::validate() const {
    if (!(lo_db < hi_db)) throw ValidationError("normalization requires lo_db < hi_db");
    if (!std::isfinite(lo_db) || !std::isfinite(hi_db)) {
        throw ValidationError("normalization bounds must be finite");
    }
}

Grid normalize(const Grid& grid, const NormalizationSpec& spec) {
    spec.validate();
    Grid out(grid.height(), grid.width());
    const double inv = 1.0 / (spec.hi_db - spec.lo_db);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double t = (grid.data()[i] - spec.lo_db) * inv;
        out.data()[i] = static_cast<float>(std::clamp(t, 0.0, 1.0));
    }
    return out;
}

Grid denormalize(const Grid& grid, const NormalizationSpec& spec) {
    spec.validate();
    Grid out(grid.height(), grid.width());
    const double span = spec.hi_db - spec.lo_db;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        out.data()[i] = static_cast<float>(spec.lo_db + grid.data()[i] * span);
    }
    return out;
}

int FeatureStack::height() const { return channels_.empty() ? 0 : channels_.front().height(); }
int FeatureStack::width() const { return channels_.empty() ? 0 : channels_.front().width(); }

void FeatureStack::add(std::string name, Grid channel) {
    if (!channels_.empty() &&
        (channel.height() != height() || channel.width() != width())) {
        throw ValidationError("feature channel '" + name + "' does not match stack dimensions");
    }
    if (find(name) >= 0) throw ValidationError("duplicate feature channel name '" + name + "'");
    names_.push_back(std::move(name));
    channels_.push_back(std::move(channel));
}

int FeatureStack::find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return static_cast<int>(i);
    }
    return -1;
}

} // namespace radiomap
