#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace radiomap {

// 2D float raster, row-major. The tensor-of-record for material grids,
// physics channels, targets and predictions.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, float fill = 0.0f);
    static Grid from_data(int height, int width, std::vector<float> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    float at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }
    std::span<const float> values() const { return data_; }

    bool all_finite() const;
    float min_value() const;
    float max_value() const;

    bool operator==(const Grid& other) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

// One of the 8 symmetries of the square: rotate counter-clockwise by
// quarter turns, then optionally mirror about the vertical axis
// (columns reversed).
struct D4Element {
    int rotation_quarter_turns = 0; // in {0,1,2,3}
    bool flip_horizontal = false;

    bool operator==(const D4Element&) const = default;
};

// All 8 elements, identity first.
std::array<D4Element, 8> d4_all();

// Group law: the element equivalent to applying `first`, then `second`.
D4Element d4_compose(const D4Element& second, const D4Element& first);

// Element e' with d4_transform(d4_transform(g, e), e') == g.
D4Element d4_inverse(const D4Element& e);

// Applies the symmetry as an index permutation (lossless). Odd rotations
// require a square grid.
Grid d4_transform(const Grid& grid, const D4Element& e);

// Maps a continuous point (fractional cell coordinates in [0,H]x[0,W])
// through the same symmetry. Pixel centers map onto pixel centers.
struct Point {
    double row = 0.0;
    double col = 0.0;
};
Point d4_map_point(const Point& p, int height, int width, const D4Element& e);

// Maps a screen azimuth (degrees, measured from the +col axis towards the
// +row axis) through the symmetry. Returned in [0, 360).
double d4_map_azimuth(double azimuth_deg, const D4Element& e);

// Bilinear resize with the pixel-center (align-corners = false) convention.
// Output values stay within [min(input), max(input)]; identity when the
// target equals the source size.
Grid resize_bilinear(const Grid& grid, int out_h, int out_w);

// Nearest-neighbour resize, same pixel-center convention. Used for targets.
Grid resize_nearest(const Grid& grid, int out_h, int out_w);

// Linear map from a dB window to the model range [0, 1].
struct NormalizationSpec {
    double lo_db = 13.0;
    double hi_db = 160.0;

    void validate() const; // throws ValidationError unless lo_db < hi_db
    bool operator==(const NormalizationSpec&) const = default;
};

// lo_db -> 0, hi_db -> 1, values outside the window clamp.
Grid normalize(const Grid& grid, const NormalizationSpec& spec);
Grid denormalize(const Grid& grid, const NormalizationSpec& spec);

// Ordered set of equally sized channels with unique names.
class FeatureStack {
public:
    FeatureStack() = default;

    void add(std::string name, Grid channel); // throws on shape/name violation

    std::size_t channel_count() const { return channels_.size(); }
    int height() const;
    int width() const;

    const Grid& channel(std::size_t i) const { return channels_[i]; }
    Grid& channel(std::size_t i) { return channels_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }

    // Index of a named channel, or -1.
    int find(const std::string& name) const;

    bool operator==(const FeatureStack&) const = default;

private:
    std::vector<Grid> channels_;
    std::vector<std::string> names_;
};

} // namespace radiomap
