#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cosp
{

inline constexpr float kDefaultNodata = -32768.0f;

/// GDAL-style affine: x = c0 + col*c1 + row*c2, y = c3 + col*c4 + row*c5, with (col, row) the
/// continuous pixel position measured from the top-left corner of the top-left pixel.
struct GeoTransform
{
    std::array<double, 6> c{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};

    static GeoTransform north_up(double x0, double y0, double cell) { return {{x0, cell, 0.0, y0, 0.0, -cell}}; }

    Eigen::Vector2d apply(double col, double row) const { return {c[0] + col * c[1] + row * c[2], c[3] + col * c[4] + row * c[5]}; }
    Eigen::Vector2d invert(double x, double y) const;
    bool is_valid() const;
    bool operator==(const GeoTransform &) const = default;
};

/// Single-band float raster with a nodata sentinel. Carries film scans, DEMs and difference maps.
class RasterGrid
{
public:
    RasterGrid() = default;
    RasterGrid(int width, int height, float fill = 0.0f, GeoTransform gt = {}, float nodata = kDefaultNodata);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return values_.empty(); }

    float at(int col, int row) const { return values_[index(col, row)]; }
    float &at(int col, int row) { return values_[index(col, row)]; }

    bool valid(int col, int row) const;
    bool contains(int col, int row) const { return col >= 0 && row >= 0 && col < width_ && row < height_; }

    /// Stores a computed value; a result equal to the sentinel is nudged so it stays valid.
    void put(int col, int row, double v);
    void set_nodata(int col, int row) { values_[index(col, row)] = nodata_; }

    float nodata() const { return nodata_; }
    void set_nodata_value(float v) { nodata_ = v; }

    const GeoTransform &geotransform() const { return gt_; }
    void set_geotransform(const GeoTransform &gt);

    const std::string &crs() const { return crs_; }
    void set_crs(std::string crs) { crs_ = std::move(crs); }

    std::span<float> values() { return values_; }
    std::span<const float> values() const { return values_; }

    /// Center of pixel (col, row) in map coordinates.
    Eigen::Vector2d cell_center(int col, int row) const { return gt_.apply(col + 0.5, row + 0.5); }

    /// Bilinear sample at continuous pixel coordinates (corner convention). Empty when outside the
    /// raster or when any contributing sample is nodata.
    std::optional<double> sample(double x, double y) const;
    std::optional<double> sample_map(double mx, double my) const;

    size_t count_valid() const;

private:
    size_t index(int col, int row) const { return static_cast<size_t>(row) * static_cast<size_t>(width_) + static_cast<size_t>(col); }

    int width_ = 0;
    int height_ = 0;
    GeoTransform gt_{};
    float nodata_ = kDefaultNodata;
    std::string crs_;
    std::vector<float> values_;
};

/// True when both grids share dimensions and geotransform.
bool same_grid(const RasterGrid &a, const RasterGrid &b);

} // namespace cosp
