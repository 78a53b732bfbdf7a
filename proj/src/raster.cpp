#include <cosp/error.hpp>
#include <cosp/raster.hpp>

#include <algorithm>
#include <cmath>

namespace cosp
{

Eigen::Vector2d GeoTransform::invert(double x, double y) const
{
    const double det = c[1] * c[5] - c[2] * c[4];
    const double dx = x - c[0], dy = y - c[3];
    return {(c[5] * dx - c[2] * dy) / det, (-c[4] * dx + c[1] * dy) / det};
}

bool GeoTransform::is_valid() const
{
    const double det = c[1] * c[5] - c[2] * c[4];
    return std::isfinite(det) && det != 0.0;
}

RasterGrid::RasterGrid(int width, int height, float fill, GeoTransform gt, float nodata)
    : width_(width), height_(height), nodata_(nodata)
{
    if (width <= 0 || height <= 0)
        throw Error(ErrorCode::InvalidArgument, "raster dimensions must be positive");
    set_geotransform(gt);
    values_.assign(static_cast<size_t>(width) * static_cast<size_t>(height), fill);
}

void RasterGrid::set_geotransform(const GeoTransform &gt)
{
    if (!gt.is_valid())
        throw Error(ErrorCode::InvalidArgument, "geotransform has zero pixel size");
    gt_ = gt;
}

bool RasterGrid::valid(int col, int row) const
{
    const float v = values_[index(col, row)];
    return v != nodata_ && std::isfinite(v);
}

void RasterGrid::put(int col, int row, double v)
{
    float f = static_cast<float>(v);
    if (f == nodata_)
        f = std::nextafter(f, 0.0f);
    values_[index(col, row)] = f;
}

std::optional<double> RasterGrid::sample(double x, double y) const
{
    if (!(x >= 0.0 && y >= 0.0 && x <= width_ && y <= height_))
        return std::nullopt;
    const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(width_ - 1));
    const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(height_ - 1));
    const int x0 = std::min(static_cast<int>(fx), width_ - 1);
    const int y0 = std::min(static_cast<int>(fy), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double ax = fx - x0, ay = fy - y0;

    double acc = 0.0;
    const int xs[2] = {x0, x1}, ys[2] = {y0, y1};
    const double wx[2] = {1.0 - ax, ax}, wy[2] = {1.0 - ay, ay};
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i)
        {
            const double w = wx[i] * wy[j];
            if (w == 0.0)
                continue;
            if (!valid(xs[i], ys[j]))
                return std::nullopt;
            acc += w * at(xs[i], ys[j]);
        }
    return acc;
}

std::optional<double> RasterGrid::sample_map(double mx, double my) const
{
    const Eigen::Vector2d p = gt_.invert(mx, my);
    return sample(p.x(), p.y());
}

size_t RasterGrid::count_valid() const
{
    size_t n = 0;
    for (float v : values_)
        if (v != nodata_ && std::isfinite(v))
            ++n;
    return n;
}

bool same_grid(const RasterGrid &a, const RasterGrid &b)
{
    if (a.width() != b.width() || a.height() != b.height())
        return false;
    for (int i = 0; i < 6; ++i)
        if (std::abs(a.geotransform().c[i] - b.geotransform().c[i]) > 1e-9 * (1.0 + std::abs(a.geotransform().c[i])))
            return false;
    return true;
}

} // namespace cosp
