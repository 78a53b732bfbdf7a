#pragma once

#include <cosp/parallel.hpp>
#include <cosp/raster.hpp>

#include <cstdint>
#include <vector>

namespace cosp::kernels
{

/// 7x7 census signatures (48 bits). Pixels whose window leaves the raster or touches nodata get
/// `valid == 0`.
struct CensusImage
{
    int width = 0;
    int height = 0;
    std::vector<uint64_t> bits;
    std::vector<uint8_t> valid;
};

CensusImage census7x7(const RasterGrid &img, Exec exec = Exec::Parallel);

/// Matching cost volume C(x, y, d) = hamming(A(x, y), B(x + d, y)) * 255 / 48, d = dmin..dmax,
/// laid out [y][x][d]. Invalid pairs cost 255.
struct CostVolume
{
    int width = 0;
    int height = 0;
    int dmin = 0;
    int ndisp = 0;
    std::vector<uint8_t> cost;

    size_t index(int x, int y) const { return (static_cast<size_t>(y) * width + x) * ndisp; }
};

CostVolume census_cost(const CensusImage &a, const CensusImage &b, int dmin, int dmax, Exec exec = Exec::Parallel);

/// Sum over 8 paths of the SGM path costs, same layout as the cost volume.
std::vector<uint16_t> sgm_aggregate(const CostVolume &c, int p1, int p2);

namespace serial
{
/// Reference aggregation: walks every path from its border start pixel.
std::vector<uint16_t> sgm_aggregate(const CostVolume &c, int p1, int p2);
} // namespace serial

} // namespace cosp::kernels
