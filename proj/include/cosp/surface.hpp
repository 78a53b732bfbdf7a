#pragma once

#include <cosp/pancam.hpp>
#include <cosp/raster.hpp>
#include <cosp/utm.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <optional>
#include <vector>

namespace cosp
{

struct Triangulation
{
    EcefPoint point;
    double miss_m = 0.0;        ///< closest approach of the two rays
    Eigen::Vector4d residual;   ///< residual of the linear system at the solution
};

struct TriangulateOptions
{
    double max_condition = 1e3;
    double max_miss_m = 1e3;
};

/// Four condition rows (two per image) of the intersection, A X = b, at the observations' scan times.
void intersection_rows(const PanoramicCamera &cam, const ImagePointMM &p, Eigen::Matrix<double, 2, 3> &a, Eigen::Vector2d &b);

/// Least-squares intersection of two film observations. Throws NearParallelRays / DivergentPoint.
Triangulation triangulate(const PanoramicCamera &a, const PanoramicCamera &b, const ImagePointMM &pa, const ImagePointMM &pb,
                          const TriangulateOptions &opt = {});

/// Point in map coordinates: easting, northing, ellipsoidal height.
Eigen::Vector3d to_map(const EcefPoint &p, const UtmProjection &utm);

/// Robust gridding: a cell with at least one point gets the distance-weighted median of the points
/// in its 3x3 neighbourhood; other cells are nodata. Points are (easting, northing, height).
RasterGrid grid_dem(const std::vector<Eigen::Vector3d> &points, const GeoTransform &gt, int width, int height);

/// Grid aligned to multiples of `cell` covering the points.
RasterGrid grid_dem(const std::vector<Eigen::Vector3d> &points, double cell);

/// p' = center + (I + linear) (p - center) + translation, map meters.
struct Affine3D
{
    Eigen::Matrix3d linear = Eigen::Matrix3d::Zero(); ///< deviation from identity
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Vector3d center = Eigen::Vector3d::Zero();

    Eigen::Vector3d offset(const Eigen::Vector3d &p) const { return linear * (p - center) + translation; }
    Eigen::Vector3d apply(const Eigen::Vector3d &p) const { return p + offset(p); }
    bool is_identity() const { return linear.isZero(0.0) && translation.isZero(0.0); }
};

struct CoregTile
{
    int col = 0, row = 0;                  ///< first cell of the tile
    int width = 0, height = 0;             ///< cells
    Eigen::Vector4d weight_box = Eigen::Vector4d::Zero(); ///< c0, r0, c1, r1 of the feathering support
    Affine3D transform;
    double stable_fraction = 0.0;
    bool inherited = false;                ///< too little stable terrain; parameters shared with `source`
    int source = -1;
    bool reverted = false;                 ///< the fit would have raised the tile's NMAD
    size_t cells_used = 0;
    std::optional<double> nmad_before, nmad_after;
};

struct DhStats
{
    double nmad = 0.0;
    double median = 0.0;
    double mean = 0.0;
    double filtered_nmad = 0.0; ///< after dropping |dh - median| > 3 nmad
    size_t count = 0;
    double valid_fraction = 0.0;
};

/// Differences dem - reference on a common grid, restricted to `mask` cells when given
/// (nonzero = stable). Throws DisjointGrids.
DhStats dh_stats(const RasterGrid &dem, const RasterGrid &reference, const RasterGrid *mask = nullptr, RasterGrid *difference = nullptr);

nlohmann::ordered_json dh_stats_to_json(const DhStats &s);

struct CoregOptions
{
    double tile_m = 20000.0;
    double overlap = 0.25;
    double max_dh_m = 100.0;
    double max_slope_deg = 45.0;
    int max_iterations = 10;
    double tolerance_m = 1e-4;
    double min_stable_fraction = 0.2;
};

struct CoregResult
{
    RasterGrid corrected;
    std::vector<CoregTile> tiles;
    DhStats before, after;
};

/// Tile layout over a grid: square tiles of about `tile_m` with the given overlap fraction.
std::vector<CoregTile> coreg_tile_layout(const RasterGrid &dem, const CoregOptions &opt);

/// Feathering weight of a tile at a map-grid cell (continuous, zero on the tile border).
double tile_weight(const CoregTile &t, double col, double row, double overlap_cells);

/// Blended correction at a map point from the tile transforms.
Eigen::Vector3d blended_offset(const std::vector<CoregTile> &tiles, const GeoTransform &gt, double overlap_cells, const Eigen::Vector3d &p);

/// Applies blended tile transforms to a DEM: the surface point p maps to p + offset(p); the result
/// is resampled onto the input grid.
RasterGrid apply_tile_transforms(const RasterGrid &dem, const std::vector<CoregTile> &tiles, double overlap_cells);

/// Overlap width in cells used for feathering.
double coreg_overlap_cells(const RasterGrid &dem, const CoregOptions &opt);

/// Per-tile 3D affine coregistration of `dem` to `reference` by least squares on elevation residuals,
/// solved jointly with the feathered blend. `stable` (nonzero = stable) may be null.
CoregResult coregister_tiles(const RasterGrid &dem, const RasterGrid &reference, const RasterGrid *stable, const CoregOptions &opt = {});

nlohmann::ordered_json coreg_result_to_json(const CoregResult &r);

} // namespace cosp
