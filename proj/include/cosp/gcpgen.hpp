#pragma once

#include <cosp/adjust.hpp>
#include <cosp/geo.hpp>
#include <cosp/pancam.hpp>
#include <cosp/raster.hpp>

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cosp
{

/// Approximate ground outline of a film: corners of pixel (0,0), (W,0), (W,H), (0,H).
struct FootprintEstimate
{
    std::array<GeodeticPoint, 4> corners;
    double uncertainty_km = 1.0;
    int width = 0;
    int height = 0;

    /// Bilinear interpolation of the corners in the UTM zone of the footprint centre.
    GeodeticPoint at(double col, double row) const;
    GeodeticPoint center() const;
};

/// Footprint of a camera's film at a constant ground height.
FootprintEstimate footprint_from_camera(const PanoramicCamera &cam, double ground_height, double uncertainty_km);

enum class TileMode
{
    Coarse,
    Fine
};

struct TileSpec
{
    std::string tile_id;
    TileMode mode = TileMode::Fine;
    int col = 0, row = 0, width = 0, height = 0; ///< film window, px
    double west = 0, south = 0, east = 0, north = 0; ///< reference window, degrees
    double scale = 1.0; ///< film px per matcher input px
};

struct TilePlanOptions
{
    int tile_width = 1920;
    int tile_height = 1440;
    int coarse_width = 10600;
    int coarse_height = 8000;
};

/// Windows along one axis: ceil(length / window), evenly spread so the first and last touch the ends.
std::vector<int> window_starts(int length, int window);

/// Film tiles and padded reference windows. Throws FootprintOutsideReference.
std::vector<TileSpec> plan_tiles(const FootprintEstimate &footprint, const RasterGrid &reference, TileMode mode,
                                 const TilePlanOptions &opt = {});

nlohmann::ordered_json tiles_to_json(const std::vector<TileSpec> &tiles);
std::vector<TileSpec> tiles_from_json(const nlohmann::json &j);

struct Match
{
    std::string tile_id;
    PixelPoint corona;
    double ref_lon = 0.0;
    double ref_lat = 0.0;
    double confidence = 0.0;
};

std::vector<Match> read_matches_csv(const std::filesystem::path &path);
void write_matches_csv(const std::filesystem::path &path, const std::vector<Match> &matches);

/// Drops matches under the confidence threshold and keeps the strongest `cap_per_tile` per tile.
std::vector<Match> filter_matches(const std::vector<Match> &matches, double min_confidence = 0.5, int cap_per_tile = 200);

struct RefineOptions
{
    double min_confidence = 0.5;
    double inlier_tol_m = 30.0;
    int ransac_iterations = 500;
    uint64_t seed = 1;
};

/// Similarity fit from film pixels to ground (UTM metres) with RANSAC; corners re-derived and the
/// uncertainty set to the 95th percentile inlier residual. Throws InsufficientMatches, ResidualTooLarge.
FootprintEstimate refine_footprint(const FootprintEstimate &footprint, const std::vector<Match> &matches,
                                   const RefineOptions &opt = {});

/// Height of a geographic point from a DEM in a UTM or EPSG:4326 CRS; empty on nodata or outside.
std::optional<double> dem_height(const RasterGrid &dem, double lon, double lat);

struct AssembledGcps
{
    std::vector<GcpRecord> gcps;
    int skipped_nodata = 0;
};

/// GCPs from (already filtered) matches with DEM heights. All records are control points.
AssembledGcps assemble_gcps(const std::vector<Match> &matches, const RasterGrid &dem, const std::string &image_id,
                            double sigma_px = 1.0);

/// Seeded random split of the GCPs of one pair into control and check points.
void split_control_check(std::vector<GcpRecord> &gcps, uint64_t seed, double check_fraction = 0.5);

struct MockMatcherOptions
{
    int grid_step = 48;
    int template_px = 25;
    int search_px = 16;
    double min_ncc = 0.5;
};

/// Stand-in for the external matcher: predicts each tile from the reference through the
/// footprint, finds the global offset by phase correlation and local offsets by NCC.
std::vector<Match> mock_match(const RasterGrid &film, const RasterGrid &reference, const std::vector<TileSpec> &tiles,
                              const FootprintEstimate &footprint, const MockMatcherOptions &opt = {});

/// Map coordinates of a geographic point in a raster CRS (UTM or EPSG:4326) and back.
Eigen::Vector2d lonlat_to_map(const std::string &crs, double lon, double lat);
void map_to_lonlat(const std::string &crs, const Eigen::Vector2d &m, double &lon, double &lat);

} // namespace cosp
