#pragma once

#include <cosp/adjust.hpp>
#include <cosp/parallel.hpp>
#include <cosp/raster.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace cosp
{

struct Hill
{
    double e = 0.0; ///< m east of the scene center
    double n = 0.0; ///< m north of the scene center
    double amplitude = 0.0;
    double sigma = 1.0;
};

/// Analytic terrain: base height plus Gaussian hills, in ellipsoidal meters over a local
/// equirectangular (east, north) chart of the scene center.
struct Terrain
{
    double lon0 = 0.0;
    double lat0 = 0.0;
    double base = 0.0;
    std::vector<Hill> hills;

    Eigen::Vector2d local(double lon, double lat) const;
    double height_local(double e, double n) const;
    Eigen::Vector2d gradient_local(double e, double n) const;
    double height(double lon, double lat) const;
    double slope_deg(double lon, double lat) const;
};

struct SceneConfig
{
    double lon = 96.5;
    double lat = 44.0;
    double altitude_m = 170000.0;
    double tilt_deg = 15.0; ///< |omega| of fore and aft cameras; stereo angle is twice this

    /// Desk scale: small rendered images with proportionally shortened film. Full extent: the real
    /// KH-4B film with sparse observations only.
    bool full_extent = false;
    int width_px = 2000;
    int height_px = 1500;
    double pitch_um = 7.0;
    double focal_mm = 609.6;

    double base_height_m = 1000.0;
    int hills = 12;
    double relief_m = 150.0;

    // truth motion over the full 745 mm scan; scaled with the film length in desk mode
    double along_track_m = 2800.0;
    double cross_track_m = 30.0;
    double vertical_m = -15.0;
    double omega_rate_deg = 0.9;
    double phi_rate_deg = 0.02;
    double kappa_rate_deg = -0.01;
    double imc = 0.0002;

    double texture_cell_m = 6.0;
};

struct SyntheticScene
{
    SceneConfig config;
    uint64_t seed = 0;
    Terrain terrain;
    ImageCamera fore;
    ImageCamera aft;
};

SyntheticScene make_stereo_scene(const SceneConfig &config, uint64_t seed);

/// Film half extents of a scene configuration, mm.
double film_half_length_mm(const SceneConfig &c);
double film_half_width_mm(const SceneConfig &c);

/// First intersection of a ray with the terrain surface.
bool intersect_terrain(const Terrain &terrain, const Eigen::Vector3d &origin, const Eigen::Vector3d &direction, EcefPoint &out);

/// Procedural band-limited value noise in [0, 1] at local terrain coordinates.
double texture_value(const SyntheticScene &scene, double e, double n);

/// Renders the film of `cam` by tracing every pixel center to the terrain (0..255 grey values).
RasterGrid render_image(const SyntheticScene &scene, const PanoramicCamera &cam, Exec exec = Exec::Parallel);

/// Injected film bending: rows move by a sinusoid of the column, interpolated linearly between
/// the top and bottom film edge amplitudes.
struct BendingSpec
{
    double amplitude_top_px = 0.0;
    double amplitude_bottom_px = 0.0;
    double wavelength_px = 1000.0;
    double phase = 0.0;

    bool active() const { return amplitude_top_px != 0.0 || amplitude_bottom_px != 0.0; }
    /// Row displacement of a point at (col, row) of an image `height` rows tall.
    double displacement(double col, double row, int height) const;
};

/// Warps a rendered film by the bending spec (raw = corrected + displacement).
RasterGrid apply_bending(const RasterGrid &image, const BendingSpec &spec);

/// Layout of a raw film strip around the camera format: exposed end margins that are clipped
/// later, and exposed bands above and below the format carrying one bright stripe each.
struct FilmLayout
{
    int end_px = 43;
    int band_px = 40;
    double stripe_width_px = 4.0;
    double band_value = 128.0;
    double stripe_value = 250.0;
};

/// Raw film strip: `image` in the layout, bent by `bending` (defined in image coordinates), and
/// rotated by 180 degrees for aft images.
RasterGrid make_raw_film(const RasterGrid &image, const FilmLayout &layout, const BendingSpec &bending, bool aft);

/// Scanner simulation: the strip is placed on a dark bed with a small rotation and scanned in four
/// overlapping column parts, each with its own small rigid offset.
struct ScanSimulation
{
    double rotation_deg = 0.4;
    int border_px = 30;
    int overlap_px = 200;
    double part_shift_px = 2.0;
    double part_rotation_rad = 4e-4;
    double background = 3.0;
};

std::array<RasterGrid, 4> scan_film(const RasterGrid &film, const ScanSimulation &sim, uint64_t seed);

struct ObservationConfig
{
    int gcps_per_image = 60;
    int tie_points = 0;
    double noise_px = 0.0;
    double check_fraction = 0.0; ///< share of GCPs held out as check points (seeded split)
    double margin_px = 20.0;
    BendingSpec bending;
    uint64_t seed = 1;
};

struct SyntheticObservations
{
    std::vector<GcpRecord> gcps;
    std::vector<TiePoint> tiepoints;
    std::vector<EcefPoint> tie_truth;
};

/// GCP and tie observations from project() with optional noise and bending. Ties carry no ground.
SyntheticObservations synthesize_observations(const SyntheticScene &scene, const ObservationConfig &config);

/// Terrain heights at the cell centers of a map grid in the given UTM CRS.
RasterGrid truth_dem(const Terrain &terrain, const std::string &utm_crs, const GeoTransform &gt, int width, int height);

/// Orthoimage of the terrain texture on a map grid in the given UTM CRS (same grey scale as films).
RasterGrid render_ortho(const SyntheticScene &scene, const std::string &utm_crs, const GeoTransform &gt, int width, int height);

/// Truth sidecar: cameras and terrain. Never read by the pipeline stages.
nlohmann::ordered_json scene_truth_json(const SyntheticScene &scene);
SceneConfig scene_config_from_json(const nlohmann::json &j);
nlohmann::ordered_json scene_config_to_json(const SceneConfig &c);

} // namespace cosp
