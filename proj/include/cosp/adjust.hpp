#pragma once

#include <cosp/pancam.hpp>
#include <cosp/raster.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace cosp
{

/// A camera together with the image it belongs to. `pair_id` groups the fore/aft images of one
/// stereo pair; tie points may only cross pairs in joint mode.
struct ImageCamera
{
    std::string image_id;
    std::string pair_id;
    PanoramicCamera camera;
};

enum class GcpRole
{
    Control,
    Check,
};

struct GcpRecord
{
    std::string image_id;
    PixelPoint pixel;
    EcefPoint ground = EcefPoint::Zero();
    double sigma_px = 1.0;
    GcpRole role = GcpRole::Control;
    std::string point_id; ///< shared by observations of the same ground point in different images
};

struct TieObservation
{
    std::string image_id;
    PixelPoint pixel;
};

struct TiePoint
{
    std::string id;
    std::vector<TieObservation> observations;
    EcefPoint ground = EcefPoint::Zero(); ///< estimated; zero means "initialize from the rays"
    double sigma_px = 1.0;
};

/// Residual of one image observation, observed minus computed, in pixels.
struct ObservationResidual
{
    std::string image_id;
    std::string point_id;
    enum class Kind
    {
        Control,
        Check,
        Tie,
    } kind = Kind::Control;
    PixelPoint pixel;
    double dcol = 0.0;
    double drow = 0.0;
    double weight = 1.0; ///< final weight including outlier down-weighting, 0 when rejected
    bool rejected = false;
};

struct AdjustmentReport
{
    double sigma0 = 0.0; ///< px
    Eigen::Vector3d rmse_xyz = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN()); ///< easting, northing, height (m)
    int check_points = 0;
    std::string utm_crs;
    std::vector<ObservationResidual> residuals;
    bool converged = false;
    int iterations = 0;
    int redundancy = 0;
    int observations = 0; ///< image observations in the normal equations (before rejection)
    int rejected = 0;
    int rejected_checks = 0; ///< check points beyond the outlier limit, left out of the RMSE
    std::vector<double> sse_history; ///< weighted SSE after each accepted iteration, starting value first
    std::string outlier_rule;
};

struct AdjustOptions
{
    int max_iterations = 100;
    double relative_sse_tol = 1e-10;
    double step_tol = 1e-8;
    /// Outlier rounds after the first convergence: down-weighting beyond k*sigma0 for the first
    /// rounds, hard rejection in the last. Zero disables.
    int outlier_rounds = 3;
    double outlier_k = 3.0;
    int min_control_per_camera = 6;
    bool joint_pairs = false;
    std::string utm_crs; ///< empty: zone of the check points' centroid
    /// Parameters held at their initial value in every camera (CameraParam indices).
    std::vector<int> fixed;
    /// Relative eigenvalue of the scaled reduced normal matrix below which it counts as singular.
    double singular_tol = 1e-14;
};

struct AdjustmentResult
{
    std::vector<ImageCamera> cameras;
    std::vector<TiePoint> tiepoints;
    AdjustmentReport report;
};

/// Approximate location of one image for camera initialisation.
struct ApproxFootprint
{
    std::string image_id;
    std::string pair_id;
    double lon = 0.0;
    double lat = 0.0;
    double height = 0.0; ///< mean terrain height, m
    bool fore = true;
};

/// Initial cameras: omega0 = -15 deg (fore) / +15 deg (aft), phi0 = kappa0 = 0, 170 km above the
/// footprint center along the tilted boresight, all rates and imc zero. Interior geometry from `interior`.
std::vector<ImageCamera> initialize_cameras(const std::vector<ApproxFootprint> &footprints, const PanoramicCamera &interior);

/// Projection derivatives in pixels: columns 0..12 camera parameters, 13..15 ground ECEF.
struct PixelJacobian
{
    PixelPoint pixel;
    Eigen::Matrix<double, 2, kCameraParams + 3> d;
};
PixelJacobian pixel_jacobian(const PanoramicCamera &cam, const EcefPoint &ground);

/// Levenberg-Marquardt bundle adjustment with Schur elimination of the tie points.
AdjustmentResult bundle_adjust(const std::vector<ImageCamera> &cameras, const std::vector<GcpRecord> &gcps,
                               const std::vector<TiePoint> &tiepoints, const AdjustOptions &options = {});

/// Least-squares intersection of the rays of several image observations.
EcefPoint intersect_observations(const std::vector<std::pair<const PanoramicCamera *, PixelPoint>> &obs);

struct ResidualField
{
    RasterGrid dcol;
    RasterGrid drow;
};

/// Inverse-distance interpolation of the GCP residuals of one image onto a grid of `step` px cells.
/// Cells farther than `cutoff_px` from every GCP are nodata. Rejected observations are ignored.
ResidualField residual_field(const AdjustmentReport &report, const std::string &image_id, const ImageGeometry &image,
                             double step_px, double cutoff_px, double power = 2.0);

/// Observation CSV: image_id,col,row,lon,lat,h,sigma_px,role,tie_id. Role is control, check or tie;
/// tie rows leave lon/lat/h empty and share tie_id. For GCPs tie_id names the ground point.
struct ObservationSet
{
    std::vector<GcpRecord> gcps;
    std::vector<TiePoint> tiepoints;
};
ObservationSet read_observations_csv(const std::filesystem::path &path);
void write_observations_csv(const std::filesystem::path &path, const ObservationSet &set);

nlohmann::ordered_json report_to_json(const AdjustmentReport &report);

} // namespace cosp
