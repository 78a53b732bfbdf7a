#pragma once

#include <cosp/geo.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <filesystem>
#include <span>
#include <string>

namespace cosp
{

/// Panoramic photo coordinates in mm, origin at the format center. x along the film length
/// (scan direction), y across the film width.
struct ImagePointMM
{
    double x = 0.0;
    double y = 0.0;
};

/// Continuous pixel position in a scanned film; pixel (i, j) covers [i, i+1) x [j, j+1).
struct PixelPoint
{
    double col = 0.0;
    double row = 0.0;
};

/// Raster geometry of a scanned film: dimensions and scan pitch.
struct ImageGeometry
{
    int width = 0;
    int height = 0;
    double pitch_um = 7.0;

    double pitch_mm() const { return pitch_um * 1e-3; }
    bool contains(const PixelPoint &p) const { return p.col >= 0.0 && p.row >= 0.0 && p.col <= width && p.row <= height; }
};

/// Index of each adjustable parameter in PanoramicCamera::parameters().
enum CameraParam : int
{
    kX0 = 0, kY0, kZ0,
    kX01, kY01, kZ01,
    kOmega0, kPhi0, kKappa0,
    kOmega01, kPhi01, kKappa01,
    kImc,
};

inline constexpr int kCameraParams = 13;
using CameraVector = Eigen::Matrix<double, kCameraParams, 1>;

/// Rotating-slit panoramic camera with first-order time dependent exterior orientation.
///
/// Positions are ECEF meters. Attitude angles rotate the local east-north-up frame of `anchor`
/// into the camera frame: R(t) = R_kappa R_phi R_omega * M_enu(anchor). The camera looks along
/// its -z axis; x is the scan direction. Focal length, film extents and the anchor are fixed.
struct PanoramicCamera
{
    double focal_mm = 609.6;
    double film_half_length_mm = 372.4;
    double film_half_width_mm = 28.0;

    Eigen::Vector3d position = Eigen::Vector3d::Zero();      ///< X0, Y0, Z0
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();      ///< X01, Y01, Z01 per unit scan time
    Eigen::Vector3d attitude = Eigen::Vector3d::Zero();      ///< omega0, phi0, kappa0
    Eigen::Vector3d attitude_rate = Eigen::Vector3d::Zero(); ///< omega01, phi01, kappa01 per unit scan time
    double imc = 0.0;                                        ///< V / (H delta)

    double anchor_lon = 0.0;
    double anchor_lat = 0.0;

    ImageGeometry image;
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    CameraVector parameters() const;
    void set_parameters(const CameraVector &p);

    /// Fixed ECEF->ENU matrix at the anchor.
    Eigen::Matrix3d frame() const { return ecef_to_enu_matrix(anchor_lon, anchor_lat); }
};

struct ExteriorOrientation
{
    EcefPoint position;
    Rotation3 rotation;
};

struct Ray
{
    EcefPoint origin;
    Eigen::Vector3d direction; ///< unit length
};

struct ProjectionResult
{
    ImagePointMM point;
    double t = 0.0;
    int iterations = 0;
    double fixed_point_residual_mm = 0.0;
};

/// Derivatives of the projected (x, y) in mm.
struct ProjectionJacobian
{
    ImagePointMM point;
    Eigen::Matrix<double, 2, kCameraParams> d_params;
    Eigen::Matrix<double, 2, 3> d_ground;
};

double scan_angle(double x_mm, double focal_mm);

/// Linear map of x_p onto [0, 1] over the film length.
double scan_time(double x_mm, const PanoramicCamera &cam);

ExteriorOrientation eo_at(const PanoramicCamera &cam, double t);

/// y shift of the image motion compensation: -imc * f * sin(alpha) * cos(omega0).
double imc_shift(const PanoramicCamera &cam, double alpha);

/// Ground to film. Solves the scan-time fixed point; throws NoConvergence / BehindCamera.
ProjectionResult project_detailed(const PanoramicCamera &cam, const EcefPoint &ground);
ImagePointMM project(const PanoramicCamera &cam, const EcefPoint &ground);

/// Analytic derivatives of project() including the implicit scan-time dependence.
ProjectionJacobian project_jacobian(const PanoramicCamera &cam, const EcefPoint &ground);

Ray backproject_ray(const PanoramicCamera &cam, const ImagePointMM &p);

/// Ray intersected with the surface of constant ellipsoidal height h.
bool backproject_to_height(const PanoramicCamera &cam, const ImagePointMM &p, double h, EcefPoint &out);

PixelPoint mm_to_pixel(const ImagePointMM &p, const ImageGeometry &g);
ImagePointMM pixel_to_mm(const PixelPoint &p, const ImageGeometry &g);

/// Camera JSON file: SI units and radians, f and film extents in mm, pitch in um.
nlohmann::ordered_json camera_to_json(const PanoramicCamera &cam);
PanoramicCamera camera_from_json(const nlohmann::json &j);
void write_camera(const std::filesystem::path &path, const PanoramicCamera &cam);
PanoramicCamera read_camera(const std::filesystem::path &path);

/// Expected IMC constant V / (H * delta).
double expected_imc(double velocity_m_s, double altitude_m, double scan_rate_rad_s);

/// Platform travel during one scan.
double along_track_motion(double velocity_m_s, double scan_seconds);

/// Change of the line of sight to a format-center ground point during one scan, relative to the local
/// vertical that the platform follows, in degrees.
double attitude_compensation_deg(double velocity_m_s, double altitude_m, double scan_seconds);

/// Human-facing names, in parameter order.
const std::array<std::string, kCameraParams> &camera_param_names();

} // namespace cosp
