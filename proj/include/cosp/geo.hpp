#pragma once

#include <Eigen/Core>

#include <array>
#include <numbers>
#include <span>
#include <vector>

namespace cosp
{

inline constexpr double kPi = std::numbers::pi;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// WGS84 ellipsoid.
namespace wgs84
{
inline constexpr double a = 6378137.0;
inline constexpr double f = 1.0 / 298.257223563;
inline constexpr double b = a * (1.0 - f);
inline constexpr double e2 = f * (2.0 - f);
inline constexpr double ep2 = e2 / (1.0 - e2);
} // namespace wgs84

/// Longitude and latitude in degrees, height in meters above the ellipsoid.
struct GeodeticPoint
{
    double lon = 0.0;
    double lat = 0.0;
    double h = 0.0;
};

/// Earth-centered Earth-fixed Cartesian coordinates in meters.
using EcefPoint = Eigen::Vector3d;

/// Orthonormal 3x3 rotation. Maps object-space differences into the rotated frame.
class Rotation3
{
public:
    Rotation3() : m_(Eigen::Matrix3d::Identity()) {}

    /// Wraps a matrix without re-orthonormalising it; callers pass products of rotations.
    static Rotation3 from_matrix(const Eigen::Matrix3d &m) { return Rotation3(m); }

    const Eigen::Matrix3d &matrix() const { return m_; }
    Eigen::RowVector3d row(int i) const { return m_.row(i); }
    double operator()(int r, int c) const { return m_(r, c); }

    Rotation3 transpose() const { return Rotation3(m_.transpose()); }
    Rotation3 operator*(const Rotation3 &o) const { return Rotation3(m_ * o.m_); }
    Eigen::Vector3d operator*(const Eigen::Vector3d &v) const { return m_ * v; }

private:
    explicit Rotation3(const Eigen::Matrix3d &m) : m_(m) {}
    Eigen::Matrix3d m_;
};

/// R = R_kappa(z) * R_phi(y) * R_omega(x), each a passive (frame) rotation.
Rotation3 euler_to_rotation(double omega, double phi, double kappa);

/// Derivatives of euler_to_rotation with respect to omega, phi and kappa.
std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(double omega, double phi, double kappa);

/// Inverse of euler_to_rotation for |phi| < pi/2.
Eigen::Vector3d rotation_to_euler(const Rotation3 &r);

EcefPoint geodetic_to_ecef(const GeodeticPoint &p);

/// Bowring start plus Newton refinement. Throws InvalidArgument within 1 km of the Earth center.
GeodeticPoint ecef_to_geodetic(const EcefPoint &p);

/// Rows are the east, north and up unit vectors at (lon, lat), expressed in ECEF.
Eigen::Matrix3d ecef_to_enu_matrix(double lon_deg, double lat_deg);

/// Normalises longitude into (-180, 180].
double normalize_lon(double lon_deg);

/// Point on the ray origin + s * direction (s > 0) whose ellipsoidal height is h.
/// Returns false when the ray does not reach that height.
bool intersect_ray_height(const EcefPoint &origin, const Eigen::Vector3d &direction, double h,
                          EcefPoint &out);

double median(std::vector<double> values);

/// Normalised median absolute deviation, 1.4826 * median(|v - median(v)|). Non-finite values are
/// ignored; fewer than two finite values is an error.
double nmad(std::span<const double> values);

} // namespace cosp
