#include <cosp/error.hpp>
#include <cosp/geo.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace cosp
{

namespace
{

Eigen::Matrix3d rot_x(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << 1, 0, 0, 0, c, s, 0, -s, c;
    return m;
}

Eigen::Matrix3d rot_y(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << c, 0, -s, 0, 1, 0, s, 0, c;
    return m;
}

Eigen::Matrix3d rot_z(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << c, s, 0, -s, c, 0, 0, 0, 1;
    return m;
}

Eigen::Matrix3d d_rot_x(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << 0, 0, 0, 0, -s, c, 0, -c, -s;
    return m;
}

Eigen::Matrix3d d_rot_y(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << -s, 0, -c, 0, 0, 0, c, 0, -s;
    return m;
}

Eigen::Matrix3d d_rot_z(double a)
{
    const double c = std::cos(a), s = std::sin(a);
    Eigen::Matrix3d m;
    m << -s, c, 0, -c, -s, 0, 0, 0, 0;
    return m;
}

} // namespace

Rotation3 euler_to_rotation(double omega, double phi, double kappa)
{
    return Rotation3::from_matrix(rot_z(kappa) * rot_y(phi) * rot_x(omega));
}

std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(double omega, double phi, double kappa)
{
    const Eigen::Matrix3d rx = rot_x(omega), ry = rot_y(phi), rz = rot_z(kappa);
    return {rz * ry * d_rot_x(omega), rz * d_rot_y(phi) * rx, d_rot_z(kappa) * ry * rx};
}

Eigen::Vector3d rotation_to_euler(const Rotation3 &r)
{
    // r31 = sin(phi), r32 = -cos(phi) sin(omega), r33 = cos(phi) cos(omega),
    // r11 = cos(kappa) cos(phi), r21 = -sin(kappa) cos(phi)
    const Eigen::Matrix3d &m = r.matrix();
    const double phi = std::asin(std::clamp(m(2, 0), -1.0, 1.0));
    const double omega = std::atan2(-m(2, 1), m(2, 2));
    const double kappa = std::atan2(-m(1, 0), m(0, 0));
    return {omega, phi, kappa};
}

EcefPoint geodetic_to_ecef(const GeodeticPoint &p)
{
    const double lat = deg_to_rad(p.lat), lon = deg_to_rad(p.lon);
    const double sl = std::sin(lat), cl = std::cos(lat);
    const double n = wgs84::a / std::sqrt(1.0 - wgs84::e2 * sl * sl);
    return {(n + p.h) * cl * std::cos(lon), (n + p.h) * cl * std::sin(lon), (n * (1.0 - wgs84::e2) + p.h) * sl};
}

GeodeticPoint ecef_to_geodetic(const EcefPoint &p)
{
    if (p.norm() < 1000.0)
        throw Error(ErrorCode::InvalidArgument, "ecef_to_geodetic: point within 1 km of the Earth center");

    using namespace wgs84;
    const double x = p.x(), y = p.y(), z = p.z();
    const double rho = std::hypot(x, y);
    const double lon = std::atan2(y, x);

    // Bowring's closed form start
    const double theta = std::atan2(z * a, rho * b);
    const double st = std::sin(theta), ct = std::cos(theta);
    double lat = std::atan2(z + ep2 * b * st * st * st, rho - e2 * a * ct * ct * ct);

    double h = 0.0;
    for (int it = 0; it < 5; ++it)
    {
        const double sl = std::sin(lat), cl = std::cos(lat);
        const double n = a / std::sqrt(1.0 - e2 * sl * sl);
        h = (std::abs(cl) > 1e-3) ? rho / cl - n : z / sl - n * (1.0 - e2);
        const double next = std::atan2(z, rho * (1.0 - e2 * n / (n + h)));
        const double delta = next - lat;
        lat = next;
        if (std::abs(delta) < 1e-16)
            break;
    }
    const double sl = std::sin(lat), cl = std::cos(lat);
    const double n = a / std::sqrt(1.0 - e2 * sl * sl);
    h = (std::abs(cl) > 1e-3) ? rho / cl - n : z / sl - n * (1.0 - e2);

    return {normalize_lon(rad_to_deg(lon)), rad_to_deg(lat), h};
}

Eigen::Matrix3d ecef_to_enu_matrix(double lon_deg, double lat_deg)
{
    const double lon = deg_to_rad(lon_deg), lat = deg_to_rad(lat_deg);
    const double so = std::sin(lon), co = std::cos(lon), sa = std::sin(lat), ca = std::cos(lat);
    Eigen::Matrix3d m;
    m << -so, co, 0.0, -sa * co, -sa * so, ca, ca * co, ca * so, sa;
    return m;
}

double normalize_lon(double lon_deg)
{
    double l = std::fmod(lon_deg, 360.0);
    if (l <= -180.0)
        l += 360.0;
    else if (l > 180.0)
        l -= 360.0;
    return l;
}

bool intersect_ray_height(const EcefPoint &origin, const Eigen::Vector3d &direction, double h, EcefPoint &out)
{
    const Eigen::Vector3d d = direction.normalized();
    const double ah = wgs84::a + h, bh = wgs84::b + h;
    const Eigen::Vector3d o_s(origin.x() / ah, origin.y() / ah, origin.z() / bh);
    const Eigen::Vector3d d_s(d.x() / ah, d.y() / ah, d.z() / bh);
    const double qa = d_s.squaredNorm(), qb = 2.0 * o_s.dot(d_s), qc = o_s.squaredNorm() - 1.0;
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc < 0.0)
        return false;
    const double sq = std::sqrt(disc);
    double s = (-qb - sq) / (2.0 * qa);
    if (s <= 0.0)
        s = (-qb + sq) / (2.0 * qa);
    if (s <= 0.0)
        return false;

    // The surface of constant geodetic height is not exactly an ellipsoid; refine along the ray.
    for (int it = 0; it < 8; ++it)
    {
        const EcefPoint x = origin + s * d;
        const GeodeticPoint g = ecef_to_geodetic(x);
        const Eigen::Vector3d up = ecef_to_enu_matrix(g.lon, g.lat).row(2).transpose();
        const double rate = d.dot(up);
        if (std::abs(rate) < 1e-12)
            return false;
        const double ds = (h - g.h) / rate;
        s += ds;
        if (std::abs(ds) < 1e-9)
            break;
    }
    out = origin + s * d;
    return true;
}

double median(std::vector<double> values)
{
    if (values.empty())
        throw Error(ErrorCode::InvalidArgument, "median of an empty sequence");
    const size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double upper = *mid;
    if (n % 2 == 1)
        return upper;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

double nmad(std::span<const double> values)
{
    std::vector<double> finite;
    finite.reserve(values.size());
    for (double v : values)
        if (std::isfinite(v))
            finite.push_back(v);
    if (finite.size() < 2)
        throw Error(ErrorCode::InvalidArgument, "nmad needs at least two finite values");
    const double m = median(finite);
    for (double &v : finite)
        v = std::abs(v - m);
    return 1.4826 * median(std::move(finite));
}

} // namespace cosp
