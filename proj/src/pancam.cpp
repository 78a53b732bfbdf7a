#include <cosp/error.hpp>
#include <cosp/pancam.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

namespace cosp
{

namespace
{

constexpr int kMaxFixedPointIterations = 20;
constexpr double kFixedPointTolMM = 1e-4;
// Iterate well past the acceptance tolerance; the map contracts by ~1e-2 per step.
constexpr double kFixedPointTightMM = 1e-11;

struct FixedTimeTerms
{
    Eigen::Vector3d n;
    Eigen::Vector3d d;
    Eigen::Matrix3d r;
    double alpha;
    double x;
    double y;
};

FixedTimeTerms evaluate_at(const PanoramicCamera &cam, const EcefPoint &ground, double t)
{
    const ExteriorOrientation eo = eo_at(cam, t);
    FixedTimeTerms e;
    e.d = ground - eo.position;
    e.r = eo.rotation.matrix();
    e.n = e.r * e.d;
    if (!(e.n.z() < 0.0))
        throw Error(ErrorCode::BehindCamera, "ground point is behind the camera");
    e.alpha = std::atan2(e.n.x(), -e.n.z());
    e.x = cam.focal_mm * e.alpha;
    e.y = -imc_shift(cam, e.alpha) - cam.focal_mm * std::cos(e.alpha) * e.n.y() / e.n.z();
    return e;
}

} // namespace

CameraVector PanoramicCamera::parameters() const
{
    CameraVector p;
    p << position, velocity, attitude, attitude_rate, imc;
    return p;
}

void PanoramicCamera::set_parameters(const CameraVector &p)
{
    position = p.segment<3>(kX0);
    velocity = p.segment<3>(kX01);
    attitude = p.segment<3>(kOmega0);
    attitude_rate = p.segment<3>(kOmega01);
    imc = p(kImc);
}

const std::array<std::string, kCameraParams> &camera_param_names()
{
    static const std::array<std::string, kCameraParams> names = {
        "X0", "Y0", "Z0", "X01", "Y01", "Z01", "omega0", "phi0", "kappa0", "omega01", "phi01", "kappa01", "imc"};
    return names;
}

double scan_angle(double x_mm, double focal_mm) { return x_mm / focal_mm; }

double scan_time(double x_mm, const PanoramicCamera &cam)
{
    return (x_mm + cam.film_half_length_mm) / (2.0 * cam.film_half_length_mm);
}

ExteriorOrientation eo_at(const PanoramicCamera &cam, double t)
{
    const Eigen::Vector3d angles = cam.attitude + cam.attitude_rate * t;
    const Rotation3 r = euler_to_rotation(angles.x(), angles.y(), angles.z()) * Rotation3::from_matrix(cam.frame());
    return {cam.position + cam.velocity * t, r};
}

double imc_shift(const PanoramicCamera &cam, double alpha)
{
    return -cam.imc * cam.focal_mm * std::sin(alpha) * std::cos(cam.attitude.x());
}

ProjectionResult project_detailed(const PanoramicCamera &cam, const EcefPoint &ground)
{
    const double span = 2.0 * cam.film_half_length_mm;
    double t = 0.5;
    ProjectionResult res;
    for (int it = 1; it <= kMaxFixedPointIterations; ++it)
    {
        const FixedTimeTerms e = evaluate_at(cam, ground, t);
        const double residual = std::abs(e.x - (t * span - cam.film_half_length_mm));
        res.point = {e.x, e.y};
        res.t = t;
        res.iterations = it;
        res.fixed_point_residual_mm = residual;
        if (residual < kFixedPointTightMM)
            return res;
        t = scan_time(e.x, cam);
    }
    if (res.fixed_point_residual_mm > kFixedPointTolMM)
        throw Error(ErrorCode::NoConvergence, "scan-time fixed point did not converge");
    return res;
}

ImagePointMM project(const PanoramicCamera &cam, const EcefPoint &ground) { return project_detailed(cam, ground).point; }

ProjectionJacobian project_jacobian(const PanoramicCamera &cam, const EcefPoint &ground)
{
    const ProjectionResult pr = project_detailed(cam, ground);
    const double t = pr.t;
    const FixedTimeTerms e = evaluate_at(cam, ground, t);
    const double f = cam.focal_mm;
    const Eigen::Matrix3d m = cam.frame();
    const Eigen::Vector3d angles = cam.attitude + cam.attitude_rate * t;
    const auto dr = euler_rotation_derivatives(angles.x(), angles.y(), angles.z());

    // dN for each parameter at fixed t, plus dN/dt.
    Eigen::Matrix<double, 3, kCameraParams> dn = Eigen::Matrix<double, 3, kCameraParams>::Zero();
    dn.block<3, 3>(0, kX0) = -e.r;
    dn.block<3, 3>(0, kX01) = -e.r * t;
    for (int k = 0; k < 3; ++k)
    {
        const Eigen::Vector3d g = dr[static_cast<size_t>(k)] * m * e.d;
        dn.col(kOmega0 + k) = g;
        dn.col(kOmega01 + k) = g * t;
    }
    Eigen::Vector3d dn_dt = -e.r * cam.velocity;
    for (int k = 0; k < 3; ++k)
        dn_dt += dr[static_cast<size_t>(k)] * m * e.d * cam.attitude_rate(k);
    const Eigen::Matrix3d dn_dground = e.r;

    const double nx = e.n.x(), ny = e.n.y(), nz = e.n.z();
    const double sa = std::sin(e.alpha), ca = std::cos(e.alpha), cw = std::cos(cam.attitude.x());
    const double q = nx * nx + nz * nz;

    auto d_alpha = [&](const Eigen::Vector3d &d) { return (-nz * d.x() + nx * d.z()) / q; };
    auto d_y = [&](const Eigen::Vector3d &d) {
        const double da = d_alpha(d);
        return cam.imc * f * cw * ca * da + f * sa * (ny / nz) * da - f * ca * (d.y() / nz - ny * d.z() / (nz * nz));
    };

    Eigen::Matrix<double, 2, kCameraParams> fx;
    for (int k = 0; k < kCameraParams; ++k)
    {
        const Eigen::Vector3d d = dn.col(k);
        fx(0, k) = f * d_alpha(d);
        fx(1, k) = d_y(d);
    }
    fx(1, kImc) += f * sa * cw;
    fx(1, kOmega0) += -cam.imc * f * sa * std::sin(cam.attitude.x());

    const double fx_t = f * d_alpha(dn_dt);
    const double fy_t = d_y(dn_dt);
    const double dt_dx = 1.0 / (2.0 * cam.film_half_length_mm);
    const double gain = 1.0 / (1.0 - fx_t * dt_dx);

    ProjectionJacobian jac;
    jac.point = {e.x, e.y};
    jac.d_params.row(0) = fx.row(0) * gain;
    jac.d_params.row(1) = fx.row(1) + fy_t * dt_dx * jac.d_params.row(0);
    for (int k = 0; k < 3; ++k)
    {
        const Eigen::Vector3d d = dn_dground.col(k);
        jac.d_ground(0, k) = f * d_alpha(d) * gain;
        jac.d_ground(1, k) = d_y(d) + fy_t * dt_dx * jac.d_ground(0, k);
    }
    return jac;
}

Ray backproject_ray(const PanoramicCamera &cam, const ImagePointMM &p)
{
    const double t = scan_time(p.x, cam);
    const ExteriorOrientation eo = eo_at(cam, t);
    const double alpha = scan_angle(p.x, cam.focal_mm);
    const Eigen::Vector3d d_cam(cam.focal_mm * std::sin(alpha), p.y + imc_shift(cam, alpha), -cam.focal_mm * std::cos(alpha));
    return {eo.position, (eo.rotation.matrix().transpose() * d_cam).normalized()};
}

bool backproject_to_height(const PanoramicCamera &cam, const ImagePointMM &p, double h, EcefPoint &out)
{
    const Ray ray = backproject_ray(cam, p);
    return intersect_ray_height(ray.origin, ray.direction, h, out);
}

PixelPoint mm_to_pixel(const ImagePointMM &p, const ImageGeometry &g)
{
    return {0.5 * g.width + p.x / g.pitch_mm(), 0.5 * g.height - p.y / g.pitch_mm()};
}

ImagePointMM pixel_to_mm(const PixelPoint &p, const ImageGeometry &g)
{
    return {(p.col - 0.5 * g.width) * g.pitch_mm(), (0.5 * g.height - p.row) * g.pitch_mm()};
}

double expected_imc(double velocity_m_s, double altitude_m, double scan_rate_rad_s)
{
    return velocity_m_s / (altitude_m * scan_rate_rad_s);
}

double along_track_motion(double velocity_m_s, double scan_seconds) { return velocity_m_s * scan_seconds; }

double attitude_compensation_deg(double velocity_m_s, double altitude_m, double scan_seconds)
{
    // Ground-track displacement seen from altitude; the orbit-following frame turns by the orbital arc too.
    const double r = wgs84::a + altitude_m;
    const double ground = along_track_motion(velocity_m_s, scan_seconds) * wgs84::a / r;
    return rad_to_deg(std::atan(ground / altitude_m));
}

nlohmann::ordered_json camera_to_json(const PanoramicCamera &cam)
{
    nlohmann::ordered_json j;
    j["focal_length_mm"] = cam.focal_mm;
    j["film_half_length_mm"] = cam.film_half_length_mm;
    j["film_half_width_mm"] = cam.film_half_width_mm;
    j["pitch_um"] = cam.image.pitch_um;
    j["width_px"] = cam.image.width;
    j["height_px"] = cam.image.height;
    j["anchor"] = {{"lon", cam.anchor_lon}, {"lat", cam.anchor_lat}};
    nlohmann::ordered_json params;
    const CameraVector p = cam.parameters();
    for (int k = 0; k < kCameraParams; ++k)
        params[camera_param_names()[static_cast<size_t>(k)]] = p(k);
    j["parameters"] = params;
    j["metadata"] = cam.metadata;
    return j;
}

PanoramicCamera camera_from_json(const nlohmann::json &j)
{
    try
    {
        PanoramicCamera cam;
        cam.focal_mm = j.at("focal_length_mm").get<double>();
        cam.film_half_length_mm = j.at("film_half_length_mm").get<double>();
        cam.film_half_width_mm = j.at("film_half_width_mm").get<double>();
        cam.image.pitch_um = j.at("pitch_um").get<double>();
        cam.image.width = j.at("width_px").get<int>();
        cam.image.height = j.at("height_px").get<int>();
        cam.anchor_lon = j.at("anchor").at("lon").get<double>();
        cam.anchor_lat = j.at("anchor").at("lat").get<double>();
        CameraVector p;
        for (int k = 0; k < kCameraParams; ++k)
            p(k) = j.at("parameters").at(camera_param_names()[static_cast<size_t>(k)]).get<double>();
        cam.set_parameters(p);
        if (j.contains("metadata"))
            cam.metadata = j.at("metadata");
        if (!(cam.focal_mm > 0.0) || !(cam.film_half_length_mm > 0.0) || !(cam.film_half_width_mm > 0.0) || !(cam.image.pitch_um > 0.0))
            throw Error(ErrorCode::InvalidArgument, "camera focal length, film extents and pitch must be positive");
        return cam;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed camera json: ") + e.what());
    }
}

void write_camera(const std::filesystem::path &path, const PanoramicCamera &cam)
{
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << camera_to_json(cam).dump(2) << "\n";
}

PanoramicCamera read_camera(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read camera " + path.string());
    nlohmann::json j;
    try
    {
        in >> j;
    }
    catch (const std::exception &e)
    {
        throw Error(ErrorCode::InvalidArgument, "camera file is not json: " + path.string());
    }
    return camera_from_json(j);
}

} // namespace cosp
