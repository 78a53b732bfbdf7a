#include "camera_fixture.hpp"

#include <cosp/error.hpp>
#include <cosp/pancam.hpp>

#include <doctest.h>

#include <random>

using namespace cosp;
using cosp::test::make_camera;
using cosp::test::random_visible_point;

namespace
{

// Distance from p to the ray, and the ray's point at the radius |p| (the point's own sphere).
double sphere_closure(const Ray &ray, const EcefPoint &p)
{
    const double r = p.norm();
    const double b = ray.origin.dot(ray.direction);
    const double c = ray.origin.squaredNorm() - r * r;
    const double s = -b - std::sqrt(b * b - c);
    return (ray.origin + s * ray.direction - p).norm();
}

} // namespace

TEST_CASE("scan angle")
{
    CHECK(scan_angle(0.0, 609.6) == 0.0);
    CHECK(scan_angle(372.4, 609.6) == doctest::Approx(0.6109).epsilon(1e-4));
    CHECK(rad_to_deg(scan_angle(372.4, 609.6)) == doctest::Approx(35.0).epsilon(1e-4));
    CHECK(scan_angle(-372.4, 609.6) == -scan_angle(372.4, 609.6));
}

TEST_CASE("scan time is linear over the film length")
{
    const PanoramicCamera cam = make_camera(true);
    CHECK(scan_time(-cam.film_half_length_mm, cam) == 0.0);
    CHECK(scan_time(0.0, cam) == 0.5);
    CHECK(scan_time(cam.film_half_length_mm, cam) == 1.0);
    CHECK(scan_time(10.0, cam) > scan_time(9.999, cam));
}

TEST_CASE("exterior orientation at scan time")
{
    PanoramicCamera cam = make_camera(true);
    cam.attitude_rate = {0.01, -0.002, 0.003};
    const ExteriorOrientation e0 = eo_at(cam, 0.0);
    CHECK((e0.position - cam.position).norm() == 0.0);
    const Rotation3 r0 = euler_to_rotation(cam.attitude.x(), cam.attitude.y(), cam.attitude.z()) * Rotation3::from_matrix(cam.frame());
    CHECK((e0.rotation.matrix() - r0.matrix()).cwiseAbs().maxCoeff() < 1e-15);

    PanoramicCamera moving;
    moving.position = {1.0, 2.0, 3.0};
    moving.velocity = {0.0, -2800.0, 0.0};
    CHECK(eo_at(moving, 1.0).position.y() == doctest::Approx(2.0 - 2800.0));

    PanoramicCamera still = make_camera(false);
    still.velocity.setZero();
    CHECK((eo_at(still, 0.5).position - eo_at(still, 0.0).position).norm() == 0.0);
    CHECK((eo_at(still, 0.5).rotation.matrix() - eo_at(still, 0.0).rotation.matrix()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("imc shift")
{
    PanoramicCamera cam;
    cam.imc = 0.014;
    cam.attitude.x() = deg_to_rad(-15.0);
    CHECK(imc_shift(cam, 0.0) == 0.0);
    CHECK(imc_shift(cam, deg_to_rad(35.0)) == doctest::Approx(-4.728).epsilon(1e-3));
    cam.imc = 0.0;
    for (double a = -0.6; a <= 0.6; a += 0.1)
        CHECK(imc_shift(cam, a) == 0.0);
}

TEST_CASE("imc shift derivative is even in alpha and largest at the format center")
{
    PanoramicCamera cam;
    cam.imc = 0.014;
    cam.attitude.x() = deg_to_rad(15.0);
    const double h = 1e-4;
    auto slope = [&](double x) {
        return (imc_shift(cam, scan_angle(x + h, cam.focal_mm)) - imc_shift(cam, scan_angle(x - h, cam.focal_mm))) / (2 * h);
    };
    const double center = std::abs(slope(0.0));
    for (double x = 10.0; x <= 370.0; x += 10.0)
    {
        CHECK(slope(x) == doctest::Approx(slope(-x)).epsilon(1e-7));
        CHECK(std::abs(slope(x)) < center);
    }
}

TEST_CASE("axis point projects to the format center")
{
    PanoramicCamera cam;
    cam.anchor_lon = 20.0;
    cam.anchor_lat = 30.0;
    const Eigen::Matrix3d m = cam.frame();
    const EcefPoint ground = geodetic_to_ecef({20.0, 30.0, 0.0});
    cam.position = ground + m.row(2).transpose() * 170000.0;
    const ImagePointMM p = project(cam, ground);
    CHECK(std::abs(p.x) < 1e-12);
    CHECK(std::abs(p.y) < 1e-12);
}

TEST_CASE("projection fixed point is self consistent")
{
    std::mt19937_64 rng(7);
    PanoramicCamera cam = make_camera(true);
    cam.attitude_rate = {deg_to_rad(0.9), deg_to_rad(-0.05), deg_to_rad(0.02)};
    cam.imc = 0.0025;
    for (int i = 0; i < 2000; ++i)
    {
        const ProjectionResult r = project_detailed(cam, random_visible_point(cam, rng));
        REQUIRE(r.iterations <= 20);
        REQUIRE(std::abs(scan_time(r.point.x, cam) - r.t) < 1e-8);
        REQUIRE(r.fixed_point_residual_mm < 1e-4);
    }
}

TEST_CASE("project and backproject are dual")
{
    std::mt19937_64 rng(17);
    for (bool fore : {true, false})
    {
        PanoramicCamera cam = make_camera(fore);
        cam.attitude_rate = {deg_to_rad(0.8), deg_to_rad(-0.04), deg_to_rad(0.01)};
        cam.velocity += Eigen::Vector3d(60.0, -410.0, 30.0);
        cam.imc = 0.014;
        double worst = 0.0;
        for (int i = 0; i < 10000; ++i)
        {
            const EcefPoint g = random_visible_point(cam, rng);
            const ImagePointMM p = project(cam, g);
            worst = std::max(worst, sphere_closure(backproject_ray(cam, p), g));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("zero rates reduce to a central perspective along each scan line")
{
    // Independent pinhole oracle: x_pin = -f Nx/Nz, y_pin = -f Ny/Nz with N = R (X - C).
    std::mt19937_64 rng(23);
    PanoramicCamera cam = make_camera(true);
    cam.velocity.setZero();
    const Eigen::Matrix3d r = eo_at(cam, 0.0).rotation.matrix();
    for (int i = 0; i < 1000; ++i)
    {
        const EcefPoint g = random_visible_point(cam, rng);
        const Eigen::Vector3d n = r * (g - cam.position);
        const double x_pin = -cam.focal_mm * n.x() / n.z();
        const double y_pin = -cam.focal_mm * n.y() / n.z();
        const ImagePointMM p = project(cam, g);
        const double alpha = p.x / cam.focal_mm;
        REQUIRE(std::abs(p.x - cam.focal_mm * std::atan(x_pin / cam.focal_mm)) < 1e-9);
        REQUIRE(std::abs(p.y - y_pin * std::cos(alpha)) < 1e-9);
    }
    // on the alpha = 0 scan line both models coincide exactly
    EcefPoint on_axis;
    backproject_to_height(cam, {0.0, 11.0}, 500.0, on_axis);
    const Eigen::Vector3d n = r * (on_axis - cam.position);
    const ImagePointMM p = project(cam, on_axis);
    CHECK(std::abs(p.x) < 1e-9);
    CHECK(std::abs(p.y - (-cam.focal_mm * n.y() / n.z())) < 1e-9);
}

TEST_CASE("analytic projection jacobian matches central differences")
{
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double steps[kCameraParams] = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5};
    for (int trial = 0; trial < 50; ++trial)
    {
        PanoramicCamera cam = make_camera(trial % 2 == 0);
        cam.attitude += Eigen::Vector3d(u(rng), u(rng), u(rng)) * 0.02;
        cam.attitude_rate = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 0.02;
        cam.velocity += Eigen::Vector3d(u(rng), u(rng), u(rng)) * 1500.0;
        cam.imc = 0.02 * u(rng);
        const EcefPoint g = random_visible_point(cam, rng);
        const ProjectionJacobian jac = project_jacobian(cam, g);

        const CameraVector p0 = cam.parameters();
        for (int k = 0; k < kCameraParams; ++k)
        {
            PanoramicCamera plus = cam, minus = cam;
            CameraVector pp = p0, pm = p0;
            pp(k) += steps[k];
            pm(k) -= steps[k];
            plus.set_parameters(pp);
            minus.set_parameters(pm);
            const ImagePointMM a = project(plus, g), b = project(minus, g);
            const double fdx = (a.x - b.x) / (2 * steps[k]), fdy = (a.y - b.y) / (2 * steps[k]);
            REQUIRE(std::abs(jac.d_params(0, k) - fdx) <= 1e-5 * std::abs(fdx) + 1e-9);
            INFO("parameter " << k);
            REQUIRE(std::abs(jac.d_params(1, k) - fdy) <= 1e-5 * std::abs(fdy) + 1e-9);
        }
        for (int k = 0; k < 3; ++k)
        {
            EcefPoint gp = g, gm = g;
            gp(k) += 0.5;
            gm(k) -= 0.5;
            const ImagePointMM a = project(cam, gp), b = project(cam, gm);
            REQUIRE(std::abs(jac.d_ground(0, k) - (a.x - b.x)) <= 1e-5 * std::abs(a.x - b.x) + 1e-9);
            REQUIRE(std::abs(jac.d_ground(1, k) - (a.y - b.y)) <= 1e-5 * std::abs(a.y - b.y) + 1e-9);
        }
    }
}

TEST_CASE("nadir ray points at the Earth center on the equator")
{
    PanoramicCamera cam;
    cam.anchor_lon = 0.0;
    cam.anchor_lat = 0.0;
    cam.position = geodetic_to_ecef({0.0, 0.0, 170000.0});
    const Ray ray = backproject_ray(cam, {0.0, 0.0});
    CHECK((ray.direction + cam.position.normalized()).norm() < 1e-9);
    CHECK((ray.origin - cam.position).norm() == 0.0);
}

TEST_CASE("fore and aft rays of the same ground point intersect")
{
    std::mt19937_64 rng(31);
    const PanoramicCamera fore = make_camera(true), aft = make_camera(false);
    std::uniform_real_distribution<double> u(-5000.0, 5000.0);
    const Eigen::Matrix3d m = fore.frame();
    for (int i = 0; i < 200; ++i)
    {
        const EcefPoint g = geodetic_to_ecef({96.5, 44.0, 1000.0}) + m.transpose() * Eigen::Vector3d(u(rng), u(rng), 0.1 * u(rng));
        const Ray a = backproject_ray(fore, project(fore, g)), b = backproject_ray(aft, project(aft, g));
        const Eigen::Vector3d w = a.origin - b.origin;
        const Eigen::Vector3d nrm = a.direction.cross(b.direction);
        REQUIRE(std::abs(w.dot(nrm)) / nrm.norm() < 1e-6);
    }
}

TEST_CASE("points behind the camera are rejected")
{
    const PanoramicCamera cam = make_camera(true);
    const EcefPoint above = cam.position + cam.position.normalized() * 1000.0;
    try
    {
        project(cam, above);
        FAIL("expected BehindCamera");
    }
    catch (const Error &e)
    {
        CHECK(e.code() == ErrorCode::BehindCamera);
    }
}

TEST_CASE("film millimeters to pixels")
{
    const ImageGeometry g{106400, 8000, 7.0};
    const PixelPoint c = mm_to_pixel({0.0, 0.0}, g);
    CHECK(c.col == 53200.0);
    CHECK(c.row == 4000.0);
    CHECK(745.0 / g.pitch_mm() == doctest::Approx(106428.57).epsilon(1e-7));
    CHECK(mm_to_pixel({1.0, 0.0}, g).col - c.col == doctest::Approx(142.857142857).epsilon(1e-10));
    CHECK(mm_to_pixel({0.0, 1.0}, g).row < c.row);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-372.0, 372.0);
    for (int i = 0; i < 1000; ++i)
    {
        const ImagePointMM p{u(rng), u(rng) / 14.0};
        const ImagePointMM back = pixel_to_mm(mm_to_pixel(p, g), g);
        REQUIRE(std::abs(back.x - p.x) < 1e-12);
        REQUIRE(std::abs(back.y - p.y) < 1e-12);
    }
    CHECK_FALSE(g.contains(mm_to_pixel({400.0, 0.0}, g)));
}

TEST_CASE("camera json round trip")
{
    PanoramicCamera cam = make_camera(false);
    cam.imc = 0.0002;
    cam.metadata = {{"mission", "1112"}, {"scene", "DS1112-1071DA029"}};
    const PanoramicCamera back = camera_from_json(camera_to_json(cam));
    CHECK((back.parameters() - cam.parameters()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.image.width == cam.image.width);
    CHECK(back.metadata["scene"] == "DS1112-1071DA029");
    nlohmann::json broken = camera_to_json(cam);
    broken["parameters"].erase("imc");
    CHECK_THROWS_AS(camera_from_json(broken), Error);
}

TEST_CASE("parameter plausibility from orbit and scan constants")
{
    // V = 7.7 km/s, H = 170 km, delta = 3.3 rad/s, 0.36 s scan
    CHECK(expected_imc(7700.0, 170000.0, 3.3) == doctest::Approx(0.0137).epsilon(1e-3));
    CHECK(expected_imc(7700.0, 170000.0, 3.3) == doctest::Approx(0.014).epsilon(0.02));
    CHECK(along_track_motion(7700.0, 0.36) == doctest::Approx(2772.0));
    CHECK(along_track_motion(7700.0, 0.36) == doctest::Approx(2800.0).epsilon(0.02));
    CHECK(attitude_compensation_deg(7700.0, 170000.0, 0.36) == doctest::Approx(0.9).epsilon(0.02));
}
