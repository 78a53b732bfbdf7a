#include <cosp/error.hpp>
#include <cosp/geo.hpp>
#include <cosp/utm.hpp>

#include <doctest.h>

#include <Eigen/Dense>

#include <random>

using namespace cosp;

TEST_CASE("euler_to_rotation identity and inverse")
{
    CHECK((euler_to_rotation(0, 0, 0).matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
    const Rotation3 a = euler_to_rotation(0.7, 0, 0), b = euler_to_rotation(-0.7, 0, 0);
    CHECK(((a * b).matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("euler_to_rotation matches explicit axis product")
{
    // Element-wise product Rz(0.3) Ry(-0.2) Rx(0.1) evaluated independently with numpy.
    Eigen::Matrix3d expected;
    expected << 0.9362933635841992, 0.2750958473182437, 0.21835066314633444, -0.28962947762551555, 0.9564250858492325,
        0.03695701352462508, -0.19866933079506122, -0.09784339500725571, 0.975170327201816;
    const Rotation3 r = euler_to_rotation(0.1, -0.2, 0.3);
    CHECK((r.matrix() - expected).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((r.matrix().transpose() * r.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(r.matrix().determinant() - 1.0) < 1e-12);
}

TEST_CASE("rotation round trip through recovered angles")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-kPi / 2 + 1e-3, kPi / 2 - 1e-3);
    for (int i = 0; i < 2000; ++i)
    {
        const Rotation3 r = euler_to_rotation(u(rng), u(rng), u(rng));
        const Eigen::Vector3d a = rotation_to_euler(r);
        const Rotation3 back = euler_to_rotation(a.x(), a.y(), a.z());
        REQUIRE((back.matrix() - r.matrix()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("euler derivative matrices match finite differences")
{
    const double w = 0.2, p = -0.4, k = 1.1, h = 1e-6;
    const auto d = euler_rotation_derivatives(w, p, k);
    const Eigen::Matrix3d fd_w = (euler_to_rotation(w + h, p, k).matrix() - euler_to_rotation(w - h, p, k).matrix()) / (2 * h);
    const Eigen::Matrix3d fd_p = (euler_to_rotation(w, p + h, k).matrix() - euler_to_rotation(w, p - h, k).matrix()) / (2 * h);
    const Eigen::Matrix3d fd_k = (euler_to_rotation(w, p, k + h).matrix() - euler_to_rotation(w, p, k - h).matrix()) / (2 * h);
    CHECK((d[0] - fd_w).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((d[1] - fd_p).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((d[2] - fd_k).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("geodetic_to_ecef axis definitions")
{
    const EcefPoint eq = geodetic_to_ecef({0, 0, 0});
    CHECK(eq.x() == doctest::Approx(6378137.0).epsilon(1e-15));
    CHECK(std::abs(eq.y()) < 1e-9);
    CHECK(std::abs(eq.z()) < 1e-9);
    const EcefPoint pole = geodetic_to_ecef({0, 90, 0});
    CHECK(std::abs(pole.x()) < 1e-9);
    CHECK(std::abs(pole.z() - 6356752.314) < 1e-3);
}

TEST_CASE("geodetic_to_ecef matches an external geodesy implementation")
{
    // pyproj 3.7.1, EPSG:4979 -> EPSG:4978
    const EcefPoint p = geodetic_to_ecef({96.24, 44.59, 187270.0});
    CHECK(std::abs(p.x() - -509017.26904087886) < 1e-6);
    CHECK(std::abs(p.y() - 4655311.276771756) < 1e-6);
    CHECK(std::abs(p.z() - 4586484.869482383) < 1e-6);
}

TEST_CASE("geodetic round trip on random points")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lon(-180.0, 180.0), lat(-90.0, 90.0), h(-500.0, 300000.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i)
    {
        const GeodeticPoint g{lon(rng), lat(rng), h(rng)};
        const EcefPoint e = geodetic_to_ecef(g);
        const EcefPoint back = geodetic_to_ecef(ecef_to_geodetic(e));
        worst = std::max(worst, (back - e).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("ecef_to_geodetic rejects the Earth center")
{
    CHECK_THROWS_AS(ecef_to_geodetic(EcefPoint(10.0, -20.0, 5.0)), Error);
}

TEST_CASE("longitude normalisation")
{
    CHECK(normalize_lon(180.0) == 180.0);
    CHECK(normalize_lon(-180.0) == 180.0);
    CHECK(normalize_lon(190.0) == doctest::Approx(-170.0));
    CHECK(ecef_to_geodetic(geodetic_to_ecef({-180.0, 10.0, 0.0})).lon == doctest::Approx(180.0));
}

TEST_CASE("ray intersection with a height surface")
{
    const EcefPoint top = geodetic_to_ecef({10.0, 45.0, 170000.0});
    const EcefPoint target = geodetic_to_ecef({10.05, 45.2, 1234.5});
    EcefPoint hit;
    REQUIRE(intersect_ray_height(top, target - top, 1234.5, hit));
    CHECK((hit - target).norm() < 1e-6);
    CHECK_FALSE(intersect_ray_height(top, top, 0.0, hit));
}

TEST_CASE("nmad examples")
{
    const std::vector<double> flat{5, 5, 5, 5};
    CHECK(nmad(flat) == 0.0);
    const std::vector<double> v{1, 2, 3, 4, 100};
    CHECK(nmad(v) == doctest::Approx(1.4826).epsilon(1e-15));
    CHECK_THROWS_AS(nmad(std::vector<double>{}), Error);
    const std::vector<double> nan_only{std::nan(""), std::nan("")};
    CHECK_THROWS_AS(nmad(nan_only), Error);
}

TEST_CASE("nmad is translation invariant and absolutely homogeneous")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 20; ++trial)
    {
        std::vector<double> v(101), w(101);
        for (auto &x : v)
            x = n(rng);
        const double a = (trial % 2 ? -1.0 : 1.0) * (0.5 + trial), c = 10.0 * trial - 50.0;
        for (size_t i = 0; i < v.size(); ++i)
            w[i] = a * v[i] + c;
        CHECK(nmad(w) == doctest::Approx(std::abs(a) * nmad(v)).epsilon(1e-10));
    }
}

TEST_CASE("utm matches an external projection library")
{
    struct Case
    {
        int zone;
        bool north;
        double lon, lat, e, n;
    };
    // pyproj 3.7.1, EPSG:4326 -> EPSG:326zz / 327zz
    const Case cases[] = {{47, true, 96.24, 44.59, 280922.686026799, 4941112.0133669535},
                          {45, false, 86.9, -27.95, 490163.2102388365, 6908332.341882629},
                          {45, true, 86.9, 27.95, 490163.2102388365, 3091667.658117371},
                          {45, true, 84.1, 60.0, 338279.2491081225, 6654956.71994362}};
    for (const auto &c : cases)
    {
        const UtmProjection utm(c.zone, c.north);
        const MapPoint m = utm.forward(c.lon, c.lat);
        CHECK(std::abs(m.easting - c.e) < 1e-3);
        CHECK(std::abs(m.northing - c.n) < 1e-3);
        double lon, lat;
        utm.inverse(m, lon, lat);
        CHECK(std::abs(lon - c.lon) < 1e-10);
        CHECK(std::abs(lat - c.lat) < 1e-10);
    }
    CHECK(UtmProjection::from_crs("EPSG:32645").zone() == 45);
    CHECK_FALSE(UtmProjection::from_crs("EPSG:32745").north());
    CHECK(UtmProjection::for_lonlat(96.24, 44.59).crs() == "EPSG:32647");
}
