#include <cosp/error.hpp>
#include <cosp/geo.hpp>
#include <cosp/surface.hpp>
#include <cosp/synth.hpp>

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace cosp;

namespace
{

const SyntheticScene &scene()
{
    static const SyntheticScene s = make_stereo_scene(SceneConfig{}, 7);
    return s;
}

// Terrain points visible in both films with their film coordinates.
struct Pair
{
    EcefPoint ground;
    ImagePointMM a, b;
};

std::vector<Pair> visible_pairs(const SyntheticScene &s, int n, uint64_t seed)
{
    const PanoramicCamera &ca = s.fore.camera, &cb = s.aft.camera;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uc(50.0, ca.image.width - 50.0), ur(50.0, ca.image.height - 50.0);
    std::vector<Pair> out;
    while (static_cast<int>(out.size()) < n)
    {
        const PixelPoint pa{uc(rng), ur(rng)};
        const Ray ray = backproject_ray(ca, pixel_to_mm(pa, ca.image));
        EcefPoint g;
        if (!intersect_terrain(s.terrain, ray.origin, ray.direction, g))
            continue;
        const ImagePointMM mb = project(cb, g);
        if (!cb.image.contains(mm_to_pixel(mb, cb.image)))
            continue;
        out.push_back({g, pixel_to_mm(pa, ca.image), mb});
    }
    return out;
}

RasterGrid analytic_grid(const Terrain &t, const GeoTransform &gt, int w, int h)
{
    RasterGrid g(w, h, 0.0f, gt);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const Eigen::Vector2d p = g.cell_center(c, r);
            g.put(c, r, t.height_local(p.x(), p.y()));
        }
    return g;
}

Terrain rough_terrain(double half_extent_m, int hills, uint64_t seed)
{
    Terrain t;
    t.base = 2000.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-half_extent_m, half_extent_m), amp(-300.0, 500.0), sig(1500.0, 4000.0);
    for (int i = 0; i < hills; ++i)
        t.hills.push_back({pos(rng), pos(rng), amp(rng), sig(rng)});
    return t;
}

// DEM whose surface maps onto the reference under the blended tile transforms.
RasterGrid inject(const RasterGrid &ref, const std::vector<CoregTile> &tiles, double ov)
{
    RasterGrid dem(ref.width(), ref.height(), 0.0f, ref.geotransform());
    for (int r = 0; r < ref.height(); ++r)
        for (int c = 0; c < ref.width(); ++c)
        {
            const Eigen::Vector2d q = ref.cell_center(c, r);
            double z = ref.at(c, r);
            bool ok = true;
            for (int it = 0; it < 30; ++it)
            {
                const Eigen::Vector3d d = blended_offset(tiles, ref.geotransform(), ov, {q.x(), q.y(), z});
                const auto h = ref.sample_map(q.x() + d.x(), q.y() + d.y());
                if (!h)
                {
                    ok = false;
                    break;
                }
                z = *h - d.z();
            }
            if (ok)
                dem.put(c, r, z);
            else
                dem.set_nodata(c, r);
        }
    return dem;
}

} // namespace

TEST_CASE("noiseless triangulation recovers the ground point")
{
    const auto &s = scene();
    double worst = 0.0;
    for (const Pair &p : visible_pairs(s, 500, 1))
    {
        const Triangulation t = triangulate(s.fore.camera, s.aft.camera, p.a, p.b);
        worst = std::max(worst, (t.point - p.ground).norm());
        CHECK(t.miss_m < 1e-6);
    }
    MESSAGE("worst triangulation error " << worst << " m");
    CHECK(worst < 1e-6);
}

TEST_CASE("linear system residual equals the weighted reprojection residual")
{
    const auto &s = scene();
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.007);
    for (const Pair &p : visible_pairs(s, 200, 2))
    {
        const ImagePointMM a{p.a.x + noise(rng), p.a.y + noise(rng)}, b{p.b.x + noise(rng), p.b.y + noise(rng)};
        const Triangulation t = triangulate(s.fore.camera, s.aft.camera, a, b);
        int k = 0;
        for (const auto &[cam, obs] : {std::pair{&s.fore.camera, a}, std::pair{&s.aft.camera, b}})
        {
            const double alpha = scan_angle(obs.x, cam->focal_mm);
            const ExteriorOrientation eo = eo_at(*cam, scan_time(obs.x, *cam));
            const Eigen::Vector3d n = eo.rotation.matrix() * (t.point - eo.position);
            // tangent-space reprojection at the observation's scan time
            const double tan_proj = n.x() / -n.z(), k_proj = -n.y() / n.z();
            const double k_obs = (obs.y + imc_shift(*cam, alpha)) / (cam->focal_mm * std::cos(alpha));
            // relative to the size of the terms, which cancel down to the residual
            CHECK(std::abs(t.residual(k) - n.z() * (std::tan(alpha) - tan_proj)) < 1e-9 * n.norm());
            CHECK(std::abs(t.residual(k + 1) - n.z() * (k_obs - k_proj)) < 1e-9 * n.norm());
            k += 2;
        }
    }
}

TEST_CASE("vertical error under one pixel of image noise follows the base-to-height ratio")
{
    const auto &s = scene();
    const PanoramicCamera &ca = s.fore.camera, &cb = s.aft.camera;
    const double pitch = ca.image.pitch_mm();
    // along-track ground size of one pixel, averaged over both films at the format centre
    double gsd = 0.0;
    for (const PanoramicCamera *cam : {&ca, &cb})
    {
        EcefPoint g0, g1;
        REQUIRE(backproject_to_height(*cam, {0.0, 0.0}, s.config.base_height_m, g0));
        REQUIRE(backproject_to_height(*cam, {0.0, pitch}, s.config.base_height_m, g1));
        gsd += 0.5 * (g1 - g0).norm();
    }
    std::mt19937_64 rng(11);
    std::normal_distribution<double> noise(0.0, pitch);
    const UtmProjection utm = UtmProjection::for_lonlat(s.config.lon, s.config.lat);
    double sum2 = 0.0;
    int n = 0;
    for (const Pair &p : visible_pairs(s, 4000, 12))
    {
        const ImagePointMM a{p.a.x + noise(rng), p.a.y + noise(rng)}, b{p.b.x + noise(rng), p.b.y + noise(rng)};
        const double dz = to_map(triangulate(ca, cb, a, b).point, utm).z() - to_map(p.ground, utm).z();
        sum2 += dz * dz;
        ++n;
    }
    const double rms = std::sqrt(sum2 / n);
    // parallax noise of two independent unit-variance observations
    const double expected = std::sqrt(2.0) * gsd / 0.54;
    MESSAGE("vertical rms " << rms << " m, expected " << expected << " m (gsd " << gsd << " m)");
    CHECK(std::abs(rms / expected - 1.0) < 0.15);
}

TEST_CASE("triangulation contract errors")
{
    const auto &s = scene();
    const Pair p = visible_pairs(s, 1, 4).front();
    CHECK_THROWS_AS(triangulate(s.fore.camera, s.fore.camera, p.a, p.a), Error);
    try
    {
        triangulate(s.fore.camera, s.fore.camera, p.a, p.a);
    }
    catch (const Error &e)
    {
        CHECK(e.code() == ErrorCode::NearParallelRays);
    }
    TriangulateOptions strict;
    strict.max_miss_m = 5.0;
    const ImagePointMM off{p.b.x + 0.5, p.b.y};
    try
    {
        triangulate(s.fore.camera, s.aft.camera, p.a, off, strict);
        FAIL("expected DivergentPoint");
    }
    catch (const Error &e)
    {
        CHECK(e.code() == ErrorCode::DivergentPoint);
    }
}

TEST_CASE("gridding a plane reproduces it")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 20000; ++i)
        pts.emplace_back(u(rng), u(rng), 100.0);
    const RasterGrid g = grid_dem(pts, 10.0);
    REQUIRE(g.count_valid() > 2000);
    for (int r = 0; r < g.height(); ++r)
        for (int c = 0; c < g.width(); ++c)
            if (g.valid(c, r))
                REQUIRE(std::abs(g.at(c, r) - 100.0) < 1e-6);
}

TEST_CASE("a single point fills exactly one cell")
{
    const std::vector<Eigen::Vector3d> pts{{1234.5, 5678.9, 42.0}};
    const RasterGrid g = grid_dem(pts, GeoTransform::north_up(1200.0, 5700.0, 10.0), 8, 8);
    CHECK(g.count_valid() == 1);
    CHECK(g.valid(3, 2));
    CHECK(g.at(3, 2) == 42.0f);
    CHECK_THROWS_AS(grid_dem(std::vector<Eigen::Vector3d>{}, 10.0), Error);
}

TEST_CASE("gridding is invariant to point order")
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 300.0), z(0.0, 50.0);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 5000; ++i)
        pts.emplace_back(u(rng), u(rng), z(rng));
    const RasterGrid g0 = grid_dem(pts, 10.0);
    for (int trial = 0; trial < 3; ++trial)
    {
        std::shuffle(pts.begin(), pts.end(), rng);
        const RasterGrid g = grid_dem(pts, 10.0);
        REQUIRE(std::equal(g0.values().begin(), g0.values().end(), g.values().begin(), g.values().end()));
    }
}

TEST_CASE("gridded hill cloud matches the analytic surface")
{
    Terrain t;
    t.base = 1000.0;
    t.hills = {{0.0, 0.0, 300.0, 700.0}, {900.0, -600.0, -150.0, 400.0}, {-800.0, 700.0, 200.0, 500.0}};
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-2000.0, 2000.0);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 4000000; ++i)
    {
        const double e = u(rng), n = u(rng);
        pts.emplace_back(e, n, t.height_local(e, n));
    }
    const RasterGrid g = grid_dem(pts, GeoTransform::north_up(-2000.0, 2000.0, 10.0), 400, 400);
    double s = 0.0;
    int cnt = 0;
    for (int r = 1; r < 399; ++r)
        for (int c = 1; c < 399; ++c)
        {
            const Eigen::Vector2d p = g.cell_center(c, r);
            if (!g.valid(c, r) || rad_to_deg(std::atan(t.gradient_local(p.x(), p.y()).norm())) >= 30.0)
                continue;
            const double d = g.at(c, r) - t.height_local(p.x(), p.y());
            s += d * d;
            ++cnt;
        }
    const double rms = std::sqrt(s / cnt);
    MESSAGE("gridding rms " << rms << " m over " << cnt << " cells");
    CHECK(cnt > 150000);
    CHECK(rms < 0.5);
}

TEST_CASE("dh statistics")
{
    const GeoTransform gt = GeoTransform::north_up(0.0, 1000.0, 10.0);
    RasterGrid ref(100, 100, 0.0f, gt), dem(100, 100, 0.0f, gt);
    for (int r = 0; r < 100; ++r)
        for (int c = 0; c < 100; ++c)
        {
            ref.put(c, r, 500.0 + c + 0.5 * r);
            dem.put(c, r, 505.0 + c + 0.5 * r);
        }
    const DhStats s = dh_stats(dem, ref);
    CHECK(s.median == doctest::Approx(5.0));
    CHECK(s.nmad == doctest::Approx(0.0).scale(1.0).epsilon(1e-4));
    CHECK(s.valid_fraction == 1.0);

    // masking: only stable cells count
    RasterGrid mask(100, 100, 0.0f, gt);
    size_t stable = 0;
    for (int r = 0; r < 100; ++r)
        for (int c = 0; c < 100; ++c)
            if ((c * 7 + r * 3) % 5 != 0)
            {
                mask.put(c, r, 1.0);
                ++stable;
            }
    dem.set_nodata(1, 1);
    dem.set_nodata(2, 1);
    const size_t expected = stable - ((1 * 7 + 1 * 3) % 5 != 0) - ((2 * 7 + 1 * 3) % 5 != 0);
    RasterGrid diff;
    const DhStats m = dh_stats(dem, ref, &mask, &diff);
    CHECK(m.count == expected);
    CHECK(diff.count_valid() == expected);

    RasterGrid other(100, 100, 0.0f, GeoTransform::north_up(10.0, 1000.0, 10.0));
    CHECK_THROWS_AS(dh_stats(dem, other), Error);
}

TEST_CASE("NMAD of Gaussian differences")
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 4.0);
    const GeoTransform gt = GeoTransform::north_up(0.0, 0.0, 30.0);
    RasterGrid ref(300, 300, 0.0f, gt), dem(300, 300, 0.0f, gt);
    for (int r = 0; r < 300; ++r)
        for (int c = 0; c < 300; ++c)
            dem.put(c, r, n(rng));
    const DhStats s = dh_stats(dem, ref);
    CHECK(s.nmad == doctest::Approx(4.0).epsilon(0.05));

    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> v(1000000);
    for (double &x : v)
        x = unit(rng);
    CHECK(std::abs(nmad(v) - 1.0) < 0.01);
}

TEST_CASE("coregistration of identical DEMs is the identity")
{
    const Terrain t = rough_terrain(15000.0, 30, 1);
    const RasterGrid ref = analytic_grid(t, GeoTransform::north_up(-15000.0, 15000.0, 200.0), 150, 150);
    const CoregResult r = coregister_tiles(ref, ref, nullptr);
    for (const CoregTile &tile : r.tiles)
    {
        CHECK(tile.transform.linear.cwiseAbs().maxCoeff() < 1e-8);
        CHECK(tile.transform.translation.norm() < 1e-8);
    }
    CHECK(r.after.nmad == 0.0);
    CHECK(std::equal(r.corrected.values().begin(), r.corrected.values().end(), ref.values().begin()));
}

TEST_CASE("coregistration recovers injected per-tile affines")
{
    const Terrain t = rough_terrain(32000.0, 160, 2);
    const RasterGrid ref = analytic_grid(t, GeoTransform::north_up(-30000.0, 30000.0, 200.0), 300, 300);
    CoregOptions opt;
    std::vector<CoregTile> truth = coreg_tile_layout(ref, opt);
    REQUIRE(truth.size() == 16);
    const double ov = coreg_overlap_cells(ref, opt);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> tr(-25.0, 25.0), lin(-1e-4, 1e-4);
    for (CoregTile &tile : truth)
    {
        const Eigen::Vector2d c = ref.geotransform().apply(tile.col + 0.5 * tile.width, tile.row + 0.5 * tile.height);
        tile.transform.center = {c.x(), c.y(), t.base};
        tile.transform.translation = {tr(rng), tr(rng), tr(rng)};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                tile.transform.linear(i, j) = lin(rng);
    }
    const RasterGrid dem = inject(ref, truth, ov);
    const CoregResult r = coregister_tiles(dem, ref, nullptr, opt);
    REQUIRE(r.tiles.size() == truth.size());
    double worst_t = 0.0, worst_l = 0.0;
    for (size_t i = 0; i < truth.size(); ++i)
    {
        // compare the affine maps in the fitted tile's centring
        const Affine3D &fit = r.tiles[i].transform;
        const Eigen::Vector3d truth_t = truth[i].transform.offset(fit.center);
        worst_t = std::max(worst_t, (fit.translation - truth_t).cwiseAbs().maxCoeff());
        worst_l = std::max(worst_l, (fit.linear - truth[i].transform.linear).cwiseAbs().maxCoeff());
        CHECK_FALSE(r.tiles[i].reverted);
    }
    MESSAGE("worst translation error " << worst_t << " m, linear " << worst_l << ", NMAD " << r.before.nmad << " -> " << r.after.nmad);
    CHECK(worst_t < 0.05);
    CHECK(worst_l < 1e-4);
    CHECK(r.after.nmad < 0.1);
}

TEST_CASE("feathered corrections are continuous across tile seams")
{
    const GeoTransform gt = GeoTransform::north_up(0.0, 60000.0, 200.0);
    RasterGrid grid(300, 300, 0.0f, gt);
    CoregOptions opt;
    std::vector<CoregTile> tiles = coreg_tile_layout(grid, opt);
    const double ov = coreg_overlap_cells(grid, opt);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (CoregTile &tile : tiles)
        tile.transform.translation = {u(rng), u(rng), u(rng)};
    for (const CoregTile &tile : tiles)
        for (double edge : {tile.weight_box(0), tile.weight_box(2)})
            for (double row : {10.3, 150.7, 290.1})
            {
                if (edge <= 0.0 || edge >= 300.0)
                    continue;
                const Eigen::Vector2d a = gt.apply(edge - 1e-9, row), b = gt.apply(edge + 1e-9, row);
                const Eigen::Vector3d da = blended_offset(tiles, gt, ov, {a.x(), a.y(), 0.0});
                const Eigen::Vector3d db = blended_offset(tiles, gt, ov, {b.x(), b.y(), 0.0});
                CHECK((da - db).norm() < 1e-6);
            }
}

TEST_CASE("coregistration never raises a tile's stable-terrain NMAD")
{
    for (uint64_t seed = 1; seed <= 3; ++seed)
    {
        const Terrain t = rough_terrain(20000.0, 60, seed + 10);
        const RasterGrid ref = analytic_grid(t, GeoTransform::north_up(-20000.0, 20000.0, 250.0), 160, 160);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 3.0 * seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        RasterGrid dem = ref;
        for (int r = 0; r < 160; ++r)
            for (int c = 0; c < 160; ++c)
            {
                // noise, a few blunders and a tilt
                double v = ref.at(c, r) + noise(rng) + 0.002 * c * seed;
                if (u(rng) < 0.05)
                    v += 80.0 * (u(rng) - 0.5);
                dem.put(c, r, v);
            }
        const CoregResult res = coregister_tiles(dem, ref, nullptr);
        for (const CoregTile &tile : res.tiles)
            if (tile.nmad_before && tile.nmad_after)
                CHECK(*tile.nmad_after <= *tile.nmad_before + 1e-6);
    }
}

TEST_CASE("tiles without stable terrain inherit a neighbour and are flagged")
{
    const Terrain t = rough_terrain(30000.0, 120, 3);
    const RasterGrid ref = analytic_grid(t, GeoTransform::north_up(-30000.0, 30000.0, 200.0), 300, 300);
    RasterGrid dem = ref;
    for (float &v : dem.values())
        v += 7.0f;
    RasterGrid mask(300, 300, 1.0f, ref.geotransform());
    // glacier over the upper left corner
    for (int r = 0; r < 110; ++r)
        for (int c = 0; c < 110; ++c)
            mask.put(c, r, 0.0);
    const CoregResult res = coregister_tiles(dem, ref, &mask);
    REQUIRE(res.tiles.front().inherited);
    CHECK(res.tiles.front().source >= 0);
    CHECK(res.tiles.front().transform.translation.z() == doctest::Approx(-7.0).epsilon(1e-3));
    CHECK(res.after.nmad < 0.05);
    CHECK(res.after.count <= mask.count_valid());

    RasterGrid none(300, 300, 0.0f, ref.geotransform());
    try
    {
        coregister_tiles(dem, ref, &none);
        FAIL("expected NoStableTerrain");
    }
    catch (const Error &e)
    {
        CHECK(e.code() == ErrorCode::NoStableTerrain);
    }
}
