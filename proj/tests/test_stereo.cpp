#include <cosp/error.hpp>
#include <cosp/kernels.hpp>
#include <cosp/stereo.hpp>
#include <cosp/synth.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cosp;

namespace
{

const SyntheticScene &desk_scene()
{
    static const SyntheticScene s = [] {
        SceneConfig sc;
        return make_stereo_scene(sc, 5);
    }();
    return s;
}

HeightRange scene_heights(const SyntheticScene &s)
{
    return {s.config.base_height_m - 50.0, s.config.base_height_m + s.config.relief_m + 50.0};
}

const RectificationModel &desk_model()
{
    static const RectificationModel m = build_rectification(desk_scene().fore.camera, desk_scene().aft.camera, scene_heights(desk_scene()));
    return m;
}

double row_rms(const RectificationModel &m, const std::vector<VirtualCorrespondence> &vc)
{
    double s = 0.0;
    for (const auto &v : vc)
    {
        const double d = m.forward(0, v.a).row - m.forward(1, v.b).row;
        s += d * d;
    }
    return std::sqrt(s / vc.size());
}

double angle_diff_deg(double a, double b)
{
    double d = std::fmod(a - b, kPi);
    if (d > kPi / 2)
        d -= kPi;
    if (d < -kPi / 2)
        d += kPi;
    return std::abs(rad_to_deg(d));
}

// Smoothed random texture.
RasterGrid texture(int w, int h, uint64_t seed, double sigma = 1.5)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 255.0);
    RasterGrid n(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            n.put(c, r, u(rng));
    const int k = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> g(2 * k + 1);
    double gs = 0.0;
    for (int i = -k; i <= k; ++i)
        gs += g[i + k] = std::exp(-0.5 * i * i / (sigma * sigma));
    RasterGrid t(w, h), out(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            double s = 0.0;
            for (int i = -k; i <= k; ++i)
                s += g[i + k] * n.at(std::clamp(c + i, 0, w - 1), r);
            t.put(c, r, s / gs);
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            double s = 0.0;
            for (int i = -k; i <= k; ++i)
                s += g[i + k] * t.at(c, std::clamp(r + i, 0, h - 1));
            out.put(c, r, 40.0 + (s / gs - 127.5) * 3.0 + 127.5);
        }
    return out;
}

double smooth_disparity(double x, double y) { return 4.0 + 3.0 * std::sin(x / 60.0) * std::cos(y / 80.0); }

// B(x + d(x), y) = A(x, y) with d smooth.
RasterGrid warp_by_disparity(const RasterGrid &a)
{
    RasterGrid b(a.width(), a.height(), 0.0f);
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c)
        {
            // solve x + d(x) = xb for the source column
            const double xb = c + 0.5;
            double x = xb;
            for (int it = 0; it < 20; ++it)
                x = xb - smooth_disparity(x, r + 0.5);
            const auto v = a.sample(x, r + 0.5);
            if (v)
                b.put(c, r, *v);
            else
                b.set_nodata(c, r);
        }
    return b;
}

} // namespace

TEST_CASE("epipolar directions of a fore/aft pair are near the film rows axis")
{
    const auto &s = desk_scene();
    const auto [a, b] = estimate_epipolar_directions(s.fore.camera, s.aft.camera, scene_heights(s));
    MESSAGE("epipolar angles " << rad_to_deg(a) << " " << rad_to_deg(b) << " deg");
    CHECK(angle_diff_deg(a, kPi / 2) < 5.0);
    CHECK(angle_diff_deg(b, kPi / 2) < 5.0);

    const auto [ba, bb] = estimate_epipolar_directions(s.aft.camera, s.fore.camera, scene_heights(s));
    CHECK(angle_diff_deg(ba, b) < 1e-9);
    CHECK(angle_diff_deg(bb, a) < 1e-9);

    const auto [a33, b33] = estimate_epipolar_directions(s.fore.camera, s.aft.camera, scene_heights(s), 33);
    CHECK(angle_diff_deg(a33, a) < 0.1);
    CHECK(angle_diff_deg(b33, b) < 0.1);
}

TEST_CASE("epipolar directions fail when the images do not overlap")
{
    const auto &s = desk_scene();
    PanoramicCamera far = s.aft.camera;
    far.position += Eigen::Vector3d(3e5, 3e5, 0.0);
    CHECK_THROWS_AS(estimate_epipolar_directions(s.fore.camera, far, scene_heights(s)), Error);
}

TEST_CASE("rectified rows agree on held-out correspondences")
{
    const auto &s = desk_scene();
    const RectificationModel &m = desk_model();
    const HeightRange h = scene_heights(s);
    const auto held_out = virtual_correspondences(s.fore.camera, s.aft.camera, h, 23, 4, 0.37);
    REQUIRE(held_out.size() > 500);
    const double rms = row_rms(m, held_out);
    MESSAGE("held-out y-parallax rms " << rms << " px, rectified grid " << m.width << " x " << m.height);
    CHECK(rms < 0.1);

    RectifyOptions lin;
    lin.degree = 1;
    const RectificationModel m1 = build_rectification(s.fore.camera, s.aft.camera, h, lin);
    const double rms1 = row_rms(m1, held_out);
    MESSAGE("degree 1 rms " << rms1 << " px");
    CHECK(rms1 > rms);

    // terrain points seen in both films land on the same rectified row
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uc(100.0, s.fore.camera.image.width - 100.0), ur(100.0, s.fore.camera.image.height - 100.0);
    int n = 0;
    double worst = 0.0;
    for (int i = 0; i < 300; ++i)
    {
        const PixelPoint pa{uc(rng), ur(rng)};
        const Ray ray = backproject_ray(s.fore.camera, pixel_to_mm(pa, s.fore.camera.image));
        EcefPoint g;
        if (!intersect_terrain(s.terrain, ray.origin, ray.direction, g))
            continue;
        const PixelPoint pb = mm_to_pixel(project(s.aft.camera, g), s.aft.camera.image);
        if (!s.aft.camera.image.contains(pb))
            continue;
        ++n;
        worst = std::max(worst, std::abs(m.forward(0, pa).row - m.forward(1, pb).row));
    }
    REQUIRE(n > 100);
    CHECK(worst < 0.2);
}

TEST_CASE("rectifying maps are bijective and invertible")
{
    const RectificationModel &m = desk_model();
    for (int s = 0; s < 2; ++s)
    {
        const RectificationSide &sd = m.side(s);
        for (int j = 0; j <= 49; ++j)
            for (int i = 0; i <= 49; ++i)
                REQUIRE(m.jacobian_det(s, sd.normalize({sd.width * i / 49.0, sd.height * j / 49.0})) > 0.0);
        std::mt19937_64 rng(s + 1);
        std::uniform_real_distribution<double> uc(0.0, sd.width), ur(0.0, sd.height);
        for (int k = 0; k < 200; ++k)
        {
            const PixelPoint p{uc(rng), ur(rng)};
            const auto back = m.inverse(s, m.forward(s, p));
            REQUIRE(back.has_value());
            CHECK(std::hypot(back->col - p.col, back->row - p.row) < 1e-6);
        }
    }
}

TEST_CASE("rectification model JSON round trip")
{
    const RectificationModel &m = desk_model();
    const RectificationModel r = rectification_from_json(nlohmann::json::parse(rectification_to_json(m).dump()));
    const PixelPoint p{321.5, 777.25};
    CHECK(r.forward(1, p).col == doctest::Approx(m.forward(1, p).col).epsilon(1e-12));
    CHECK(r.forward(1, p).row == doctest::Approx(m.forward(1, p).row).epsilon(1e-12));
    CHECK(r.width == m.width);
}

TEST_CASE("too few correspondences make the fit ill-conditioned")
{
    RectificationModel m = desk_model();
    std::vector<VirtualCorrespondence> vc(10, VirtualCorrespondence{{100, 100}, {120, 90}, 0.0});
    CHECK_THROWS_AS(fit_rectification(m, vc, 4, 1e13), Error);
    // all correspondences on one line
    vc.clear();
    for (int i = 0; i < 200; ++i)
        vc.push_back({{10.0 * i, 500.0}, {10.0 * i + 3, 480.0}, 0.0});
    CHECK_THROWS_AS(fit_rectification(m, vc, 4, 1e13), Error);
}

TEST_CASE("identity and rotation resampling")
{
    const RasterGrid img = texture(120, 90, 3);
    RectificationModel m;
    for (RectificationSide *s : {&m.a, &m.b})
    {
        s->width = 120;
        s->height = 90;
        s->center = {60.0, 45.0};
        s->norm = 60.0;
        s->px = s->py = s->inv_x = s->inv_y = Poly2::zero(1);
        s->px.coef[1] = s->inv_x.coef[1] = 1.0;
        s->py.coef[2] = s->inv_y.coef[2] = 1.0;
    }
    m.scale = 60.0;
    m.origin = {-1.0, -0.75};
    m.width = 120;
    m.height = 90;
    const RasterGrid id = resample_rectified(img, m, 0);
    double worst = 0.0;
    for (int r = 0; r < 89; ++r)
        for (int c = 0; c < 119; ++c)
            if (id.valid(c, r))
                worst = std::max(worst, double(std::abs(id.at(c, r) - img.at(c, r))));
    CHECK(worst < 1e-3);

    // a pre-rotation by 90 degrees turns columns into rows
    m.b.angle = kPi / 2;
    m.origin = {-0.75, -1.0};
    m.width = 90;
    m.height = 120;
    const RasterGrid rot = resample_rectified(img, m, 1, Exec::Serial);
    const RasterGrid rot_p = resample_rectified(img, m, 1, Exec::Parallel);
    CHECK(std::equal(rot.values().begin(), rot.values().end(), rot_p.values().begin(), rot_p.values().end()));
    int checked = 0;
    for (int r = 2; r < 118; r += 7)
        for (int c = 2; c < 88; c += 5)
        {
            const auto p = m.inverse(1, {c + 0.5, r + 0.5});
            REQUIRE(p.has_value());
            // output x runs along the input rows
            CHECK(p->row == doctest::Approx(c + 0.5).epsilon(1e-9));
            CHECK(p->col == doctest::Approx(120.0 - (r + 0.5)).epsilon(1e-9));
            CHECK(rot.at(c, r) == doctest::Approx(*img.sample(p->col, p->row)).epsilon(1e-5));
            ++checked;
        }
    CHECK(checked > 100);
}

TEST_CASE("y-parallax of identical and shifted images")
{
    const RasterGrid a = texture(300, 240, 11);
    const RasterGrid same = measure_y_parallax(a, a, 30, 3);
    int n = 0;
    for (int r = 0; r < same.height(); ++r)
        for (int c = 0; c < same.width(); ++c)
            if (same.valid(c, r))
            {
                ++n;
                CHECK(std::abs(same.at(c, r)) < 1e-6);
            }
    CHECK(n > 40);

    // B(x, y + 1.5) = A(x, y)
    RasterGrid b(300, 240);
    for (int r = 0; r < 240; ++r)
        for (int c = 0; c < 300; ++c)
        {
            const auto v = a.sample(c + 0.5, r + 0.5 - 1.5);
            if (v)
                b.put(c, r, *v);
            else
                b.set_nodata(c, r);
        }
    const RasterGrid ab = measure_y_parallax(a, b, 30, 3), ba = measure_y_parallax(b, a, 30, 3);
    double sum = 0.0;
    int m = 0;
    for (int r = 0; r < ab.height(); ++r)
        for (int c = 0; c < ab.width(); ++c)
            if (ab.valid(c, r) && ba.valid(c, r))
            {
                sum += ab.at(c, r);
                ++m;
                CHECK(ab.at(c, r) == doctest::Approx(-ba.at(c, r)).epsilon(0.05));
            }
    REQUIRE(m > 30);
    MESSAGE("mean y-parallax " << sum / m);
    CHECK(sum / m == doctest::Approx(1.5).epsilon(0.05));
}

TEST_CASE("SGM on identical images selects zero disparity")
{
    const RasterGrid a = texture(160, 120, 21);
    SgmOptions opt;
    opt.dmin = -8;
    opt.dmax = 8;
    const DisparityMap d = sgm_match(a, a, opt);
    REQUIRE(d.valid_cells > 0.9 * 154 * 114);
    double sum = 0.0;
    for (int r = 0; r < 120; ++r)
        for (int c = 0; c < 160; ++c)
            if (d.disparity.valid(c, r))
            {
                // only the subpixel parabola can move it off zero
                REQUIRE(std::abs(d.disparity.at(c, r)) < 0.5);
                sum += std::abs(d.disparity.at(c, r));
            }
    MESSAGE("mean |d| " << sum / d.valid_cells);
    CHECK(sum / d.valid_cells < 0.15);
}

TEST_CASE("SGM recovers a smooth synthetic disparity field")
{
    const RasterGrid a = texture(360, 260, 33);
    const RasterGrid b = warp_by_disparity(a);
    SgmOptions opt;
    opt.dmin = -4;
    opt.dmax = 12;
    const DisparityMap d = sgm_match(a, b, opt);
    double s = 0.0;
    size_t n = 0, interior = 0;
    for (int r = 5; r < 255; ++r)
        for (int c = 5; c < 345; ++c)
        {
            ++interior;
            if (!d.disparity.valid(c, r))
                continue;
            const double e = d.disparity.at(c, r) - smooth_disparity(c + 0.5, r + 0.5);
            s += e * e;
            ++n;
        }
    const double rms = std::sqrt(s / n);
    MESSAGE("disparity rms " << rms << " px, valid " << double(n) / interior);
    CHECK(rms < 0.5);
    CHECK(double(n) / interior > 0.95);
}

TEST_CASE("SGM invalidates textureless cells")
{
    RasterGrid a = texture(160, 120, 41);
    for (int r = 40; r < 80; ++r)
        for (int c = 50; c < 110; ++c)
            a.put(c, r, 100.0);
    const DisparityMap d = sgm_match(a, a, SgmOptions{-8, 8, 10, 120, 1.0, 2.0});
    for (int r = 44; r < 76; ++r)
        for (int c = 54; c < 106; ++c)
            REQUIRE_FALSE(d.disparity.valid(c, r));
}

TEST_CASE("SGM valid cells pass the left-right check")
{
    const RasterGrid a = texture(200, 150, 51);
    const RasterGrid b = warp_by_disparity(a);
    SgmOptions opt;
    opt.dmin = -4;
    opt.dmax = 12;
    const DisparityMap l = sgm_match(a, b, opt);
    // swapping the images negates the disparity range
    SgmOptions ro = opt;
    ro.dmin = -opt.dmax;
    ro.dmax = -opt.dmin;
    const DisparityMap r = sgm_match(b, a, ro);
    int checked = 0, agree = 0;
    for (int y = 0; y < 150; ++y)
        for (int x = 0; x < 200; ++x)
        {
            if (!l.disparity.valid(x, y))
                continue;
            const int xb = static_cast<int>(std::lround(x + l.disparity.at(x, y)));
            if (!r.disparity.valid(xb, y))
                continue;
            ++checked;
            if (std::abs(l.disparity.at(x, y) + r.disparity.at(xb, y)) <= 1.5)
                ++agree;
        }
    REQUIRE(checked > 1000);
    CHECK(double(agree) / checked > 0.99);
}

TEST_CASE("SGM border rule drops matches next to invalid data")
{
    const RasterGrid a = texture(220, 120, 71);
    RasterGrid b = warp_by_disparity(a);
    for (int r = 0; r < 120; ++r)
        for (int c = 120; c < 140; ++c)
            b.set_nodata(c, r);
    // within the 3 px census radius plus the 6 px guard of invalid data or the raster edge
    auto near_invalid = [](const RasterGrid &g, int x, int y) {
        for (int k = -9; k <= 9; ++k)
            for (int dy = -3; dy <= 3; ++dy)
                if (!g.contains(x + k, y + dy) || !g.valid(x + k, y + dy))
                    return true;
        return false;
    };
    SgmOptions opt;
    opt.dmin = -4;
    opt.dmax = 12;
    const DisparityMap plain = sgm_match(a, b, opt);
    opt.border_px = 6;
    const DisparityMap guarded = sgm_match(a, b, opt);
    CHECK(guarded.valid_cells < plain.valid_cells);
    int dropped_far = 0, changed = 0;
    for (int y = 0; y < 120; ++y)
        for (int x = 0; x < 220; ++x)
        {
            if (!plain.disparity.valid(x, y))
            {
                changed += guarded.disparity.valid(x, y);
                continue;
            }
            const int xb = static_cast<int>(std::lround(x + plain.disparity.at(x, y)));
            const bool near = near_invalid(b, xb, y) || near_invalid(a, x, y);
            if (guarded.disparity.valid(x, y))
            {
                changed += guarded.disparity.at(x, y) != plain.disparity.at(x, y);
                CHECK_FALSE(near);
            }
            else
                dropped_far += !near;
        }
    CHECK(changed == 0);
    CHECK(dropped_far == 0);
}

TEST_CASE("SGM uniqueness margin only removes matches")
{
    const RasterGrid a = texture(200, 140, 81);
    const RasterGrid b = warp_by_disparity(a);
    SgmOptions opt;
    opt.dmin = -4;
    opt.dmax = 12;
    std::vector<DisparityMap> maps;
    for (double u : {0.0, 0.02, 0.1, 1e6})
    {
        opt.uniqueness = u;
        maps.push_back(sgm_match(a, b, opt));
    }
    for (size_t k = 1; k < maps.size(); ++k)
    {
        CHECK(maps[k].valid_cells <= maps[k - 1].valid_cells);
        bool subset = true;
        for (int y = 0; y < 140; ++y)
            for (int x = 0; x < 200; ++x)
                if (maps[k].disparity.valid(x, y))
                    subset = subset && maps[k - 1].disparity.valid(x, y) && maps[k - 1].disparity.at(x, y) == maps[k].disparity.at(x, y);
        CHECK(subset);
    }
    CHECK(maps[1].valid_cells > maps[0].valid_cells * 9 / 10);
    CHECK(maps[3].valid_cells < maps[0].valid_cells);
}

TEST_CASE("serial and parallel SGM are bit-exact")
{
    const RasterGrid a = texture(150, 110, 61);
    const RasterGrid b = warp_by_disparity(a);
    const auto ca = kernels::census7x7(a, Exec::Serial), cb = kernels::census7x7(b, Exec::Serial);
    const auto cp = kernels::census7x7(a, Exec::Parallel);
    CHECK(ca.bits == cp.bits);
    const auto cost = kernels::census_cost(ca, cb, -4, 12, Exec::Serial);
    CHECK(cost.cost == kernels::census_cost(ca, cb, -4, 12, Exec::Parallel).cost);
    CHECK(kernels::serial::sgm_aggregate(cost, 10, 120) == kernels::sgm_aggregate(cost, 10, 120));
    SgmOptions opt;
    opt.dmin = -4;
    opt.dmax = 12;
    const DisparityMap s = sgm_match(a, b, opt, Exec::Serial), p = sgm_match(a, b, opt, Exec::Parallel);
    CHECK(s.valid_cells == p.valid_cells);
    bool same = true;
    for (int y = 0; y < 110; ++y)
        for (int x = 0; x < 150; ++x)
            same = same && s.disparity.at(x, y) == p.disparity.at(x, y);
    CHECK(same);
}

TEST_CASE("rectification over the full film extent")
{
    SceneConfig sc;
    sc.full_extent = true;
    const SyntheticScene s = make_stereo_scene(sc, 5);
    const HeightRange h = scene_heights(s);
    const RectificationModel m = build_rectification(s.fore.camera, s.aft.camera, h);
    const auto held_out = virtual_correspondences(s.fore.camera, s.aft.camera, h, 23, 4, 0.37);
    REQUIRE(held_out.size() > 300);
    const double rms = row_rms(m, held_out);
    MESSAGE("full extent held-out rms " << rms << " px over " << held_out.size() << " points, grid " << m.width << " x " << m.height);
    CHECK(rms < 0.1);
}
