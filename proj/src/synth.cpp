#include <cosp/error.hpp>
#include <cosp/synth.hpp>
#include <cosp/utm.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cosp
{

namespace
{

constexpr double kFullHalfLengthMM = 372.4;
constexpr double kFullHalfWidthMM = 28.0;

uint64_t splitmix(uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double lattice(int64_t ix, int64_t iy, uint64_t salt)
{
    const uint64_t h = splitmix(splitmix(static_cast<uint64_t>(ix) ^ (salt * 0x632be59bd9b4e019ULL)) ^ static_cast<uint64_t>(iy));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(double x, double y, uint64_t salt)
{
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
    const double u = fade(x - fx), v = fade(y - fy);
    const double a = lattice(ix, iy, salt), b = lattice(ix + 1, iy, salt);
    const double c = lattice(ix, iy + 1, salt), d = lattice(ix + 1, iy + 1, salt);
    return (a + (b - a) * u) * (1.0 - v) + (c + (d - c) * u) * v;
}

// radii of curvature at the chart origin
void chart_radii(double lat0, double &east, double &north)
{
    const double s = std::sin(deg_to_rad(lat0));
    const double w = std::sqrt(1.0 - wgs84::e2 * s * s);
    east = wgs84::a / w * std::cos(deg_to_rad(lat0));
    north = wgs84::a * (1.0 - wgs84::e2) / (w * w * w);
}

double desk_scale(const SceneConfig &c) { return c.full_extent ? 1.0 : film_half_length_mm(c) / kFullHalfLengthMM; }

// Local terrain chart coordinates of map cell centres, exact on a lattice of every kStep cells and
// bilinear in between (the map-to-chart transform is smooth at this scale).
class LocalChartGrid
{
public:
    static constexpr int kStep = 16;

    LocalChartGrid(const Terrain &terrain, const std::string &utm_crs, const RasterGrid &grid)
        : nx_(grid.width() / kStep + 2), ny_(grid.height() / kStep + 2), nodes_(static_cast<size_t>(nx_) * ny_)
    {
        const UtmProjection utm = UtmProjection::from_crs(utm_crs);
#pragma omp parallel for schedule(static)
        for (int j = 0; j < ny_; ++j)
            for (int i = 0; i < nx_; ++i)
            {
                const Eigen::Vector2d m = grid.geotransform().apply(i * kStep + 0.5, j * kStep + 0.5);
                double lon, lat;
                utm.inverse({m.x(), m.y()}, lon, lat);
                nodes_[static_cast<size_t>(j) * nx_ + i] = terrain.local(lon, lat);
            }
    }

    Eigen::Vector2d local(int c, int r) const
    {
        const int i = c / kStep, j = r / kStep;
        const double u = static_cast<double>(c - i * kStep) / kStep, v = static_cast<double>(r - j * kStep) / kStep;
        auto n = [&](int a, int b) { return nodes_[static_cast<size_t>(b) * nx_ + a]; };
        return (1 - v) * ((1 - u) * n(i, j) + u * n(i + 1, j)) + v * ((1 - u) * n(i, j + 1) + u * n(i + 1, j + 1));
    }

private:
    int nx_, ny_;
    std::vector<Eigen::Vector2d> nodes_;
};

} // namespace

Eigen::Vector2d Terrain::local(double lon, double lat) const
{
    double re, rn;
    chart_radii(lat0, re, rn);
    return {deg_to_rad(normalize_lon(lon - lon0)) * re, deg_to_rad(lat - lat0) * rn};
}

double Terrain::height_local(double e, double n) const
{
    double h = base;
    for (const Hill &k : hills)
    {
        const double de = e - k.e, dn = n - k.n;
        h += k.amplitude * std::exp(-(de * de + dn * dn) / (2.0 * k.sigma * k.sigma));
    }
    return h;
}

Eigen::Vector2d Terrain::gradient_local(double e, double n) const
{
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (const Hill &k : hills)
    {
        const double de = e - k.e, dn = n - k.n, s2 = k.sigma * k.sigma;
        const double v = k.amplitude * std::exp(-(de * de + dn * dn) / (2.0 * s2));
        g.x() -= v * de / s2;
        g.y() -= v * dn / s2;
    }
    return g;
}

double Terrain::height(double lon, double lat) const
{
    const Eigen::Vector2d p = local(lon, lat);
    return height_local(p.x(), p.y());
}

double Terrain::slope_deg(double lon, double lat) const
{
    const Eigen::Vector2d p = local(lon, lat);
    return rad_to_deg(std::atan(gradient_local(p.x(), p.y()).norm()));
}

double film_half_length_mm(const SceneConfig &c) { return c.full_extent ? kFullHalfLengthMM : 0.5 * c.width_px * c.pitch_um * 1e-3; }
double film_half_width_mm(const SceneConfig &c) { return c.full_extent ? kFullHalfWidthMM : 0.5 * c.height_px * c.pitch_um * 1e-3; }

SyntheticScene make_stereo_scene(const SceneConfig &config, uint64_t seed)
{
    if (!(config.altitude_m > 0.0) || !(config.focal_mm > 0.0) || !(config.pitch_um > 0.0) || config.width_px < 2 || config.height_px < 2)
        throw Error(ErrorCode::ConfigInvalid, "scene geometry must be positive");
    SyntheticScene scene;
    scene.config = config;
    scene.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);

    const double half_len = film_half_length_mm(config), half_wid = film_half_width_mm(config);
    const double slant = config.altitude_m / std::cos(deg_to_rad(config.tilt_deg));
    const double extent_e = slant * std::tan(half_len / config.focal_mm);
    const double extent_n = slant * half_wid / config.focal_mm;

    Terrain &t = scene.terrain;
    t.lon0 = config.lon;
    t.lat0 = config.lat;
    t.base = config.base_height_m;
    const double smin = std::min(extent_e, extent_n);
    for (int i = 0; i < config.hills; ++i)
    {
        Hill h;
        h.e = 0.9 * extent_e * u(rng);
        h.n = 0.9 * extent_n * u(rng);
        h.sigma = smin * (0.15 + 0.25 * u01(rng));
        h.amplitude = config.relief_m * (0.3 + 0.7 * u01(rng)) * (u(rng) < 0.0 ? -0.6 : 1.0);
        t.hills.push_back(h);
    }

    const double scale = desk_scale(config);
    const EcefPoint target = geodetic_to_ecef({config.lon, config.lat, t.height(config.lon, config.lat)});
    const double phi = deg_to_rad(0.05) * u(rng), kappa = deg_to_rad(0.2) * u(rng);
    for (bool fore : {true, false})
    {
        PanoramicCamera cam;
        cam.focal_mm = config.focal_mm;
        cam.film_half_length_mm = half_len;
        cam.film_half_width_mm = half_wid;
        cam.image.pitch_um = config.pitch_um;
        cam.image.width = config.full_extent ? static_cast<int>(std::lround(2.0 * half_len / cam.image.pitch_mm())) : config.width_px;
        cam.image.height = config.full_extent ? static_cast<int>(std::lround(2.0 * half_wid / cam.image.pitch_mm())) : config.height_px;
        cam.anchor_lon = config.lon;
        cam.anchor_lat = config.lat;
        const Eigen::Matrix3d m = cam.frame();
        const double omega = deg_to_rad(fore ? -config.tilt_deg : config.tilt_deg);
        const Eigen::Vector3d offset(0.0, -config.altitude_m * std::tan(omega), config.altitude_m);
        cam.velocity = m.transpose() * Eigen::Vector3d(config.cross_track_m, -config.along_track_m, config.vertical_m) * scale;
        cam.attitude_rate = Eigen::Vector3d(deg_to_rad(config.omega_rate_deg), deg_to_rad(config.phi_rate_deg), deg_to_rad(config.kappa_rate_deg)) * scale;
        cam.position = target + m.transpose() * offset - 0.5 * cam.velocity;
        cam.attitude = Eigen::Vector3d(omega, phi, kappa) - 0.5 * cam.attitude_rate;
        cam.imc = config.imc;
        cam.metadata = {{"mission", "synthetic"}, {"camera", fore ? "fore" : "aft"}, {"seed", seed}};
        (fore ? scene.fore : scene.aft) = {fore ? "fore" : "aft", "pair1", cam};
    }
    return scene;
}

bool intersect_terrain(const Terrain &terrain, const Eigen::Vector3d &origin, const Eigen::Vector3d &direction, EcefPoint &out)
{
    const Eigen::Vector3d d = direction.normalized();
    EcefPoint p;
    if (!intersect_ray_height(origin, d, terrain.base, p))
        return false;
    double s = (p - origin).dot(d);
    for (int it = 0; it < 60; ++it)
    {
        const EcefPoint x = origin + s * d;
        const GeodeticPoint g = ecef_to_geodetic(x);
        const Eigen::Vector2d loc = terrain.local(g.lon, g.lat);
        const double f = g.h - terrain.height_local(loc.x(), loc.y());
        if (std::abs(f) < 1e-7)
        {
            out = x;
            return true;
        }
        const Eigen::Matrix3d enu = ecef_to_enu_matrix(g.lon, g.lat);
        const Eigen::Vector2d grad = terrain.gradient_local(loc.x(), loc.y());
        const double df = d.dot(enu.row(2)) - grad.x() * d.dot(enu.row(0)) - grad.y() * d.dot(enu.row(1));
        if (!(std::abs(df) > 1e-9))
            return false;
        s -= f / df;
    }
    return false;
}

double texture_value(const SyntheticScene &scene, double e, double n)
{
    const double cell = scene.config.texture_cell_m;
    const double weights[] = {0.45, 0.25, 0.18, 0.12};
    double v = 0.0, scale = 1.0;
    for (int o = 0; o < 4; ++o)
    {
        v += weights[o] * value_noise(e / (cell * scale), n / (cell * scale), scene.seed * 8 + static_cast<uint64_t>(o));
        scale *= 3.0;
    }
    return v;
}

RasterGrid render_image(const SyntheticScene &scene, const PanoramicCamera &cam, Exec exec)
{
    const int w = cam.image.width, h = cam.image.height;
    if (static_cast<long long>(w) * h > 64LL * 1000 * 1000)
        throw Error(ErrorCode::InvalidArgument, "refusing to render more than 64 Mpx; use sparse observations");
    RasterGrid img(w, h, 0.0f);
#pragma omp parallel for schedule(dynamic, 8) if (exec == Exec::Parallel)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const Ray ray = backproject_ray(cam, pixel_to_mm({c + 0.5, r + 0.5}, cam.image));
            EcefPoint g;
            if (!intersect_terrain(scene.terrain, ray.origin, ray.direction, g))
            {
                img.set_nodata(c, r);
                continue;
            }
            const GeodeticPoint geo = ecef_to_geodetic(g);
            const Eigen::Vector2d loc = scene.terrain.local(geo.lon, geo.lat);
            img.put(c, r, 20.0 + 215.0 * texture_value(scene, loc.x(), loc.y()));
        }
    return img;
}

double BendingSpec::displacement(double col, double row, int height) const
{
    const double w = std::clamp(row / height, 0.0, 1.0);
    return (amplitude_top_px * (1.0 - w) + amplitude_bottom_px * w) * std::sin(2.0 * kPi * col / wavelength_px + phase);
}

RasterGrid apply_bending(const RasterGrid &image, const BendingSpec &spec)
{
    RasterGrid out(image.width(), image.height(), 0.0f, image.geotransform(), image.nodata());
    const double hgt = image.height();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c)
        {
            const double x = c + 0.5;
            const double s = std::sin(2.0 * kPi * x / spec.wavelength_px + spec.phase);
            const double top = spec.amplitude_top_px * s, bottom = spec.amplitude_bottom_px * s;
            // raw = y + top + (bottom - top) * y / H, solved for the corrected y
            const double y = (r + 0.5 - top) / (1.0 + (bottom - top) / hgt);
            const auto v = image.sample(x, std::clamp(y, 0.0, hgt));
            if (v)
                out.put(c, r, *v);
            else
                out.set_nodata(c, r);
        }
    return out;
}

SyntheticObservations synthesize_observations(const SyntheticScene &scene, const ObservationConfig &config)
{
    SyntheticObservations out;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    auto observe = [&](const PanoramicCamera &cam, const EcefPoint &g, PixelPoint &px) {
        try
        {
            px = mm_to_pixel(project(cam, g), cam.image);
        }
        catch (const Error &)
        {
            return false;
        }
        const double m = config.margin_px;
        if (px.col < m || px.row < m || px.col > cam.image.width - m || px.row > cam.image.height - m)
            return false;
        if (config.bending.active())
            px.row += config.bending.displacement(px.col, px.row, cam.image.height);
        if (config.noise_px > 0.0)
        {
            px.col += config.noise_px * noise(rng);
            px.row += config.noise_px * noise(rng);
        }
        return true;
    };
    // stratified sample of film positions, traced to the terrain
    auto sample_ground = [&](const PanoramicCamera &cam, int n, std::vector<EcefPoint> &pts) {
        const double m = config.margin_px;
        const double aw = cam.image.width - 2 * m, ah = cam.image.height - 2 * m;
        const int gx = std::max(1, static_cast<int>(std::ceil(std::sqrt(n * aw / ah))));
        const int gy = std::max(1, (n + gx - 1) / gx);
        for (int i = 0; i < n; ++i)
        {
            const int cx = i % gx, cy = (i / gx) % gy;
            const PixelPoint p{m + aw * (cx + u01(rng)) / gx, m + ah * (cy + u01(rng)) / gy};
            const Ray ray = backproject_ray(cam, pixel_to_mm(p, cam.image));
            EcefPoint g;
            if (intersect_terrain(scene.terrain, ray.origin, ray.direction, g))
                pts.push_back(g);
        }
    };

    for (const ImageCamera *ic : {&scene.fore, &scene.aft})
    {
        std::vector<EcefPoint> pts;
        sample_ground(ic->camera, config.gcps_per_image, pts);
        std::vector<size_t> order(pts.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<char> is_check(pts.size(), 0);
        const auto n_check = static_cast<size_t>(std::lround(config.check_fraction * static_cast<double>(pts.size())));
        for (size_t k = 0; k < n_check; ++k)
            is_check[order[k]] = 1;
        for (size_t i = 0; i < pts.size(); ++i)
        {
            GcpRecord g;
            g.image_id = ic->image_id;
            g.ground = pts[i];
            g.sigma_px = 1.0;
            g.role = is_check[i] ? GcpRole::Check : GcpRole::Control;
            g.point_id = ic->image_id + "_g" + std::to_string(i);
            if (observe(ic->camera, pts[i], g.pixel))
                out.gcps.push_back(g);
        }
    }

    std::vector<EcefPoint> ties;
    sample_ground(scene.fore.camera, config.tie_points, ties);
    for (size_t i = 0; i < ties.size(); ++i)
    {
        TiePoint tp;
        tp.id = "t" + std::to_string(i);
        PixelPoint a, b;
        if (!observe(scene.fore.camera, ties[i], a) || !observe(scene.aft.camera, ties[i], b))
            continue;
        tp.observations = {{scene.fore.image_id, a}, {scene.aft.image_id, b}};
        out.tiepoints.push_back(tp);
        out.tie_truth.push_back(ties[i]);
    }
    return out;
}

RasterGrid truth_dem(const Terrain &terrain, const std::string &utm_crs, const GeoTransform &gt, int width, int height)
{
    RasterGrid dem(width, height, 0.0f, gt);
    dem.set_crs(utm_crs);
    const LocalChartGrid chart(terrain, utm_crs, dem);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
        {
            const Eigen::Vector2d loc = chart.local(c, r);
            dem.put(c, r, terrain.height_local(loc.x(), loc.y()));
        }
    return dem;
}

RasterGrid render_ortho(const SyntheticScene &scene, const std::string &utm_crs, const GeoTransform &gt, int width, int height)
{
    RasterGrid img(width, height, 0.0f, gt);
    img.set_crs(utm_crs);
    const LocalChartGrid chart(scene.terrain, utm_crs, img);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
        {
            const Eigen::Vector2d loc = chart.local(c, r);
            img.put(c, r, 20.0 + 215.0 * texture_value(scene, loc.x(), loc.y()));
        }
    return img;
}

nlohmann::ordered_json scene_config_to_json(const SceneConfig &c)
{
    return {{"lon", c.lon},
            {"lat", c.lat},
            {"altitude_m", c.altitude_m},
            {"tilt_deg", c.tilt_deg},
            {"full_extent", c.full_extent},
            {"width_px", c.width_px},
            {"height_px", c.height_px},
            {"pitch_um", c.pitch_um},
            {"focal_mm", c.focal_mm},
            {"base_height_m", c.base_height_m},
            {"hills", c.hills},
            {"relief_m", c.relief_m},
            {"along_track_m", c.along_track_m},
            {"cross_track_m", c.cross_track_m},
            {"vertical_m", c.vertical_m},
            {"omega_rate_deg", c.omega_rate_deg},
            {"phi_rate_deg", c.phi_rate_deg},
            {"kappa_rate_deg", c.kappa_rate_deg},
            {"imc", c.imc},
            {"texture_cell_m", c.texture_cell_m}};
}

SceneConfig scene_config_from_json(const nlohmann::json &j)
{
    SceneConfig c;
    const nlohmann::ordered_json known = scene_config_to_json(c);
    for (const auto &[k, v] : j.items())
        if (!known.contains(k))
            throw Error(ErrorCode::ConfigInvalid, "unknown scene key '" + k + "'");
    try
    {
        auto get = [&](const char *k, auto &dst) {
            if (j.contains(k))
                dst = j.at(k).get<std::remove_reference_t<decltype(dst)>>();
        };
        get("lon", c.lon);
        get("lat", c.lat);
        get("altitude_m", c.altitude_m);
        get("tilt_deg", c.tilt_deg);
        get("full_extent", c.full_extent);
        get("width_px", c.width_px);
        get("height_px", c.height_px);
        get("pitch_um", c.pitch_um);
        get("focal_mm", c.focal_mm);
        get("base_height_m", c.base_height_m);
        get("hills", c.hills);
        get("relief_m", c.relief_m);
        get("along_track_m", c.along_track_m);
        get("cross_track_m", c.cross_track_m);
        get("vertical_m", c.vertical_m);
        get("omega_rate_deg", c.omega_rate_deg);
        get("phi_rate_deg", c.phi_rate_deg);
        get("kappa_rate_deg", c.kappa_rate_deg);
        get("imc", c.imc);
        get("texture_cell_m", c.texture_cell_m);
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::ConfigInvalid, std::string("scene config: ") + e.what());
    }
    return c;
}

nlohmann::ordered_json scene_truth_json(const SyntheticScene &scene)
{
    nlohmann::ordered_json j;
    j["seed"] = scene.seed;
    j["config"] = scene_config_to_json(scene.config);
    nlohmann::ordered_json hills = nlohmann::ordered_json::array();
    for (const Hill &h : scene.terrain.hills)
        hills.push_back({{"e", h.e}, {"n", h.n}, {"amplitude", h.amplitude}, {"sigma", h.sigma}});
    j["terrain"] = {{"lon0", scene.terrain.lon0}, {"lat0", scene.terrain.lat0}, {"base", scene.terrain.base}, {"hills", hills}};
    j["cameras"] = {{"fore", camera_to_json(scene.fore.camera)}, {"aft", camera_to_json(scene.aft.camera)}};
    return j;
}

RasterGrid make_raw_film(const RasterGrid &image, const FilmLayout &layout, const BendingSpec &bending, bool aft)
{
    const int w = image.width() + 2 * layout.end_px, h = image.height() + 2 * layout.band_px;
    const double ih = image.height();
    const double stripe_top = 0.5 * layout.band_px, stripe_bottom = ih + 1.5 * layout.band_px;
    RasterGrid out(w, h, 0.0f);
    auto coverage = [&](double y0, double y1, double center) {
        const double a = std::max(y0, center - 0.5 * layout.stripe_width_px), b = std::min(y1, center + 0.5 * layout.stripe_width_px);
        return std::max(0.0, b - a);
    };
#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            // unbent canvas position of this raw pixel, in image coordinates
            const double x = c + 0.5 - layout.end_px;
            const double s = bending.active() ? std::sin(2.0 * kPi * x / bending.wavelength_px + bending.phase) : 0.0;
            const double top = bending.amplitude_top_px * s, bottom = bending.amplitude_bottom_px * s;
            const double k = 1.0 + (bottom - top) / ih;
            const double yi = (r + 0.5 - layout.band_px - top) / k;
            const double y0 = (r - layout.band_px - top) / k + layout.band_px, y1 = (r + 1 - layout.band_px - top) / k + layout.band_px;
            const double y = yi + layout.band_px;
            double v;
            if (y < layout.band_px || y >= layout.band_px + ih)
            {
                const double cov = coverage(y0, y1, stripe_top) + coverage(y0, y1, stripe_bottom);
                v = layout.band_value + (layout.stripe_value - layout.band_value) * std::min(1.0, cov / (y1 - y0));
            }
            else
            {
                // end margins repeat the image mirrored
                double xi = x;
                if (xi < 0.0)
                    xi = -xi;
                if (xi > image.width())
                    xi = 2.0 * image.width() - xi;
                xi = std::clamp(xi, 0.5, image.width() - 0.5);
                const auto sv = image.sample(xi, std::clamp(yi, 0.5, ih - 0.5));
                v = sv ? *sv : layout.band_value;
            }
            if (aft)
                out.put(w - 1 - c, h - 1 - r, v);
            else
                out.put(c, r, v);
        }
    return out;
}

std::array<RasterGrid, 4> scan_film(const RasterGrid &film, const ScanSimulation &sim, uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = deg_to_rad(sim.rotation_deg);
    const Eigen::Vector2d center(0.5 * film.width(), 0.5 * film.height());
    // bed extent holding the rotated strip
    const double bw = std::abs(std::cos(a)) * film.width() + std::abs(std::sin(a)) * film.height() + 2 * sim.border_px;
    const double bh = std::abs(std::sin(a)) * film.width() + std::abs(std::cos(a)) * film.height() + 2 * sim.border_px;
    const int bed_w = static_cast<int>(std::ceil(bw)), bed_h = static_cast<int>(std::ceil(bh));
    const Eigen::Vector2d bed_center(0.5 * bed_w, 0.5 * bed_h);
    Eigen::Matrix2d rinv;
    rinv << std::cos(a), std::sin(a), -std::sin(a), std::cos(a);

    const int part_w = (bed_w + 3 * sim.overlap_px + 3) / 4;
    std::array<RasterGrid, 4> parts;
    for (int i = 0; i < 4; ++i)
    {
        const double x0 = i * (part_w - sim.overlap_px);
        const int w = std::min(part_w, static_cast<int>(bed_w - x0));
        const double pr = i == 0 ? 0.0 : sim.part_rotation_rad * u(rng);
        const Eigen::Vector2d pt = i == 0 ? Eigen::Vector2d::Zero() : Eigen::Vector2d(sim.part_shift_px * u(rng), sim.part_shift_px * u(rng));
        Eigen::Matrix2d pm;
        pm << std::cos(pr), -std::sin(pr), std::sin(pr), std::cos(pr);
        RasterGrid part(w, bed_h, 0.0f);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < bed_h; ++r)
            for (int c = 0; c < w; ++c)
            {
                const Eigen::Vector2d local = pm * Eigen::Vector2d(c + 0.5, r + 0.5) + pt;
                const Eigen::Vector2d bed(local.x() + x0, local.y());
                const Eigen::Vector2d f = rinv * (bed - bed_center) + center;
                const auto v = film.sample(f.x(), f.y());
                part.put(c, r, v ? *v : sim.background);
            }
        parts[i] = std::move(part);
    }
    return parts;
}

} // namespace cosp
