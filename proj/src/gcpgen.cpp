#include <cosp/error.hpp>
#include <cosp/gcpgen.hpp>
#include <cosp/imgmatch.hpp>
#include <cosp/utm.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace cosp
{
namespace
{

using cplx = std::complex<double>;

bool is_geographic(const std::string &crs) { return crs.empty() || crs == "EPSG:4326"; }

struct Similarity
{
    cplx a, b;
    bool mirrored = false;

    cplx z(const PixelPoint &p) const { return mirrored ? cplx(p.col, p.row) : cplx(p.col, -p.row); }
    cplx apply(const PixelPoint &p) const { return a * z(p) + b; }
};

Similarity fit_similarity(const std::vector<PixelPoint> &px, const std::vector<cplx> &g, const std::vector<size_t> &idx, bool mirrored)
{
    Similarity s;
    s.mirrored = mirrored;
    cplx zm = 0.0, gm = 0.0;
    for (size_t i : idx)
    {
        zm += s.z(px[i]);
        gm += g[i];
    }
    zm /= static_cast<double>(idx.size());
    gm /= static_cast<double>(idx.size());
    cplx num = 0.0;
    double den = 0.0;
    for (size_t i : idx)
    {
        const cplx dz = s.z(px[i]) - zm;
        num += std::conj(dz) * (g[i] - gm);
        den += std::norm(dz);
    }
    s.a = den > 0.0 ? num / den : cplx(0.0);
    s.b = gm - s.a * zm;
    return s;
}

double percentile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos)), hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - lo);
}

std::string mode_name(TileMode m) { return m == TileMode::Coarse ? "coarse" : "fine"; }

// Geographic bounds of a raster's extent, sampled along its border.
std::array<double, 4> raster_bounds(const RasterGrid &r)
{
    std::array<double, 4> b{1e300, 1e300, -1e300, -1e300};
    for (int k = 0; k <= 8; ++k)
        for (const auto &[c, rr] : {std::pair{r.width() * k / 8.0, 0.0}, std::pair{r.width() * k / 8.0, double(r.height())},
                                    std::pair{0.0, r.height() * k / 8.0}, std::pair{double(r.width()), r.height() * k / 8.0}})
        {
            double lon, lat;
            map_to_lonlat(r.crs(), r.geotransform().apply(c, rr), lon, lat);
            b[0] = std::min(b[0], lon);
            b[1] = std::min(b[1], lat);
            b[2] = std::max(b[2], lon);
            b[3] = std::max(b[3], lat);
        }
    return b;
}

} // namespace

Eigen::Vector2d lonlat_to_map(const std::string &crs, double lon, double lat)
{
    if (is_geographic(crs))
        return {lon, lat};
    const MapPoint m = UtmProjection::from_crs(crs).forward(lon, lat);
    return {m.easting, m.northing};
}

void map_to_lonlat(const std::string &crs, const Eigen::Vector2d &m, double &lon, double &lat)
{
    if (is_geographic(crs))
    {
        lon = m.x();
        lat = m.y();
        return;
    }
    UtmProjection::from_crs(crs).inverse({m.x(), m.y()}, lon, lat);
}

GeodeticPoint FootprintEstimate::center() const
{
    GeodeticPoint c{0, 0, 0};
    for (const GeodeticPoint &p : corners)
    {
        c.lon += p.lon / 4;
        c.lat += p.lat / 4;
        c.h += p.h / 4;
    }
    return c;
}

GeodeticPoint FootprintEstimate::at(double col, double row) const
{
    const GeodeticPoint c = center();
    const UtmProjection utm = UtmProjection::for_lonlat(c.lon, c.lat);
    std::array<MapPoint, 4> m;
    for (int i = 0; i < 4; ++i)
        m[i] = utm.forward(corners[i].lon, corners[i].lat);
    const double u = col / width, v = row / height;
    const double w[4] = {(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v};
    MapPoint p{0, 0};
    double h = 0.0;
    for (int i = 0; i < 4; ++i)
    {
        p.easting += w[i] * m[i].easting;
        p.northing += w[i] * m[i].northing;
        h += w[i] * corners[i].h;
    }
    GeodeticPoint g;
    utm.inverse(p, g.lon, g.lat);
    g.h = h;
    return g;
}

FootprintEstimate footprint_from_camera(const PanoramicCamera &cam, double ground_height, double uncertainty_km)
{
    FootprintEstimate f;
    f.width = cam.image.width;
    f.height = cam.image.height;
    f.uncertainty_km = uncertainty_km;
    const std::array<PixelPoint, 4> px{PixelPoint{0, 0}, PixelPoint{double(f.width), 0}, PixelPoint{double(f.width), double(f.height)},
                                       PixelPoint{0, double(f.height)}};
    for (int i = 0; i < 4; ++i)
    {
        EcefPoint g;
        if (!backproject_to_height(cam, pixel_to_mm(px[i], cam.image), ground_height, g))
            throw Error(ErrorCode::DegenerateGeometry, "film corner ray misses the ground");
        f.corners[i] = ecef_to_geodetic(g);
        f.corners[i].h = ground_height;
    }
    return f;
}

std::vector<int> window_starts(int length, int window)
{
    if (length <= 0 || window <= 0)
        throw Error(ErrorCode::InvalidArgument, "window and length must be positive");
    if (window >= length)
        return {0};
    const int n = (length + window - 1) / window;
    std::vector<int> s(n);
    for (int i = 0; i < n; ++i)
        s[i] = static_cast<int>(std::lround(static_cast<double>(i) * (length - window) / (n - 1)));
    return s;
}

std::vector<TileSpec> plan_tiles(const FootprintEstimate &fp, const RasterGrid &reference, TileMode mode, const TilePlanOptions &opt)
{
    if (!(fp.uncertainty_km > 0.0) || fp.width <= 0 || fp.height <= 0)
        throw Error(ErrorCode::InvalidArgument, "footprint needs film dimensions and a positive uncertainty");
    const std::array<double, 4> rb = raster_bounds(reference);
    double fw = 1e300, fs = 1e300, fe = -1e300, fn = -1e300;
    for (const GeodeticPoint &c : fp.corners)
    {
        fw = std::min(fw, c.lon);
        fs = std::min(fs, c.lat);
        fe = std::max(fe, c.lon);
        fn = std::max(fn, c.lat);
    }
    if (fe < rb[0] || fw > rb[2] || fn < rb[1] || fs > rb[3])
        throw Error(ErrorCode::FootprintOutsideReference, "film footprint does not overlap the reference raster");

    const int ww = mode == TileMode::Coarse ? opt.coarse_width : opt.tile_width;
    const int wh = mode == TileMode::Coarse ? opt.coarse_height : opt.tile_height;
    const double lat0 = fp.center().lat;
    const double pad_lat = fp.uncertainty_km / 111.32, pad_lon = fp.uncertainty_km / (111.32 * std::cos(deg_to_rad(lat0)));
    std::vector<TileSpec> tiles;
    for (int r0 : window_starts(fp.height, wh))
        for (int c0 : window_starts(fp.width, ww))
        {
            TileSpec t;
            t.mode = mode;
            t.col = c0;
            t.row = r0;
            t.width = std::min(ww, fp.width);
            t.height = std::min(wh, fp.height);
            t.scale = mode == TileMode::Coarse
                          ? std::max({1.0, static_cast<double>(t.width) / opt.tile_width, static_cast<double>(t.height) / opt.tile_height})
                          : 1.0;
            t.tile_id = (mode == TileMode::Coarse ? "c" : "f") + std::to_string(r0) + "_" + std::to_string(c0);
            double w = 1e300, s = 1e300, e = -1e300, n = -1e300;
            for (int k = 0; k <= 4; ++k)
                for (const auto &[c, r] : {std::pair{c0 + t.width * k / 4.0, double(r0)}, std::pair{c0 + t.width * k / 4.0, double(r0 + t.height)},
                                           std::pair{double(c0), r0 + t.height * k / 4.0}, std::pair{double(c0 + t.width), r0 + t.height * k / 4.0}})
                {
                    const GeodeticPoint g = fp.at(c, r);
                    w = std::min(w, g.lon);
                    s = std::min(s, g.lat);
                    e = std::max(e, g.lon);
                    n = std::max(n, g.lat);
                }
            t.west = std::max(w - pad_lon, rb[0]);
            t.south = std::max(s - pad_lat, rb[1]);
            t.east = std::min(e + pad_lon, rb[2]);
            t.north = std::min(n + pad_lat, rb[3]);
            if (t.west < t.east && t.south < t.north)
                tiles.push_back(t);
        }
    if (tiles.empty())
        throw Error(ErrorCode::FootprintOutsideReference, "no tile overlaps the reference raster");
    return tiles;
}

nlohmann::ordered_json tiles_to_json(const std::vector<TileSpec> &tiles)
{
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const TileSpec &t : tiles)
        a.push_back({{"tile_id", t.tile_id},
                      {"mode", mode_name(t.mode)},
                      {"corona_window", {t.col, t.row, t.width, t.height}},
                      {"reference_window", {t.west, t.south, t.east, t.north}},
                      {"scale", t.scale},
                      {"downscale_filter", "area-average"}});
    return a;
}

std::vector<TileSpec> tiles_from_json(const nlohmann::json &j)
{
    std::vector<TileSpec> out;
    for (const auto &e : j)
    {
        TileSpec t;
        t.tile_id = e.at("tile_id").get<std::string>();
        t.mode = e.value("mode", "fine") == "coarse" ? TileMode::Coarse : TileMode::Fine;
        const auto &cw = e.at("corona_window");
        t.col = cw.at(0);
        t.row = cw.at(1);
        t.width = cw.at(2);
        t.height = cw.at(3);
        const auto &rw = e.at("reference_window");
        t.west = rw.at(0);
        t.south = rw.at(1);
        t.east = rw.at(2);
        t.north = rw.at(3);
        t.scale = e.at("scale");
        out.push_back(t);
    }
    return out;
}

std::vector<Match> read_matches_csv(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot open match file " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("tile_id,corona_col,corona_row,ref_lon,ref_lat,confidence", 0) != 0)
        throw Error(ErrorCode::ConfigInvalid, "unexpected match file header in " + path.string());
    std::vector<Match> out;
    int lineno = 1;
    while (std::getline(in, line))
    {
        ++lineno;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string f[6];
        for (auto &x : f)
            std::getline(ss, x, ',');
        try
        {
            Match m;
            m.tile_id = f[0];
            m.corona = {std::stod(f[1]), std::stod(f[2])};
            m.ref_lon = std::stod(f[3]);
            m.ref_lat = std::stod(f[4]);
            m.confidence = std::stod(f[5]);
            if (m.confidence < 0.0 || m.confidence > 1.0)
                throw std::invalid_argument("confidence");
            out.push_back(m);
        }
        catch (const std::exception &)
        {
            throw Error(ErrorCode::ConfigInvalid, path.string() + ":" + std::to_string(lineno) + ": malformed match record");
        }
    }
    return out;
}

void write_matches_csv(const std::filesystem::path &path, const std::vector<Match> &matches)
{
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "tile_id,corona_col,corona_row,ref_lon,ref_lat,confidence\n";
    out.precision(17);
    for (const Match &m : matches)
        out << m.tile_id << ',' << m.corona.col << ',' << m.corona.row << ',' << m.ref_lon << ',' << m.ref_lat << ',' << m.confidence
            << '\n';
}

std::vector<Match> filter_matches(const std::vector<Match> &matches, double min_confidence, int cap_per_tile)
{
    std::map<std::string, std::vector<size_t>> by_tile;
    for (size_t i = 0; i < matches.size(); ++i)
        if (matches[i].confidence >= min_confidence)
            by_tile[matches[i].tile_id].push_back(i);
    std::vector<size_t> keep;
    for (auto &[id, idx] : by_tile)
    {
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return matches[a].confidence > matches[b].confidence; });
        if (static_cast<int>(idx.size()) > cap_per_tile)
            idx.resize(cap_per_tile);
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    std::sort(keep.begin(), keep.end());
    std::vector<Match> out;
    for (size_t i : keep)
        out.push_back(matches[i]);
    return out;
}

FootprintEstimate refine_footprint(const FootprintEstimate &fp, const std::vector<Match> &matches, const RefineOptions &opt)
{
    std::vector<PixelPoint> px;
    std::vector<cplx> g;
    const GeodeticPoint c = fp.center();
    const UtmProjection utm = UtmProjection::for_lonlat(c.lon, c.lat);
    for (const Match &m : matches)
        if (m.confidence >= opt.min_confidence)
        {
            px.push_back(m.corona);
            const MapPoint mp = utm.forward(m.ref_lon, m.ref_lat);
            g.emplace_back(mp.easting, mp.northing);
        }
    if (px.size() < 10)
        throw Error(ErrorCode::InsufficientMatches, "footprint refinement needs 10 matches, got " + std::to_string(px.size()));

    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<size_t> pick(0, px.size() - 1);
    std::vector<size_t> best_inliers;
    bool best_mirror = false;
    for (bool mirrored : {false, true})
        for (int it = 0; it < opt.ransac_iterations; ++it)
        {
            const size_t i = pick(rng), j = pick(rng);
            if (i == j)
                continue;
            Similarity s;
            s.mirrored = mirrored;
            const cplx dz = s.z(px[i]) - s.z(px[j]);
            if (std::abs(dz) < 1e-9)
                continue;
            s.a = (g[i] - g[j]) / dz;
            s.b = g[i] - s.a * s.z(px[i]);
            std::vector<size_t> inl;
            for (size_t k = 0; k < px.size(); ++k)
                if (std::abs(s.apply(px[k]) - g[k]) < opt.inlier_tol_m)
                    inl.push_back(k);
            if (inl.size() > best_inliers.size())
            {
                best_inliers = std::move(inl);
                best_mirror = mirrored;
            }
        }
    if (best_inliers.size() < 10)
        throw Error(ErrorCode::InsufficientMatches, "fewer than 10 matches agree on a footprint");
    // least squares on the consensus set, then one re-selection pass
    Similarity s = fit_similarity(px, g, best_inliers, best_mirror);
    std::vector<size_t> inl;
    for (size_t k = 0; k < px.size(); ++k)
        if (std::abs(s.apply(px[k]) - g[k]) < opt.inlier_tol_m)
            inl.push_back(k);
    if (inl.size() >= 10)
        s = fit_similarity(px, g, inl, best_mirror);
    else
        inl = best_inliers;
    std::vector<double> res;
    for (size_t k : inl)
        res.push_back(std::abs(s.apply(px[k]) - g[k]));
    const double p95 = percentile(res, 0.95);
    if (p95 > fp.uncertainty_km * 1000.0)
        throw Error(ErrorCode::ResidualTooLarge, "footprint fit residual exceeds the prior uncertainty");

    FootprintEstimate out = fp;
    const std::array<PixelPoint, 4> corners{PixelPoint{0, 0}, PixelPoint{double(fp.width), 0},
                                            PixelPoint{double(fp.width), double(fp.height)}, PixelPoint{0, double(fp.height)}};
    for (int i = 0; i < 4; ++i)
    {
        const cplx m = s.apply(corners[i]);
        utm.inverse({m.real(), m.imag()}, out.corners[i].lon, out.corners[i].lat);
    }
    out.uncertainty_km = std::max(p95 / 1000.0, 1e-6);
    return out;
}

std::optional<double> dem_height(const RasterGrid &dem, double lon, double lat)
{
    const Eigen::Vector2d m = lonlat_to_map(dem.crs(), lon, lat);
    return dem.sample_map(m.x(), m.y());
}

AssembledGcps assemble_gcps(const std::vector<Match> &matches, const RasterGrid &dem, const std::string &image_id, double sigma_px)
{
    AssembledGcps out;
    for (size_t i = 0; i < matches.size(); ++i)
    {
        const Match &m = matches[i];
        const auto h = dem_height(dem, m.ref_lon, m.ref_lat);
        if (!h)
        {
            ++out.skipped_nodata;
            continue;
        }
        GcpRecord g;
        g.image_id = image_id;
        g.pixel = m.corona;
        g.ground = geodetic_to_ecef({m.ref_lon, m.ref_lat, *h});
        g.sigma_px = sigma_px;
        g.role = GcpRole::Control;
        g.point_id = image_id + "_" + m.tile_id + "_" + std::to_string(i);
        out.gcps.push_back(std::move(g));
    }
    return out;
}

void split_control_check(std::vector<GcpRecord> &gcps, uint64_t seed, double check_fraction)
{
    std::vector<size_t> idx(gcps.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_check = static_cast<size_t>(std::lround(check_fraction * static_cast<double>(gcps.size())));
    for (size_t k = 0; k < idx.size(); ++k)
        gcps[idx[k]].role = k < n_check ? GcpRole::Check : GcpRole::Control;
}

std::vector<Match> mock_match(const RasterGrid &film, const RasterGrid &reference, const std::vector<TileSpec> &tiles,
                              const FootprintEstimate &fp, const MockMatcherOptions &opt)
{
    std::vector<std::vector<Match>> per_tile(tiles.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (size_t ti = 0; ti < tiles.size(); ++ti)
    {
        const TileSpec &t = tiles[ti];
        const int f = std::max(1, static_cast<int>(std::ceil(t.scale - 1e-9)));
        RasterGrid crop(t.width, t.height, 0.0f, {}, film.nodata());
        for (int r = 0; r < t.height; ++r)
            for (int c = 0; c < t.width; ++c)
            {
                if (film.contains(t.col + c, t.row + r) && film.valid(t.col + c, t.row + r))
                    crop.at(c, r) = film.at(t.col + c, t.row + r);
                else
                    crop.set_nodata(c, r);
            }
        const RasterGrid cimg = downsample(crop, f);
        // reference resampled into the tile's film grid through the footprint
        // exact mapping on a lattice, bilinear in between (smooth at the lattice scale)
        RasterGrid pred(cimg.width(), cimg.height(), 0.0f, {}, kDefaultNodata);
        constexpr int kLattice = 16;
        const int lw = pred.width() / kLattice + 2, lh = pred.height() / kLattice + 2;
        std::vector<Eigen::Vector2d> lattice(static_cast<size_t>(lw) * lh);
        for (int j = 0; j < lh; ++j)
            for (int i = 0; i < lw; ++i)
            {
                const GeodeticPoint g = fp.at(t.col + (i * kLattice + 0.5) * f, t.row + (j * kLattice + 0.5) * f);
                lattice[static_cast<size_t>(j) * lw + i] = lonlat_to_map(reference.crs(), g.lon, g.lat);
            }
        for (int r = 0; r < pred.height(); ++r)
            for (int c = 0; c < pred.width(); ++c)
            {
                const int i = c / kLattice, j = r / kLattice;
                const double u = double(c % kLattice) / kLattice, w = double(r % kLattice) / kLattice;
                const auto L = [&](int di, int dj) { return lattice[static_cast<size_t>(j + dj) * lw + i + di]; };
                const Eigen::Vector2d m = (1 - u) * (1 - w) * L(0, 0) + u * (1 - w) * L(1, 0) + (1 - u) * w * L(0, 1) + u * w * L(1, 1);
                const auto v = reference.sample_map(m.x(), m.y());
                if (v)
                    pred.put(c, r, *v);
                else
                    pred.set_nodata(c, r);
            }
        if (pred.count_valid() < pred.values().size() / 4)
            continue;
        const Eigen::Vector2d shift = phase_correlate(cimg, pred);
        const int half = opt.template_px / 2;
        for (int y = half + 1; y + half + 1 < cimg.height(); y += opt.grid_step)
            for (int x = half + 1; x + half + 1 < cimg.width(); x += opt.grid_step)
            {
                const Eigen::Vector2i guess(static_cast<int>(std::lround(x + shift.x())), static_cast<int>(std::lround(y + shift.y())));
                const auto tm = match_template(cimg, x, y, half, pred, guess, opt.search_px, opt.min_ncc);
                if (!tm)
                    continue;
                const GeodeticPoint g = fp.at(t.col + tm->position.x() * f, t.row + tm->position.y() * f);
                Match m;
                m.tile_id = t.tile_id;
                m.corona = {t.col + (x + 0.5) * f, t.row + (y + 0.5) * f};
                m.ref_lon = g.lon;
                m.ref_lat = g.lat;
                m.confidence = std::clamp(tm->ncc, 0.0, 1.0);
                per_tile[ti].push_back(m);
            }
    }
    std::vector<Match> out;
    for (auto &v : per_tile)
        out.insert(out.end(), v.begin(), v.end());
    return out;
}

} // namespace cosp
