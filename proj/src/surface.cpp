#include <cosp/error.hpp>
#include <cosp/geo.hpp>
#include <cosp/surface.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

namespace cosp
{

void intersection_rows(const PanoramicCamera &cam, const ImagePointMM &p, Eigen::Matrix<double, 2, 3> &a, Eigen::Vector2d &b)
{
    const double alpha = scan_angle(p.x, cam.focal_mm);
    const ExteriorOrientation eo = eo_at(cam, scan_time(p.x, cam));
    const Eigen::Matrix3d r = eo.rotation.matrix();
    a.row(0) = r.row(0) + std::tan(alpha) * r.row(2);
    a.row(1) = r.row(1) + ((p.y + imc_shift(cam, alpha)) / (cam.focal_mm * std::cos(alpha))) * r.row(2);
    b = a * eo.position;
}

Triangulation triangulate(const PanoramicCamera &a, const PanoramicCamera &b, const ImagePointMM &pa, const ImagePointMM &pb,
                          const TriangulateOptions &opt)
{
    Eigen::Matrix<double, 2, 3> ra, rb;
    Eigen::Vector2d ba, bb;
    intersection_rows(a, pa, ra, ba);
    intersection_rows(b, pb, rb, bb);
    Eigen::Matrix<double, 4, 3> m;
    m << ra, rb;
    // solve relative to the first camera position to keep the right-hand side small
    const Eigen::Vector3d origin = a.position;
    Eigen::Vector4d rhs;
    rhs << ba - ra * origin, bb - rb * origin;
    Eigen::JacobiSVD<Eigen::Matrix<double, 4, 3>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (!(sv(2) > 0.0) || sv(0) / sv(2) > opt.max_condition)
        throw Error(ErrorCode::NearParallelRays, "rays are nearly parallel (condition " + std::to_string(sv(0) / sv(2)) + ")");
    const Eigen::Vector3d x = svd.solve(rhs);

    Triangulation t;
    t.point = origin + x;
    t.residual = m * x - rhs;
    const Ray ray_a = backproject_ray(a, pa), ray_b = backproject_ray(b, pb);
    const Eigen::Vector3d n = ray_a.direction.cross(ray_b.direction);
    t.miss_m = std::abs((ray_b.origin - ray_a.origin).dot(n)) / n.norm();
    if (t.miss_m > opt.max_miss_m)
        throw Error(ErrorCode::DivergentPoint, "rays miss each other by " + std::to_string(t.miss_m) + " m");
    return t;
}

Eigen::Vector3d to_map(const EcefPoint &p, const UtmProjection &utm)
{
    const GeodeticPoint g = ecef_to_geodetic(p);
    const MapPoint m = utm.forward(g.lon, g.lat);
    return {m.easting, m.northing, g.h};
}

RasterGrid grid_dem(const std::vector<Eigen::Vector3d> &points, const GeoTransform &gt, int width, int height)
{
    RasterGrid out(width, height, 0.0f, gt);
    const double cell = std::abs(gt.c[1]);
    // bucket points by cell
    std::vector<std::vector<Eigen::Vector3d>> bins(static_cast<size_t>(width) * height);
    for (const Eigen::Vector3d &p : points)
    {
        if (!p.allFinite())
            continue;
        const Eigen::Vector2d px = gt.invert(p.x(), p.y());
        const int c = static_cast<int>(std::floor(px.x())), r = static_cast<int>(std::floor(px.y()));
        if (c >= 0 && r >= 0 && c < width && r < height)
            bins[static_cast<size_t>(r) * width + c].push_back(p);
    }
#pragma omp parallel for schedule(dynamic, 4)
    for (int r = 0; r < height; ++r)
    {
        std::vector<std::pair<double, double>> hw;
        for (int c = 0; c < width; ++c)
        {
            if (bins[static_cast<size_t>(r) * width + c].empty())
            {
                out.set_nodata(c, r);
                continue;
            }
            const Eigen::Vector2d center = out.cell_center(c, r);
            hw.clear();
            double total = 0.0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                {
                    if (!out.contains(c + dc, r + dr))
                        continue;
                    for (const Eigen::Vector3d &p : bins[static_cast<size_t>(r + dr) * width + c + dc])
                    {
                        const double d = std::hypot(p.x() - center.x(), p.y() - center.y()) / cell;
                        const double w = std::exp(-d * d);
                        hw.emplace_back(p.z(), w);
                        total += w;
                    }
                }
            std::sort(hw.begin(), hw.end());
            double acc = 0.0;
            double v = hw.back().first;
            for (const auto &[h, w] : hw)
            {
                acc += w;
                if (acc >= 0.5 * total)
                {
                    v = h;
                    break;
                }
            }
            out.put(c, r, v);
        }
    }
    return out;
}

RasterGrid grid_dem(const std::vector<Eigen::Vector3d> &points, double cell)
{
    if (points.empty())
        throw Error(ErrorCode::InvalidArgument, "cannot grid an empty point cloud");
    if (!(cell > 0.0))
        throw Error(ErrorCode::InvalidArgument, "cell size must be positive");
    double emin = 1e300, emax = -1e300, nmin = 1e300, nmax = -1e300;
    for (const auto &p : points)
    {
        emin = std::min(emin, p.x());
        emax = std::max(emax, p.x());
        nmin = std::min(nmin, p.y());
        nmax = std::max(nmax, p.y());
    }
    const double x0 = std::floor(emin / cell) * cell, y0 = (std::floor(nmax / cell) + 1.0) * cell;
    const int w = static_cast<int>(std::floor((emax - x0) / cell)) + 1;
    const int h = static_cast<int>(std::floor((y0 - nmin) / cell)) + 1;
    return grid_dem(points, GeoTransform::north_up(x0, y0, cell), w, h);
}

DhStats dh_stats(const RasterGrid &dem, const RasterGrid &reference, const RasterGrid *mask, RasterGrid *difference)
{
    if (!same_grid(dem, reference) || (mask && !same_grid(dem, *mask)))
        throw Error(ErrorCode::DisjointGrids, "DEM, reference and mask must share one grid");
    std::vector<double> dh;
    size_t considered = 0;
    if (difference)
    {
        *difference = RasterGrid(dem.width(), dem.height(), 0.0f, dem.geotransform(), dem.nodata());
        difference->set_crs(dem.crs());
    }
    for (int r = 0; r < dem.height(); ++r)
        for (int c = 0; c < dem.width(); ++c)
        {
            if (difference)
                difference->set_nodata(c, r);
            if (mask && (!mask->valid(c, r) || mask->at(c, r) == 0.0f))
                continue;
            ++considered;
            if (!dem.valid(c, r) || !reference.valid(c, r))
                continue;
            const double d = double(dem.at(c, r)) - double(reference.at(c, r));
            dh.push_back(d);
            if (difference)
                difference->put(c, r, d);
        }
    if (dh.size() < 2)
        throw Error(ErrorCode::DisjointGrids, "DEM and reference share fewer than two valid cells");
    DhStats s;
    s.count = dh.size();
    s.valid_fraction = double(dh.size()) / double(considered);
    s.median = median(dh);
    s.nmad = nmad(dh);
    double sum = 0.0;
    for (double d : dh)
        sum += d;
    s.mean = sum / dh.size();
    std::vector<double> kept;
    for (double d : dh)
        if (std::abs(d - s.median) <= 3.0 * s.nmad)
            kept.push_back(d);
    s.filtered_nmad = kept.size() >= 2 ? nmad(kept) : 0.0;
    return s;
}

nlohmann::ordered_json dh_stats_to_json(const DhStats &s)
{
    return {{"nmad_m", s.nmad},
            {"median_m", s.median},
            {"mean_m", s.mean},
            {"nmad_3sigma_filtered_m", s.filtered_nmad},
            {"count", s.count},
            {"valid_fraction", s.valid_fraction}};
}

namespace
{

constexpr int kMaxBlend = 9;

struct BlendWeights
{
    std::array<int, kMaxBlend> tile;
    std::array<double, kMaxBlend> w;
    int n = 0;
};

BlendWeights blend_weights(const std::vector<CoregTile> &tiles, double col, double row, double ov)
{
    BlendWeights b;
    double total = 0.0;
    for (size_t i = 0; i < tiles.size() && b.n < kMaxBlend; ++i)
    {
        const double v = tile_weight(tiles[i], col, row, ov);
        if (v <= 0.0)
            continue;
        b.tile[b.n] = static_cast<int>(i);
        b.w[b.n] = v;
        total += v;
        ++b.n;
    }
    for (int k = 0; k < b.n; ++k)
        b.w[k] /= total;
    return b;
}

Eigen::Vector3d offset_at(const std::vector<CoregTile> &tiles, const BlendWeights &b, const Eigen::Vector3d &p)
{
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    for (int k = 0; k < b.n; ++k)
        d += b.w[k] * tiles[b.tile[k]].transform.offset(p);
    return d;
}

std::vector<int> starts(int n, int size, int step)
{
    if (size >= n)
        return {0};
    const int count = static_cast<int>(std::ceil(double(n - size) / step)) + 1;
    std::vector<int> s(count);
    for (int i = 0; i < count; ++i)
        s[i] = static_cast<int>(std::lround(double(n - size) * i / (count - 1)));
    return s;
}

// Reference height and gradient (per map meter) at a map point.
bool sample_with_gradient(const RasterGrid &ref, double x, double y, double &h, Eigen::Vector2d &g)
{
    const Eigen::Vector2d p = ref.geotransform().invert(x, y);
    const auto c = ref.sample(p.x(), p.y());
    const auto xm = ref.sample(p.x() - 0.5, p.y()), xp = ref.sample(p.x() + 0.5, p.y());
    const auto ym = ref.sample(p.x(), p.y() - 0.5), yp = ref.sample(p.x(), p.y() + 0.5);
    if (!c || !xm || !xp || !ym || !yp)
        return false;
    h = *c;
    const auto &gt = ref.geotransform().c;
    Eigen::Matrix2d lin;
    lin << gt[1], gt[2], gt[4], gt[5];
    g = lin.inverse().transpose() * Eigen::Vector2d(*xp - *xm, *yp - *ym);
    return true;
}

struct StableCell
{
    int col, row;
    Eigen::Vector3d p;
    BlendWeights blend;
};

bool in_tile(const CoregTile &t, int c, int r) { return c >= t.col && r >= t.row && c < t.col + t.width && r < t.row + t.height; }

std::optional<double> tile_nmad(const RasterGrid &dem, const RasterGrid &ref, const std::vector<StableCell> &cells, const CoregTile &t)
{
    std::vector<double> dh;
    for (const StableCell &s : cells)
        if (in_tile(t, s.col, s.row) && dem.valid(s.col, s.row))
            dh.push_back(double(dem.at(s.col, s.row)) - double(ref.at(s.col, s.row)));
    if (dh.size() < 2)
        return std::nullopt;
    return nmad(dh);
}

} // namespace

double tile_weight(const CoregTile &t, double col, double row, double overlap_cells)
{
    const Eigen::Vector4d &b = t.weight_box;
    const double dc = std::min(col - b(0), b(2) - col), dr = std::min(row - b(1), b(3) - row);
    if (dc <= 0.0 || dr <= 0.0)
        return 0.0;
    const double ov = std::max(overlap_cells, 1e-9);
    return std::min(1.0, dc / ov) * std::min(1.0, dr / ov);
}

double coreg_overlap_cells(const RasterGrid &dem, const CoregOptions &opt)
{
    const double cell = std::abs(dem.geotransform().c[1]);
    return std::max(1.0, opt.overlap * opt.tile_m / cell);
}

std::vector<CoregTile> coreg_tile_layout(const RasterGrid &dem, const CoregOptions &opt)
{
    const double cell = std::abs(dem.geotransform().c[1]);
    const int size = std::max(1, static_cast<int>(std::lround(opt.tile_m / cell)));
    const int step = std::max(1, static_cast<int>(std::lround(size * (1.0 - opt.overlap))));
    const double ov = coreg_overlap_cells(dem, opt);
    std::vector<CoregTile> tiles;
    for (int r : starts(dem.height(), size, step))
        for (int c : starts(dem.width(), size, step))
        {
            CoregTile t;
            t.col = c;
            t.row = r;
            t.width = std::min(size, dem.width());
            t.height = std::min(size, dem.height());
            // tiles taper only towards their neighbours
            t.weight_box << c, r, c + t.width, r + t.height;
            if (c == 0)
                t.weight_box(0) -= ov;
            if (r == 0)
                t.weight_box(1) -= ov;
            if (c + t.width >= dem.width())
                t.weight_box(2) += ov;
            if (r + t.height >= dem.height())
                t.weight_box(3) += ov;
            tiles.push_back(t);
        }
    return tiles;
}

Eigen::Vector3d blended_offset(const std::vector<CoregTile> &tiles, const GeoTransform &gt, double overlap_cells, const Eigen::Vector3d &p)
{
    const Eigen::Vector2d px = gt.invert(p.x(), p.y());
    return offset_at(tiles, blend_weights(tiles, px.x(), px.y(), overlap_cells), p);
}

RasterGrid apply_tile_transforms(const RasterGrid &dem, const std::vector<CoregTile> &tiles, double overlap_cells)
{
    RasterGrid out(dem.width(), dem.height(), 0.0f, dem.geotransform(), dem.nodata());
    out.set_crs(dem.crs());
    const GeoTransform &gt = dem.geotransform();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < dem.height(); ++r)
        for (int c = 0; c < dem.width(); ++c)
        {
            // find the surface point p whose transformed position lies over this cell
            const Eigen::Vector2d q = out.cell_center(c, r);
            Eigen::Vector3d p(q.x(), q.y(), 0.0), d = Eigen::Vector3d::Zero();
            bool ok = true;
            for (int it = 0; it < 6 && ok; ++it)
            {
                p.head<2>() = q - d.head<2>();
                const auto z = dem.sample_map(p.x(), p.y());
                if (!z)
                {
                    ok = false;
                    break;
                }
                p.z() = *z;
                d = blended_offset(tiles, gt, overlap_cells, p);
            }
            if (ok)
                out.put(c, r, p.z() + d.z());
            else
                out.set_nodata(c, r);
        }
    return out;
}

CoregResult coregister_tiles(const RasterGrid &dem, const RasterGrid &reference, const RasterGrid *stable, const CoregOptions &opt)
{
    if (!same_grid(dem, reference) || (stable && !same_grid(dem, *stable)))
        throw Error(ErrorCode::DisjointGrids, "DEM, reference and stable mask must share one grid");
    CoregResult res;
    res.tiles = coreg_tile_layout(dem, opt);
    auto &tiles = res.tiles;
    const double ov = coreg_overlap_cells(dem, opt);

    std::vector<StableCell> cells;
    std::vector<size_t> valid_in_tile(tiles.size(), 0), stable_in_tile(tiles.size(), 0);
    for (int r = 0; r < dem.height(); ++r)
        for (int c = 0; c < dem.width(); ++c)
        {
            if (!dem.valid(c, r))
                continue;
            const bool st = reference.valid(c, r) && (!stable || (stable->valid(c, r) && stable->at(c, r) != 0.0f));
            for (size_t t = 0; t < tiles.size(); ++t)
                if (in_tile(tiles[t], c, r))
                {
                    ++valid_in_tile[t];
                    stable_in_tile[t] += st;
                }
            if (!st)
                continue;
            const Eigen::Vector2d xy = dem.cell_center(c, r);
            cells.push_back({c, r, {xy.x(), xy.y(), dem.at(c, r)}, blend_weights(tiles, c + 0.5, r + 0.5, ov)});
        }

    // parameter blocks: tiles with enough stable terrain own one, the rest share their nearest
    std::vector<int> block_of(tiles.size(), -1), owner;
    for (size_t t = 0; t < tiles.size(); ++t)
    {
        tiles[t].stable_fraction = valid_in_tile[t] ? double(stable_in_tile[t]) / valid_in_tile[t] : 0.0;
        if (tiles[t].stable_fraction >= opt.min_stable_fraction && stable_in_tile[t] >= 12)
        {
            block_of[t] = static_cast<int>(owner.size());
            owner.push_back(static_cast<int>(t));
        }
    }
    if (owner.empty())
        throw Error(ErrorCode::NoStableTerrain, "no tile has enough stable terrain for coregistration");
    auto tile_center = [&](size_t t) { return Eigen::Vector2d(tiles[t].col + 0.5 * tiles[t].width, tiles[t].row + 0.5 * tiles[t].height); };
    for (size_t t = 0; t < tiles.size(); ++t)
    {
        if (block_of[t] >= 0)
            continue;
        double best = 1e300;
        for (int o : owner)
        {
            const double d = (tile_center(t) - tile_center(o)).norm();
            if (d < best)
            {
                best = d;
                tiles[t].source = o;
            }
        }
        tiles[t].inherited = true;
        block_of[t] = block_of[tiles[t].source];
    }

    // block centres: tile centre and mean stable height
    const int nb = static_cast<int>(owner.size());
    std::vector<Affine3D> blocks(nb);
    for (int b = 0; b < nb; ++b)
    {
        const CoregTile &t = tiles[owner[b]];
        const Eigen::Vector2d c = dem.geotransform().apply(t.col + 0.5 * t.width, t.row + 0.5 * t.height);
        double zs = 0.0;
        size_t n = 0;
        for (const StableCell &s : cells)
            if (in_tile(t, s.col, s.row))
            {
                zs += s.p.z();
                ++n;
            }
        blocks[b].center = {c.x(), c.y(), n ? zs / n : 0.0};
    }
    auto sync_tiles = [&] {
        for (size_t t = 0; t < tiles.size(); ++t)
            tiles[t].transform = blocks[block_of[t]];
    };
    sync_tiles();

    const int np = 12 * nb;
    constexpr int kChunks = 64;
    for (int iter = 0; iter < opt.max_iterations; ++iter)
    {
        // fixed chunking keeps the reduction order independent of the thread count
        std::vector<Eigen::MatrixXd> nchunk(kChunks, Eigen::MatrixXd::Zero(np, np));
        std::vector<Eigen::VectorXd> rchunk(kChunks, Eigen::VectorXd::Zero(np));
        std::vector<size_t> used(cells.size(), 0);
#pragma omp parallel for schedule(dynamic, 1)
        for (int ch = 0; ch < kChunks; ++ch)
        {
            const size_t lo = cells.size() * ch / kChunks, hi = cells.size() * (ch + 1) / kChunks;
            std::vector<std::pair<int, double>> row;
            for (size_t i = lo; i < hi; ++i)
            {
                const StableCell &s = cells[i];
                const Eigen::Vector3d d = offset_at(tiles, s.blend, s.p);
                double h;
                Eigen::Vector2d g;
                if (!sample_with_gradient(reference, s.p.x() + d.x(), s.p.y() + d.y(), h, g))
                    continue;
                const double e = h - (s.p.z() + d.z());
                if (std::abs(e) > opt.max_dh_m || rad_to_deg(std::atan(g.norm())) > opt.max_slope_deg)
                    continue;
                used[i] = 1;
                const Eigen::Vector3d sens(g.x(), g.y(), -1.0);
                std::map<int, double> coef; // block -> summed weight
                for (int k = 0; k < s.blend.n; ++k)
                    coef[block_of[s.blend.tile[k]]] += s.blend.w[k];
                row.clear();
                for (const auto &[b, w] : coef)
                {
                    const Eigen::Vector3d rel = s.p - blocks[b].center;
                    for (int ko = 0; ko < 3; ++ko)
                    {
                        for (int m = 0; m < 3; ++m)
                            row.emplace_back(12 * b + 3 * ko + m, w * sens(ko) * rel(m));
                        row.emplace_back(12 * b + 9 + ko, w * sens(ko));
                    }
                }
                Eigen::MatrixXd &nm = nchunk[ch];
                Eigen::VectorXd &rv = rchunk[ch];
                for (const auto &[a, va] : row)
                {
                    rv(a) -= va * e;
                    for (const auto &[b, vb] : row)
                        nm(a, b) += va * vb;
                }
            }
        }
        Eigen::MatrixXd nmat = Eigen::MatrixXd::Zero(np, np);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(np);
        for (int ch = 0; ch < kChunks; ++ch)
        {
            nmat += nchunk[ch];
            rhs += rchunk[ch];
        }
        if (rhs.isZero(0.0))
            break;
        // scaled pseudo-inverse: unobservable directions (e.g. shifts over flat ground) stay at zero
        Eigen::VectorXd sc(np);
        for (int i = 0; i < np; ++i)
            sc(i) = nmat(i, i) > 0.0 ? 1.0 / std::sqrt(nmat(i, i)) : 0.0;
        const Eigen::MatrixXd ns = sc.asDiagonal() * nmat * sc.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ns);
        const Eigen::VectorXd ev = es.eigenvalues();
        const double cutoff = 1e-12 * ev.maxCoeff();
        Eigen::VectorXd y = es.eigenvectors().transpose() * (sc.asDiagonal() * rhs);
        for (int i = 0; i < np; ++i)
            y(i) = ev(i) > cutoff ? y(i) / ev(i) : 0.0;
        const Eigen::VectorXd delta = sc.asDiagonal() * (es.eigenvectors() * y);

        double max_step = 0.0;
        std::vector<Affine3D> step(nb);
        for (int b = 0; b < nb; ++b)
        {
            step[b].center = blocks[b].center;
            for (int ko = 0; ko < 3; ++ko)
            {
                for (int m = 0; m < 3; ++m)
                    step[b].linear(ko, m) = delta(12 * b + 3 * ko + m);
                step[b].translation(ko) = delta(12 * b + 9 + ko);
            }
            blocks[b].linear += step[b].linear;
            blocks[b].translation += step[b].translation;
        }
        for (const StableCell &s : cells)
            for (int k = 0; k < s.blend.n; ++k)
                max_step = std::max(max_step, step[block_of[s.blend.tile[k]]].offset(s.p).norm());
        sync_tiles();
        for (auto &t : tiles)
            t.cells_used = 0;
        for (size_t i = 0; i < cells.size(); ++i)
            if (used[i])
                for (size_t t = 0; t < tiles.size(); ++t)
                    tiles[t].cells_used += in_tile(tiles[t], cells[i].col, cells[i].row);
        if (max_step < opt.tolerance_m)
            break;
    }

    // never let a tile's stable-terrain NMAD grow: revert offending tiles to identity
    for (size_t t = 0; t < tiles.size(); ++t)
        tiles[t].nmad_before = tile_nmad(dem, reference, cells, tiles[t]);
    for (size_t pass = 0; pass <= tiles.size(); ++pass)
    {
        res.corrected = apply_tile_transforms(dem, tiles, ov);
        bool changed = false;
        for (size_t t = 0; t < tiles.size(); ++t)
        {
            tiles[t].nmad_after = tile_nmad(res.corrected, reference, cells, tiles[t]);
            if (tiles[t].nmad_before && tiles[t].nmad_after && *tiles[t].nmad_after > *tiles[t].nmad_before + 1e-6 && !tiles[t].reverted)
            {
                tiles[t].reverted = true;
                tiles[t].transform.linear.setZero();
                tiles[t].transform.translation.setZero();
                changed = true;
            }
        }
        if (!changed)
            break;
    }
    res.before = dh_stats(dem, reference, stable);
    res.after = dh_stats(res.corrected, reference, stable);
    return res;
}

nlohmann::ordered_json coreg_result_to_json(const CoregResult &r)
{
    nlohmann::ordered_json tiles = nlohmann::ordered_json::array();
    for (const CoregTile &t : r.tiles)
    {
        nlohmann::ordered_json lin = nlohmann::ordered_json::array();
        for (int i = 0; i < 3; ++i)
            lin.push_back({t.transform.linear(i, 0), t.transform.linear(i, 1), t.transform.linear(i, 2)});
        nlohmann::ordered_json j{{"window", {t.col, t.row, t.width, t.height}},
                                 {"center", {t.transform.center.x(), t.transform.center.y(), t.transform.center.z()}},
                                 {"linear_minus_identity", lin},
                                 {"translation_m", {t.transform.translation.x(), t.transform.translation.y(), t.transform.translation.z()}},
                                 {"stable_fraction", t.stable_fraction},
                                 {"cells_used", t.cells_used},
                                 {"underconstrained", t.inherited},
                                 {"inherited_from", t.inherited ? nlohmann::ordered_json(t.source) : nlohmann::ordered_json(nullptr)},
                                 {"reverted", t.reverted}};
        j["nmad_before_m"] = t.nmad_before ? nlohmann::ordered_json(*t.nmad_before) : nlohmann::ordered_json(nullptr);
        j["nmad_after_m"] = t.nmad_after ? nlohmann::ordered_json(*t.nmad_after) : nlohmann::ordered_json(nullptr);
        tiles.push_back(j);
    }
    return {{"before", dh_stats_to_json(r.before)}, {"after", dh_stats_to_json(r.after)}, {"tiles", tiles}};
}

} // namespace cosp
