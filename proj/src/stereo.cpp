#include <cosp/error.hpp>
#include <cosp/kernels.hpp>
#include <cosp/stereo.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cosp
{
namespace
{

Eigen::Matrix2d rot(double a)
{
    Eigen::Matrix2d m;
    m << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return m;
}

std::vector<double> monomials(int degree, double x, double y)
{
    std::vector<double> v;
    v.reserve(Poly2::terms(degree));
    for (const auto &[i, j] : Poly2::exponents(degree))
        v.push_back(std::pow(x, i) * std::pow(y, j));
    return v;
}

// Column-scaled least squares with a condition check on the scaled normal matrix.
Eigen::VectorXd solve_ls(const Eigen::MatrixXd &a, const Eigen::VectorXd &rhs, double max_condition, const char *what)
{
    Eigen::VectorXd s(a.cols());
    for (int j = 0; j < a.cols(); ++j)
    {
        const double n = a.col(j).norm();
        s(j) = n > 0.0 ? 1.0 / n : 1.0;
    }
    const Eigen::MatrixXd as = a * s.asDiagonal();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(as.transpose() * as).eigenvalues();
    if (!(ev(0) > 0.0) || ev(ev.size() - 1) / ev(0) > max_condition)
        throw Error(ErrorCode::IllConditionedFit, std::string(what) + ": normal matrix condition " + std::to_string(ev(ev.size() - 1) / ev(0)));
    const Eigen::VectorXd x = as.colPivHouseholderQr().solve(rhs);
    return s.asDiagonal() * x;
}

Poly2 fit_poly(const std::vector<Eigen::Vector2d> &in, const std::vector<double> &out, int degree, double max_condition)
{
    const int nt = Poly2::terms(degree);
    Eigen::MatrixXd a(in.size(), nt);
    Eigen::VectorXd r(in.size());
    for (size_t i = 0; i < in.size(); ++i)
    {
        const auto m = monomials(degree, in[i].x(), in[i].y());
        for (int k = 0; k < nt; ++k)
            a(i, k) = m[k];
        r(i) = out[i];
    }
    Poly2 p = Poly2::zero(degree);
    const Eigen::VectorXd c = solve_ls(a, r, max_condition, "polynomial fit");
    for (int k = 0; k < nt; ++k)
        p.coef[k] = c(k);
    return p;
}

double doubled_angle_mean(const std::vector<Eigen::Vector2d> &dirs)
{
    double c = 0.0, s = 0.0;
    for (const Eigen::Vector2d &d : dirs)
    {
        const double a = std::atan2(d.y(), d.x());
        c += std::cos(2 * a);
        s += std::sin(2 * a);
    }
    double a = 0.5 * std::atan2(s, c);
    if (a <= -kPi / 2)
        a += kPi;
    return a;
}

std::optional<PixelPoint> transfer(const PanoramicCamera &from, const PanoramicCamera &to, const PixelPoint &p, double h)
{
    EcefPoint g;
    if (!backproject_to_height(from, pixel_to_mm(p, from.image), h, g))
        return std::nullopt;
    try
    {
        return mm_to_pixel(project(to, g), to.image);
    }
    catch (const Error &)
    {
        return std::nullopt;
    }
}

std::vector<Eigen::Vector2d> epipolar_segments(const PanoramicCamera &from, const PanoramicCamera &to, HeightRange h, int grid, int &failed)
{
    std::vector<Eigen::Vector2d> dirs;
    failed = 0;
    for (int j = 0; j < grid; ++j)
        for (int i = 0; i < grid; ++i)
        {
            const PixelPoint p{from.image.width * (0.05 + 0.9 * (i + 0.5) / grid), from.image.height * (0.05 + 0.9 * (j + 0.5) / grid)};
            const auto lo = transfer(from, to, p, h.min), hi = transfer(from, to, p, h.max);
            if (!lo || !hi || !to.image.contains(*lo) || !to.image.contains(*hi))
            {
                ++failed;
                continue;
            }
            const Eigen::Vector2d d(hi->col - lo->col, hi->row - lo->row);
            if (d.norm() > 0.0)
                dirs.push_back(d);
        }
    return dirs;
}

void setup_side(RectificationSide &s, double angle, int w, int h)
{
    s.angle = angle;
    s.width = w;
    s.height = h;
    s.center = {0.5 * w, 0.5 * h};
    s.norm = 0.5 * std::max(w, h);
}

HeightRange widen(HeightRange h, double margin)
{
    const double span = std::max(h.max - h.min, 1.0);
    return {h.min - margin * span, h.max + margin * span};
}

} // namespace

std::vector<std::pair<int, int>> Poly2::exponents(int degree)
{
    std::vector<std::pair<int, int>> e;
    for (int t = 0; t <= degree; ++t)
        for (int i = t; i >= 0; --i)
            e.emplace_back(i, t - i);
    return e;
}

double Poly2::eval(double x, double y) const
{
    double s = 0.0;
    int k = 0;
    for (int t = 0; t <= degree; ++t)
        for (int i = t; i >= 0; --i, ++k)
            if (coef[k] != 0.0)
                s += coef[k] * std::pow(x, i) * std::pow(y, t - i);
    return s;
}

Eigen::Vector2d Poly2::gradient(double x, double y) const
{
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    int k = 0;
    for (int t = 0; t <= degree; ++t)
        for (int i = t; i >= 0; --i, ++k)
        {
            if (coef[k] == 0.0)
                continue;
            const int j = t - i;
            if (i > 0)
                g.x() += coef[k] * i * std::pow(x, i - 1) * std::pow(y, j);
            if (j > 0)
                g.y() += coef[k] * j * std::pow(x, i) * std::pow(y, j - 1);
        }
    return g;
}

Eigen::Vector2d RectificationSide::normalize(const PixelPoint &p) const
{
    return rot(-angle) * Eigen::Vector2d(p.col - center.x(), p.row - center.y()) / norm;
}

PixelPoint RectificationSide::denormalize(const Eigen::Vector2d &n) const
{
    const Eigen::Vector2d d = rot(angle) * (n * norm) + center;
    return {d.x(), d.y()};
}

Eigen::Vector2d RectificationSide::forward_normalized(const Eigen::Vector2d &n) const
{
    return {px.eval(n.x(), n.y()), py.eval(n.x(), n.y())};
}

PixelPoint RectificationModel::forward(int s, const PixelPoint &p) const
{
    const Eigen::Vector2d o = side(s).forward_normalized(side(s).normalize(p));
    return {(o.x() - origin.x()) * scale, (o.y() - origin.y()) * scale};
}

std::optional<PixelPoint> RectificationModel::inverse(int s, const PixelPoint &q) const
{
    const RectificationSide &sd = side(s);
    const Eigen::Vector2d o(q.col / scale + origin.x(), q.row / scale + origin.y());
    Eigen::Vector2d n(sd.inv_x.eval(o.x(), o.y()), sd.inv_y.eval(o.x(), o.y()));
    for (int it = 0; it < 8; ++it)
    {
        const Eigen::Vector2d f = sd.forward_normalized(n) - o;
        if (f.norm() < 1e-13)
            return sd.denormalize(n);
        Eigen::Matrix2d j;
        j.row(0) = sd.px.gradient(n.x(), n.y()).transpose();
        j.row(1) = sd.py.gradient(n.x(), n.y()).transpose();
        n -= j.inverse() * f;
        if (!n.allFinite() || n.norm() > 10.0)
            return std::nullopt;
    }
    if ((sd.forward_normalized(n) - o).norm() * scale > 1e-6)
        return std::nullopt;
    return sd.denormalize(n);
}

double RectificationModel::jacobian_det(int s, const Eigen::Vector2d &n) const
{
    const RectificationSide &sd = side(s);
    const Eigen::Vector2d gx = sd.px.gradient(n.x(), n.y()), gy = sd.py.gradient(n.x(), n.y());
    return gx.x() * gy.y() - gx.y() * gy.x();
}

std::pair<double, double> estimate_epipolar_directions(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h, int grid)
{
    int fa = 0, fb = 0;
    const auto in_b = epipolar_segments(a, b, h, grid, fb);
    const auto in_a = epipolar_segments(b, a, h, grid, fa);
    const int total = grid * grid;
    if (fa > total / 5 || fb > total / 5)
        throw Error(ErrorCode::ProjectionFailure, "too many grid points fail to project between the images");
    return {doubled_angle_mean(in_a), doubled_angle_mean(in_b)};
}

std::vector<VirtualCorrespondence> virtual_correspondences(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h, int grid,
                                                           int levels, double offset)
{
    std::vector<VirtualCorrespondence> out;
    for (int l = 0; l < levels; ++l)
    {
        const double height = levels > 1 ? h.min + (h.max - h.min) * l / (levels - 1) : 0.5 * (h.min + h.max);
        for (int j = 0; j < grid; ++j)
            for (int i = 0; i < grid; ++i)
            {
                const PixelPoint p{a.image.width * (i + 0.5 + offset) / grid, a.image.height * (j + 0.5 + offset) / grid};
                if (!a.image.contains(p))
                    continue;
                const auto q = transfer(a, b, p, height);
                if (q && b.image.contains(*q))
                    out.push_back({p, *q, height});
            }
    }
    return out;
}

void fit_rectification(RectificationModel &m, const std::vector<VirtualCorrespondence> &vc, int degree, double max_condition)
{
    const auto ex = Poly2::exponents(degree);
    const int nt = static_cast<int>(ex.size());
    std::vector<int> ax; // A monomials containing x
    for (int k = 0; k < nt; ++k)
        if (ex[k].first > 0)
            ax.push_back(k);
    const int na = static_cast<int>(ax.size());
    if (static_cast<int>(vc.size()) < 2 * (na + nt))
        throw Error(ErrorCode::IllConditionedFit, "too few correspondences for the rectifying polynomials");

    // rows: yA' = nA_y + sum a_k m_k(nA) equals yB' = sum b_k m_k(nB)
    Eigen::MatrixXd design(vc.size(), na + nt);
    Eigen::VectorXd rhs(vc.size());
    std::vector<Eigen::Vector2d> na_pts(vc.size()), nb_pts(vc.size());
    for (size_t i = 0; i < vc.size(); ++i)
    {
        na_pts[i] = m.a.normalize(vc[i].a);
        nb_pts[i] = m.b.normalize(vc[i].b);
        const auto ma = monomials(degree, na_pts[i].x(), na_pts[i].y());
        const auto mb = monomials(degree, nb_pts[i].x(), nb_pts[i].y());
        for (int k = 0; k < na; ++k)
            design(i, k) = ma[ax[k]];
        for (int k = 0; k < nt; ++k)
            design(i, na + k) = -mb[k];
        rhs(i) = -na_pts[i].y();
    }
    const Eigen::VectorXd sol = solve_ls(design, rhs, max_condition, "epipolar row fit");
    m.a.px = Poly2::zero(degree);
    m.a.px.coef[1] = 1.0; // x
    m.a.py = Poly2::zero(degree);
    m.a.py.coef[2] = 1.0; // y
    for (int k = 0; k < na; ++k)
        m.a.py.coef[ax[k]] += sol(k);
    m.b.py = Poly2::zero(degree);
    for (int k = 0; k < nt; ++k)
        m.b.py.coef[k] = sol(na + k);

    // columns of B agree with A at the middle height level
    double hmin = 1e300, hmax = -1e300;
    for (const auto &v : vc)
    {
        hmin = std::min(hmin, v.height);
        hmax = std::max(hmax, v.height);
    }
    const double hmid = 0.5 * (hmin + hmax);
    double best = 1e300;
    for (const auto &v : vc)
        best = std::min(best, std::abs(v.height - hmid));
    std::vector<Eigen::Vector2d> xin;
    std::vector<double> xout;
    for (size_t i = 0; i < vc.size(); ++i)
        if (std::abs(std::abs(vc[i].height - hmid) - best) < 1e-9 || hmax - hmin < 1e-9)
        {
            xin.push_back(nb_pts[i]);
            xout.push_back(na_pts[i].x());
        }
    if (static_cast<int>(xin.size()) < 2 * nt)
    {
        xin = nb_pts;
        xout.clear();
        for (const auto &p : na_pts)
            xout.push_back(p.x());
    }
    m.b.px = fit_poly(xin, xout, degree, max_condition);

    // bijectivity, inverse polynomials and the output grid
    double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
    for (int s = 0; s < 2; ++s)
    {
        RectificationSide &sd = s == 0 ? m.a : m.b;
        std::vector<Eigen::Vector2d> outs, ins;
        for (int j = 0; j <= 49; ++j)
            for (int i = 0; i <= 49; ++i)
            {
                const Eigen::Vector2d n = sd.normalize({sd.width * i / 49.0, sd.height * j / 49.0});
                if (m.jacobian_det(s, n) <= 0.0)
                    throw Error(ErrorCode::IllConditionedFit, "rectifying map is not bijective on the image domain");
                outs.push_back(sd.forward_normalized(n));
                ins.push_back(n);
                if (i == 0 || j == 0 || i == 49 || j == 49)
                {
                    xmin = std::min(xmin, outs.back().x());
                    xmax = std::max(xmax, outs.back().x());
                    ymin = std::min(ymin, outs.back().y());
                    ymax = std::max(ymax, outs.back().y());
                }
            }
        std::vector<double> ix, iy;
        for (const auto &p : ins)
        {
            ix.push_back(p.x());
            iy.push_back(p.y());
        }
        sd.inv_x = fit_poly(outs, ix, degree, 1e300);
        sd.inv_y = fit_poly(outs, iy, degree, 1e300);
    }
    m.scale = m.a.norm;
    m.origin = {xmin, ymin};
    m.width = static_cast<int>(std::ceil((xmax - xmin) * m.scale));
    m.height = static_cast<int>(std::ceil((ymax - ymin) * m.scale));
}

RectificationModel build_rectification(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h, const RectifyOptions &opt)
{
    const HeightRange hw = widen(h, opt.height_margin);
    const auto [aa, ab] = estimate_epipolar_directions(a, b, hw);
    RectificationModel m;
    setup_side(m.a, aa, a.image.width, a.image.height);
    setup_side(m.b, ab, b.image.width, b.image.height);
    fit_rectification(m, virtual_correspondences(a, b, hw, opt.grid, opt.levels), opt.degree, opt.max_condition);
    return m;
}

RectificationModel build_rectification_from_matches(const std::vector<std::pair<PixelPoint, PixelPoint>> &matches, int width_a,
                                                    int height_a, int width_b, int height_b, const RectifyOptions &opt)
{
    if (matches.size() < 30)
        throw Error(ErrorCode::InsufficientMatches, "feature-based rectification needs at least 30 matches");
    // affine fits in both directions; height parallax remains in the residuals
    auto principal_axis = [&](bool a_to_b) {
        Eigen::MatrixXd d(matches.size(), 3);
        Eigen::MatrixXd t(matches.size(), 2);
        for (size_t i = 0; i < matches.size(); ++i)
        {
            const PixelPoint &src = a_to_b ? matches[i].first : matches[i].second;
            const PixelPoint &dst = a_to_b ? matches[i].second : matches[i].first;
            d.row(i) << src.col, src.row, 1.0;
            t.row(i) << dst.col, dst.row;
        }
        const Eigen::MatrixXd coef = d.colPivHouseholderQr().solve(t);
        const Eigen::MatrixXd res = t - d * coef;
        const Eigen::Matrix2d cov = res.transpose() * res / static_cast<double>(matches.size());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
        if (!(es.eigenvalues()(1) > 0.01) || es.eigenvalues()(0) > 0.5 * es.eigenvalues()(1))
            throw Error(ErrorCode::IllConditionedFit, "match residuals show no dominant parallax direction (flat scene?)");
        const Eigen::Vector2d v = es.eigenvectors().col(1);
        return doubled_angle_mean({v});
    };
    RectificationModel m;
    setup_side(m.a, principal_axis(false), width_a, height_a);
    setup_side(m.b, principal_axis(true), width_b, height_b);
    std::vector<VirtualCorrespondence> vc;
    for (const auto &[pa, pb] : matches)
        vc.push_back({pa, pb, 0.0});
    fit_rectification(m, vc, opt.degree, opt.max_condition);
    return m;
}

nlohmann::ordered_json rectification_to_json(const RectificationModel &m)
{
    auto side = [](const RectificationSide &s) {
        return nlohmann::ordered_json{{"angle_rad", s.angle},
                                      {"center", {s.center.x(), s.center.y()}},
                                      {"norm_px", s.norm},
                                      {"input_size", {s.width, s.height}},
                                      {"degree", s.px.degree},
                                      {"x_coefficients", s.px.coef},
                                      {"y_coefficients", s.py.coef},
                                      {"inverse_x_coefficients", s.inv_x.coef},
                                      {"inverse_y_coefficients", s.inv_y.coef}};
    };
    return {{"a", side(m.a)},
            {"b", side(m.b)},
            {"scale", m.scale},
            {"origin", {m.origin.x(), m.origin.y()}},
            {"domain", {m.width, m.height}}};
}

RectificationModel rectification_from_json(const nlohmann::json &j)
{
    auto side = [](const nlohmann::json &s) {
        RectificationSide r;
        r.angle = s.at("angle_rad");
        r.center = Eigen::Vector2d(s.at("center").at(0).get<double>(), s.at("center").at(1).get<double>());
        r.norm = s.at("norm_px");
        r.width = s.at("input_size").at(0);
        r.height = s.at("input_size").at(1);
        const int deg = s.at("degree");
        r.px = {deg, s.at("x_coefficients").get<std::vector<double>>()};
        r.py = {deg, s.at("y_coefficients").get<std::vector<double>>()};
        r.inv_x = {deg, s.at("inverse_x_coefficients").get<std::vector<double>>()};
        r.inv_y = {deg, s.at("inverse_y_coefficients").get<std::vector<double>>()};
        if (static_cast<int>(r.px.coef.size()) != Poly2::terms(deg))
            throw Error(ErrorCode::ConfigInvalid, "rectification coefficient count does not match the degree");
        return r;
    };
    RectificationModel m;
    m.a = side(j.at("a"));
    m.b = side(j.at("b"));
    m.scale = j.at("scale");
    m.origin = Eigen::Vector2d(j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>());
    m.width = j.at("domain").at(0);
    m.height = j.at("domain").at(1);
    return m;
}

RasterGrid resample_rectified(const RasterGrid &image, const RectificationModel &m, int side, Exec exec)
{
    RasterGrid out(m.width, m.height, 0.0f, {}, image.nodata());
#pragma omp parallel for schedule(dynamic, 16) if (exec == Exec::Parallel)
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
        {
            const auto p = m.inverse(side, {c + 0.5, r + 0.5});
            std::optional<double> v;
            if (p)
                v = image.sample(p->col, p->row);
            if (v)
                out.put(c, r, *v);
            else
                out.set_nodata(c, r);
        }
    return out;
}

RasterGrid measure_y_parallax(const RasterGrid &a, const RasterGrid &b, int step, int x_search, int y_search, int half, double min_ncc)
{
    const int nx = a.width() / step, ny = a.height() / step;
    GeoTransform gt{{0.0, double(step), 0.0, 0.0, 0.0, double(step)}};
    RasterGrid out(nx, ny, 0.0f, gt);
    const int n = (2 * half + 1) * (2 * half + 1);
#pragma omp parallel for schedule(dynamic, 1)
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
        {
            out.set_nodata(i, j);
            const int cx = i * step + step / 2, cy = j * step + step / 2;
            std::vector<double> t(n);
            double tm = 0.0;
            bool ok = true;
            for (int dy = -half, k = 0; dy <= half && ok; ++dy)
                for (int dx = -half; dx <= half; ++dx, ++k)
                {
                    if (!a.contains(cx + dx, cy + dy) || !a.valid(cx + dx, cy + dy))
                    {
                        ok = false;
                        break;
                    }
                    t[k] = a.at(cx + dx, cy + dy);
                    tm += t[k];
                }
            if (!ok)
                continue;
            tm /= n;
            double tv = 0.0;
            for (double &v : t)
            {
                v -= tm;
                tv += v * v;
            }
            if (tv / n < 4.0)
                continue;
            const int sw = 2 * y_search + 1;
            std::vector<double> score(static_cast<size_t>(2 * x_search + 1) * sw, -2.0);
            double best = -2.0;
            int bx = 0, by = 0;
            for (int sx = -x_search; sx <= x_search; ++sx)
                for (int sy = -y_search; sy <= y_search; ++sy)
                {
                    const int bx0 = cx + sx, by0 = cy + sy;
                    double m = 0.0, sab = 0.0, sbb = 0.0;
                    bool okb = true;
                    for (int dy = -half, k = 0; dy <= half && okb; ++dy)
                        for (int dx = -half; dx <= half; ++dx, ++k)
                        {
                            if (!b.contains(bx0 + dx, by0 + dy) || !b.valid(bx0 + dx, by0 + dy))
                            {
                                okb = false;
                                break;
                            }
                            const double v = b.at(bx0 + dx, by0 + dy);
                            m += v;
                            sab += t[k] * v;
                            sbb += v * v;
                        }
                    if (!okb)
                        continue;
                    const double vb = sbb - m * m / n;
                    const double ncc = vb > 0.0 ? sab / std::sqrt(tv * vb) : -1.0;
                    score[static_cast<size_t>(sx + x_search) * sw + sy + y_search] = ncc;
                    if (ncc > best)
                    {
                        best = ncc;
                        bx = sx;
                        by = sy;
                    }
                }
            if (best < min_ncc || std::abs(by) == y_search || std::abs(bx) == x_search)
                continue;
            if (best > 1.0 - 1e-9)
            {
                out.put(i, j, by);
                continue;
            }
            const double sm = score[static_cast<size_t>(bx + x_search) * sw + by - 1 + y_search];
            const double sp = score[static_cast<size_t>(bx + x_search) * sw + by + 1 + y_search];
            const double den = sm - 2.0 * best + sp;
            const double off = den < 0.0 ? 0.5 * (sm - sp) / den : 0.0;
            out.put(i, j, by + std::clamp(off, -0.5, 0.5));
        }
    return out;
}

DisparityMap sgm_match(const RasterGrid &a, const RasterGrid &b, const SgmOptions &opt, Exec exec)
{
    if (opt.dmax < opt.dmin)
        throw Error(ErrorCode::InvalidArgument, "empty disparity range");
    const kernels::CensusImage ca = kernels::census7x7(a, exec), cb = kernels::census7x7(b, exec);
    const kernels::CostVolume cost = kernels::census_cost(ca, cb, opt.dmin, opt.dmax, exec);
    const std::vector<uint16_t> sum =
        exec == Exec::Serial ? kernels::serial::sgm_aggregate(cost, opt.p1, opt.p2) : kernels::sgm_aggregate(cost, opt.p1, opt.p2);
    const int w = a.width(), h = a.height(), nd = cost.ndisp;

    // right-image disparities from the same aggregated volume
    std::vector<int> right(static_cast<size_t>(b.width()) * b.height(), std::numeric_limits<int>::min());
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (int y = 0; y < std::min(h, b.height()); ++y)
        for (int xb = 0; xb < b.width(); ++xb)
        {
            int best = std::numeric_limits<int>::max(), bk = -1;
            for (int k = 0; k < nd; ++k)
            {
                const int xa = xb - (opt.dmin + k);
                if (xa < 0 || xa >= w || !ca.valid[static_cast<size_t>(y) * w + xa])
                    continue;
                const int s = sum[cost.index(xa, y) + k];
                if (s < best)
                {
                    best = s;
                    bk = k;
                }
            }
            if (bk >= 0)
                right[static_cast<size_t>(y) * b.width() + xb] = -(opt.dmin + bk);
        }

    DisparityMap out;
    out.disparity = RasterGrid(w, h, 0.0f);
    size_t valid = 0;
#pragma omp parallel for schedule(static) reduction(+ : valid) if (exec == Exec::Parallel)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
            out.disparity.set_nodata(x, y);
            if (!ca.valid[static_cast<size_t>(y) * w + x])
                continue;
            // texture
            double s1 = 0.0, s2 = 0.0;
            for (int dy = -3; dy <= 3; ++dy)
                for (int dx = -3; dx <= 3; ++dx)
                {
                    const double v = a.at(x + dx, y + dy);
                    s1 += v;
                    s2 += v * v;
                }
            const double var = s2 / 49.0 - (s1 / 49.0) * (s1 / 49.0);
            if (var < opt.min_texture_std * opt.min_texture_std)
                continue;
            const uint16_t *s = &sum[cost.index(x, y)];
            const uint8_t *c = &cost.cost[cost.index(x, y)];
            int bk = 0;
            for (int k = 1; k < nd; ++k)
                if (s[k] < s[bk])
                    bk = k;
            if (c[bk] == 255 || bk == 0 || bk == nd - 1)
                continue;
            int second = std::numeric_limits<int>::max();
            for (int k = 0; k < nd; ++k)
                if (std::abs(k - bk) > 1)
                    second = std::min(second, int(s[k]));
            if (opt.uniqueness > 0.0 && second != std::numeric_limits<int>::max() && s[bk] * (1.0 + opt.uniqueness) >= second)
                continue;
            const double sm = s[bk - 1], s0 = s[bk], sp = s[bk + 1];
            const double den = sm - 2.0 * s0 + sp;
            const double off = den > 0.0 ? 0.5 * (sm - sp) / den : 0.0;
            const double d = opt.dmin + bk + off;
            const int xb = static_cast<int>(std::lround(x + d));
            if (xb < 0 || xb >= b.width() || y >= b.height())
                continue;
            if (opt.border_px > 0)
            {
                bool near_edge = false;
                for (int k = -opt.border_px; k <= opt.border_px && !near_edge; ++k)
                    near_edge = xb + k < 0 || xb + k >= b.width() || !cb.valid[static_cast<size_t>(y) * b.width() + xb + k] || x + k < 0 ||
                                x + k >= w || !ca.valid[static_cast<size_t>(y) * w + x + k];
                if (near_edge)
                    continue;
            }
            const int dr = right[static_cast<size_t>(y) * b.width() + xb];
            if (dr == std::numeric_limits<int>::min() || std::abs(d + dr) > opt.lr_tolerance)
                continue;
            out.disparity.put(x, y, d);
            ++valid;
        }
    out.valid_cells = valid;
    return out;
}

} // namespace cosp
