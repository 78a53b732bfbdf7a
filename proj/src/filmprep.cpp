#include <cosp/error.hpp>
#include <cosp/filmprep.hpp>
#include <cosp/imgmatch.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

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

double median_of(std::vector<double> v)
{
    if (v.empty())
        return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

Rigid2D fit_rigid_once(const std::vector<PointMatch> &m, const std::vector<char> &use)
{
    Eigen::Vector2d ca = Eigen::Vector2d::Zero(), cb = Eigen::Vector2d::Zero();
    int n = 0;
    for (size_t i = 0; i < m.size(); ++i)
        if (use[i])
        {
            ca += m[i].a;
            cb += m[i].b;
            ++n;
        }
    ca /= n;
    cb /= n;
    double s = 0.0, c = 0.0;
    for (size_t i = 0; i < m.size(); ++i)
        if (use[i])
        {
            const Eigen::Vector2d a = m[i].a - ca, b = m[i].b - cb;
            c += b.dot(a);
            s += b.x() * a.y() - b.y() * a.x();
        }
    Rigid2D t;
    t.rotation = std::atan2(s, c);
    t.translation = ca - rot(t.rotation) * cb;
    return t;
}

// Gaussian-smoothed copy of a column profile.
std::vector<double> smooth(const std::vector<double> &v, double sigma)
{
    if (sigma <= 0.0)
        return v;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    for (int i = -r; i <= r; ++i)
        k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    const int n = static_cast<int>(v.size());
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i)
    {
        double s = 0.0, w = 0.0;
        for (int j = -r; j <= r; ++j)
        {
            const int q = std::clamp(i + j, 0, n - 1);
            s += k[j + r] * v[q];
            w += k[j + r];
        }
        out[i] = s / w;
    }
    return out;
}

// Interpolates invalid entries linearly from the nearest valid neighbours. Returns the longest gap.
int fill_gaps(std::vector<double> &pos, const std::vector<char> &valid)
{
    const int n = static_cast<int>(pos.size());
    int prev = -1, longest = 0;
    for (int i = 0; i <= n; ++i)
    {
        if (i < n && !valid[i])
            continue;
        const int gap = i - prev - 1;
        longest = std::max(longest, gap);
        for (int k = prev + 1; k < i; ++k)
        {
            if (prev < 0 && i < n)
                pos[k] = pos[i];
            else if (prev >= 0 && i >= n)
                pos[k] = pos[prev];
            else if (prev >= 0)
                pos[k] = pos[prev] + (pos[i] - pos[prev]) * (k - prev) / static_cast<double>(i - prev);
        }
        prev = i;
    }
    return longest;
}

int longest_gap(const std::vector<char> &valid)
{
    int run = 0, longest = 0;
    for (char v : valid)
    {
        run = v ? 0 : run + 1;
        longest = std::max(longest, run);
    }
    return longest;
}

double sample_or(const RasterGrid &img, double x, double y, double fallback)
{
    const auto v = img.sample(x, y);
    return v ? *v : fallback;
}

} // namespace

Eigen::Vector2d Rigid2D::apply(const Eigen::Vector2d &p) const { return rot(rotation) * p + translation; }

Rigid2D Rigid2D::inverse() const
{
    Rigid2D r;
    r.rotation = -rotation;
    r.translation = -(rot(-rotation) * translation);
    return r;
}

Rigid2D Rigid2D::compose(const Rigid2D &first) const
{
    Rigid2D r;
    r.rotation = rotation + first.rotation;
    r.translation = rot(rotation) * first.translation + translation;
    return r;
}

Rigid2D fit_rigid(const std::vector<PointMatch> &matches, double reject_px, std::vector<char> *inliers, double *rms)
{
    if (matches.size() < 3)
        throw Error(ErrorCode::InsufficientMatches, "rigid fit needs at least 3 matches, got " + std::to_string(matches.size()));
    {
        Eigen::Vector2d c = Eigen::Vector2d::Zero();
        for (const PointMatch &m : matches)
            c += m.b;
        c /= static_cast<double>(matches.size());
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        for (const PointMatch &m : matches)
            cov += (m.b - c) * (m.b - c).transpose();
        const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues();
        if (ev(1) <= 0.0 || std::sqrt(std::max(ev(0), 0.0) / ev(1)) < 1e-3)
            throw Error(ErrorCode::DegenerateGeometry, "matches are collinear");
    }
    std::vector<char> use(matches.size(), 1);
    Rigid2D t;
    for (int round = 0; round < 6; ++round)
    {
        if (std::count(use.begin(), use.end(), 1) < 3)
            throw Error(ErrorCode::InsufficientMatches, "fewer than 3 matches survive outlier rejection");
        t = fit_rigid_once(matches, use);
        std::vector<double> res(matches.size());
        std::vector<double> kept;
        for (size_t i = 0; i < matches.size(); ++i)
        {
            res[i] = (t.apply(matches[i].b) - matches[i].a).norm();
            if (use[i])
                kept.push_back(res[i]);
        }
        const double limit = std::max(reject_px, 3.0 * 1.4826 * median_of(kept));
        bool changed = false;
        for (size_t i = 0; i < matches.size(); ++i)
        {
            const char u = res[i] <= limit;
            changed |= u != use[i];
            use[i] = u;
        }
        if (!changed)
            break;
    }
    if (std::count(use.begin(), use.end(), 1) < 3)
        throw Error(ErrorCode::InsufficientMatches, "fewer than 3 matches survive outlier rejection");
    if (rms)
    {
        double s = 0.0;
        int n = 0;
        for (size_t i = 0; i < matches.size(); ++i)
            if (use[i])
            {
                s += (t.apply(matches[i].b) - matches[i].a).squaredNorm();
                ++n;
            }
        *rms = std::sqrt(s / n);
    }
    if (inliers)
        *inliers = use;
    return t;
}

std::vector<PointMatch> match_overlap(const RasterGrid &left, const RasterGrid &right, int overlap_cols, int template_px,
                                      int search_px)
{
    std::vector<PointMatch> out;
    const int half = template_px / 2;
    const int x0 = left.width() - overlap_cols;
    const int step = std::max(template_px, 8);
    const int margin = half + search_px + 2;
    for (int ty = margin; ty + margin < left.height(); ty += step)
        for (int tx = x0 + half + 1; tx + half + 1 < left.width(); tx += step)
        {
            const auto m = match_template(left, tx, ty, half, right, {tx - x0, ty}, search_px, 0.8);
            if (m)
                out.push_back({Eigen::Vector2d(tx + 0.5, ty + 0.5), m->position});
        }
    return out;
}

StitchResult stitch(const std::array<ScanPart, 4> &parts, const std::array<std::vector<PointMatch>, 3> &overlap_matches)
{
    StitchResult res;
    std::array<Rigid2D, 3> pair; // right part -> left part
    for (int k = 0; k < 3; ++k)
        pair[k] = fit_rigid(overlap_matches[k], 1.0, nullptr, &res.overlap_rms[k]);
    // a|b and c|d first, then cd joins ab through the b-c overlap
    const Rigid2D b_to_a = pair[0], d_to_c = pair[2];
    const Rigid2D cd_to_ab = b_to_a.compose(pair[1]);
    std::array<Rigid2D, 4> to_a{Rigid2D{}, b_to_a, cd_to_ab, cd_to_ab.compose(d_to_c)};

    double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
    for (int i = 0; i < 4; ++i)
    {
        const RasterGrid &r = parts[i].raster;
        for (const Eigen::Vector2d &p : {Eigen::Vector2d(0, 0), Eigen::Vector2d(r.width(), 0), Eigen::Vector2d(0, r.height()),
                                         Eigen::Vector2d(r.width(), r.height())})
        {
            const Eigen::Vector2d q = to_a[i].apply(p);
            xmin = std::min(xmin, q.x());
            ymin = std::min(ymin, q.y());
            xmax = std::max(xmax, q.x());
            ymax = std::max(ymax, q.y());
        }
    }
    const double ox = std::floor(xmin), oy = std::floor(ymin);
    Rigid2D shift;
    shift.translation = {-ox, -oy};
    for (int i = 0; i < 4; ++i)
        res.to_film[i] = shift.compose(to_a[i]);
    const int w = static_cast<int>(std::ceil(xmax) - ox), h = static_cast<int>(std::ceil(ymax) - oy);
    res.film = RasterGrid(w, h, 0.0f);
    std::array<Rigid2D, 4> inv;
    for (int i = 0; i < 4; ++i)
        inv[i] = res.to_film[i].inverse();

#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const Eigen::Vector2d p(c + 0.5, r + 0.5);
            double sum = 0.0, wsum = 0.0;
            for (int i = 0; i < 4; ++i)
            {
                const RasterGrid &part = parts[i].raster;
                const Eigen::Vector2d q = inv[i].apply(p);
                if (q.x() < 0.5 || q.y() < 0.5 || q.x() > part.width() - 0.5 || q.y() > part.height() - 0.5)
                    continue;
                const auto v = part.sample(q.x(), q.y());
                if (!v)
                    continue;
                const double feather = std::min(q.x(), part.width() - q.x());
                sum += feather * *v;
                wsum += feather;
            }
            if (wsum > 0.0)
                res.film.put(c, r, sum / wsum);
        }
    return res;
}

double exposure_threshold(const RasterGrid &img)
{
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            if (img.valid(c, r))
            {
                lo = std::min(lo, img.at(c, r));
                hi = std::max(hi, img.at(c, r));
            }
    if (!(hi > lo))
        throw Error(ErrorCode::ThresholdNotFound, "image has no intensity range");
    constexpr int bins = 256;
    std::vector<double> hist(bins, 0.0);
    const double scale = (bins - 1) / static_cast<double>(hi - lo);
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            if (img.valid(c, r))
                hist[static_cast<int>((img.at(c, r) - lo) * scale)] += 1.0;
    const std::vector<double> sm = smooth(hist, 2.0);
    // two most prominent peaks and the deepest valley between them
    std::vector<int> peaks;
    for (int i = 0; i < bins; ++i)
    {
        const double left = i > 0 ? sm[i - 1] : -1.0, right = i + 1 < bins ? sm[i + 1] : -1.0;
        if (sm[i] > left && sm[i] >= right && sm[i] > 0.0)
            peaks.push_back(i);
    }
    double best = 0.0;
    int thr = -1;
    for (size_t a = 0; a < peaks.size(); ++a)
        for (size_t b = a + 1; b < peaks.size(); ++b)
        {
            const int pa = peaks[a], pb = peaks[b];
            const auto vit = std::min_element(sm.begin() + pa, sm.begin() + pb + 1);
            const double valley = *vit;
            const double lower = std::min(sm[pa], sm[pb]);
            if (valley > 0.5 * lower)
                continue;
            const double prominence = lower - valley;
            if (prominence > best)
            {
                best = prominence;
                // centre of the flat valley floor
                int first = static_cast<int>(vit - sm.begin()), last = first;
                while (last + 1 < pb && sm[last + 1] <= valley + 1e-12)
                    ++last;
                thr = (first + last) / 2;
            }
        }
    const double total = static_cast<double>(img.count_valid());
    if (thr < 0 || best < 1e-4 * total)
        throw Error(ErrorCode::ThresholdNotFound, "intensity histogram is not bimodal");
    return lo + (thr + 0.5) / scale;
}

double exposed_axis_angle(const RasterGrid &img, double threshold, Eigen::Vector2d *centroid)
{
    const int w = img.width(), h = img.height();
    std::vector<int> label(static_cast<size_t>(w) * h, 0);
    auto idx = [w](int c, int r) { return static_cast<size_t>(r) * w + c; };
    int best_label = 0;
    size_t best_size = 0;
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            if (label[idx(c, r)] || !img.valid(c, r) || img.at(c, r) <= threshold)
                continue;
            ++next;
            size_t size = 0;
            stack.assign(1, {c, r});
            label[idx(c, r)] = next;
            while (!stack.empty())
            {
                const auto [x, y] = stack.back();
                stack.pop_back();
                ++size;
                const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
                for (int k = 0; k < 4; ++k)
                    if (img.contains(nx[k], ny[k]) && !label[idx(nx[k], ny[k])] && img.valid(nx[k], ny[k]) &&
                        img.at(nx[k], ny[k]) > threshold)
                    {
                        label[idx(nx[k], ny[k])] = next;
                        stack.push_back({nx[k], ny[k]});
                    }
            }
            if (size > best_size)
            {
                best_size = size;
                best_label = next;
            }
        }
    if (best_size < 3)
        throw Error(ErrorCode::ThresholdNotFound, "no exposed area above the threshold");
    Eigen::Vector2d m = Eigen::Vector2d::Zero();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (label[idx(c, r)] == best_label)
                m += Eigen::Vector2d(c + 0.5, r + 0.5);
    m /= static_cast<double>(best_size);
    double sxx = 0, syy = 0, sxy = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (label[idx(c, r)] == best_label)
            {
                const double dx = c + 0.5 - m.x(), dy = r + 0.5 - m.y();
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
    if (centroid)
        *centroid = m;
    double a = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    return a;
}

AlignResult align_exposed_area(const RasterGrid &film, double background)
{
    AlignResult res;
    res.threshold = exposure_threshold(film);
    res.rotation_rad = exposed_axis_angle(film, res.threshold, &res.centroid);
    const Eigen::Vector2d e1(std::cos(res.rotation_rad), std::sin(res.rotation_rad)), e2(-e1.y(), e1.x());
    // extent of the exposed pixels along the principal axes
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (int r = 0; r < film.height(); ++r)
        for (int c = 0; c < film.width(); ++c)
            if (film.valid(c, r) && film.at(c, r) > res.threshold)
            {
                const Eigen::Vector2d d = Eigen::Vector2d(c + 0.5, r + 0.5) - res.centroid;
                const double u = d.dot(e1), v = d.dot(e2);
                // speckle outside the film body is ignored by requiring a bright 4-neighbourhood
                int bright = 0;
                for (const auto &[dc, dr] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}})
                    bright += film.contains(c + dc, r + dr) && film.at(c + dc, r + dr) > res.threshold;
                if (bright < 4)
                    continue;
                umin = std::min(umin, u - 0.5);
                umax = std::max(umax, u + 0.5);
                vmin = std::min(vmin, v - 0.5);
                vmax = std::max(vmax, v + 0.5);
            }
    const int w = static_cast<int>(std::lround(umax - umin)), h = static_cast<int>(std::lround(vmax - vmin));
    res.film = RasterGrid(w, h, 0.0f);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const Eigen::Vector2d p = res.centroid + (umin + c + 0.5) * e1 + (vmin + r + 0.5) * e2;
            res.film.put(c, r, sample_or(film, p.x(), p.y(), background));
        }
    return res;
}

double StripeTrace::mean() const
{
    double s = 0.0;
    int n = 0;
    for (size_t i = 0; i < positions.size(); ++i)
        if (valid[i])
        {
            s += positions[i];
            ++n;
        }
    return n ? s / n : std::nan("");
}

double StripeTrace::valid_fraction() const
{
    if (valid.empty())
        return 0.0;
    return static_cast<double>(std::count(valid.begin(), valid.end(), 1)) / static_cast<double>(valid.size());
}

double StripeTrace::straightness() const
{
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t i = 0; i < positions.size(); ++i)
        if (valid[i])
        {
            const double x = static_cast<double>(i);
            sx += x;
            sy += positions[i];
            sxx += x * x;
            sxy += x * positions[i];
            ++n;
        }
    if (n < 2)
        return std::nan("");
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    double worst = 0.0;
    for (size_t i = 0; i < positions.size(); ++i)
        if (valid[i])
            worst = std::max(worst, std::abs(positions[i] - (icpt + slope * static_cast<double>(i))));
    return worst;
}

std::pair<StripeTrace, StripeTrace> trace_stripes(const RasterGrid &film, const TraceOptions &opt)
{
    const int w = film.width(), h = film.height();
    if (w < 3 || h < 8)
        throw Error(ErrorCode::StripesNotFound, "film too small to hold stripes");
    // approximate stripe rows: median of per-column brightest rows in each margin band
    const int band = std::max(8, h / 5);
    const int stride = std::max(1, w / 400);
    auto find_peak = [&](int r0, int r1) {
        std::vector<double> rows;
        for (int c = 0; c < w; c += stride)
        {
            std::vector<double> v(r1 - r0);
            for (int r = r0; r < r1; ++r)
                v[r - r0] = film.valid(c, r) ? film.at(c, r) : 0.0;
            const std::vector<double> s = smooth(v, opt.smooth_sigma);
            const auto it = std::max_element(s.begin(), s.end());
            if (*it - median_of(s) >= opt.min_contrast)
                rows.push_back(static_cast<double>(r0 + (it - s.begin())));
        }
        if (rows.size() < 3 || rows.size() * 2 < static_cast<size_t>((w + stride - 1) / stride))
            return -1;
        return static_cast<int>(std::lround(median_of(rows)));
    };
    const int top_row = find_peak(0, band), bottom_row = find_peak(h - band, h);
    if (top_row < 0 || bottom_row < 0)
        throw Error(ErrorCode::StripesNotFound, "no stripe found in the film margins");
    auto trace_one = [&](int center, bool top) {
        StripeTrace t;
        t.top = top;
        t.positions.assign(w, std::nan(""));
        t.valid.assign(w, 0);
        const int r0 = std::max(0, center - opt.search_halfwidth), r1 = std::min(h, center + opt.search_halfwidth + 1);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < w; ++c)
        {
            std::vector<double> v(r1 - r0);
            bool ok = true;
            for (int r = r0; r < r1; ++r)
            {
                if (!film.valid(c, r))
                {
                    ok = false;
                    break;
                }
                v[r - r0] = film.at(c, r);
            }
            if (!ok)
                continue;
            const std::vector<double> s = smooth(v, opt.smooth_sigma);
            const int m = static_cast<int>(std::max_element(s.begin() + 1, s.end() - 1) - s.begin());
            if (s[m] - median_of(s) < opt.min_contrast)
                continue;
            // zero crossing of the central-difference gradient between m-1/2 and m+1/2
            const double g1 = s[m] - s[m - 1], g2 = s[m + 1] - s[m];
            if (!(g1 > 0.0 && g2 <= 0.0))
                continue;
            t.positions[c] = r0 + m + g1 / (g1 - g2);
            t.valid[c] = 1;
        }
        // reject columns far from the running median
        const int half = opt.median_window / 2;
        std::vector<char> keep = t.valid;
#pragma omp parallel for schedule(static)
        for (int c = 0; c < w; ++c)
        {
            if (!t.valid[c])
                continue;
            std::vector<double> win;
            for (int k = std::max(0, c - half); k <= std::min(w - 1, c + half); ++k)
                if (t.valid[k])
                    win.push_back(t.positions[k]);
            if (std::abs(t.positions[c] - median_of(win)) > opt.outlier_px)
                keep[c] = 0;
        }
        t.valid = keep;
        fill_gaps(t.positions, t.valid);
        return t;
    };
    StripeTrace top = trace_one(top_row, true), bottom = trace_one(bottom_row, false);
    if (top.valid_fraction() < 0.5 || bottom.valid_fraction() < 0.5)
        throw Error(ErrorCode::StripesNotFound, "stripes traced on too few columns");
    return {std::move(top), std::move(bottom)};
}

BendingModel::BendingModel(StripeTrace top, StripeTrace bottom, int max_gap) : top_(std::move(top)), bottom_(std::move(bottom))
{
    if (top_.positions.size() != bottom_.positions.size() || top_.positions.empty())
        throw Error(ErrorCode::InvalidArgument, "stripe traces differ in length");
    for (const StripeTrace *t : {&top_, &bottom_})
        if (longest_gap(t->valid) > max_gap)
            throw Error(ErrorCode::TraceGap, "stripe trace gap of " + std::to_string(longest_gap(t->valid)) + " columns exceeds " +
                                                 std::to_string(max_gap));
    fill_gaps(top_.positions, top_.valid);
    fill_gaps(bottom_.positions, bottom_.valid);
    tbar_ = top_.mean();
    bbar_ = bottom_.mean();
    if (!(bbar_ - tbar_ > 1.0))
        throw Error(ErrorCode::StripesNotFound, "bottom stripe is not below the top stripe");
}

std::pair<double, double> BendingModel::at(double col) const
{
    const int n = static_cast<int>(top_.positions.size());
    const double x = std::clamp(col - 0.5, 0.0, n - 1.0);
    const int i = std::min(static_cast<int>(x), n - 2 < 0 ? 0 : n - 2);
    const double f = n > 1 ? x - i : 0.0;
    const int j = std::min(i + 1, n - 1);
    return {top_.positions[i] * (1 - f) + top_.positions[j] * f, bottom_.positions[i] * (1 - f) + bottom_.positions[j] * f};
}

double BendingModel::raw_row(double col, double corrected_row) const
{
    const auto [t, b] = at(col);
    return t + (corrected_row - tbar_) * (b - t) / (bbar_ - tbar_);
}

double BendingModel::corrected_row(double col, double raw_row) const
{
    const auto [t, b] = at(col);
    return tbar_ + (raw_row - t) * (bbar_ - tbar_) / (b - t);
}

RasterGrid correct_bending(const RasterGrid &film, const StripeTrace &top, const StripeTrace &bottom, int max_gap)
{
    const BendingModel model(top, bottom, max_gap);
    RasterGrid out(film.width(), film.height(), 0.0f, film.geotransform(), film.nodata());
    const double hmax = film.height();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < film.height(); ++r)
        for (int c = 0; c < film.width(); ++c)
        {
            const double y = std::clamp(model.raw_row(c + 0.5, r + 0.5), 0.0, hmax);
            const auto v = film.sample(c + 0.5, y);
            if (v)
                out.put(c, r, *v);
            else
                out.set_nodata(c, r);
        }
    return out;
}

int clip_pixels(double pitch_um, double clip_mm)
{
    if (!(pitch_um > 0.0) || clip_mm < 0.0)
        throw Error(ErrorCode::InvalidArgument, "pixel pitch must be positive");
    return static_cast<int>(std::lround(clip_mm * 1000.0 / pitch_um));
}

RasterGrid finalize(const RasterGrid &film, bool aft, double pitch_um, double clip_mm)
{
    const int clip = clip_pixels(pitch_um, clip_mm);
    const int w = film.width() - 2 * clip, h = film.height();
    if (w <= 0)
        throw Error(ErrorCode::InvalidArgument, "film shorter than the end clips");
    RasterGrid out(w, h, 0.0f, {}, film.nodata());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const int sc = aft ? film.width() - 1 - clip - c : clip + c;
            const int sr = aft ? h - 1 - r : r;
            out.at(c, r) = film.at(sc, sr);
        }
    return out;
}

} // namespace cosp
