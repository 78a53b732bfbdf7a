#include <cosp/error.hpp>
#include <cosp/geo.hpp>
#include <cosp/imgmatch.hpp>

#include <Eigen/Dense>
#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <vector>

namespace cosp
{
namespace
{

// FFTW planning is not thread safe.
std::mutex &fftw_mutex()
{
    static std::mutex m;
    return m;
}

std::vector<std::complex<double>> forward_fft(const std::vector<double> &in, int w, int h)
{
    std::vector<double> buf(in);
    std::vector<std::complex<double>> out(static_cast<size_t>(h) * (w / 2 + 1));
    fftw_plan p;
    {
        std::lock_guard lock(fftw_mutex());
        p = fftw_plan_dft_r2c_2d(h, w, buf.data(), reinterpret_cast<fftw_complex *>(out.data()), FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard lock(fftw_mutex());
        fftw_destroy_plan(p);
    }
    return out;
}

std::vector<double> inverse_fft(std::vector<std::complex<double>> in, int w, int h)
{
    std::vector<double> out(static_cast<size_t>(w) * h);
    fftw_plan p;
    {
        std::lock_guard lock(fftw_mutex());
        p = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex *>(in.data()), out.data(), FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard lock(fftw_mutex());
        fftw_destroy_plan(p);
    }
    return out;
}

std::vector<double> windowed(const RasterGrid &img)
{
    const int w = img.width(), h = img.height();
    double mean = 0.0;
    size_t n = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (img.valid(c, r))
            {
                mean += img.at(c, r);
                ++n;
            }
    mean = n ? mean / static_cast<double>(n) : 0.0;
    std::vector<double> out(static_cast<size_t>(w) * h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const double hw = 0.5 - 0.5 * std::cos(2.0 * kPi * (c + 0.5) / w);
            const double hh = 0.5 - 0.5 * std::cos(2.0 * kPi * (r + 0.5) / h);
            const double v = img.valid(c, r) ? img.at(c, r) - mean : 0.0;
            out[static_cast<size_t>(r) * w + c] = v * hw * hh;
        }
    return out;
}

double parabola_offset(double m, double c0, double p)
{
    const double den = m - 2.0 * c0 + p;
    return den < 0.0 ? 0.5 * (m - p) / den : 0.0;
}

} // namespace

std::optional<TemplateMatch> match_template(const RasterGrid &src, int tc, int tr, int half, const RasterGrid &dst,
                                            Eigen::Vector2i guess, int search_px, double min_ncc)
{
    const int size = 2 * half + 1, n = size * size;
    if (tc - half < 0 || tr - half < 0 || tc + half >= src.width() || tr + half >= src.height())
        return std::nullopt;
    std::vector<double> tpl(n);
    double mean = 0.0;
    for (int dy = -half, k = 0; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx, ++k)
        {
            if (!src.valid(tc + dx, tr + dy))
                return std::nullopt;
            tpl[k] = src.at(tc + dx, tr + dy);
            mean += tpl[k];
        }
    mean /= n;
    double var = 0.0;
    for (double &v : tpl)
    {
        v -= mean;
        var += v * v;
    }
    if (var / n < 4.0)
        return std::nullopt;

    double best = -2.0;
    int bx = 0, by = 0;
    for (int sy = -search_px; sy <= search_px; ++sy)
        for (int sx = -search_px; sx <= search_px; ++sx)
        {
            const int cx = guess.x() + sx, cy = guess.y() + sy;
            if (cx - half < 0 || cy - half < 0 || cx + half >= dst.width() || cy + half >= dst.height())
                continue;
            double m = 0.0, sab = 0.0, sbb = 0.0;
            bool ok = true;
            for (int dy = -half, k = 0; dy <= half && ok; ++dy)
                for (int dx = -half; dx <= half; ++dx, ++k)
                {
                    if (!dst.valid(cx + dx, cy + dy))
                    {
                        ok = false;
                        break;
                    }
                    const double b = dst.at(cx + dx, cy + dy);
                    m += b;
                    sab += tpl[k] * b;
                    sbb += b * b;
                }
            if (!ok)
                continue;
            // template is zero-mean, so sum(t * (b - mb)) = sum(t * b)
            const double vb = sbb - m * m / n;
            const double ncc = vb > 0.0 ? sab / std::sqrt(var * vb) : -1.0;
            if (ncc > best)
            {
                best = ncc;
                bx = sx;
                by = sy;
            }
        }
    if (best < min_ncc || std::abs(bx) == search_px || std::abs(by) == search_px)
        return std::nullopt;

    Eigen::Vector2d d(guess.x() + bx, guess.y() + by);
    std::vector<double> vals(n);
    std::vector<Eigen::Vector2d> grads(n);
    for (int it = 0; it < 10; ++it)
    {
        double rm = 0.0;
        for (int dy = -half, k = 0; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx, ++k)
            {
                const double x = d.x() + dx + 0.5, y = d.y() + dy + 0.5;
                const auto v = dst.sample(x, y), vx0 = dst.sample(x - 0.5, y), vx1 = dst.sample(x + 0.5, y),
                           vy0 = dst.sample(x, y - 0.5), vy1 = dst.sample(x, y + 0.5);
                if (!v || !vx0 || !vx1 || !vy0 || !vy1)
                    return std::nullopt;
                vals[k] = *v;
                grads[k] = {*vx1 - *vx0, *vy1 - *vy0};
                rm += *v;
            }
        rm /= n;
        Eigen::Matrix2d hm = Eigen::Matrix2d::Zero();
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        for (int k = 0; k < n; ++k)
        {
            hm += grads[k] * grads[k].transpose();
            g += grads[k] * (tpl[k] - (vals[k] - rm));
        }
        const Eigen::Vector2d step = hm.ldlt().solve(g);
        if (!step.allFinite() || step.norm() > 2.0)
            return std::nullopt;
        d += step;
        if (step.norm() < 1e-4)
            break;
    }
    return TemplateMatch{{d.x() + 0.5, d.y() + 0.5}, best};
}

Eigen::Vector2d phase_correlate(const RasterGrid &a, const RasterGrid &b, double *peak)
{
    if (a.width() != b.width() || a.height() != b.height() || a.width() < 4 || a.height() < 4)
        throw Error(ErrorCode::InvalidArgument, "phase correlation needs equally sized images");
    const int w = a.width(), h = a.height();
    const auto fa = forward_fft(windowed(a), w, h), fb = forward_fft(windowed(b), w, h);
    std::vector<std::complex<double>> cross(fa.size());
    for (size_t i = 0; i < fa.size(); ++i)
    {
        const std::complex<double> c = std::conj(fa[i]) * fb[i];
        const double m = std::abs(c);
        cross[i] = m > 1e-12 ? c / m : 0.0;
    }
    const std::vector<double> corr = inverse_fft(std::move(cross), w, h);
    size_t best = 0;
    for (size_t i = 1; i < corr.size(); ++i)
        if (corr[i] > corr[best])
            best = i;
    const int py = static_cast<int>(best / w), px = static_cast<int>(best % w);
    auto at = [&](int x, int y) { return corr[static_cast<size_t>((y + h) % h) * w + (x + w) % w]; };
    const double c0 = at(px, py);
    const double ox = parabola_offset(at(px - 1, py), c0, at(px + 1, py));
    const double oy = parabola_offset(at(px, py - 1), c0, at(px, py + 1));
    if (peak)
        *peak = c0 / (static_cast<double>(w) * h);
    const double dx = (px > w / 2 ? px - w : px) + ox, dy = (py > h / 2 ? py - h : py) + oy;
    return {dx, dy};
}

RasterGrid downsample(const RasterGrid &img, int factor)
{
    if (factor <= 1)
        return img;
    const int w = img.width() / factor, h = img.height() / factor;
    RasterGrid out(w, h, 0.0f, {}, img.nodata());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            double s = 0.0;
            int n = 0;
            for (int y = r * factor; y < (r + 1) * factor; ++y)
                for (int x = c * factor; x < (c + 1) * factor; ++x)
                    if (img.valid(x, y))
                    {
                        s += img.at(x, y);
                        ++n;
                    }
            if (n == factor * factor)
                out.put(c, r, s / n);
            else
                out.set_nodata(c, r);
        }
    return out;
}

} // namespace cosp
