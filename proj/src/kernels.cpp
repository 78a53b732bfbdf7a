#include <cosp/kernels.hpp>

#include <algorithm>
#include <bit>
#include <limits>

namespace cosp::kernels
{
namespace
{

constexpr int kDirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}};

// One SGM recursion step: out = C + min(prev[d], prev[d+-1] + p1, min(prev) + p2) - min(prev).
inline void path_step(const uint8_t *cost, const uint16_t *prev, uint16_t prev_min, uint16_t *out, int nd, int p1, int p2)
{
    const int big = prev_min + p2;
    for (int d = 0; d < nd; ++d)
    {
        int best = prev[d];
        if (d > 0)
            best = std::min(best, prev[d - 1] + p1);
        if (d + 1 < nd)
            best = std::min(best, prev[d + 1] + p1);
        best = std::min(best, big);
        out[d] = static_cast<uint16_t>(cost[d] + best - prev_min);
    }
}

inline uint16_t min_of(const uint16_t *v, int nd) { return *std::min_element(v, v + nd); }

} // namespace

CensusImage census7x7(const RasterGrid &img, Exec exec)
{
    CensusImage out;
    out.width = img.width();
    out.height = img.height();
    out.bits.assign(static_cast<size_t>(out.width) * out.height, 0);
    out.valid.assign(out.bits.size(), 0);
    const int w = out.width, h = out.height;
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (int y = 3; y < h - 3; ++y)
        for (int x = 3; x < w - 3; ++x)
        {
            if (!img.valid(x, y))
                continue;
            const float c = img.at(x, y);
            uint64_t bits = 0;
            bool ok = true;
            for (int dy = -3; dy <= 3 && ok; ++dy)
                for (int dx = -3; dx <= 3; ++dx)
                {
                    if (dx == 0 && dy == 0)
                        continue;
                    if (!img.valid(x + dx, y + dy))
                    {
                        ok = false;
                        break;
                    }
                    bits = (bits << 1) | (img.at(x + dx, y + dy) < c ? 1u : 0u);
                }
            if (!ok)
                continue;
            const size_t i = static_cast<size_t>(y) * w + x;
            out.bits[i] = bits;
            out.valid[i] = 1;
        }
    return out;
}

CostVolume census_cost(const CensusImage &a, const CensusImage &b, int dmin, int dmax, Exec exec)
{
    CostVolume c;
    c.width = a.width;
    c.height = a.height;
    c.dmin = dmin;
    c.ndisp = dmax - dmin + 1;
    c.cost.assign(static_cast<size_t>(c.width) * c.height * c.ndisp, 255);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (int y = 0; y < c.height; ++y)
    {
        if (y >= b.height)
            continue;
        for (int x = 0; x < c.width; ++x)
        {
            const size_t ia = static_cast<size_t>(y) * a.width + x;
            if (!a.valid[ia])
                continue;
            uint8_t *out = &c.cost[c.index(x, y)];
            for (int k = 0; k < c.ndisp; ++k)
            {
                const int xb = x + dmin + k;
                if (xb < 0 || xb >= b.width)
                    continue;
                const size_t ib = static_cast<size_t>(y) * b.width + xb;
                if (!b.valid[ib])
                    continue;
                out[k] = static_cast<uint8_t>(std::popcount(a.bits[ia] ^ b.bits[ib]) * 255 / 48);
            }
        }
    }
    return c;
}

std::vector<uint16_t> sgm_aggregate(const CostVolume &c, int p1, int p2)
{
    const int w = c.width, h = c.height, nd = c.ndisp;
    std::vector<uint16_t> sum(c.cost.size(), 0);
    for (const auto &dir : kDirs)
    {
        const int dx = dir[0], dy = dir[1];
        if (dy == 0)
        {
            // rows are independent paths
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y)
            {
                std::vector<uint16_t> prev(nd), cur(nd);
                const int x0 = dx > 0 ? 0 : w - 1;
                for (int x = x0, k = 0; k < w; ++k, x += dx)
                {
                    const uint8_t *cost = &c.cost[c.index(x, y)];
                    if (k == 0)
                        std::copy(cost, cost + nd, cur.begin());
                    else
                        path_step(cost, prev.data(), min_of(prev.data(), nd), cur.data(), nd, p1, p2);
                    uint16_t *s = &sum[c.index(x, y)];
                    for (int d = 0; d < nd; ++d)
                        s[d] = static_cast<uint16_t>(s[d] + cur[d]);
                    std::swap(prev, cur);
                }
            }
            continue;
        }
        // sweep rows in path order; every pixel of a row depends only on the previous row
        std::vector<uint16_t> prev(static_cast<size_t>(w) * nd), cur(prev.size()), prev_min(w);
        const int y0 = dy > 0 ? 0 : h - 1;
        for (int y = y0, k = 0; k < h; ++k, y += dy)
        {
#pragma omp parallel for schedule(static)
            for (int x = 0; x < w; ++x)
            {
                const uint8_t *cost = &c.cost[c.index(x, y)];
                uint16_t *out = &cur[static_cast<size_t>(x) * nd];
                const int xp = x - dx;
                if (k == 0 || xp < 0 || xp >= w)
                    std::copy(cost, cost + nd, out);
                else
                    path_step(cost, &prev[static_cast<size_t>(xp) * nd], prev_min[xp], out, nd, p1, p2);
                uint16_t *s = &sum[c.index(x, y)];
                for (int d = 0; d < nd; ++d)
                    s[d] = static_cast<uint16_t>(s[d] + out[d]);
            }
            std::swap(prev, cur);
            for (int x = 0; x < w; ++x)
                prev_min[x] = min_of(&prev[static_cast<size_t>(x) * nd], nd);
        }
    }
    return sum;
}

namespace serial
{

std::vector<uint16_t> sgm_aggregate(const CostVolume &c, int p1, int p2)
{
    const int w = c.width, h = c.height, nd = c.ndisp;
    std::vector<uint16_t> sum(c.cost.size(), 0);
    std::vector<uint16_t> prev(nd), cur(nd);
    for (const auto &dir : kDirs)
    {
        const int dx = dir[0], dy = dir[1];
        // a path starts at every pixel whose predecessor lies outside the raster
        for (int sy = 0; sy < h; ++sy)
            for (int sx = 0; sx < w; ++sx)
            {
                const int px = sx - dx, py = sy - dy;
                if (px >= 0 && px < w && py >= 0 && py < h)
                    continue;
                bool first = true;
                for (int x = sx, y = sy; x >= 0 && x < w && y >= 0 && y < h; x += dx, y += dy)
                {
                    const uint8_t *cost = &c.cost[c.index(x, y)];
                    if (first)
                    {
                        for (int d = 0; d < nd; ++d)
                            cur[d] = cost[d];
                        first = false;
                    }
                    else
                    {
                        uint16_t m = std::numeric_limits<uint16_t>::max();
                        for (int d = 0; d < nd; ++d)
                            m = std::min(m, prev[d]);
                        for (int d = 0; d < nd; ++d)
                        {
                            int best = prev[d];
                            if (d > 0 && prev[d - 1] + p1 < best)
                                best = prev[d - 1] + p1;
                            if (d + 1 < nd && prev[d + 1] + p1 < best)
                                best = prev[d + 1] + p1;
                            if (m + p2 < best)
                                best = m + p2;
                            cur[d] = static_cast<uint16_t>(cost[d] + best - m);
                        }
                    }
                    uint16_t *s = &sum[c.index(x, y)];
                    for (int d = 0; d < nd; ++d)
                        s[d] = static_cast<uint16_t>(s[d] + cur[d]);
                    std::swap(prev, cur);
                }
            }
    }
    return sum;
}

} // namespace serial

} // namespace cosp::kernels
