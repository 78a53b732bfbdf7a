#pragma once

#include <cosp/raster.hpp>

#include <Eigen/Core>

#include <optional>

namespace cosp
{

struct TemplateMatch
{
    Eigen::Vector2d position; ///< continuous coordinates in the search image
    double ncc = 0.0;
};

/// Locates the (2*half+1)^2 template of `src` centred at pixel (tc, tr) in `dst` near the pixel
/// `guess`: integer NCC search over +-search_px followed by translational Lucas-Kanade refinement.
/// Empty when the template is flat, the peak lies on the search border, or NCC < min_ncc.
std::optional<TemplateMatch> match_template(const RasterGrid &src, int tc, int tr, int half, const RasterGrid &dst,
                                            Eigen::Vector2i guess, int search_px, double min_ncc = 0.8);

/// Translation d with b(x + d) ~ a(x) for equally sized images, by phase correlation (Hann window,
/// parabolic subpixel peak). `peak` receives the normalised correlation peak height.
Eigen::Vector2d phase_correlate(const RasterGrid &a, const RasterGrid &b, double *peak = nullptr);

/// Area-average downsampling by an integer factor.
RasterGrid downsample(const RasterGrid &img, int factor);

} // namespace cosp
