#pragma once

#include <cosp/pancam.hpp>
#include <cosp/parallel.hpp>
#include <cosp/raster.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <utility>
#include <vector>

namespace cosp
{

/// Bivariate polynomial in monomials x^i y^j, i + j <= degree, ordered by total degree then by
/// descending power of x.
struct Poly2
{
    int degree = 0;
    std::vector<double> coef;

    static int terms(int degree) { return (degree + 1) * (degree + 2) / 2; }
    static std::vector<std::pair<int, int>> exponents(int degree);
    static Poly2 zero(int degree) { return {degree, std::vector<double>(terms(degree), 0.0)}; }

    double eval(double x, double y) const;
    Eigen::Vector2d gradient(double x, double y) const;
};

/// One image of a rectified pair: pre-rotation about the image centre, isotropic normalisation,
/// then degree-4 polynomials for the output coordinates in a common normalised frame.
struct RectificationSide
{
    double angle = 0.0; ///< epipolar direction in the input image (radians, image col/row axes)
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    double norm = 1.0; ///< pixels per normalised unit
    int width = 0, height = 0;
    Poly2 px, py;         ///< normalised rotated input -> normalised output
    Poly2 inv_x, inv_y;   ///< approximate inverse, refined by Newton steps

    Eigen::Vector2d normalize(const PixelPoint &p) const;
    PixelPoint denormalize(const Eigen::Vector2d &n) const;
    Eigen::Vector2d forward_normalized(const Eigen::Vector2d &n) const;
};

struct RectificationModel
{
    RectificationSide a, b;
    double scale = 1.0;                              ///< output pixels per normalised unit
    Eigen::Vector2d origin = Eigen::Vector2d::Zero(); ///< normalised output coordinate of pixel corner (0,0)
    int width = 0, height = 0;                       ///< output grid

    const RectificationSide &side(int s) const { return s == 0 ? a : b; }
    PixelPoint forward(int side, const PixelPoint &p) const;
    /// Output -> input pixel; empty when Newton does not converge.
    std::optional<PixelPoint> inverse(int side, const PixelPoint &q) const;
    /// Jacobian determinant of a side's polynomial map at a normalised input point.
    double jacobian_det(int side, const Eigen::Vector2d &n) const;
};

nlohmann::ordered_json rectification_to_json(const RectificationModel &m);
RectificationModel rectification_from_json(const nlohmann::json &j);

struct HeightRange
{
    double min = 0.0;
    double max = 0.0;
};

/// Average epipolar direction in each image (radians, doubled-angle mean over a grid x grid sample).
std::pair<double, double> estimate_epipolar_directions(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h,
                                                       int grid = 17);

struct RectifyOptions
{
    int degree = 4;
    int grid = 25;
    int levels = 5;
    double height_margin = 0.1; ///< relative widening of the height range
    double max_condition = 1e13;
};

struct VirtualCorrespondence
{
    PixelPoint a, b;
    double height = 0.0;
};

/// Film correspondences of ground points at several heights, seeded from a grid in image A.
std::vector<VirtualCorrespondence> virtual_correspondences(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h,
                                                           int grid, int levels, double offset = 0.0);

RectificationModel build_rectification(const PanoramicCamera &a, const PanoramicCamera &b, HeightRange h,
                                       const RectifyOptions &opt = {});

/// Feature-based variant for pairs without cameras: epipolar directions from the principal axis of
/// the residuals of an affine fit between the matches.
RectificationModel build_rectification_from_matches(const std::vector<std::pair<PixelPoint, PixelPoint>> &matches, int width_a,
                                                    int height_a, int width_b, int height_b, const RectifyOptions &opt = {});

/// Fits the polynomials of a model whose sides have rotation and normalisation set.
void fit_rectification(RectificationModel &m, const std::vector<VirtualCorrespondence> &vc, int degree, double max_condition);

/// Inverse-mapped bilinear resampling onto the rectified grid; nodata outside the input.
RasterGrid resample_rectified(const RasterGrid &image, const RectificationModel &m, int side, Exec exec = Exec::Parallel);

/// Row difference (B - A) of NCC matches at grid nodes, searched over +-x_search, +-y_search.
RasterGrid measure_y_parallax(const RasterGrid &a, const RasterGrid &b, int step, int x_search, int y_search = 4, int half = 7,
                              double min_ncc = 0.7);

struct SgmOptions
{
    int dmin = -32;
    int dmax = 32;
    int p1 = 10;
    int p2 = 120;
    double lr_tolerance = 1.0;
    double min_texture_std = 2.0;
    double uniqueness = 0.0; ///< winner must beat every non-adjacent disparity by this relative margin
    int border_px = 0;       ///< drop matches within this many columns of invalid data in either image
};

/// Disparity d with B(x + d, y) ~ A(x, y), nodata where invalid.
struct DisparityMap
{
    RasterGrid disparity;
    size_t valid_cells = 0;
};

DisparityMap sgm_match(const RasterGrid &a, const RasterGrid &b, const SgmOptions &opt = {}, Exec exec = Exec::Parallel);

} // namespace cosp
