#pragma once

#include <cosp/raster.hpp>

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <utility>
#include <vector>

namespace cosp
{

/// Rotation followed by translation in pixel coordinates: p' = R(rotation) p + translation.
struct Rigid2D
{
    double rotation = 0.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();

    Eigen::Vector2d apply(const Eigen::Vector2d &p) const;
    Rigid2D inverse() const;
    /// this after `first`: p -> this(first(p)).
    Rigid2D compose(const Rigid2D &first) const;
};

/// One correspondence between two rasters, continuous pixel coordinates (corner convention).
struct PointMatch
{
    Eigen::Vector2d a;
    Eigen::Vector2d b;
};

/// Least-squares rigid transform taking `b` onto `a`, with iterative rejection of residuals beyond
/// max(reject_px, 3 * NMAD). Throws InsufficientMatches / DegenerateGeometry.
Rigid2D fit_rigid(const std::vector<PointMatch> &matches, double reject_px = 1.0, std::vector<char> *inliers = nullptr,
                  double *rms = nullptr);

/// Template matching in the nominal overlap of two horizontally adjacent scan parts: `overlap_cols`
/// columns of the right edge of `left` reappear at the left edge of `right`.
std::vector<PointMatch> match_overlap(const RasterGrid &left, const RasterGrid &right, int overlap_cols, int template_px = 31,
                                      int search_px = 12);

struct ScanPart
{
    char label = 'a';
    RasterGrid raster;
};

struct StitchResult
{
    RasterGrid film;
    std::array<Rigid2D, 4> to_film; ///< part pixel -> film pixel
    std::array<double, 3> overlap_rms{};
};

/// Stitches a|b and c|d, then ab|cd, from matches of the overlaps a-b, b-c, c-d (PointMatch::a in
/// the left part). Overlaps are blended by linear feathering.
StitchResult stitch(const std::array<ScanPart, 4> &parts, const std::array<std::vector<PointMatch>, 3> &overlap_matches);

struct AlignResult
{
    RasterGrid film;
    double rotation_rad = 0.0; ///< angle of the film's long axis in the input
    double threshold = 0.0;
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
};

/// Threshold at the histogram valley between background and exposure; throws ThresholdNotFound.
double exposure_threshold(const RasterGrid &img);

/// Principal axis angle of the largest connected exposed region.
double exposed_axis_angle(const RasterGrid &img, double threshold, Eigen::Vector2d *centroid = nullptr);

/// Rotates the exposed area so that its long axis runs along the columns and crops to it.
AlignResult align_exposed_area(const RasterGrid &film, double background = 0.0);

struct StripeTrace
{
    bool top = true;
    std::vector<double> positions; ///< continuous row per column, gaps filled by interpolation
    std::vector<char> valid;       ///< measured and not rejected as an outlier

    double mean() const;
    double valid_fraction() const;
    /// max |position - least-squares line| over valid columns
    double straightness() const;
};

struct TraceOptions
{
    double smooth_sigma = 2.0;
    int median_window = 501;
    double outlier_px = 1.0;
    int search_halfwidth = 12;
    double min_contrast = 20.0;
};

/// Subpixel rows of the top and bottom PG stripes for every column. Throws StripesNotFound.
std::pair<StripeTrace, StripeTrace> trace_stripes(const RasterGrid &film, const TraceOptions &opt = {});

/// Column-wise mapping between raw rows and rows where both stripes are straight and parallel.
class BendingModel
{
public:
    BendingModel(StripeTrace top, StripeTrace bottom, int max_gap = 2000);

    double corrected_row(double col, double raw_row) const;
    double raw_row(double col, double corrected_row) const;
    double top_mean() const { return tbar_; }
    double bottom_mean() const { return bbar_; }

private:
    std::pair<double, double> at(double col) const;

    StripeTrace top_, bottom_;
    double tbar_ = 0.0, bbar_ = 0.0;
};

/// Resamples the film so that the traced stripes become straight; throws TraceGap.
RasterGrid correct_bending(const RasterGrid &film, const StripeTrace &top, const StripeTrace &bottom, int max_gap = 2000);

/// Film end clip in pixels, rounded.
int clip_pixels(double pitch_um, double clip_mm = 15.0);

/// Clips both film ends and rotates aft images by 180 degrees.
RasterGrid finalize(const RasterGrid &film, bool aft, double pitch_um, double clip_mm = 15.0);

} // namespace cosp
