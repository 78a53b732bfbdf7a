#include <cosp/adjust.hpp>
#include <cosp/error.hpp>
#include <cosp/utm.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace cosp
{

namespace
{

using Mat13 = Eigen::Matrix<double, kCameraParams, kCameraParams>;
using Vec13 = Eigen::Matrix<double, kCameraParams, 1>;
using Mat13x3 = Eigen::Matrix<double, kCameraParams, 3>;

// Positions and position rates are solved in km.
constexpr double kLengthScale = 1000.0;

const Vec13 &param_scale()
{
    static const Vec13 s = [] {
        Vec13 v = Vec13::Ones();
        v.head<6>().setConstant(kLengthScale);
        return v;
    }();
    return s;
}

struct Obs
{
    int cam = 0;
    int tie = -1; ///< -1 for a control GCP
    EcefPoint ground = EcefPoint::Zero();
    PixelPoint px;
    double w = 1.0;    ///< 1 / sigma^2
    double mult = 1.0; ///< outlier down-weighting; 0 = rejected
    size_t residual_index = 0;
};

struct State
{
    std::vector<PanoramicCamera> cams;
    std::vector<EcefPoint> ties;
};

struct TieBlock
{
    Eigen::Matrix3d v = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    std::vector<std::pair<int, Mat13x3>> w;
};

struct Normals
{
    std::vector<Mat13> u;
    std::vector<Vec13> gc;
    std::vector<TieBlock> ties;
};

struct Step
{
    std::vector<Vec13> dc;
    std::vector<Eigen::Vector3d> dt;
    double norm = 0.0;
};

const EcefPoint &ground_of(const Obs &o, const State &s) { return o.tie >= 0 ? s.ties[static_cast<size_t>(o.tie)] : o.ground; }

Eigen::Vector2d residual_px(const PanoramicCamera &cam, const EcefPoint &g, const PixelPoint &obs)
{
    const PixelPoint p = mm_to_pixel(project(cam, g), cam.image);
    return {obs.col - p.col, obs.row - p.row};
}

double weighted_cost(const State &s, const std::vector<Obs> &obs)
{
    std::vector<double> terms(obs.size(), 0.0);
    bool failed = false;
#pragma omp parallel for schedule(static) reduction(|| : failed)
    for (size_t i = 0; i < obs.size(); ++i)
    {
        const Obs &o = obs[i];
        if (o.mult == 0.0)
            continue;
        try
        {
            terms[i] = o.w * o.mult * residual_px(s.cams[static_cast<size_t>(o.cam)], ground_of(o, s), o.px).squaredNorm();
        }
        catch (const Error &)
        {
            failed = true;
        }
    }
    if (failed)
        return std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (double t : terms)
        sum += t;
    return std::isfinite(sum) ? sum : std::numeric_limits<double>::infinity();
}

Normals build_normals(const State &s, const std::vector<Obs> &obs, const std::vector<char> &tie_active)
{
    const size_t n = obs.size();
    std::vector<Eigen::Matrix<double, 2, kCameraParams>> jc(n);
    std::vector<Eigen::Matrix<double, 2, 3>> jg(n);
    std::vector<Eigen::Vector2d> r(n);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i)
    {
        const Obs &o = obs[i];
        if (o.mult == 0.0)
            continue;
        const PixelJacobian pj = pixel_jacobian(s.cams[static_cast<size_t>(o.cam)], ground_of(o, s));
        jc[i] = pj.d.leftCols<kCameraParams>() * param_scale().asDiagonal();
        jg[i] = pj.d.rightCols<3>() * kLengthScale;
        r[i] = {o.px.col - pj.pixel.col, o.px.row - pj.pixel.row};
    }

    Normals nm;
    nm.u.assign(s.cams.size(), Mat13::Zero());
    nm.gc.assign(s.cams.size(), Vec13::Zero());
    nm.ties.resize(s.ties.size());
    for (size_t i = 0; i < n; ++i)
    {
        const Obs &o = obs[i];
        if (o.mult == 0.0)
            continue;
        const double w = o.w * o.mult;
        const auto c = static_cast<size_t>(o.cam);
        nm.u[c].noalias() += w * jc[i].transpose() * jc[i];
        nm.gc[c].noalias() += w * jc[i].transpose() * r[i];
        if (o.tie < 0 || !tie_active[static_cast<size_t>(o.tie)])
            continue;
        TieBlock &tb = nm.ties[static_cast<size_t>(o.tie)];
        tb.v.noalias() += w * jg[i].transpose() * jg[i];
        tb.g.noalias() += w * jg[i].transpose() * r[i];
        const Mat13x3 wct = w * jc[i].transpose() * jg[i];
        auto it = std::find_if(tb.w.begin(), tb.w.end(), [&](const auto &e) { return e.first == o.cam; });
        if (it == tb.w.end())
            tb.w.emplace_back(o.cam, wct);
        else
            it->second += wct;
    }
    return nm;
}

Eigen::MatrixXd reduced_matrix(const Normals &nm, double lambda, Eigen::VectorXd &rhs, const std::vector<int> &fixed)
{
    const int nc = static_cast<int>(nm.u.size());
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(kCameraParams * nc, kCameraParams * nc);
    rhs.resize(kCameraParams * nc);
    for (int c = 0; c < nc; ++c)
    {
        Mat13 u = nm.u[static_cast<size_t>(c)];
        u.diagonal() *= (1.0 + lambda);
        s.block<kCameraParams, kCameraParams>(kCameraParams * c, kCameraParams * c) = u;
        rhs.segment<kCameraParams>(kCameraParams * c) = nm.gc[static_cast<size_t>(c)];
    }
    for (const TieBlock &tb : nm.ties)
    {
        if (tb.w.empty())
            continue;
        Eigen::Matrix3d v = tb.v;
        v.diagonal() *= (1.0 + lambda);
        const Eigen::Matrix3d vinv = v.inverse();
        for (const auto &[a, wa] : tb.w)
        {
            const Mat13x3 wv = wa * vinv;
            rhs.segment<kCameraParams>(kCameraParams * a) -= wv * tb.g;
            for (const auto &[b, wb] : tb.w)
                s.block<kCameraParams, kCameraParams>(kCameraParams * a, kCameraParams * b) -= wv * wb.transpose();
        }
    }
    for (int c = 0; c < nc; ++c)
        for (int k : fixed)
        {
            const int i = kCameraParams * c + k;
            s.row(i).setZero();
            s.col(i).setZero();
            s(i, i) = 1.0;
            rhs(i) = 0.0;
        }
    return s;
}

void check_rank(const Normals &nm, const std::vector<std::string> &image_ids, double tol, const std::vector<int> &fixed)
{
    Eigen::VectorXd rhs;
    const Eigen::MatrixXd s = reduced_matrix(nm, 0.0, rhs, fixed);
    const auto &names = camera_param_names();
    auto label = [&](Eigen::Index k) {
        return image_ids[static_cast<size_t>(k / kCameraParams)] + ":" + names[static_cast<size_t>(k % kCameraParams)];
    };
    for (Eigen::Index k = 0; k < s.rows(); ++k)
        if (!(s(k, k) > 0.0))
            throw Error(ErrorCode::SingularNormalMatrix, "parameter not observed: " + label(k));

    const Eigen::VectorXd d = s.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = d.asDiagonal() * s * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
    const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(es.eigenvalues().size() - 1);
    if (lo > tol * hi)
        return;
    const Eigen::VectorXd v = es.eigenvectors().col(0);
    const double vmax = v.cwiseAbs().maxCoeff();
    std::string subset;
    for (Eigen::Index k = 0; k < v.size(); ++k)
        if (std::abs(v(k)) >= 0.3 * vmax)
            subset += (subset.empty() ? "" : ", ") + label(k);
    throw Error(ErrorCode::SingularNormalMatrix, "rank deficient normal matrix, near-null combination of: " + subset);
}

Step solve_step(const Normals &nm, double lambda, const std::vector<int> &fixed)
{
    Eigen::VectorXd rhs;
    const Eigen::MatrixXd s = reduced_matrix(nm, lambda, rhs, fixed);
    const Eigen::VectorXd d = s.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = d.asDiagonal() * s * d.asDiagonal();
    const Eigen::VectorXd y = scaled.ldlt().solve(d.asDiagonal() * rhs);
    const Eigen::VectorXd dc = d.asDiagonal() * y;

    Step st;
    const int nc = static_cast<int>(nm.u.size());
    st.dc.resize(static_cast<size_t>(nc));
    double sq = dc.squaredNorm();
    for (int c = 0; c < nc; ++c)
        st.dc[static_cast<size_t>(c)] = dc.segment<kCameraParams>(kCameraParams * c);
    st.dt.assign(nm.ties.size(), Eigen::Vector3d::Zero());
    for (size_t t = 0; t < nm.ties.size(); ++t)
    {
        const TieBlock &tb = nm.ties[t];
        if (tb.w.empty())
            continue;
        Eigen::Matrix3d v = tb.v;
        v.diagonal() *= (1.0 + lambda);
        Eigen::Vector3d g = tb.g;
        for (const auto &[a, wa] : tb.w)
            g -= wa.transpose() * dc.segment<kCameraParams>(kCameraParams * a);
        st.dt[t] = v.ldlt().solve(g);
        sq += st.dt[t].squaredNorm();
    }
    st.norm = std::sqrt(sq);
    if (!std::isfinite(st.norm))
        throw Error(ErrorCode::SingularNormalMatrix, "normal equations could not be solved");
    return st;
}

State apply_step(const State &s, const Step &st)
{
    State out = s;
    for (size_t c = 0; c < s.cams.size(); ++c)
        out.cams[c].set_parameters(s.cams[c].parameters() + param_scale().cwiseProduct(st.dc[c]));
    for (size_t t = 0; t < s.ties.size(); ++t)
        out.ties[t] = s.ties[t] + kLengthScale * st.dt[t];
    return out;
}

struct LmOutcome
{
    int iterations = 0;
    bool converged = false;
};

LmOutcome levenberg_marquardt(State &s, const std::vector<Obs> &obs, const std::vector<char> &tie_active, const AdjustOptions &opt,
                              const std::vector<std::string> &image_ids, bool check_singular, std::vector<double> &history)
{
    double cost = weighted_cost(s, obs);
    if (!std::isfinite(cost))
        throw Error(ErrorCode::DivergingResiduals, "initial cameras do not see all observed points");
    history.push_back(cost);
    double lambda = 1e-3;
    LmOutcome out;
    for (int it = 1; it <= opt.max_iterations; ++it)
    {
        out.iterations = it;
        const Normals nm = build_normals(s, obs, tie_active);
        if (check_singular && it == 1)
            check_rank(nm, image_ids, opt.singular_tol, opt.fixed);
        for (;;)
        {
            const Step st = solve_step(nm, lambda, opt.fixed);
            const State trial = apply_step(s, st);
            const double trial_cost = weighted_cost(trial, obs);
            if (st.norm < opt.step_tol)
            {
                if (trial_cost <= cost)
                {
                    s = trial;
                    cost = trial_cost;
                    history.push_back(cost);
                }
                out.converged = true;
                return out;
            }
            if (trial_cost < cost)
            {
                const double rel = (cost - trial_cost) / cost;
                s = trial;
                cost = trial_cost;
                history.push_back(cost);
                lambda = std::max(lambda * 0.1, 1e-12);
                if (rel < opt.relative_sse_tol)
                {
                    out.converged = true;
                    return out;
                }
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e20)
                throw Error(ErrorCode::DivergingResiduals, "no step reduces the residuals");
        }
    }
    return out;
}

int count_redundancy(const std::vector<Obs> &obs, const std::vector<char> &tie_active, size_t ncams, int free_params)
{
    int n = 0;
    for (const Obs &o : obs)
        if (o.mult > 0.0)
            ++n;
    int nt = 0;
    for (char a : tie_active)
        nt += a ? 1 : 0;
    return 2 * n - free_params * static_cast<int>(ncams) - 3 * nt;
}

EcefPoint refine_intersection(const std::vector<std::pair<const PanoramicCamera *, PixelPoint>> &obs, EcefPoint x)
{
    for (int it = 0; it < 10; ++it)
    {
        Eigen::Matrix3d n = Eigen::Matrix3d::Zero();
        Eigen::Vector3d g = Eigen::Vector3d::Zero();
        for (const auto &[cam, px] : obs)
        {
            const PixelJacobian pj = pixel_jacobian(*cam, x);
            const Eigen::Matrix<double, 2, 3> j = pj.d.rightCols<3>();
            const Eigen::Vector2d r(px.col - pj.pixel.col, px.row - pj.pixel.row);
            n.noalias() += j.transpose() * j;
            g.noalias() += j.transpose() * r;
        }
        const Eigen::Vector3d dx = n.ldlt().solve(g);
        x += dx;
        if (dx.norm() < 1e-9)
            break;
    }
    return x;
}

} // namespace

std::vector<ImageCamera> initialize_cameras(const std::vector<ApproxFootprint> &footprints, const PanoramicCamera &interior)
{
    constexpr double kAltitude = 170000.0;
    std::vector<ImageCamera> out;
    for (const ApproxFootprint &fp : footprints)
    {
        PanoramicCamera cam = interior;
        cam.anchor_lon = fp.lon;
        cam.anchor_lat = fp.lat;
        const double omega = deg_to_rad(fp.fore ? -15.0 : 15.0);
        const Eigen::Matrix3d m = cam.frame();
        const Eigen::Vector3d offset(0.0, -kAltitude * std::tan(omega), kAltitude);
        cam.position = geodetic_to_ecef({fp.lon, fp.lat, fp.height}) + m.transpose() * offset;
        cam.velocity.setZero();
        cam.attitude = {omega, 0.0, 0.0};
        cam.attitude_rate.setZero();
        cam.imc = 0.0;
        out.push_back({fp.image_id, fp.pair_id, cam});
    }
    return out;
}

PixelJacobian pixel_jacobian(const PanoramicCamera &cam, const EcefPoint &ground)
{
    const ProjectionJacobian j = project_jacobian(cam, ground);
    const double inv = 1.0 / cam.image.pitch_mm();
    PixelJacobian out;
    out.pixel = mm_to_pixel(j.point, cam.image);
    out.d.block<1, kCameraParams>(0, 0) = j.d_params.row(0) * inv;
    out.d.block<1, kCameraParams>(1, 0) = -j.d_params.row(1) * inv;
    out.d.block<1, 3>(0, kCameraParams) = j.d_ground.row(0) * inv;
    out.d.block<1, 3>(1, kCameraParams) = -j.d_ground.row(1) * inv;
    return out;
}

EcefPoint intersect_observations(const std::vector<std::pair<const PanoramicCamera *, PixelPoint>> &obs)
{
    if (obs.size() < 2)
        throw Error(ErrorCode::InvalidArgument, "intersection needs at least two observations");
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (const auto &[cam, px] : obs)
    {
        const Ray ray = backproject_ray(*cam, pixel_to_mm(px, cam->image));
        const Eigen::Matrix3d p = Eigen::Matrix3d::Identity() - ray.direction * ray.direction.transpose();
        a += p;
        b += p * ray.origin;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(a);
    if (es.eigenvalues()(0) < 1e-10 * es.eigenvalues()(2))
        throw Error(ErrorCode::NearParallelRays, "observation rays are parallel");
    return refine_intersection(obs, a.ldlt().solve(b));
}

AdjustmentResult bundle_adjust(const std::vector<ImageCamera> &cameras, const std::vector<GcpRecord> &gcps,
                               const std::vector<TiePoint> &tiepoints, const AdjustOptions &options)
{
    for (int k : options.fixed)
        if (k < 0 || k >= kCameraParams)
            throw Error(ErrorCode::InvalidArgument, "fixed parameter index out of range");
    std::vector<int> fixed = options.fixed;
    std::sort(fixed.begin(), fixed.end());
    fixed.erase(std::unique(fixed.begin(), fixed.end()), fixed.end());
    const int free_params = kCameraParams - static_cast<int>(fixed.size());
    std::unordered_map<std::string, int> cam_index;
    std::vector<std::string> image_ids;
    State s;
    for (const ImageCamera &ic : cameras)
    {
        if (!cam_index.emplace(ic.image_id, static_cast<int>(s.cams.size())).second)
            throw Error(ErrorCode::InvalidArgument, "duplicate image id " + ic.image_id);
        s.cams.push_back(ic.camera);
        image_ids.push_back(ic.image_id);
    }
    auto find_cam = [&](const std::string &id) {
        auto it = cam_index.find(id);
        if (it == cam_index.end())
            throw Error(ErrorCode::InvalidArgument, "observation references unknown image " + id);
        return it->second;
    };

    AdjustmentReport report;
    std::vector<Obs> obs;
    std::vector<int> control_count(s.cams.size(), 0);
    for (size_t i = 0; i < gcps.size(); ++i)
    {
        const GcpRecord &g = gcps[i];
        if (!(g.sigma_px > 0.0))
            throw Error(ErrorCode::InvalidArgument, "sigma_px must be positive");
        const int c = find_cam(g.image_id);
        ObservationResidual res;
        res.image_id = g.image_id;
        res.point_id = g.point_id;
        res.kind = g.role == GcpRole::Check ? ObservationResidual::Kind::Check : ObservationResidual::Kind::Control;
        res.pixel = g.pixel;
        res.weight = 1.0 / (g.sigma_px * g.sigma_px);
        report.residuals.push_back(res);
        if (g.role == GcpRole::Check)
            continue;
        ++control_count[static_cast<size_t>(c)];
        obs.push_back({c, -1, g.ground, g.pixel, res.weight, 1.0, report.residuals.size() - 1});
    }
    for (size_t c = 0; c < s.cams.size(); ++c)
        if (control_count[c] < options.min_control_per_camera)
            throw Error(ErrorCode::SingularNormalMatrix, "image " + image_ids[c] + " has " + std::to_string(control_count[c]) +
                                                             " control GCPs, at least " +
                                                             std::to_string(options.min_control_per_camera) + " required");

    std::vector<int> residual_tie(report.residuals.size(), -1);
    std::vector<char> tie_active(tiepoints.size(), 1);
    for (size_t t = 0; t < tiepoints.size(); ++t)
    {
        const TiePoint &tp = tiepoints[t];
        if (!(tp.sigma_px > 0.0))
            throw Error(ErrorCode::InvalidArgument, "sigma_px must be positive");
        std::vector<std::pair<const PanoramicCamera *, PixelPoint>> rays;
        std::vector<int> seen;
        for (const TieObservation &o : tp.observations)
        {
            const int c = find_cam(o.image_id);
            if (std::find(seen.begin(), seen.end(), c) == seen.end())
                seen.push_back(c);
            rays.emplace_back(&s.cams[static_cast<size_t>(c)], o.pixel);
        }
        if (seen.size() < 2)
            throw Error(ErrorCode::InvalidArgument, "tie point " + tp.id + " is not seen in two distinct images");
        if (!options.joint_pairs)
            for (int c : seen)
                if (cameras[static_cast<size_t>(c)].pair_id != cameras[static_cast<size_t>(seen[0])].pair_id)
                    throw Error(ErrorCode::InvalidArgument, "tie point " + tp.id + " crosses stereo pairs; enable joint adjustment");
        s.ties.push_back(tp.ground.isZero() ? intersect_observations(rays) : tp.ground);
        for (const TieObservation &o : tp.observations)
        {
            ObservationResidual res;
            res.image_id = o.image_id;
            res.point_id = tp.id;
            res.kind = ObservationResidual::Kind::Tie;
            res.pixel = o.pixel;
            res.weight = 1.0 / (tp.sigma_px * tp.sigma_px);
            report.residuals.push_back(res);
            residual_tie.push_back(static_cast<int>(t));
            obs.push_back({find_cam(o.image_id), static_cast<int>(t), EcefPoint::Zero(), o.pixel, res.weight, 1.0,
                           report.residuals.size() - 1});
        }
    }
    report.observations = static_cast<int>(obs.size());
    if (count_redundancy(obs, tie_active, s.cams.size(), free_params) < 0)
        throw Error(ErrorCode::SingularNormalMatrix, "more unknowns than observations");

    LmOutcome lm = levenberg_marquardt(s, obs, tie_active, options, image_ids, true, report.sse_history);
    int total_iterations = lm.iterations;

    char rule[160];
    std::snprintf(rule, sizeof rule, "per-axis rms > %.1f sigma0: down-weighted for %d round(s), rejected in round %d",
                  options.outlier_k, std::max(options.outlier_rounds - 1, 0), options.outlier_rounds);
    report.outlier_rule = options.outlier_rounds > 0 ? rule : "none";

    for (int round = 1; round <= options.outlier_rounds && lm.converged; ++round)
    {
        const int red = count_redundancy(obs, tie_active, s.cams.size(), free_params);
        if (red <= 0)
            break;
        const double sigma0 = std::sqrt(weighted_cost(s, obs) / red);
        const double limit = options.outlier_k * sigma0;
        bool changed = false;
        for (Obs &o : obs)
        {
            if (o.mult == 0.0)
                continue;
            const double rms = std::sqrt(o.w * o.mult * residual_px(s.cams[static_cast<size_t>(o.cam)], ground_of(o, s), o.px).squaredNorm() / 2.0);
            if (!(rms > limit))
                continue;
            changed = true;
            if (round < options.outlier_rounds)
                o.mult *= (limit / rms) * (limit / rms);
            else
                o.mult = 0.0;
        }
        // a tie that lost an image can no longer be intersected
        for (size_t t = 0; t < tie_active.size(); ++t)
        {
            std::vector<int> seen;
            for (const Obs &o : obs)
                if (o.tie == static_cast<int>(t) && o.mult > 0.0 && std::find(seen.begin(), seen.end(), o.cam) == seen.end())
                    seen.push_back(o.cam);
            if (seen.size() < 2 && tie_active[t])
            {
                tie_active[t] = 0;
                for (Obs &o : obs)
                    if (o.tie == static_cast<int>(t))
                        o.mult = 0.0;
            }
        }
        if (!changed)
            break;
        std::vector<double> hist;
        lm = levenberg_marquardt(s, obs, tie_active, options, image_ids, false, hist);
        total_iterations += lm.iterations;
    }
    if (!lm.converged)
        throw Error(ErrorCode::NoConvergence, "bundle adjustment did not converge in " + std::to_string(options.max_iterations) + " iterations");

    report.converged = true;
    report.iterations = total_iterations;
    report.redundancy = count_redundancy(obs, tie_active, s.cams.size(), free_params);
    report.sigma0 = report.redundancy > 0 ? std::sqrt(weighted_cost(s, obs) / report.redundancy) : 0.0;

    for (const Obs &o : obs)
    {
        ObservationResidual &res = report.residuals[o.residual_index];
        res.weight = o.w * o.mult;
        res.rejected = o.mult == 0.0;
        if (res.rejected)
            ++report.rejected;
    }
    // residuals of every observation, including checks and rejected ones
    for (size_t i = 0; i < report.residuals.size(); ++i)
    {
        ObservationResidual &res = report.residuals[i];
        const PanoramicCamera &cam = s.cams[static_cast<size_t>(cam_index.at(res.image_id))];
        const EcefPoint g = residual_tie[i] >= 0 ? s.ties[static_cast<size_t>(residual_tie[i])] : gcps[i].ground;
        try
        {
            const Eigen::Vector2d r = residual_px(cam, g, res.pixel);
            res.dcol = r.x();
            res.drow = r.y();
        }
        catch (const Error &)
        {
            res.dcol = res.drow = std::numeric_limits<double>::quiet_NaN();
        }
    }

    // check blunders are screened with the same limit as control observations
    if (options.outlier_rounds > 0)
        for (size_t i = 0; i < gcps.size(); ++i)
        {
            ObservationResidual &res = report.residuals[i];
            if (gcps[i].role != GcpRole::Check)
                continue;
            const double rms = std::sqrt(res.weight * (res.dcol * res.dcol + res.drow * res.drow) / 2.0);
            if (!(rms <= options.outlier_k * report.sigma0))
            {
                res.rejected = true;
                ++report.rejected_checks;
            }
        }

    // check points: intersect when seen twice, otherwise monoplot at the known height
    std::map<std::string, std::vector<size_t>> check_groups;
    for (size_t i = 0; i < gcps.size(); ++i)
        if (gcps[i].role == GcpRole::Check && !report.residuals[i].rejected)
            check_groups[gcps[i].point_id.empty() ? "#" + std::to_string(i) : gcps[i].point_id].push_back(i);
    if (!check_groups.empty())
    {
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (const auto &[id, idx] : check_groups)
            mean += gcps[idx.front()].ground;
        const GeodeticPoint centroid = ecef_to_geodetic(mean / static_cast<double>(check_groups.size()));
        const UtmProjection utm = options.utm_crs.empty() ? UtmProjection::for_lonlat(centroid.lon, centroid.lat)
                                                          : UtmProjection::from_crs(options.utm_crs);
        report.utm_crs = utm.crs();
        Eigen::Vector3d sq = Eigen::Vector3d::Zero();
        int n = 0;
        for (const auto &[id, idx] : check_groups)
        {
            const GcpRecord &ref = gcps[idx.front()];
            const GeodeticPoint truth = ecef_to_geodetic(ref.ground);
            std::vector<std::pair<const PanoramicCamera *, PixelPoint>> rays;
            std::vector<std::string> seen;
            for (size_t i : idx)
            {
                rays.emplace_back(&s.cams[static_cast<size_t>(cam_index.at(gcps[i].image_id))], gcps[i].pixel);
                if (std::find(seen.begin(), seen.end(), gcps[i].image_id) == seen.end())
                    seen.push_back(gcps[i].image_id);
            }
            EcefPoint est;
            try
            {
                if (seen.size() >= 2)
                    est = intersect_observations(rays);
                else if (!backproject_to_height(*rays.front().first, pixel_to_mm(rays.front().second, rays.front().first->image), truth.h, est))
                    continue;
            }
            catch (const Error &)
            {
                continue;
            }
            const GeodeticPoint eg = ecef_to_geodetic(est);
            const MapPoint a = utm.forward(eg.lon, eg.lat), b = utm.forward(truth.lon, truth.lat);
            sq += Eigen::Vector3d(a.easting - b.easting, a.northing - b.northing, eg.h - truth.h).cwiseAbs2();
            ++n;
        }
        report.check_points = n;
        if (n > 0)
            report.rmse_xyz = (sq / n).cwiseSqrt();
    }

    AdjustmentResult result;
    for (size_t c = 0; c < cameras.size(); ++c)
        result.cameras.push_back({cameras[c].image_id, cameras[c].pair_id, s.cams[c]});
    result.tiepoints = tiepoints;
    for (size_t t = 0; t < tiepoints.size(); ++t)
        result.tiepoints[t].ground = s.ties[t];
    result.report = std::move(report);
    return result;
}

ResidualField residual_field(const AdjustmentReport &report, const std::string &image_id, const ImageGeometry &image,
                             double step_px, double cutoff_px, double power)
{
    if (!(step_px > 0.0) || !(cutoff_px > 0.0))
        throw Error(ErrorCode::InvalidArgument, "grid step and cutoff must be positive");
    struct Sample
    {
        double col, row, dc, dr;
    };
    std::vector<Sample> pts;
    for (const ObservationResidual &r : report.residuals)
        if (r.image_id == image_id && r.kind != ObservationResidual::Kind::Tie && !r.rejected && std::isfinite(r.dcol))
            pts.push_back({r.pixel.col, r.pixel.row, r.dcol, r.drow});

    const int w = std::max(1, static_cast<int>(std::ceil(image.width / step_px)));
    const int h = std::max(1, static_cast<int>(std::ceil(image.height / step_px)));
    const GeoTransform gt{{0.0, step_px, 0.0, 0.0, 0.0, step_px}};
    ResidualField f{RasterGrid(w, h, kDefaultNodata, gt), RasterGrid(w, h, kDefaultNodata, gt)};
    const double cut2 = cutoff_px * cutoff_px;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
        {
            const double x = (c + 0.5) * step_px, y = (r + 0.5) * step_px;
            double sw = 0.0, sc = 0.0, sr = 0.0;
            bool exact = false;
            for (const Sample &p : pts)
            {
                const double d2 = (p.col - x) * (p.col - x) + (p.row - y) * (p.row - y);
                if (d2 > cut2)
                    continue;
                if (d2 < 1e-18)
                {
                    sw = 1.0;
                    sc = p.dc;
                    sr = p.dr;
                    exact = true;
                    break;
                }
                const double wgt = std::pow(d2, -0.5 * power);
                sw += wgt;
                sc += wgt * p.dc;
                sr += wgt * p.dr;
            }
            if (sw > 0.0)
            {
                f.dcol.put(c, r, exact ? sc : sc / sw);
                f.drow.put(c, r, exact ? sr : sr / sw);
            }
        }
    return f;
}

namespace
{

std::vector<std::string> split_csv(const std::string &line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double to_double(const std::string &s, const std::string &what)
{
    try
    {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size())
            throw std::invalid_argument(s);
        return v;
    }
    catch (const std::exception &)
    {
        throw Error(ErrorCode::InvalidArgument, "bad " + what + " value '" + s + "'");
    }
}

} // namespace

ObservationSet read_observations_csv(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read observations " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCode::InvalidArgument, "empty observation file " + path.string());
    const std::vector<std::string> header = split_csv(line);
    std::unordered_map<std::string, size_t> col;
    for (size_t i = 0; i < header.size(); ++i)
        col[header[i]] = i;
    for (const char *k : {"image_id", "col", "row", "lon", "lat", "h", "sigma_px", "role"})
        if (!col.count(k))
            throw Error(ErrorCode::InvalidArgument, std::string("observation csv lacks column ") + k);
    const bool has_tie = col.count("tie_id") > 0;

    ObservationSet set;
    std::map<std::string, size_t> tie_index;
    int lineno = 1;
    while (std::getline(in, line))
    {
        ++lineno;
        if (line.empty())
            continue;
        const std::vector<std::string> f = split_csv(line);
        if (f.size() < header.size())
            throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": too few fields");
        const std::string &role = f[col["role"]];
        const PixelPoint px{to_double(f[col["col"]], "col"), to_double(f[col["row"]], "row")};
        const double sigma = to_double(f[col["sigma_px"]], "sigma_px");
        const std::string id = has_tie ? f[col["tie_id"]] : std::string();
        if (role == "tie")
        {
            if (id.empty())
                throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": tie row without tie_id");
            auto [it, fresh] = tie_index.emplace(id, set.tiepoints.size());
            if (fresh)
                set.tiepoints.push_back({id, {}, EcefPoint::Zero(), sigma});
            set.tiepoints[it->second].observations.push_back({f[col["image_id"]], px});
            continue;
        }
        if (role != "control" && role != "check")
            throw Error(ErrorCode::InvalidArgument, "unknown observation role '" + role + "'");
        GcpRecord g;
        g.image_id = f[col["image_id"]];
        g.pixel = px;
        g.ground = geodetic_to_ecef({to_double(f[col["lon"]], "lon"), to_double(f[col["lat"]], "lat"), to_double(f[col["h"]], "h")});
        g.sigma_px = sigma;
        g.role = role == "check" ? GcpRole::Check : GcpRole::Control;
        g.point_id = id;
        set.gcps.push_back(g);
    }
    return set;
}

void write_observations_csv(const std::filesystem::path &path, const ObservationSet &set)
{
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "image_id,col,row,lon,lat,h,sigma_px,role,tie_id\n";
    char buf[256];
    for (const GcpRecord &g : set.gcps)
    {
        const GeodeticPoint p = ecef_to_geodetic(g.ground);
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.12f,%.12f,%.6f,%.6g,%s,", g.pixel.col, g.pixel.row, p.lon, p.lat, p.h, g.sigma_px,
                      g.role == GcpRole::Check ? "check" : "control");
        out << g.image_id << "," << buf << g.point_id << "\n";
    }
    for (const TiePoint &t : set.tiepoints)
        for (const TieObservation &o : t.observations)
        {
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,,,,%.6g,tie,", o.pixel.col, o.pixel.row, t.sigma_px);
            out << o.image_id << "," << buf << t.id << "\n";
        }
}

nlohmann::ordered_json report_to_json(const AdjustmentReport &r)
{
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json j;
    j["sigma0_px"] = r.sigma0;
    j["rmse_xyz_m"] = {{"easting", num(r.rmse_xyz.x())}, {"northing", num(r.rmse_xyz.y())}, {"height", num(r.rmse_xyz.z())}};
    j["check_points"] = r.check_points;
    j["utm_crs"] = r.utm_crs;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    j["redundancy"] = r.redundancy;
    j["observations"] = r.observations;
    j["rejected"] = r.rejected;
    j["rejected_checks"] = r.rejected_checks;
    j["outlier_rule"] = r.outlier_rule;
    j["sse_history"] = r.sse_history;
    nlohmann::ordered_json res = nlohmann::ordered_json::array();
    for (const ObservationResidual &o : r.residuals)
    {
        const char *kind = o.kind == ObservationResidual::Kind::Tie ? "tie" : o.kind == ObservationResidual::Kind::Check ? "check" : "control";
        res.push_back({{"image_id", o.image_id}, {"point_id", o.point_id}, {"kind", kind}, {"col", o.pixel.col}, {"row", o.pixel.row},
                       {"dcol", num(o.dcol)}, {"drow", num(o.drow)}, {"weight", o.weight}, {"rejected", o.rejected}});
    }
    j["residuals"] = res;
    return j;
}

} // namespace cosp
