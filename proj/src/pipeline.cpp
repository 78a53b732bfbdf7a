#include <cosp/pipeline.hpp>

#include <cosp/adjust.hpp>
#include <cosp/error.hpp>
#include <cosp/filmprep.hpp>
#include <cosp/gcpgen.hpp>
#include <cosp/geo.hpp>
#include <cosp/parallel.hpp>
#include <cosp/raster_io.hpp>
#include <cosp/stereo.hpp>
#include <cosp/surface.hpp>
#include <cosp/utm.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace cosp
{

namespace
{

constexpr const char *kToolVersion = "0.1.0";
const std::array<std::string, 2> kImages{"fore", "aft"};

json read_json(const fs::path &p)
{
    std::ifstream in(p);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read " + p.string());
    try
    {
        return json::parse(in);
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorCode::IoError, p.string() + ": " + e.what());
    }
}

void write_json(const fs::path &p, const json &j)
{
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << j.dump(2) << "\n";
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + p.string());
}

void write_text(const fs::path &p, const std::string &s)
{
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << s;
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + p.string());
}

std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool same_kind(const json &def, const json &v)
{
    if (def.is_boolean())
        return v.is_boolean();
    if (def.is_number_integer())
        return v.is_number_integer();
    if (def.is_number())
        return v.is_number();
    if (def.is_string())
        return v.is_string();
    return def.type() == v.type();
}

/// Inputs and outputs of one stage execution, hashed into its provenance record.
class Stage
{
public:
    Stage(std::string name, const PipelineConfig &cfg) : name_(std::move(name)), cfg_(cfg), start_(std::chrono::steady_clock::now()) {}

    const PipelineConfig &cfg() const { return cfg_; }
    fs::path dir(const std::string &sub) const { return cfg_.run_dir / sub; }

    fs::path input(const fs::path &p)
    {
        if (!fs::exists(p))
            throw Error(ErrorCode::MissingInput, name_ + ": missing input " + p.string());
        inputs_.push_back(p);
        return p;
    }
    fs::path output(const fs::path &p)
    {
        fs::create_directories(p.parent_path());
        outputs_.push_back(p);
        return p;
    }

    RasterGrid raster(const fs::path &p) { return read_raster(input(p)); }
    json json_in(const fs::path &p) { return read_json(input(p)); }
    void raster_out(const fs::path &p, const RasterGrid &g) { write_raster(output(p), g); }
    void json_out(const fs::path &p, const json &j) { write_json(output(p), j); }
    void text_out(const fs::path &p, const std::string &s) { write_text(output(p), s); }

    void params(const std::string &section) { params_[section] = cfg_.section(section); }

    void finish() const
    {
        json rec;
        rec["stage"] = name_;
        rec["tool_version"] = kToolVersion;
        auto files = [&](const std::vector<fs::path> &v) {
            json a = json::array();
            for (const fs::path &p : v)
                a.push_back({{"path", fs::relative(p, cfg_.run_dir).generic_string()}, {"fnv1a64", file_digest(p)}});
            return a;
        };
        rec["inputs"] = files(inputs_);
        rec["outputs"] = files(outputs_);
        rec["parameters"] = params_;
        rec["seed"] = cfg_.seed;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        rec["timings"] = {{"wall_s", secs}, {"jobs", jobs()}};
        write_json(cfg_.run_dir / "provenance" / (name_ + ".json"), rec);
        spdlog::info("{}: done in {:.1f} s", name_, secs);
    }

private:
    std::string name_;
    const PipelineConfig &cfg_;
    std::chrono::steady_clock::time_point start_;
    std::vector<fs::path> inputs_, outputs_;
    json params_ = json::object();
};

// ---- paths and shared inputs ----

fs::path metadata_path(const PipelineConfig &c)
{
    const std::string p = c.str("inputs", "metadata");
    return p.empty() ? c.run_dir / "synth" / "metadata.json" : fs::path(p);
}

fs::path input_or(const PipelineConfig &c, const std::string &key, const fs::path &fallback)
{
    const std::string p = c.str("inputs", key);
    return p.empty() ? c.run_dir / fallback : fs::path(p);
}

fs::path reference_ortho_path(const PipelineConfig &c) { return input_or(c, "reference_ortho", "synth/reference_ortho.tif"); }
fs::path reference_dem_path(const PipelineConfig &c) { return input_or(c, "reference_dem", "synth/reference_dem.tif"); }
fs::path truth_dem_path(const PipelineConfig &c) { return input_or(c, "truth_dem", "truth/truth_dem.tif"); }

PanoramicCamera interior_from_metadata(const json &meta, int width, int height)
{
    PanoramicCamera cam;
    const json &c = meta.at("camera");
    cam.focal_mm = c.at("focal_mm");
    cam.film_half_length_mm = c.at("film_half_length_mm");
    cam.film_half_width_mm = c.at("film_half_width_mm");
    cam.image = {width, height, c.at("pitch_um").get<double>()};
    return cam;
}

const json &image_meta(const json &meta, const std::string &id)
{
    for (const json &im : meta.at("images"))
        if (im.at("image_id") == id)
            return im;
    throw Error(ErrorCode::MissingInput, "metadata has no image " + id);
}

json footprint_to_json(const FootprintEstimate &f)
{
    json c = json::array();
    for (const GeodeticPoint &p : f.corners)
        c.push_back({p.lon, p.lat, p.h});
    return {{"corners", c}, {"uncertainty_km", f.uncertainty_km}, {"width", f.width}, {"height", f.height}};
}

FootprintEstimate footprint_from_json(const json &j)
{
    FootprintEstimate f;
    for (int i = 0; i < 4; ++i)
    {
        const json &p = j.at("corners").at(i);
        f.corners[i] = {p.at(0).get<double>(), p.at(1).get<double>(), p.size() > 2 ? p.at(2).get<double>() : 0.0};
    }
    f.uncertainty_km = j.at("uncertainty_km");
    f.width = j.value("width", 0);
    f.height = j.value("height", 0);
    return f;
}

void write_stripes_csv(std::ostream &out, const StripeTrace &top, const StripeTrace &bottom)
{
    out << "col,top,top_valid,bottom,bottom_valid\n";
    out.precision(17);
    for (size_t c = 0; c < top.positions.size(); ++c)
        out << c << ',' << top.positions[c] << ',' << int(top.valid[c]) << ',' << bottom.positions[c] << ',' << int(bottom.valid[c]) << '\n';
}

std::pair<StripeTrace, StripeTrace> read_stripes_csv(const fs::path &p)
{
    std::ifstream in(p);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read " + p.string());
    StripeTrace top, bottom;
    top.top = true;
    bottom.top = false;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
    {
        if (trim(line).empty())
            continue;
        std::stringstream ss(line);
        std::string f[5];
        for (auto &s : f)
            std::getline(ss, s, ',');
        try
        {
            top.positions.push_back(std::stod(f[1]));
            top.valid.push_back(static_cast<char>(std::stoi(f[2])));
            bottom.positions.push_back(std::stod(f[3]));
            bottom.valid.push_back(static_cast<char>(std::stoi(f[4])));
        }
        catch (const std::exception &)
        {
            throw Error(ErrorCode::IoError, p.string() + ": malformed row '" + line + "'");
        }
    }
    return {top, bottom};
}

/// Reference values at the cell centres of `grid` (bilinear), nodata where not covered.
RasterGrid resample_to(const RasterGrid &src, const RasterGrid &grid)
{
    RasterGrid out(grid.width(), grid.height(), 0.0f, grid.geotransform(), grid.nodata());
    out.set_crs(grid.crs());
    for (int r = 0; r < grid.height(); ++r)
        for (int c = 0; c < grid.width(); ++c)
        {
            const Eigen::Vector2d m = grid.cell_center(c, r);
            const auto v = src.sample_map(m.x(), m.y());
            if (v)
                out.put(c, r, *v);
            else
                out.set_nodata(c, r);
        }
    return out;
}

std::pair<double, double> valid_range(const RasterGrid &g)
{
    double lo = 1e300, hi = -1e300;
    for (int r = 0; r < g.height(); ++r)
        for (int c = 0; c < g.width(); ++c)
            if (g.valid(c, r))
            {
                lo = std::min(lo, double(g.at(c, r)));
                hi = std::max(hi, double(g.at(c, r)));
            }
    if (lo > hi)
        throw Error(ErrorCode::MissingInput, "raster has no valid cells");
    return {lo, hi};
}

// ---- stages ----

void stage_synth(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("scene");
    st.params("synth");
    const SyntheticScene scene = make_stereo_scene(c.scene, c.seed);
    const SceneConfig &sc = scene.config;
    FilmLayout layout;
    layout.end_px = c.integer("synth", "film_end_px");
    layout.band_px = c.integer("synth", "band_px");
    ScanSimulation sim;
    sim.overlap_px = c.integer("synth", "scan_overlap_px");
    const fs::path out = st.dir("synth");
    const UtmProjection utm = UtmProjection::for_lonlat(sc.lon, sc.lat);
    std::mt19937_64 rng(c.seed ^ 0x5eedf00dULL);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
    const double err = c.num("synth", "footprint_error_m");

    json meta;
    meta["pair_id"] = "pair";
    meta["camera"] = {{"focal_mm", sc.focal_mm},
                      {"pitch_um", sc.pitch_um},
                      {"film_half_length_mm", film_half_length_mm(sc)},
                      {"film_half_width_mm", film_half_width_mm(sc)}};
    meta["scan"] = {{"overlap_px", sim.overlap_px}, {"background", sim.background}};
    meta["images"] = json::array();
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (int k = 0; k < 2; ++k)
    {
        const ImageCamera &ic = k == 0 ? scene.fore : scene.aft;
        spdlog::info("synth: rendering {} film", kImages[k]);
        const RasterGrid image = render_image(scene, ic.camera);
        BendingSpec bend;
        bend.amplitude_top_px = c.num("synth", "bending_top_px");
        bend.amplitude_bottom_px = c.num("synth", "bending_bottom_px");
        bend.wavelength_px = c.num("synth", "bending_wavelength_px");
        bend.phase = 1.3 * k;
        const RasterGrid raw = make_raw_film(image, layout, bend, k == 1);
        const auto parts = scan_film(raw, sim, c.seed + 11 + k);
        json part_names = json::array();
        for (int p = 0; p < 4; ++p)
        {
            const std::string name = kImages[k] + "_part_" + char('a' + p) + ".tif";
            st.raster_out(out / name, parts[p]);
            part_names.push_back(name);
        }
        // catalogue-style approximate corners of the film including the stripe bands
        PanoramicCamera fcam = ic.camera;
        fcam.image.height = image.height() + 2 * layout.band_px;
        FootprintEstimate fp = footprint_from_camera(fcam, sc.base_height_m, 1.0);
        for (const GeodeticPoint &g : fp.corners)
        {
            const MapPoint m = utm.forward(g.lon, g.lat);
            x0 = std::min(x0, m.easting);
            x1 = std::max(x1, m.easting);
            y0 = std::min(y0, m.northing);
            y1 = std::max(y1, m.northing);
        }
        const double th = angle(rng);
        json corners = json::array();
        for (GeodeticPoint &g : fp.corners)
        {
            MapPoint m = utm.forward(g.lon, g.lat);
            m.easting += err * std::cos(th);
            m.northing += err * std::sin(th);
            utm.inverse(m, g.lon, g.lat);
            corners.push_back({g.lon, g.lat});
        }
        meta["images"].push_back({{"image_id", kImages[k]},
                                  {"fore", k == 0},
                                  {"parts", part_names},
                                  {"corners", corners}});
    }
    st.json_out(out / "metadata.json", meta);

    // reference products on a common extent aligned to the coarsest cell
    const double margin = c.num("synth", "region_margin_m");
    const double rc = c.num("synth", "reference_dem_cell_m");
    const double oc = c.num("synth", "ortho_cell_m");
    const double ex0 = std::floor((x0 - margin) / rc) * rc, ex1 = std::ceil((x1 + margin) / rc) * rc;
    const double ey0 = std::floor((y0 - margin) / rc) * rc, ey1 = std::ceil((y1 + margin) / rc) * rc;
    spdlog::info("synth: reference products over {:.1f} x {:.1f} km", (ex1 - ex0) / 1000, (ey1 - ey0) / 1000);
    const RasterGrid ortho = render_ortho(scene, utm.crs(), GeoTransform::north_up(ex0, ey1, oc), int(std::lround((ex1 - ex0) / oc)),
                                          int(std::lround((ey1 - ey0) / oc)));
    st.raster_out(out / "reference_ortho.tif", ortho);
    const RasterGrid ref = truth_dem(scene.terrain, utm.crs(), GeoTransform::north_up(ex0, ey1, rc), int(std::lround((ex1 - ex0) / rc)),
                                     int(std::lround((ey1 - ey0) / rc)));
    st.raster_out(out / "reference_dem.tif", ref);

    const double tc = c.num("dem", "cell_m");
    const RasterGrid truth = truth_dem(scene.terrain, utm.crs(), GeoTransform::north_up(ex0, ey1, tc), int(std::lround((ex1 - ex0) / tc)),
                                       int(std::lround((ey1 - ey0) / tc)));
    st.raster_out(st.dir("truth") / "truth_dem.tif", truth);
    st.json_out(st.dir("truth") / "scene_truth.json", scene_truth_json(scene));
}

void stage_filmprep(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("filmprep");
    const fs::path mpath = metadata_path(c);
    const json meta = st.json_in(mpath);
    const double pitch = meta.at("camera").at("pitch_um");
    const int overlap = meta.at("scan").at("overlap_px");
    const double background = meta.at("scan").at("background");
    const bool correct = c.flag("filmprep", "bending_correction");
    const fs::path out = st.dir("filmprep");
    for (const json &im : meta.at("images"))
    {
        const std::string id = im.at("image_id");
        std::array<ScanPart, 4> parts;
        for (int p = 0; p < 4; ++p)
            parts[p] = {char('a' + p), st.raster(mpath.parent_path() / im.at("parts").at(p).get<std::string>())};
        std::array<std::vector<PointMatch>, 3> m;
        for (int k = 0; k < 3; ++k)
            m[k] = match_overlap(parts[k].raster, parts[k + 1].raster, overlap);
        const StitchResult s = stitch(parts, m);
        const AlignResult a = align_exposed_area(s.film, background);
        TraceOptions topt;
        topt.median_window = c.integer("filmprep", "median_window");
        const auto [top, bottom] = trace_stripes(a.film, topt);
        const RasterGrid body = correct ? correct_bending(a.film, top, bottom) : a.film;
        const bool aft = !im.at("fore").get<bool>();
        const double clip_mm = c.num("filmprep", "clip_mm");
        const RasterGrid fin = finalize(body, aft, pitch, clip_mm);
        st.raster_out(out / (id + ".tif"), fin);
        std::ostringstream csv;
        write_stripes_csv(csv, top, bottom);
        st.text_out(out / (id + "_stripes.csv"), csv.str());
        json info;
        info["image_id"] = id;
        info["bending_correction"] = correct;
        info["overlap_rms_px"] = s.overlap_rms;
        info["rotation_deg"] = rad_to_deg(a.rotation_rad);
        info["threshold"] = a.threshold;
        info["aligned_size"] = {a.film.width(), a.film.height()};
        info["clip_px"] = clip_pixels(pitch, clip_mm);
        info["aft"] = aft;
        info["final_size"] = {fin.width(), fin.height()};
        info["stripes"] = {{"top_mean_px", top.mean()},
                           {"bottom_mean_px", bottom.mean()},
                           {"top_straightness_px", top.straightness()},
                           {"bottom_straightness_px", bottom.straightness()},
                           {"top_valid_fraction", top.valid_fraction()},
                           {"bottom_valid_fraction", bottom.valid_fraction()}};
        if (correct)
        {
            const auto [t2, b2] = trace_stripes(body, topt);
            info["stripes"]["corrected_top_straightness_px"] = t2.straightness();
            info["stripes"]["corrected_bottom_straightness_px"] = b2.straightness();
        }
        st.json_out(out / (id + ".json"), info);
        spdlog::info("filmprep: {} {}x{}, stripe straightness {:.2f}/{:.2f} px", id, fin.width(), fin.height(), top.straightness(),
                     bottom.straightness());
    }
}

void stage_gcp_plan(Stage &st, bool plan_only)
{
    const PipelineConfig &c = st.cfg();
    st.params("gcp");
    const json meta = st.json_in(metadata_path(c));
    const RasterGrid ref = st.raster(reference_ortho_path(c));
    MockMatcherOptions mo;
    mo.grid_step = c.integer("gcp", "grid_step_px");
    RefineOptions ro;
    ro.inlier_tol_m = c.num("gcp", "inlier_tol_m");
    ro.min_confidence = c.num("gcp", "min_confidence");
    ro.seed = c.seed;
    for (const std::string &id : kImages)
    {
        const RasterGrid film = st.raster(st.dir("filmprep") / (id + ".tif"));
        const json &im = image_meta(meta, id);
        FootprintEstimate prior;
        for (int i = 0; i < 4; ++i)
            prior.corners[i] = {im.at("corners").at(i).at(0).get<double>(), im.at("corners").at(i).at(1).get<double>(), 0.0};
        prior.uncertainty_km = c.num("gcp", "uncertainty_km");
        prior.width = film.width();
        prior.height = film.height();
        const fs::path out = st.dir("gcp") / id;
        const auto coarse_tiles = plan_tiles(prior, ref, TileMode::Coarse);
        st.json_out(out / "tiles_coarse.json", tiles_to_json(coarse_tiles));
        if (plan_only)
            continue;
        const auto coarse = mock_match(film, ref, coarse_tiles, prior, mo);
        write_matches_csv(st.output(out / "matches_coarse.csv"), coarse);
        const FootprintEstimate refined = refine_footprint(prior, coarse, ro);
        st.json_out(out / "footprint.json", footprint_to_json(refined));
        const auto fine_tiles = plan_tiles(refined, ref, TileMode::Fine);
        st.json_out(out / "tiles_fine.json", tiles_to_json(fine_tiles));
        const auto fine = mock_match(film, ref, fine_tiles, refined, mo);
        write_matches_csv(st.output(out / "matches_fine.csv"), fine);
        spdlog::info("gcp-plan: {} {} coarse / {} fine matches, refined uncertainty {:.0f} m", id, coarse.size(), fine.size(),
                     refined.uncertainty_km * 1000);
    }
}

void stage_gcp_assemble(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("gcp");
    const RasterGrid dem = st.raster(reference_dem_path(c));
    ObservationSet set;
    json summary;
    for (const std::string &id : kImages)
    {
        const auto matches = read_matches_csv(st.input(st.dir("gcp") / id / "matches_fine.csv"));
        const auto kept = filter_matches(matches, c.num("gcp", "min_confidence"), c.integer("gcp", "cap_per_tile"));
        const AssembledGcps a = assemble_gcps(kept, dem, id, c.num("gcp", "sigma_px"));
        set.gcps.insert(set.gcps.end(), a.gcps.begin(), a.gcps.end());
        summary[id] = {{"matches", matches.size()}, {"kept", kept.size()}, {"gcps", a.gcps.size()}, {"skipped_nodata", a.skipped_nodata}};
    }
    split_control_check(set.gcps, c.seed, c.num("gcp", "check_fraction"));
    size_t check = 0;
    for (const GcpRecord &g : set.gcps)
        check += g.role == GcpRole::Check;
    summary["control"] = set.gcps.size() - check;
    summary["check"] = check;
    write_observations_csv(st.output(st.dir("gcp") / "observations.csv"), set);
    st.json_out(st.dir("gcp") / "summary.json", summary);
    spdlog::info("gcp-assemble: {} control, {} check", set.gcps.size() - check, check);
}

/// GCP pixel on the finalized corrected film -> same point on a finalized film without correction.
PixelPoint uncorrected_pixel(const PixelPoint &p, const BendingModel &bm, const json &info)
{
    const double clip = info.at("clip_px");
    const double wa = info.at("aligned_size").at(0), ha = info.at("aligned_size").at(1);
    const bool aft = info.at("aft");
    const double xa = aft ? wa - clip - p.col : p.col + clip;
    const double ya = aft ? ha - p.row : p.row;
    const double yr = bm.raw_row(xa, ya);
    return {p.col, aft ? ha - yr : yr};
}

json ab_row(const std::string &variant, bool corrected, const AdjustmentReport &r)
{
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"variant", variant},
            {"bending_correction", corrected},
            {"sigma0_px", r.sigma0},
            {"rmse_easting_m", num(r.rmse_xyz.x())},
            {"rmse_northing_m", num(r.rmse_xyz.y())},
            {"rmse_height_m", num(r.rmse_xyz.z())},
            {"check_points", r.check_points},
            {"observations", r.observations},
            {"rejected", r.rejected}};
}

std::string ab_csv(const json &rows)
{
    std::ostringstream s;
    s.precision(10);
    s << "variant,bending_correction,sigma0_px,rmse_easting_m,rmse_northing_m,rmse_height_m,check_points,observations,rejected\n";
    auto v = [&](const json &x) {
        if (x.is_null())
            s << "";
        else if (x.is_boolean())
            s << (x.get<bool>() ? "on" : "off");
        else if (x.is_string())
            s << x.get<std::string>();
        else if (x.is_number_integer())
            s << x.get<long long>();
        else
            s << x.get<double>();
    };
    for (const json &r : rows)
    {
        bool first = true;
        for (const auto &[k, x] : r.items())
        {
            if (!first)
                s << ',';
            first = false;
            v(x);
        }
        s << '\n';
    }
    return s.str();
}

void stage_adjust(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("adjust");
    const json meta = st.json_in(metadata_path(c));
    const RasterGrid ref = st.raster(reference_dem_path(c));
    const ObservationSet obs = read_observations_csv(st.input(st.dir("gcp") / "observations.csv"));
    std::vector<double> hs;
    for (int r = 0; r < ref.height(); ++r)
        for (int col = 0; col < ref.width(); ++col)
            if (ref.valid(col, r))
                hs.push_back(ref.at(col, r));
    const double mean_h = median(hs);
    std::vector<ImageCamera> init;
    std::map<std::string, json> info;
    for (const std::string &id : kImages)
    {
        info[id] = st.json_in(st.dir("filmprep") / (id + ".json"));
        const FootprintEstimate fp = footprint_from_json(st.json_in(st.dir("gcp") / id / "footprint.json"));
        const GeodeticPoint ctr = fp.center();
        const json &im = image_meta(meta, id);
        const auto cams = initialize_cameras({{id, meta.value("pair_id", "pair"), ctr.lon, ctr.lat, mean_h, im.at("fore").get<bool>()}},
                                             interior_from_metadata(meta, fp.width, fp.height));
        init.push_back(cams.front());
    }
    AdjustOptions opt;
    opt.outlier_rounds = c.integer("adjust", "outlier_rounds");
    opt.max_iterations = c.integer("adjust", "max_iterations");
    opt.utm_crs = ref.crs();
    if (c.flag("adjust", "fix_imc"))
        opt.fixed = {kImc};
    const bool corrected = info.at("fore").at("bending_correction");
    const AdjustmentResult res = bundle_adjust(init, obs.gcps, obs.tiepoints, opt);
    const fs::path out = st.dir("adjust");
    json report = report_to_json(res.report);
    report["bending_correction"] = corrected;
    st.json_out(out / "report.json", report);
    for (const ImageCamera &ic : res.cameras)
    {
        write_camera(st.output(out / (ic.image_id + "_camera.json")), ic.camera);
        const ResidualField f = residual_field(res.report, ic.image_id, ic.camera.image, c.num("adjust", "residual_step_px"),
                                               c.num("adjust", "residual_cutoff_px"));
        st.raster_out(out / "residuals" / (ic.image_id + "_dcol.tif"), f.dcol);
        st.raster_out(out / "residuals" / (ic.image_id + "_drow.tif"), f.drow);
    }
    spdlog::info("adjust: sigma0 {:.3f} px, check RMSE E/N/H {:.2f}/{:.2f}/{:.2f} m", res.report.sigma0, res.report.rmse_xyz.x(),
                 res.report.rmse_xyz.y(), res.report.rmse_xyz.z());

    json rows = json::array();
    rows.push_back(ab_row(corrected ? "with_correction" : "without_correction", corrected, res.report));
    if (corrected && c.flag("adjust", "ab_comparison"))
    {
        std::map<std::string, BendingModel> models;
        for (const std::string &id : kImages)
        {
            auto [top, bottom] = read_stripes_csv(st.input(st.dir("filmprep") / (id + "_stripes.csv")));
            models.emplace(id, BendingModel(std::move(top), std::move(bottom)));
        }
        std::vector<GcpRecord> raw = obs.gcps;
        for (GcpRecord &g : raw)
            g.pixel = uncorrected_pixel(g.pixel, models.at(g.image_id), info.at(g.image_id));
        const AdjustmentResult b = bundle_adjust(init, raw, obs.tiepoints, opt);
        rows.push_back(ab_row("without_correction", false, b.report));
        spdlog::info("adjust: without bending correction sigma0 {:.3f} px", b.report.sigma0);
    }
    st.json_out(out / "ab_table.json", rows);
    st.text_out(out / "ab_table.csv", ab_csv(rows));
}

/// Rows outside the camera format (stripe bands) set to nodata.
RasterGrid mask_format(RasterGrid film, const PanoramicCamera &cam)
{
    for (int r = 0; r < film.height(); ++r)
        if (std::abs(pixel_to_mm({0.0, r + 0.5}, cam.image).y) > cam.film_half_width_mm)
            for (int c = 0; c < film.width(); ++c)
                film.set_nodata(c, r);
    return film;
}

void stage_rectify(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("rectify");
    const PanoramicCamera a = read_camera(st.input(st.dir("adjust") / "fore_camera.json"));
    const PanoramicCamera b = read_camera(st.input(st.dir("adjust") / "aft_camera.json"));
    const RasterGrid fa = mask_format(st.raster(st.dir("filmprep") / "fore.tif"), a);
    const RasterGrid fb = mask_format(st.raster(st.dir("filmprep") / "aft.tif"), b);
    const auto [hmin, hmax] = valid_range(st.raster(reference_dem_path(c)));
    const HeightRange hr{hmin, hmax};
    RectifyOptions opt;
    opt.degree = c.integer("rectify", "degree");
    opt.grid = c.integer("rectify", "grid");
    opt.levels = c.integer("rectify", "levels");
    opt.height_margin = c.num("rectify", "height_margin");
    const RectificationModel m = build_rectification(a, b, hr, opt);

    const double pad = opt.height_margin * (hmax - hmin);
    const auto vc = virtual_correspondences(a, b, {hmin - pad, hmax + pad}, opt.grid, opt.levels, 0.37);
    double dlo = 1e300, dhi = -1e300, sy = 0.0;
    int n = 0;
    for (const VirtualCorrespondence &v : vc)
    {
        const PixelPoint qa = m.forward(0, v.a), qb = m.forward(1, v.b);
        dlo = std::min(dlo, qb.col - qa.col);
        dhi = std::max(dhi, qb.col - qa.col);
        sy += (qb.row - qa.row) * (qb.row - qa.row);
        ++n;
    }
    const int margin = c.integer("match", "disparity_margin_px");
    const int dmin = int(std::floor(dlo)) - margin, dmax = int(std::ceil(dhi)) + margin;

    const fs::path out = st.dir("rectify");
    st.json_out(out / "model.json", rectification_to_json(m));
    const RasterGrid ra = resample_rectified(fa, m, 0);
    const RasterGrid rb = resample_rectified(fb, m, 1);
    st.raster_out(out / "fore_rect.tif", ra);
    st.raster_out(out / "aft_rect.tif", rb);
    const int step = c.integer("rectify", "yparallax_step_px");
    const RasterGrid yp = measure_y_parallax(ra, rb, step, std::max(std::abs(dmin), std::abs(dmax)));
    st.raster_out(out / "yparallax.tif", yp);
    std::vector<double> v;
    for (float x : yp.values())
        if (x != yp.nodata())
            v.push_back(x);
    double mean = 0.0, sd = 0.0;
    for (double x : v)
        mean += x / double(v.size());
    for (double x : v)
        sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
    json info;
    info["height_range_m"] = {hmin, hmax};
    info["grid_size"] = {m.width, m.height};
    info["disparity_range_px"] = {dmin, dmax};
    info["virtual_yparallax_rms_px"] = n ? std::sqrt(sy / n) : 0.0;
    info["yparallax"] = {{"nodes", v.size()}, {"mean_px", mean}, {"sd_px", sd}, {"nmad_px", v.size() > 1 ? nmad(v) : 0.0}};
    st.json_out(out / "rectify.json", info);
    spdlog::info("rectify: grid {}x{}, disparity [{}, {}], image y-parallax sd {:.3f} px", m.width, m.height, dmin, dmax, sd);
}

void stage_match(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("match");
    const json info = st.json_in(st.dir("rectify") / "rectify.json");
    const RasterGrid ra = st.raster(st.dir("rectify") / "fore_rect.tif");
    const RasterGrid rb = st.raster(st.dir("rectify") / "aft_rect.tif");
    SgmOptions opt;
    opt.dmin = info.at("disparity_range_px").at(0);
    opt.dmax = info.at("disparity_range_px").at(1);
    opt.p1 = c.integer("match", "p1");
    opt.p2 = c.integer("match", "p2");
    opt.lr_tolerance = c.num("match", "lr_tolerance_px");
    opt.min_texture_std = c.num("match", "min_texture_std");
    opt.uniqueness = c.num("match", "uniqueness");
    opt.border_px = c.integer("match", "border_px");
    const DisparityMap d = sgm_match(ra, rb, opt);
    st.raster_out(st.dir("match") / "disparity.tif", d.disparity);
    const double frac = double(d.valid_cells) / double(ra.width() * size_t(ra.height()));
    st.json_out(st.dir("match") / "match.json",
                {{"disparity_range_px", {opt.dmin, opt.dmax}}, {"valid_cells", d.valid_cells}, {"valid_fraction", frac}});
    spdlog::info("match: {} valid disparities ({:.1f} %)", d.valid_cells, 100 * frac);
}

void stage_dem(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("dem");
    const PanoramicCamera a = read_camera(st.input(st.dir("adjust") / "fore_camera.json"));
    const PanoramicCamera b = read_camera(st.input(st.dir("adjust") / "aft_camera.json"));
    const RectificationModel m = rectification_from_json(st.json_in(st.dir("rectify") / "model.json"));
    const RasterGrid disp = st.raster(st.dir("match") / "disparity.tif");
    const std::string crs = st.raster(reference_dem_path(c)).crs();
    const UtmProjection utm = UtmProjection::from_crs(crs);
    const double miss_gsd = c.num("dem", "max_miss_gsd");
    TriangulateOptions topt;

    std::vector<std::vector<Eigen::Vector3d>> rows(disp.height());
    std::vector<std::array<size_t, 4>> counts(disp.height(), {0, 0, 0, 0}); // format, inverse, triangulation, miss
#pragma omp parallel for schedule(dynamic, 8)
    for (int r = 0; r < disp.height(); ++r)
        for (int col = 0; col < disp.width(); ++col)
        {
            if (!disp.valid(col, r))
                continue;
            const auto pa = m.inverse(0, {col + 0.5, r + 0.5});
            const auto pb = m.inverse(1, {col + 0.5 + disp.at(col, r), r + 0.5});
            if (!pa || !pb)
            {
                ++counts[r][1];
                continue;
            }
            const ImagePointMM ma = pixel_to_mm(*pa, a.image), mb = pixel_to_mm(*pb, b.image);
            if (std::abs(ma.y) > a.film_half_width_mm || std::abs(mb.y) > b.film_half_width_mm)
            {
                ++counts[r][0];
                continue;
            }
            try
            {
                const Triangulation t = triangulate(a, b, ma, mb, topt);
                const double gsd = a.image.pitch_mm() / a.focal_mm * (t.point - a.position).norm();
                if (t.miss_m > miss_gsd * gsd)
                {
                    ++counts[r][3];
                    continue;
                }
                rows[r].push_back(to_map(t.point, utm));
            }
            catch (const Error &)
            {
                ++counts[r][2];
            }
        }
    std::vector<Eigen::Vector3d> pts;
    std::array<size_t, 4> rej{0, 0, 0, 0};
    for (int r = 0; r < disp.height(); ++r)
    {
        pts.insert(pts.end(), rows[r].begin(), rows[r].end());
        for (int k = 0; k < 4; ++k)
            rej[k] += counts[r][k];
    }
    if (pts.empty())
        throw Error(ErrorCode::InsufficientMatches, "dem: no triangulated points");
    RasterGrid dem = grid_dem(pts, c.num("dem", "cell_m"));
    dem.set_crs(crs);
    st.raster_out(st.dir("dem") / "dem.tif", dem);
    st.json_out(st.dir("dem") / "dem.json", {{"points", pts.size()},
                                             {"rejected_outside_format", rej[0]},
                                             {"rejected_no_inverse", rej[1]},
                                             {"rejected_geometry", rej[2]},
                                             {"rejected_miss", rej[3]},
                                             {"size", {dem.width(), dem.height()}},
                                             {"valid_cells", dem.count_valid()},
                                             {"crs", crs}});
    spdlog::info("dem: {} points, {}x{} cells, {} valid", pts.size(), dem.width(), dem.height(), dem.count_valid());
}

void stage_coregister(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    st.params("coregister");
    const fs::path out = st.dir("coregister");
    if (!c.flag("coregister", "enabled"))
    {
        fs::remove_all(out);
        st.json_out(out / "coregister.json", {{"enabled", false}});
        spdlog::info("coregister: disabled");
        return;
    }
    const RasterGrid dem = st.raster(st.dir("dem") / "dem.tif");
    const RasterGrid ref = resample_to(st.raster(reference_dem_path(c)), dem);
    std::optional<RasterGrid> stable;
    const std::string mask_path = c.str("inputs", "stable_mask");
    if (!mask_path.empty())
    {
        const RasterGrid mask = st.raster(mask_path);
        RasterGrid s(dem.width(), dem.height(), 0.0f, dem.geotransform(), dem.nodata());
        for (int r = 0; r < dem.height(); ++r)
            for (int col = 0; col < dem.width(); ++col)
            {
                const Eigen::Vector2d p = mask.geotransform().invert(dem.cell_center(col, r).x(), dem.cell_center(col, r).y());
                const int mc = int(std::floor(p.x())), mr = int(std::floor(p.y()));
                s.at(col, r) = mask.contains(mc, mr) && mask.valid(mc, mr) && mask.at(mc, mr) != 0.0f ? 1.0f : 0.0f;
            }
        stable = std::move(s);
    }
    CoregOptions opt;
    opt.tile_m = c.num("coregister", "tile_km") * 1000.0;
    opt.overlap = c.num("coregister", "overlap");
    opt.max_dh_m = c.num("coregister", "max_dh_m");
    opt.max_slope_deg = c.num("coregister", "max_slope_deg");
    opt.min_stable_fraction = c.num("coregister", "min_stable_fraction");
    const CoregResult res = coregister_tiles(dem, ref, stable ? &*stable : nullptr, opt);
    RasterGrid corrected = res.corrected;
    corrected.set_crs(dem.crs());
    st.raster_out(out / "dem_coreg.tif", corrected);
    RasterGrid before, after;
    dh_stats(dem, ref, stable ? &*stable : nullptr, &before);
    dh_stats(corrected, ref, stable ? &*stable : nullptr, &after);
    before.set_crs(dem.crs());
    after.set_crs(dem.crs());
    st.raster_out(out / "dh_before.tif", before);
    st.raster_out(out / "dh_after.tif", after);
    json j = coreg_result_to_json(res);
    j["enabled"] = true;
    j["stable_mask"] = !mask_path.empty();
    st.json_out(out / "coregister.json", j);
    spdlog::info("coregister: NMAD {:.3f} -> {:.3f} m over {} tiles", res.before.nmad, res.after.nmad, res.tiles.size());
}

std::string fmt_num(const json &v, int prec = 3)
{
    if (v.is_null())
        return "n/a";
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v.get<double>();
    return s.str();
}

void stage_report(Stage &st)
{
    const PipelineConfig &c = st.cfg();
    const std::vector<std::string> required{"adjust/report.json", "adjust/ab_table.json", "adjust/ab_table.csv", "rectify/rectify.json",
                                            "rectify/yparallax.tif", "dem/dem.tif"};
    std::string missing;
    for (const std::string &r : required)
        if (!fs::exists(c.run_dir / r))
            missing += (missing.empty() ? "" : ", ") + r;
    if (!missing.empty())
        throw Error(ErrorCode::IncompleteRun, "report: run is incomplete, missing " + missing);

    const fs::path out = st.dir("report");
    fs::remove_all(out);
    const json adj = st.json_in(st.dir("adjust") / "report.json");
    const json ab = st.json_in(st.dir("adjust") / "ab_table.json");
    const json rect = st.json_in(st.dir("rectify") / "rectify.json");
    const RasterGrid dem = st.raster(st.dir("dem") / "dem.tif");
    const RasterGrid ref = resample_to(st.raster(reference_dem_path(c)), dem);

    std::ifstream abin(st.input(st.dir("adjust") / "ab_table.csv"));
    st.text_out(out / "adjustment_table.csv", std::string(std::istreambuf_iterator<char>(abin), {}));
    json residuals = json::array();
    for (const std::string &id : kImages)
        for (const char *comp : {"_dcol.tif", "_drow.tif"})
        {
            const std::string name = id + comp;
            st.raster_out(out / "residuals" / name, st.raster(st.dir("adjust") / "residuals" / name));
            residuals.push_back("residuals/" + name);
        }
    st.raster_out(out / "yparallax.tif", st.raster(st.dir("rectify") / "yparallax.tif"));

    json summary;
    summary["tool_version"] = kToolVersion;
    summary["bending_correction"] = adj.at("bending_correction");
    summary["sigma0_px"] = adj.at("sigma0_px");
    summary["rmse_check_m"] = adj.at("rmse_xyz_m");
    summary["check_points"] = adj.at("check_points");
    summary["adjustment_table"] = ab;
    summary["yparallax"] = rect.at("yparallax");

    RasterGrid dhb;
    const DhStats before = dh_stats(dem, ref, nullptr, &dhb);
    dhb.set_crs(dem.crs());
    st.raster_out(out / "dh_before.tif", dhb);
    json dh;
    dh["before"] = dh_stats_to_json(before);
    const fs::path coreg = st.dir("coregister") / "dem_coreg.tif";
    const bool have_after = fs::exists(coreg);
    std::optional<RasterGrid> final_dem;
    if (have_after)
    {
        final_dem = st.raster(coreg);
        RasterGrid dha;
        dh["after"] = dh_stats_to_json(dh_stats(*final_dem, ref, nullptr, &dha));
        dha.set_crs(dem.crs());
        st.raster_out(out / "dh_after.tif", dha);
    }
    else
    {
        dh["after"] = nullptr;
        dh["after_status"] = "absent: coregistration did not run";
    }
    summary["dh_vs_reference_m"] = dh;

    const fs::path tpath = truth_dem_path(c);
    if (fs::exists(tpath))
    {
        const RasterGrid truth = resample_to(st.raster(tpath), dem);
        summary["truth_closure_m"] = {{"dem", dh_stats_to_json(dh_stats(dem, truth))},
                                      {"final", dh_stats_to_json(dh_stats(final_dem ? *final_dem : dem, truth))}};
    }
    json artifacts = {{"summary", "summary.json"},
                      {"summary_text", "summary.md"},
                      {"adjustment_table", "adjustment_table.csv"},
                      {"residual_rasters", residuals},
                      {"yparallax_map", "yparallax.tif"},
                      {"dh_maps", have_after ? json{"dh_before.tif", "dh_after.tif"} : json{"dh_before.tif"}}};
    summary["artifacts"] = artifacts;
    st.json_out(out / "summary.json", summary);

    std::ostringstream md;
    md << "# Run summary\n\n";
    md << "Bending correction: " << (adj.at("bending_correction").get<bool>() ? "on" : "off") << "\n\n";
    md << "## Adjustment\n\n| Bending correction | sigma0 [px] | RMSE E [m] | RMSE N [m] | RMSE H [m] | check points |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const json &r : ab)
        md << "| " << (r.at("bending_correction").get<bool>() ? "with correction" : "without correction") << " | "
           << fmt_num(r.at("sigma0_px")) << " | " << fmt_num(r.at("rmse_easting_m"), 2) << " | " << fmt_num(r.at("rmse_northing_m"), 2)
           << " | " << fmt_num(r.at("rmse_height_m"), 2) << " | " << r.at("check_points").get<int>() << " |\n";
    md << "\n## Rectification\n\ny-parallax: mean " << fmt_num(rect.at("yparallax").at("mean_px")) << " px, SD "
       << fmt_num(rect.at("yparallax").at("sd_px")) << " px over " << rect.at("yparallax").at("nodes").get<int>() << " nodes\n";
    md << "\n## DEM vs reference\n\n| | NMAD [m] | median [m] | cells |\n|---|---|---|---|\n";
    md << "| before coregistration | " << fmt_num(dh["before"]["nmad_m"]) << " | " << fmt_num(dh["before"]["median_m"]) << " | "
       << dh["before"]["count"].get<size_t>() << " |\n";
    if (have_after)
        md << "| after coregistration | " << fmt_num(dh["after"]["nmad_m"]) << " | " << fmt_num(dh["after"]["median_m"]) << " | "
           << dh["after"]["count"].get<size_t>() << " |\n";
    else
        md << "| after coregistration | absent (not run) | | |\n";
    if (summary.contains("truth_closure_m"))
        md << "\n## Closure against synthetic truth\n\nNMAD " << fmt_num(summary["truth_closure_m"]["final"]["nmad_m"]) << " m, median "
           << fmt_num(summary["truth_closure_m"]["final"]["median_m"]) << " m\n";
    st.text_out(out / "summary.md", md.str());
    spdlog::info("report: written to {}", out.string());
}

} // namespace

std::string file_digest(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    std::array<char, 1 << 16> buf;
    while (in)
    {
        in.read(buf.data(), buf.size());
        for (std::streamsize i = 0; i < in.gcount(); ++i)
        {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char s[17];
    std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(h));
    return s;
}

json default_config()
{
    json j;
    j["run"] = {{"output_dir", "run"}, {"seed", 42}, {"jobs", 0}};
    j["inputs"] = {{"metadata", ""}, {"reference_ortho", ""}, {"reference_dem", ""}, {"truth_dem", ""}, {"stable_mask", ""}};
    j["scene"] = scene_config_to_json(SceneConfig{});
    j["synth"] = {{"bending_top_px", 5.0},
                  {"bending_bottom_px", 3.0},
                  {"bending_wavelength_px", 900.0},
                  {"film_end_px", 43},
                  {"band_px", 40},
                  {"scan_overlap_px", 200},
                  {"footprint_error_m", 300.0},
                  {"region_margin_m", 1500.0},
                  {"ortho_cell_m", 2.0},
                  {"reference_dem_cell_m", 30.0}};
    j["filmprep"] = {{"bending_correction", true}, {"median_window", 101}, {"clip_mm", 0.301}};
    j["gcp"] = {{"uncertainty_km", 1.0}, {"inlier_tol_m", 60.0}, {"min_confidence", 0.5}, {"cap_per_tile", 200},
                {"grid_step_px", 96},    {"sigma_px", 1.0},      {"check_fraction", 0.5}};
    j["adjust"] = {{"fix_imc", true}, {"max_iterations", 400}, {"outlier_rounds", 3}, {"ab_comparison", true}, {"residual_step_px", 50.0}, {"residual_cutoff_px", 400.0}};
    j["rectify"] = {{"degree", 4}, {"grid", 25}, {"levels", 5}, {"height_margin", 0.1}, {"yparallax_step_px", 32}};
    j["match"] = {{"p1", 10}, {"p2", 120}, {"disparity_margin_px", 4}, {"lr_tolerance_px", 1.0}, {"min_texture_std", 2.0}, {"uniqueness", 0.0}, {"border_px", 8}};
    j["dem"] = {{"cell_m", 10.0}, {"max_miss_gsd", 3.0}};
    j["coregister"] = {{"enabled", true}, {"tile_km", 20.0}, {"overlap", 0.25}, {"max_dh_m", 100.0}, {"max_slope_deg", 45.0},
                       {"min_stable_fraction", 0.2}};
    return j;
}

json parse_flat_config(const std::string &text)
{
    json j = json::object();
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw))
    {
        ++lineno;
        std::string line = raw;
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i)
        {
            if (line[i] == '"')
                quoted = !quoted;
            else if (line[i] == '#' && !quoted)
            {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty())
            continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[')
        {
            if (line.back() != ']')
                throw Error(ErrorCode::ConfigInvalid, where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw Error(ErrorCode::ConfigInvalid, where + "empty section name");
            if (!j.contains(section))
                j[section] = json::object();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::ConfigInvalid, where + "expected key = value");
        if (section.empty())
            throw Error(ErrorCode::ConfigInvalid, where + "key outside a section");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw Error(ErrorCode::ConfigInvalid, where + "empty key or value");
        if (j[section].contains(key))
            throw Error(ErrorCode::ConfigInvalid, where + "duplicate key " + key);
        json v;
        if (val.front() == '"')
        {
            if (val.size() < 2 || val.back() != '"')
                throw Error(ErrorCode::ConfigInvalid, where + "unterminated string");
            v = val.substr(1, val.size() - 2);
        }
        else if (val == "true" || val == "false")
            v = val == "true";
        else
        {
            try
            {
                v = json::parse(val);
            }
            catch (const json::exception &)
            {
                throw Error(ErrorCode::ConfigInvalid, where + "cannot parse value '" + val + "'");
            }
            if (!v.is_number())
                throw Error(ErrorCode::ConfigInvalid, where + "value must be a number, boolean or quoted string");
        }
        j[section][key] = v;
    }
    return j;
}

PipelineConfig config_from_json(const nlohmann::json &in, const fs::path &base_dir)
{
    if (!in.is_object())
        throw Error(ErrorCode::ConfigInvalid, "config must be an object");
    json v = default_config();
    for (const auto &[sec, body] : in.items())
    {
        if (!v.contains(sec))
            throw Error(ErrorCode::ConfigInvalid, "unknown section [" + sec + "]");
        if (!body.is_object())
            throw Error(ErrorCode::ConfigInvalid, "section [" + sec + "] must be a table");
        for (const auto &[key, val] : body.items())
        {
            if (!v[sec].contains(key))
                throw Error(ErrorCode::ConfigInvalid, "unknown key " + sec + "." + key);
            if (!same_kind(v[sec][key], val))
                throw Error(ErrorCode::ConfigInvalid, "wrong type for " + sec + "." + key + ", expected " + v[sec][key].type_name());
            v[sec][key] = val;
        }
    }
    auto resolve = [&](json &s) {
        const std::string p = s.get<std::string>();
        if (!p.empty() && fs::path(p).is_relative())
            s = (base_dir / p).lexically_normal().string();
    };
    resolve(v["run"]["output_dir"]);
    for (auto &[k, s] : v["inputs"].items())
        resolve(s);

    PipelineConfig c;
    c.values = v;
    c.run_dir = v["run"]["output_dir"].get<std::string>();
    if (c.run_dir.empty())
        throw Error(ErrorCode::ConfigInvalid, "run.output_dir must not be empty");
    if (v["run"]["seed"].get<long long>() < 0)
        throw Error(ErrorCode::ConfigInvalid, "run.seed must be non-negative");
    c.seed = v["run"]["seed"].get<uint64_t>();
    c.jobs = v["run"]["jobs"];
    try
    {
        c.scene = scene_config_from_json(v["scene"]);
    }
    catch (const Error &e)
    {
        throw Error(ErrorCode::ConfigInvalid, std::string("scene: ") + e.what());
    }
    auto positive = [&](const char *sec, const char *key) {
        if (!(v[sec][key].get<double>() > 0.0))
            throw Error(ErrorCode::ConfigInvalid, std::string(sec) + "." + key + " must be positive");
    };
    positive("synth", "ortho_cell_m");
    positive("synth", "reference_dem_cell_m");
    positive("filmprep", "clip_mm");
    positive("gcp", "uncertainty_km");
    positive("gcp", "sigma_px");
    positive("dem", "cell_m");
    positive("dem", "max_miss_gsd");
    positive("coregister", "tile_km");
    const double cf = v["gcp"]["check_fraction"];
    if (cf < 0.0 || cf >= 1.0)
        throw Error(ErrorCode::ConfigInvalid, "gcp.check_fraction must be in [0, 1)");
    const double ov = v["coregister"]["overlap"];
    if (ov < 0.0 || ov >= 0.5)
        throw Error(ErrorCode::ConfigInvalid, "coregister.overlap must be in [0, 0.5)");
    if (v["rectify"]["degree"].get<int>() < 1 || v["rectify"]["grid"].get<int>() < 3 || v["rectify"]["levels"].get<int>() < 2)
        throw Error(ErrorCode::ConfigInvalid, "rectify: degree >= 1, grid >= 3 and levels >= 2 required");
    if (v["match"]["p1"].get<int>() < 0 || v["match"]["p2"].get<int>() < v["match"]["p1"].get<int>())
        throw Error(ErrorCode::ConfigInvalid, "match: 0 <= p1 <= p2 required");
    return c;
}

PipelineConfig load_config(const fs::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    const std::string t = trim(text);
    nlohmann::json j;
    if (!t.empty() && t.front() == '{')
    {
        try
        {
            j = nlohmann::json::parse(t);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
        }
    }
    else
        j = parse_flat_config(text);
    return config_from_json(j, fs::absolute(path).parent_path());
}

const std::vector<std::string> &stage_names()
{
    static const std::vector<std::string> names{"synth", "filmprep", "gcp-plan", "gcp-assemble", "adjust",
                                                "rectify", "match",    "dem",      "coregister",   "report"};
    return names;
}

void run_stage(const std::string &name, const PipelineConfig &config, const StageArgs &args)
{
    const auto &names = stage_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
        throw Error(ErrorCode::ConfigInvalid, "unknown stage " + name);
    if (config.jobs > 0)
        set_jobs(config.jobs);
    fs::create_directories(config.run_dir);
    spdlog::info("{}: start", name);
    Stage st(name, config);
    try
    {
        if (name == "synth")
            stage_synth(st);
        else if (name == "filmprep")
            stage_filmprep(st);
        else if (name == "gcp-plan")
            stage_gcp_plan(st, args.plan_only);
        else if (name == "gcp-assemble")
            stage_gcp_assemble(st);
        else if (name == "adjust")
            stage_adjust(st);
        else if (name == "rectify")
            stage_rectify(st);
        else if (name == "match")
            stage_match(st);
        else if (name == "dem")
            stage_dem(st);
        else if (name == "coregister")
            stage_coregister(st);
        else
            stage_report(st);
    }
    catch (const Error &e)
    {
        write_json(config.run_dir / "errors" / (name + ".json"),
                   {{"stage", name}, {"error", to_string(e.code())}, {"exit_status", exit_status(e.code())}, {"message", e.what()}});
        throw;
    }
    fs::remove(config.run_dir / "errors" / (name + ".json"));
    st.finish();
}

void run_pipeline(const PipelineConfig &config)
{
    for (const std::string &s : stage_names())
    {
        if (s == "synth" && !config.str("inputs", "metadata").empty())
            continue;
        run_stage(s, config);
    }
}

} // namespace cosp
