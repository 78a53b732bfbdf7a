#include <cosp/error.hpp>
#include <cosp/pipeline.hpp>

#include <doctest.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace cosp;
namespace fs = std::filesystem;

namespace
{

template <class F>
ErrorCode code_of(F &&f)
{
    try
    {
        f();
    }
    catch (const Error &e)
    {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidArgument;
}

fs::path scratch(const std::string &name)
{
    const fs::path p = fs::temp_directory_path() / ("cosp_pipeline_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("FNV-1a digests")
{
    const fs::path dir = scratch("digest");
    std::ofstream(dir / "empty").close();
    std::ofstream(dir / "a") << "a";
    std::ofstream(dir / "foobar") << "foobar";
    CHECK(file_digest(dir / "empty") == "cbf29ce484222325");
    CHECK(file_digest(dir / "a") == "af63dc4c8601ec8c");
    CHECK(file_digest(dir / "foobar") == "85944171f73967e8");
    fs::remove_all(dir);
}

TEST_CASE("flat config text parses to typed JSON")
{
    const auto j = parse_flat_config("# comment\n[run]\nseed = 7   # trailing\noutput_dir = \"out # not a comment\"\n\n"
                                     "[filmprep]\nbending_correction = false\nclip_mm = 0.5\n");
    CHECK(j["run"]["seed"].is_number_integer());
    CHECK(j["run"]["seed"] == 7);
    CHECK(j["run"]["output_dir"] == "out # not a comment");
    CHECK(j["filmprep"]["bending_correction"] == false);
    CHECK(j["filmprep"]["clip_mm"] == doctest::Approx(0.5));
}

TEST_CASE("malformed flat config lines are rejected")
{
    for (const char *text : {"seed = 1\n", "[run\nseed = 1\n", "[run]\nseed\n", "[run]\nseed = 1\nseed = 2\n", "[run]\nname = \"open\n",
                             "[run]\nseed = abc\n", "[]\n"})
        CHECK(code_of([&] { parse_flat_config(text); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("strict schema")
{
    const fs::path base = "/data/project";
    CHECK(code_of([&] { config_from_json({{"bogus", nlohmann::json::object()}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"run", {{"sede", 1}}}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"run", {{"seed", "1"}}}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"match", {{"p1", 2.5}}}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"scene", {{"tilt", 15.0}}}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"gcp", {{"check_fraction", 1.0}}}}, base); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { config_from_json({{"dem", {{"cell_m", 0.0}}}}, base); }) == ErrorCode::ConfigInvalid);
    // integers are accepted where reals are expected
    const PipelineConfig c = config_from_json({{"dem", {{"cell_m", 20}}}}, base);
    CHECK(c.num("dem", "cell_m") == 20.0);
}

TEST_CASE("defaults, overrides and relative paths")
{
    const PipelineConfig c = config_from_json({{"run", {{"output_dir", "runs/a"}, {"seed", 9}}},
                                               {"inputs", {{"reference_dem", "../ref/dem.tif"}, {"stable_mask", "/abs/mask.tif"}}},
                                               {"scene", {{"tilt_deg", 12.0}}}},
                                              "/data/project");
    CHECK(c.run_dir == fs::path("/data/project/runs/a"));
    CHECK(c.str("inputs", "reference_dem") == "/data/ref/dem.tif");
    CHECK(c.str("inputs", "stable_mask") == "/abs/mask.tif");
    CHECK(c.str("inputs", "metadata").empty());
    CHECK(c.seed == 9);
    CHECK(c.scene.tilt_deg == 12.0);
    CHECK(c.integer("match", "p2") == default_config()["match"]["p2"].get<int>());
    const auto defaults = default_config();
    for (const auto &[sec, body] : defaults.items())
        CHECK(c.values.contains(sec));
}

TEST_CASE("flat and JSON config files are equivalent")
{
    const fs::path dir = scratch("configs");
    std::ofstream(dir / "a.toml") << "[run]\noutput_dir = \"out\"\nseed = 3\n[coregister]\nenabled = false\ntile_km = 10\n";
    std::ofstream(dir / "b.json") << R"({"run": {"output_dir": "out", "seed": 3}, "coregister": {"enabled": false, "tile_km": 10}})";
    const PipelineConfig a = load_config(dir / "a.toml"), b = load_config(dir / "b.json");
    CHECK(a.values == b.values);
    CHECK(a.run_dir == dir / "out");
    CHECK(code_of([&] { load_config(dir / "missing.toml"); }) == ErrorCode::ConfigInvalid);
    fs::remove_all(dir);
}

TEST_CASE("stage errors: unknown stage, missing inputs, incomplete run")
{
    const fs::path dir = scratch("errors");
    const PipelineConfig c = config_from_json({{"run", {{"output_dir", "run"}}}}, dir);
    CHECK(code_of([&] { run_stage("nope", c); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([&] { run_stage("filmprep", c); }) == ErrorCode::MissingInput);
    CHECK(code_of([&] { run_stage("report", c); }) == ErrorCode::IncompleteRun);
    const auto err = nlohmann::json::parse(slurp(c.run_dir / "errors" / "report.json"));
    CHECK(err["stage"] == "report");
    CHECK(err["error"] == "IncompleteRun");
    CHECK(err["exit_status"] == 3);
    CHECK(err["message"].get<std::string>().find("dem/dem.tif") != std::string::npos);
    CHECK_FALSE(fs::exists(c.run_dir / "provenance" / "report.json"));
    fs::remove_all(dir);
}

TEST_CASE("small synthetic run without coregistration")
{
    spdlog::set_level(spdlog::level::warn);
    const fs::path dir = scratch("e2e");
    nlohmann::json j;
    j["run"] = {{"output_dir", "run"}, {"seed", 7}};
    j["scene"] = {{"width_px", 800}, {"height_px", 600}};
    j["synth"] = {{"region_margin_m", 1200.0}};
    j["coregister"] = {{"enabled", false}};
    const PipelineConfig c = config_from_json(j, dir);
    run_pipeline(c);

    for (const std::string &s : stage_names())
    {
        const auto p = nlohmann::json::parse(slurp(c.run_dir / "provenance" / (s + ".json")));
        CHECK(p["stage"] == s);
        CHECK(p.contains("timings"));
        CHECK(p["outputs"].size() >= 1);
    }
    const auto adj = nlohmann::json::parse(slurp(c.run_dir / "adjust" / "report.json"));
    CHECK(adj.contains("sigma0_px"));
    CHECK(adj["bending_correction"] == true);

    const fs::path rep = c.run_dir / "report";
    for (const char *f : {"summary.json", "summary.md", "adjustment_table.csv", "yparallax.tif", "dh_before.tif", "residuals/fore_dcol.tif",
                          "residuals/aft_drow.tif"})
        CHECK_MESSAGE(fs::exists(rep / f), f);
    CHECK_FALSE(fs::exists(rep / "dh_after.tif"));
    const auto summary = nlohmann::json::parse(slurp(rep / "summary.json"));
    CHECK(summary["dh_vs_reference_m"]["after"].is_null());
    CHECK(summary["dh_vs_reference_m"]["after_status"].get<std::string>().find("absent") == 0);
    CHECK(summary["bending_correction"] == true);
    // paired rows with and without bending correction
    REQUIRE(summary["adjustment_table"].size() == 2);
    CHECK(summary["adjustment_table"][0]["bending_correction"] == true);
    CHECK(summary["adjustment_table"][1]["bending_correction"] == false);
    CHECK(summary["adjustment_table"][0]["sigma0_px"].get<double>() < summary["adjustment_table"][1]["sigma0_px"].get<double>());
    const std::string table = slurp(rep / "adjustment_table.csv");
    CHECK(table.find("variant,bending_correction,sigma0_px") == 0);
    CHECK(slurp(rep / "summary.md").find("absent") != std::string::npos);

    // stage isolation: a deleted downstream artifact is reproduced exactly
    const std::string dem = slurp(c.run_dir / "dem" / "dem.tif");
    fs::remove_all(c.run_dir / "dem");
    run_stage("dem", c);
    CHECK(slurp(c.run_dir / "dem" / "dem.tif") == dem);

    // toggling the bending correction is recorded
    nlohmann::json j2 = j;
    j2["filmprep"] = {{"bending_correction", false}};
    const PipelineConfig off = config_from_json(j2, dir);
    run_stage("filmprep", off);
    run_stage("gcp-plan", off);
    run_stage("gcp-assemble", off);
    run_stage("adjust", off);
    const auto ab = nlohmann::json::parse(slurp(off.run_dir / "adjust" / "ab_table.json"));
    REQUIRE(ab.size() == 1);
    CHECK(ab[0]["bending_correction"] == false);
    CHECK(nlohmann::json::parse(slurp(off.run_dir / "filmprep" / "fore.json"))["bending_correction"] == false);
    fs::remove_all(dir);
}

TEST_CASE("gcp-plan can stop after the coarse manifest")
{
    spdlog::set_level(spdlog::level::warn);
    const fs::path dir = scratch("plan");
    nlohmann::json j;
    j["run"] = {{"output_dir", "run"}, {"seed", 5}};
    j["scene"] = {{"width_px", 600}, {"height_px", 450}};
    j["synth"] = {{"region_margin_m", 1200.0}};
    const PipelineConfig c = config_from_json(j, dir);
    run_stage("synth", c);
    run_stage("filmprep", c);
    run_stage("gcp-plan", c, {true});
    CHECK(fs::exists(c.run_dir / "gcp" / "fore" / "tiles_coarse.json"));
    CHECK_FALSE(fs::exists(c.run_dir / "gcp" / "fore" / "matches_coarse.csv"));
    fs::remove_all(dir);
}
