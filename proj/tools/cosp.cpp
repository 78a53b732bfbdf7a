#include <cosp/error.hpp>
#include <cosp/parallel.hpp>
#include <cosp/pipeline.hpp>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

namespace
{

void print_error(const std::string &stage, const std::string &code, int status, const std::string &message)
{
    nlohmann::ordered_json j{{"stage", stage}, {"error", code}, {"exit_status", status}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Panoramic film stereo pipeline: film preparation, GCPs, bundle adjustment, rectification, matching, DEM, coregistration"};
    app.require_subcommand(1, 1);
    std::string config_path;
    int jobs = 0;
    std::string log_level = "info";
    std::string output_dir;
    app.add_option("-c,--config", config_path, "run configuration (flat key = value text or JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("-j,--jobs", jobs, "upper bound on worker threads (also COSP_JOBS)")->check(CLI::NonNegativeNumber);
    app.add_option("-o,--output-dir", output_dir, "overrides run.output_dir");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    bool plan_only = false;
    for (const std::string &name : cosp::stage_names())
    {
        CLI::App *sub = app.add_subcommand(name, "run the " + name + " stage");
        if (name == "gcp-plan")
            sub->add_flag("--plan-only", plan_only, "write the coarse tile manifest and stop");
    }
    app.add_subcommand("run", "run all stages in order");
    app.fallthrough();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    const std::string verb = app.get_subcommands().front()->get_name();
    try
    {
        cosp::PipelineConfig cfg = cosp::load_config(config_path);
        if (!output_dir.empty())
        {
            cfg.run_dir = std::filesystem::absolute(output_dir);
            cfg.values["run"]["output_dir"] = cfg.run_dir.string();
        }
        if (const char *env = std::getenv("COSP_JOBS"); env && jobs == 0)
        {
            try
            {
                jobs = std::stoi(env);
            }
            catch (const std::exception &)
            {
                throw cosp::Error(cosp::ErrorCode::ConfigInvalid, std::string("COSP_JOBS is not an integer: ") + env);
            }
        }
        if (jobs > 0)
            cfg.jobs = jobs;
        if (cfg.jobs > 0)
            cosp::set_jobs(cfg.jobs);
        if (verb == "run")
            cosp::run_pipeline(cfg);
        else
            cosp::run_stage(verb, cfg, {plan_only});
    }
    catch (const cosp::Error &e)
    {
        const int status = cosp::exit_status(e.code());
        print_error(verb, std::string(cosp::to_string(e.code())), status, e.what());
        return status;
    }
    catch (const std::exception &e)
    {
        print_error(verb, "Unexpected", 3, e.what());
        return 3;
    }
    return 0;
}
