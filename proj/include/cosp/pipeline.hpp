#pragma once

#include <cosp/synth.hpp>

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cosp
{

/// Validated run configuration. `values` holds every section with defaults filled in; angles are
/// degrees in the file and stay degrees here (converted where used).
struct PipelineConfig
{
    nlohmann::ordered_json values;
    std::filesystem::path run_dir;
    SceneConfig scene;
    uint64_t seed = 42;
    int jobs = 0;

    const nlohmann::ordered_json &section(const std::string &name) const { return values.at(name); }
    double num(const std::string &sec, const std::string &key) const { return values.at(sec).at(key).get<double>(); }
    int integer(const std::string &sec, const std::string &key) const { return values.at(sec).at(key).get<int>(); }
    bool flag(const std::string &sec, const std::string &key) const { return values.at(sec).at(key).get<bool>(); }
    std::string str(const std::string &sec, const std::string &key) const { return values.at(sec).at(key).get<std::string>(); }
};

nlohmann::ordered_json default_config();

/// Flat `[section]` / `key = value` text (numbers, true/false, "strings", # comments) to JSON.
nlohmann::ordered_json parse_flat_config(const std::string &text);

/// Merges over the defaults and validates: unknown sections or keys and type mismatches are
/// ConfigInvalid. Relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json &j, const std::filesystem::path &base_dir);

/// JSON when the file starts with '{', flat text otherwise.
PipelineConfig load_config(const std::filesystem::path &path);

const std::vector<std::string> &stage_names();

struct StageArgs
{
    bool plan_only = false; ///< gcp-plan: write the coarse tile manifest and stop
};

/// Runs one stage inside `config.run_dir`, writing its outputs and a provenance record.
void run_stage(const std::string &name, const PipelineConfig &config, const StageArgs &args = {});

/// All stages in order.
void run_pipeline(const PipelineConfig &config);

/// 64-bit FNV-1a of a file, hex.
std::string file_digest(const std::filesystem::path &path);

} // namespace cosp
