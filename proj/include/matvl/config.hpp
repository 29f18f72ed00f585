#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "matvl/figures.hpp"
#include "matvl/instruct_eval.hpp"
#include "matvl/refine.hpp"
#include "matvl/wiki.hpp"

namespace matvl::config {

/// Directory holding the shipped keyword list and prompt templates.
std::filesystem::path default_data_dir();

struct HarvestSettings {
  std::filesystem::path keywords;
  wiki::WikiConfig wiki;
  double per_host_spacing_s = 0.5;
  int per_host_in_flight = 1;
};

struct EndpointSettings {
  refine::EndpointConfig endpoint;
  std::filesystem::path templates;
  std::string template_id = "wiki";
};

struct PipelineConfig {
  std::filesystem::path output_root = "matvl-out";
  std::uint64_t seed = 7;
  HarvestSettings harvest;
  EndpointSettings refine;
  figures::FilterPolicy filter;
  std::filesystem::path exclusion_list;  // empty = none
  double split_ratio = 0.9;
  instruct::DamageConfig damage;
  std::string tokenizer = "whitespace";  // or a merges / tokenizer.json path
  std::size_t bins = 50;
  std::string query = "What is shown in this image?";

  PipelineConfig();
};

/// Defaults overlaid with the TOML file. Relative paths inside the file are
/// taken relative to the file's directory. Unknown keys are rejected.
PipelineConfig load(const std::filesystem::path& path);
PipelineConfig parse(std::string_view toml_text, const std::filesystem::path& base_dir = {});

/// Checks value ranges. File existence is checked per subcommand through
/// require_file().
void validate(const PipelineConfig& cfg);
void require_file(const std::filesystem::path& path, std::string_view what);

/// Every semantic field, with paths as written. The API key is excluded.
nlohmann::json to_json(const PipelineConfig& cfg);
std::string digest(const PipelineConfig& cfg);

}  // namespace matvl::config
