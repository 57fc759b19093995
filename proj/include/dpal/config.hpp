#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dpal/loop.hpp"

namespace dpal {

// Full CLI configuration: the experiment config plus grad-check knobs. Loaded
// from a flat JSON document; unknown keys are rejected so typos fail loudly.
struct CliConfig {
  ExperimentConfig exp;
  double grad_eps = 1e-4;
  int grad_batch = 8;
  uint64_t grad_seed = 1;
};

CliConfig default_config();

// Parse a JSON document; every key optional, defaults above.
CliConfig parse_config(const std::string& json_text);
CliConfig load_config_file(const std::filesystem::path& path);

// key=value overrides, applied after the file; values parse as JSON literals
// (bare words fall back to strings).
void apply_override(CliConfig& cfg, const std::string& key_value);

// Fully-resolved echo of every key, embedded into report summaries so any
// run is reproducible from its own output.
std::string config_echo(const CliConfig& cfg);

}  // namespace dpal
