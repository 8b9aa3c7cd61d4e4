#pragma once

#include "sechyp/common.hpp"
#include "sechyp/model.hpp"
#include "sechyp/section.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sechyp {

inline constexpr const char* kToolVersion = "0.1.0";

/// Validated run configuration. `raw` is the effective JSON (after flag
/// overrides); its SHA-256 is the manifest's config hash.
struct Config {
  nlohmann::json raw;
  VectorFieldModel model = VectorFieldModel::lorenz();
  int d_s = 1;
  std::uint64_t seed = 0;
  double tol = 1e-9;
  std::vector<CrossSection> sections;

  /// Probe settings for one command ({} when absent).
  const nlohmann::json& probe(const std::string& command) const;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> d_s;
  std::optional<double> eps;
  std::optional<std::vector<double>> delta_grid;
  std::optional<int> pairs;
  std::optional<double> horizon;
};

/// Applies flag overrides to a raw config document.
nlohmann::json apply_overrides(nlohmann::json raw, const Overrides& o);

/// Validates the schema and builds the model and sections; throws InputError.
Config parse_config(const nlohmann::json& raw);
/// Reads a config file, or the embedded config of a run manifest.
nlohmann::json read_config_file(const std::string& path);

struct Artifact {
  std::string name;
  std::string content;
};

struct CommandResult {
  std::string command;
  bool passed = false;
  nlohmann::json report;
  std::vector<Artifact> artifacts;
};

const std::vector<std::string>& command_names();

/// Runs one analysis command; `all` is handled by the caller.
CommandResult run_command(const std::string& command, const Config& cfg);

/// Points on the attracting set (orbit samples) or, for configs with an
/// "attractor.box", uniform samples of that box.
std::vector<Vec> attractor_points(const Config& cfg, int n, double spacing, std::uint64_t stream);

std::string sha256_hex(const std::string& data);

/// Writes via a temporary file and rename.
void write_atomic(const std::string& path, const std::string& content);

/// Command-line entry point: `sechyp run <command> --config PATH [flags]`.
/// Exit codes: 0 passed, 1 some check failed, 2 usage/config error, 3 numeric failure.
int cli_main(int argc, char** argv);

}  // namespace sechyp
