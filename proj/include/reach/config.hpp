#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "reach/protocol.hpp"
#include "reach/streaming.hpp"
#include "reach/training.hpp"

namespace reach::config {

/// Everything a command can be configured with. One master seed feeds data
/// generation and both training runs.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string mask = "all";
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";

  data::ProtocolConfig protocol;
  train::ExperimentConfig experiment;
  stream::RendezvousConfig rendezvous;

  /// Pushes the master seed into every seeded component.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// Desk-scale defaults.
RunConfig default_config();

nlohmann::json to_json(const RunConfig& config);

/// Overlays `overrides` on `base` key by key. Throws InvalidArgument naming the
/// dotted path of any key that `base` does not have.
nlohmann::json merge_strict(const nlohmann::json& base, const nlohmann::json& overrides);

/// Parses a complete configuration document. Throws InvalidArgument on any
/// unknown key or bad value.
RunConfig from_json(const nlohmann::json& j);

/// Defaults overlaid with the file at `path` (if non-empty) and then the
/// REACH_SEED environment variable.
RunConfig load(const std::filesystem::path& path);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace reach::config
