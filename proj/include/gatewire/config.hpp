#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatewire/gating.hpp"
#include "gatewire/harness.hpp"

namespace gatewire {

// One JSON document describing a reproducible run. Omitted sections fall
// back to the desk-scale experiment defaults; unknown keys are rejected.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> dataset;
  ExperimentConfig experiment = desk_scale_experiment();
  GateConfig gate;
  std::optional<std::filesystem::path> out_dir;
  std::size_t seeds = 1;

  void validate() const;  // throws ValidationError
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// flag > config > GATEWIRE_SEED > 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config);

}  // namespace gatewire
