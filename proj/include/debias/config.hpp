#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "debias/eval.hpp"
#include "debias/synthgen.hpp"
#include "debias/training.hpp"

namespace debias {

struct AblationConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> variants{"full", "alpha0", "mean_pooling", "identity_quantization"};
  std::vector<double> alpha_grid{0.0, 0.25, 0.5, 1.0, 2.0};
};

// Everything one run needs; written verbatim into every run directory.
struct RunConfig {
  std::string run_id = "run";
  std::string preset = "desk";
  GenConfig gen;
  TrainConfig train;
  std::vector<Split> eval_splits{Split::kTestBiased, Split::kTestUniform};
  ServingTower tower = ServingTower::kBiasInvariantDefault;
  AblationConfig ablation;

  void validate() const;
};

// Defaults for a named preset ("desk" or "full").
RunConfig preset_config(const std::string& preset);

nlohmann::json to_json(const RunConfig& cfg);
// Fields absent from `j` keep the preset's defaults. Unknown keys and
// mistyped values throw ConfigError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::optional<std::string>& preset_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::optional<std::string>& preset_override = std::nullopt);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace debias
