// SPDX-License-Identifier: Apache-2.0
//
// One JSON run config with sections {model, lora, data, train, infer}. Any key
// can be overridden with "section.key=value" (value parsed as JSON, falling
// back to a plain string).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "burnlora/dataplane/patches.hpp"
#include "burnlora/dataplane/split.hpp"
#include "burnlora/dataplane/synth.hpp"
#include "burnlora/engine/train.hpp"
#include "burnlora/tiler/tiler.hpp"

namespace burnlora::cli {

struct DataConfig {
  std::filesystem::path dir = "data";
  int synth_count = 64;
  std::uint64_t synth_seed = 7;
  std::int64_t synth_height = 128;
  std::int64_t synth_width = 128;
  dataplane::SplitSpec split;
  dataplane::QaThresholds qa;
  double val_fraction = 0.1;
  std::int64_t patch_size = 128;
  std::int64_t patch_stride = 128;
};

struct RunConfig {
  engine::ModelConfig model;
  std::optional<std::int64_t> reference_total_params;  // encoder total quoted for comparison
  lora::LoraSpec lora;
  backbone::Strategy strategy = backbone::Strategy::lora;
  std::uint64_t init_seed = 1;
  DataConfig data;
  engine::TrainConfig train;
  tiler::TileJob infer;

  /// Defaults for every absent key; ConfigError for unknown keys or bad values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Applies "section.key=value" to a raw config document.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace burnlora::cli
