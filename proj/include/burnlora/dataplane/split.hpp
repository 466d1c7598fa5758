// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "burnlora/dataplane/scene.hpp"

namespace burnlora::dataplane {

/// Biome labels accepted by default (ecoregion biome names).
const std::vector<std::string>& default_biomes();

enum class SplitMode { temporal, biome, combined };
const char* mode_name(SplitMode mode);
SplitMode parse_mode(const std::string& name);

struct SplitSpec {
  std::set<int> source_years{2017, 2018, 2019, 2020};
  std::set<int> target_years{2021, 2022, 2023};
  std::set<std::string> target_biomes{"Boreal Forests/Taiga", "Tundra"};
  SplitMode mode = SplitMode::combined;
  std::vector<std::string> vocabulary = default_biomes();

  void validate() const;
};

/// Minimal scene description needed for splitting.
struct SceneInfo {
  std::string fire_id;
  int year = 0;
  std::string biome;
};

struct Split {
  SplitMode mode = SplitMode::combined;
  std::vector<std::string> train;  // sorted by fire_id
  std::vector<std::string> test;

  nlohmann::json to_json() const;
  static Split from_json(const nlohmann::json& j);
};

/// Temporal: test iff year is a target year. Biome: test iff the biome is a
/// target biome. Combined: test iff either holds. Everything else trains.
/// Unknown biomes and years outside both year sets are data errors.
Split build_split(std::vector<SceneInfo> scenes, const SplitSpec& spec);

/// True for roughly `fraction` of fire ids, chosen by a stable hash.
bool in_validation_holdout(const std::string& fire_id, double fraction);

}  // namespace burnlora::dataplane
