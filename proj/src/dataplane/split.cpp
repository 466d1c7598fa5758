// SPDX-License-Identifier: Apache-2.0

#include "burnlora/dataplane/split.hpp"

#include <algorithm>

#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::dataplane {

const std::vector<std::string>& default_biomes() {
  static const std::vector<std::string> biomes{
      "Boreal Forests/Taiga",
      "Tundra",
      "Temperate Conifer Forests",
      "Temperate Broadleaf & Mixed Forests",
      "Temperate Grasslands, Savannas & Shrublands",
      "Deserts & Xeric Shrublands",
      "Mediterranean Forests, Woodlands & Scrub",
      "Tropical & Subtropical Dry Broadleaf Forests",
      "Tropical & Subtropical Coniferous Forests",
      "Flooded Grasslands & Savannas",
      "Montane Grasslands & Shrublands",
  };
  return biomes;
}

const char* mode_name(SplitMode mode) {
  switch (mode) {
    case SplitMode::temporal: return "temporal";
    case SplitMode::biome: return "biome";
    case SplitMode::combined: return "combined";
  }
  return "?";
}

SplitMode parse_mode(const std::string& name) {
  if (name == "temporal") return SplitMode::temporal;
  if (name == "biome") return SplitMode::biome;
  if (name == "combined") return SplitMode::combined;
  throw ConfigError("unknown split mode '" + name + "' (expected temporal, biome or combined)");
}

void SplitSpec::validate() const {
  for (int y : source_years) {
    if (target_years.count(y)) throw ConfigError("split: year " + std::to_string(y) + " is both source and target");
  }
  for (const auto& b : target_biomes) {
    if (std::find(vocabulary.begin(), vocabulary.end(), b) == vocabulary.end()) {
      throw ConfigError("split: target biome '" + b + "' is not in the vocabulary");
    }
  }
}

nlohmann::json Split::to_json() const {
  return {{"mode", mode_name(mode)}, {"train", train}, {"test", test}};
}

Split Split::from_json(const nlohmann::json& j) {
  Split s;
  try {
    s.mode = parse_mode(j.at("mode").get<std::string>());
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split manifest: ") + e.what());
  }
  return s;
}

Split build_split(std::vector<SceneInfo> scenes, const SplitSpec& spec) {
  spec.validate();
  std::sort(scenes.begin(), scenes.end(), [](const auto& a, const auto& b) { return a.fire_id < b.fire_id; });
  Split out;
  out.mode = spec.mode;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    if (i > 0 && scenes[i - 1].fire_id == s.fire_id) throw DataError("duplicate fire_id " + s.fire_id);
    if (std::find(spec.vocabulary.begin(), spec.vocabulary.end(), s.biome) == spec.vocabulary.end()) {
      std::string known;
      for (const auto& b : spec.vocabulary) known += (known.empty() ? "" : "; ") + b;
      throw DataError("fire " + s.fire_id + ": unknown biome '" + s.biome + "' (known: " + known + ")");
    }
    const bool target_year = spec.target_years.count(s.year) != 0;
    if (!target_year && !spec.source_years.count(s.year)) {
      throw DataError("fire " + s.fire_id + ": year " + std::to_string(s.year) + " is neither a source nor a target year");
    }
    const bool target_biome = spec.target_biomes.count(s.biome) != 0;
    bool test = false;
    switch (spec.mode) {
      case SplitMode::temporal: test = target_year; break;
      case SplitMode::biome: test = target_biome; break;
      case SplitMode::combined: test = target_year || target_biome; break;
    }
    (test ? out.test : out.train).push_back(s.fire_id);
  }
  return out;
}

bool in_validation_holdout(const std::string& fire_id, double fraction) {
  const auto bucket = diffcore::fnv1a64(fire_id) % 10000;
  return static_cast<double>(bucket) < fraction * 10000.0;
}

}  // namespace burnlora::dataplane
