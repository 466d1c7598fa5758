// SPDX-License-Identifier: Apache-2.0

#include "burnlora/cli/run_config.hpp"

#include <set>

#include "burnlora/errors.hpp"

namespace burnlora::cli {

using nlohmann::json;

namespace {

const json& section(const json& doc, const char* name) {
  static const json empty = json::object();
  if (!doc.contains(name)) return empty;
  const auto& s = doc.at(name);
  if (!s.is_object()) throw ConfigError(std::string("section '") + name + "' must be an object");
  return s;
}

template <typename V>
V take(json& obj, const char* key, V fallback, const char* where) {
  if (!obj.contains(key)) return fallback;
  try {
    V v = obj.at(key).get<V>();
    obj.erase(key);
    return v;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

void no_leftovers(const json& obj, const char* where) {
  for (const auto& [key, v] : obj.items()) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, v] : doc.items()) {
    static const std::set<std::string> known{"model", "lora", "data", "train", "infer"};
    if (!known.count(key)) throw ConfigError("run config: unknown section '" + key + "'");
  }
  RunConfig c;

  json model = section(doc, "model");
  if (model.contains("reference_total_params")) {
    c.reference_total_params = take<std::int64_t>(model, "reference_total_params", 0, "model");
  }
  c.model = engine::ModelConfig::from_json(model);
  c.lora = engine::lora_from_json(section(doc, "lora"));

  json data = section(doc, "data");
  auto& d = c.data;
  d.dir = take<std::string>(data, "dir", d.dir.string(), "data");
  d.synth_count = take<int>(data, "synth_count", d.synth_count, "data");
  d.synth_seed = take<std::uint64_t>(data, "synth_seed", d.synth_seed, "data");
  d.synth_height = take<std::int64_t>(data, "synth_height", d.synth_height, "data");
  d.synth_width = take<std::int64_t>(data, "synth_width", d.synth_width, "data");
  d.split.mode = dataplane::parse_mode(take<std::string>(data, "split_mode", dataplane::mode_name(d.split.mode), "data"));
  d.split.source_years = take<std::set<int>>(data, "source_years", d.split.source_years, "data");
  d.split.target_years = take<std::set<int>>(data, "target_years", d.split.target_years, "data");
  d.split.target_biomes = take<std::set<std::string>>(data, "target_biomes", d.split.target_biomes, "data");
  d.split.vocabulary = take<std::vector<std::string>>(data, "biome_vocabulary", d.split.vocabulary, "data");
  d.qa.cloud = take<double>(data, "max_cloud", d.qa.cloud, "data");
  d.qa.snow = take<double>(data, "max_snow", d.qa.snow, "data");
  d.qa.missing = take<double>(data, "max_missing", d.qa.missing, "data");
  d.qa.min_area_ha = take<double>(data, "min_area_ha", d.qa.min_area_ha, "data");
  d.val_fraction = take<double>(data, "val_fraction", d.val_fraction, "data");
  d.patch_size = take<std::int64_t>(data, "patch_size", d.patch_size, "data");
  d.patch_stride = take<std::int64_t>(data, "patch_stride", d.patch_stride, "data");
  no_leftovers(data, "data");
  d.split.validate();
  if (d.val_fraction <= 0 || d.val_fraction >= 1) throw ConfigError("data.val_fraction must be in (0, 1)");
  if (d.patch_size < 1 || d.patch_stride < 1) throw ConfigError("data.patch_size and data.patch_stride must be positive");

  json train = section(doc, "train");
  c.strategy = backbone::parse_strategy(take<std::string>(train, "strategy", backbone::strategy_name(c.strategy), "train"));
  c.init_seed = take<std::uint64_t>(train, "init_seed", c.init_seed, "train");
  c.train = engine::TrainConfig::from_json(train);

  json infer = section(doc, "infer");
  c.infer.window = take<std::int64_t>(infer, "window", c.infer.window, "infer");
  c.infer.stride = take<std::int64_t>(infer, "stride", c.infer.stride, "infer");
  no_leftovers(infer, "infer");
  c.infer.validate();
  if (c.infer.window != c.model.vit.img_size) {
    throw ConfigError("infer.window (" + std::to_string(c.infer.window) + ") must equal model.img_size (" +
                      std::to_string(c.model.vit.img_size) + ")");
  }
  return c;
}

json RunConfig::to_json() const {
  json model = this->model.to_json();
  if (reference_total_params) model["reference_total_params"] = *reference_total_params;
  json train = this->train.to_json();
  train["strategy"] = backbone::strategy_name(strategy);
  train["init_seed"] = init_seed;
  return {{"model", model},
          {"lora", engine::lora_to_json(lora)},
          {"data",
           {{"dir", data.dir.string()},
            {"synth_count", data.synth_count},
            {"synth_seed", data.synth_seed},
            {"synth_height", data.synth_height},
            {"synth_width", data.synth_width},
            {"split_mode", dataplane::mode_name(data.split.mode)},
            {"source_years", data.split.source_years},
            {"target_years", data.split.target_years},
            {"target_biomes", data.split.target_biomes},
            {"biome_vocabulary", data.split.vocabulary},
            {"max_cloud", data.qa.cloud},
            {"max_snow", data.qa.snow},
            {"max_missing", data.qa.missing},
            {"min_area_ha", data.qa.min_area_ha},
            {"val_fraction", data.val_fraction},
            {"patch_size", data.patch_size},
            {"patch_stride", data.patch_stride}}},
          {"train", train},
          {"infer", {{"window", infer.window}, {"stride", infer.stride}}}};
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const auto sec = assignment.substr(0, dot);
  const auto key = assignment.substr(dot + 1, eq - dot - 1);
  const auto raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (!doc.contains(sec)) doc[sec] = json::object();
  doc[sec][key] = value;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    const auto text = dataplane::read_file(path);
    doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("run config " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return RunConfig::from_json(doc);
}

}  // namespace burnlora::cli
