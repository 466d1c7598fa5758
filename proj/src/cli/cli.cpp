// SPDX-License-Identifier: Apache-2.0

#include "burnlora/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "burnlora/cli/run_config.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run config (JSON)");
  cmd->add_option("--set", c.overrides, "Override a config key: section.key=value");
}

RunConfig resolve(const Common& c) { return load_run_config(c.config, c.overrides); }

fs::path scene_path(const fs::path& dir, const std::string& fire_id) { return dir / (fire_id + ".barc"); }

std::vector<dataplane::RasterScene> load_split_scenes(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<dataplane::RasterScene> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(dataplane::read_scene(scene_path(dir, id)));
  return out;
}

dataplane::Split read_manifest(const fs::path& path) {
  const auto doc = json::parse(dataplane::read_file(path), nullptr, false);
  if (doc.is_discarded()) throw FormatError("split manifest " + path.string() + " is not valid JSON");
  return dataplane::Split::from_json(doc);
}

std::string percent(double p) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << p << '%';
  return os.str();
}

engine::ModelAssembly<float> load_model(const RunConfig& rc, const std::string& checkpoint, bool force) {
  auto model = engine::build_model<float>(rc.model, rc.strategy, rc.lora, rc.init_seed);
  const auto ckpt = engine::load_checkpoint<float>(checkpoint);
  engine::restore<float>(ckpt, model, nullptr, force);
  return model;
}

int cmd_synthgen(const Common& c, const std::string& out_dir, std::ostream& out) {
  auto rc = resolve(c);
  const fs::path dir = out_dir.empty() ? rc.data.dir : fs::path(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto scenes = dataplane::synth_generate(diffcore::Rng(rc.data.synth_seed), rc.data.synth_count,
                                                rc.data.synth_height, rc.data.synth_width);
  for (const auto& s : scenes) dataplane::write_scene(s, scene_path(dir, s.fire_id));
  out << "wrote " << scenes.size() << " scenes to " << dir.string() << '\n';
  return ok;
}

int cmd_split(const Common& c, const std::string& out_path, std::ostream& out) {
  auto rc = resolve(c);
  const auto& dir = rc.data.dir;
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".barc") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<dataplane::SceneInfo> accepted;
  json rejected = json::array();
  for (const auto& f : files) {
    const auto s = dataplane::read_scene(f);
    const auto d = dataplane::qa_filter(s, rc.data.qa);
    if (d.accepted) {
      accepted.push_back({s.fire_id, s.year, s.biome});
    } else {
      rejected.push_back({{"fire_id", s.fire_id}, {"reason", dataplane::reason_name(d.reason)}});
    }
  }
  const auto split = dataplane::build_split(accepted, rc.data.split);
  auto doc = split.to_json();
  doc["rejected"] = rejected;
  const fs::path target = out_path.empty() ? dir / "split.json" : fs::path(out_path);
  dataplane::write_file(target, doc.dump(2) + "\n");
  out << "split " << dataplane::mode_name(split.mode) << ": train " << split.train.size() << ", test "
      << split.test.size() << ", rejected " << rejected.size() << " -> " << target.string() << '\n';
  return ok;
}

int cmd_train(const Common& c, const std::string& manifest, const std::string& run_dir, const std::string& resume,
              std::ostream& out) {
  auto rc = resolve(c);
  const auto split = read_manifest(manifest.empty() ? rc.data.dir / "split.json" : fs::path(manifest));
  std::vector<dataplane::Patch> train_set, val_set;
  for (const auto& s : load_split_scenes(rc.data.dir, split.train)) {
    auto patches = dataplane::make_patches(s, rc.data.patch_size, rc.data.patch_stride);
    auto& dst = dataplane::in_validation_holdout(s.fire_id, rc.data.val_fraction) ? val_set : train_set;
    std::move(patches.begin(), patches.end(), std::back_inserter(dst));
  }
  if (val_set.empty()) throw DataError("validation holdout is empty; raise data.val_fraction or add scenes");
  if (train_set.empty()) throw DataError("no training patches after the validation holdout");

  const fs::path dir = run_dir.empty() ? fs::path("run") : fs::path(run_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto tc = rc.train;
  if (tc.log_path.empty()) tc.log_path = dir / "history.jsonl";
  dataplane::write_file(dir / "config.json", rc.to_json().dump(2) + "\n");

  auto model = engine::build_model<float>(rc.model, rc.strategy, rc.lora, rc.init_seed);
  std::optional<engine::Checkpoint<float>> start;
  if (!resume.empty()) start = engine::load_checkpoint<float>(resume);
  const auto result = engine::train(model, train_set, val_set, tc, start ? &*start : nullptr);
  engine::save_checkpoint(result.best, dir / "best.ckpt");
  engine::save_checkpoint(result.last, dir / "last.ckpt");
  out << json{{"strategy", backbone::strategy_name(rc.strategy)},
              {"steps", result.steps},
              {"train_patches", train_set.size()},
              {"val_patches", val_set.size()},
              {"best_val_iou", result.best_val_iou},
              {"best_step", result.best_step},
              {"checkpoint", (dir / "best.ckpt").string()}}
             .dump()
      << '\n';
  return ok;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& manifest, const std::string& which,
             const std::string& pred, const std::string& scene, const std::string& report_path, bool force,
             std::ostream& out) {
  auto rc = resolve(c);
  objective::MetricReport report;
  report.strategy = backbone::strategy_name(rc.strategy);
  if (!pred.empty()) {
    if (scene.empty()) throw ConfigError("--pred needs --scene");
    const auto s = dataplane::read_scene(scene);
    std::int64_t h = 0, w = 0;
    const auto mask = tiler::decode_mask_pgm(dataplane::read_file(pred), h, w);
    if (h != s.height || w != s.width) throw DataError("prediction extent does not match scene " + s.fire_id);
    report.split = s.fire_id;
    report.counts = objective::confusion(mask, s.mask);
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --pred");
    const auto model = load_model(rc, checkpoint, force);
    const auto predictor = tiler::model_predictor(model);
    std::vector<dataplane::RasterScene> scenes;
    if (!scene.empty()) {
      scenes.push_back(dataplane::read_scene(scene));
      report.split = scenes.back().fire_id;
    } else {
      const auto split = read_manifest(manifest.empty() ? rc.data.dir / "split.json" : fs::path(manifest));
      if (which != "train" && which != "test") throw ConfigError("--split-name must be train or test");
      report.split = which;
      scenes = load_split_scenes(rc.data.dir, which == "train" ? split.train : split.test);
    }
    for (const auto& s : scenes) {
      const auto inf = tiler::infer_scene(predictor, s, rc.infer, rc.model.head.num_classes);
      report.counts += objective::confusion(inf.pred, s.mask);
    }
  }
  const auto doc = report.to_json();
  if (!report_path.empty()) dataplane::write_file(report_path, doc.dump(2) + "\n");
  out << doc.dump() << '\n';
  return ok;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& scene, const std::string& mask_out,
              const std::string& map_out, bool force, std::ostream& out) {
  auto rc = resolve(c);
  const auto model = load_model(rc, checkpoint, force);
  const auto s = dataplane::read_scene(scene);
  const auto inf = tiler::infer_scene(tiler::model_predictor(model), s, rc.infer, rc.model.head.num_classes);
  if (!mask_out.empty()) dataplane::write_file(mask_out, tiler::encode_mask_pgm(inf.pred, s.height, s.width));
  if (!map_out.empty()) tiler::emit_error_map(inf.pred, s.mask, s.height, s.width, map_out);
  objective::MetricReport report{s.fire_id, backbone::strategy_name(rc.strategy), objective::confusion(inf.pred, s.mask)};
  out << report.to_json().dump() << '\n';
  return ok;
}

int cmd_params(const Common& c, bool as_json, std::ostream& out) {
  auto rc = resolve(c);
  const auto model = engine::build_model<float>(rc.model, rc.strategy, rc.lora, rc.init_seed, false);
  const auto enc = engine::param_report(model.store(), engine::Scope::encoder_only);
  const auto full = engine::param_report(model.store(), engine::Scope::full_network);
  if (as_json) {
    json doc{{"strategy", backbone::strategy_name(rc.strategy)}, {"encoder_only", enc.to_json()},
             {"full_network", full.to_json()}};
    if (rc.reference_total_params) doc["reference_total_params"] = *rc.reference_total_params;
    out << doc.dump() << '\n';
    return ok;
  }
  out << "strategy " << backbone::strategy_name(rc.strategy) << '\n';
  for (const auto& r : {enc, full}) {
    out << engine::scope_name(r.scope) << ": total " << r.total << ", trainable " << r.trainable << " ("
        << percent(r.percent()) << ")\n";
  }
  if (rc.reference_total_params && rc.strategy == backbone::Strategy::lora) {
    const double ref = 100.0 * static_cast<double>(enc.trainable) / static_cast<double>(*rc.reference_total_params);
    out << "reference encoder total " << *rc.reference_total_params << ": trainable " << enc.trainable << " ("
        << percent(ref) << ")\n";
  }
  return ok;
}

int fail(std::ostream& err, const char* kind, int code, const std::string& message) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  err << "error: code=" << kind << " exit=" << code << " message=" << flat << '\n';
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bi-temporal burned-area segmentation with LoRA-adapted ViT encoders"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::string out_dir, out_path, manifest, run_dir, resume, checkpoint, which = "test", pred, scene, report_path,
      mask_out, map_out;
  bool force = false, as_json = false;

  auto* synth = app.add_subcommand("synthgen", "Generate synthetic scenes from the data section");
  add_common(synth, common);
  synth->add_option("-o,--out", out_dir, "Output directory (default: data.dir)");

  auto* split = app.add_subcommand("split", "Apply QA filters and write a split manifest");
  add_common(split, common);
  split->add_option("-o,--out", out_path, "Manifest path (default: <data.dir>/split.json)");

  auto* train = app.add_subcommand("train", "Train on the manifest's train fires");
  add_common(train, common);
  train->add_option("--split", manifest, "Split manifest");
  train->add_option("-o,--out", run_dir, "Run directory (default: run)");
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "IoU/F1 report for a split, a scene, or a given prediction");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--split", manifest, "Split manifest");
  eval->add_option("--split-name", which, "train or test");
  eval->add_option("--pred", pred, "Predicted mask (PGM) to score instead of running the model");
  eval->add_option("--scene", scene, "Single BARC1 scene");
  eval->add_option("--report", report_path, "Also write the report here");
  eval->add_flag("--force", force, "Load a checkpoint despite an architecture mismatch");

  auto* infer = app.add_subcommand("infer", "Sliding-window inference on one scene");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  infer->add_option("--scene", scene, "BARC1 scene")->required();
  infer->add_option("--mask-out", mask_out, "Predicted mask (PGM)");
  infer->add_option("--error-map", map_out, "TP/FP/FN map (PPM)");
  infer->add_flag("--force", force, "Load a checkpoint despite an architecture mismatch");

  auto* params = app.add_subcommand("params", "Parameter accounting per scope");
  add_common(params, common);
  params->add_flag("--json", as_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", usage, e.what());
  }

  try {
    if (*synth) return cmd_synthgen(common, out_dir, out);
    if (*split) return cmd_split(common, out_path, out);
    if (*train) return cmd_train(common, manifest, run_dir, resume, out);
    if (*eval) return cmd_eval(common, checkpoint, manifest, which, pred, scene, report_path, force, out);
    if (*infer) return cmd_infer(common, checkpoint, scene, mask_out, map_out, force, out);
    if (*params) return cmd_params(common, as_json, out);
  } catch (const IoError& e) {
    return fail(err, e.kind(), io, e.what());
  } catch (const ConfigError& e) {
    return fail(err, e.kind(), config, e.what());
  } catch (const DataError& e) {
    return fail(err, e.kind(), data, e.what());
  } catch (const FormatError& e) {
    return fail(err, e.kind(), data, e.what());
  } catch (const Error& e) {
    return fail(err, e.kind(), internal, e.what());
  } catch (const std::exception& e) {
    return fail(err, "internal", internal, e.what());
  }
  return fail(err, "usage", usage, "no subcommand");
}

}  // namespace burnlora::cli
