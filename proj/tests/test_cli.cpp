#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "burnlora/cli/cli.hpp"
#include "burnlora/cli/run_config.hpp"
#include "burnlora/dataplane/scene.hpp"
#include "burnlora/errors.hpp"
#include "burnlora/tiler/tiler.hpp"
#include "support.hpp"

using namespace burnlora;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "burnlora");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string config_path(const char* name) { return std::string(BURNLORA_CONFIG_DIR) + "/" + name; }

// 96x96 scenes, 32-pixel model: the whole pipeline in a few seconds.
std::string small_config(const std::filesystem::path& dir) {
  json doc{{"model", {{"img_size", 32}, {"patch", 8}, {"d_model", 16}, {"depth", 2}, {"heads", 2},
                      {"neck_channels", 8}, {"decoder_channels", 8}}},
           {"data", {{"dir", (dir / "data").string()}, {"synth_count", 12}, {"synth_seed", 5},
                     {"synth_height", 96}, {"synth_width", 96}, {"val_fraction", 0.5},
                     {"patch_size", 32}, {"patch_stride", 32}}},
           {"train", {{"strategy", "lora"}, {"lr", 1e-3}, {"max_steps", 3}, {"eval_every", 2}, {"seed", 1}}},
           {"infer", {{"window", 32}, {"stride", 16}}}};
  const auto path = dir / "run.json";
  dataplane::write_file(path, doc.dump(2));
  return path.string();
}

}  // namespace

TEST_CASE("params reproduces the ViT-B LoRA encoder row") {
  const auto r = run({"params", "-c", config_path("vit_b_lora.json")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trainable 442368 (0.5145%)") != std::string::npos);
  const auto l = run({"params", "-c", config_path("vit_l_lora_mlp.json")});
  REQUIRE(l.code == 0);
  CHECK(l.out.find("trainable 3145728 (1.0272%)") != std::string::npos);
  const auto j = run({"params", "-c", config_path("vit_b_lora.json"), "--json"});
  REQUIRE(j.code == 0);
  CHECK(json::parse(j.out)["encoder_only"]["trainable"] == 442368);
}

TEST_CASE("failure classes have distinct exit codes and one error line") {
  const auto unknown = run({"params", "--bogus"});
  const auto missing = run({"params", "-c", "/nonexistent/run.json"});
  const auto bad = run({"params", "-c", config_path("vit_b_lora.json"), "--set", "lora.rank=0"});
  const auto none = run({});
  CHECK(unknown.code == cli::usage);
  CHECK(missing.code == cli::io);
  CHECK(bad.code == cli::config);
  CHECK(none.code == cli::usage);
  for (const auto* r : {&unknown, &missing, &bad}) {
    CHECK(r->err.rfind("error: code=", 0) == 0);
    CHECK(r->err.find("exit=" + std::to_string(r->code)) != std::string::npos);
    CHECK(std::count(r->err.begin(), r->err.end(), '\n') == 1);
  }
  CHECK(run({"params", "-c", config_path("vit_b_lora.json"), "--set", "model.surprise=1"}).code == cli::config);
}

TEST_CASE("overrides and config round trip") {
  json doc{{"lora", {{"rank", 8}}}};
  cli::apply_override(doc, "lora.rank=4");
  cli::apply_override(doc, "train.strategy=full_ft");
  CHECK(doc["lora"]["rank"] == 4);
  CHECK(doc["train"]["strategy"] == "full_ft");
  CHECK_THROWS_AS(cli::apply_override(doc, "norank"), ConfigError);
  const auto rc = cli::RunConfig::from_json(doc);
  CHECK(rc.lora.rank == 4);
  CHECK(rc.strategy == backbone::Strategy::full_ft);
  CHECK(cli::RunConfig::from_json(rc.to_json()).to_json() == rc.to_json());
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"infer", {{"window", 64}}}}), ConfigError);
}

TEST_CASE("eval of a perfect prediction scores 1") {
  const auto dir = testing::temp_dir("cli_perfect");
  dataplane::RasterScene s;
  s.fire_id = "perfect";
  s.year = 2021;
  s.biome = "Tundra";
  s.height = 8;
  s.width = 8;
  s.pre.assign(3 * 64, 0.1f);
  s.post.assign(3 * 64, 0.2f);
  s.mask.assign(64, 0);
  for (int i = 10; i < 30; ++i) s.mask[i] = 1;
  dataplane::write_scene(s, dir / "s.barc");
  dataplane::write_file(dir / "p.pgm", tiler::encode_mask_pgm(s.mask, 8, 8));
  const auto r = run({"eval", "--pred", (dir / "p.pgm").string(), "--scene", (dir / "s.barc").string()});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["iou"] == 1.0);
  CHECK(doc["f1"] == 1.0);
  CHECK(doc["fp"] == 0);
  dataplane::write_file(dir / "small.pgm", tiler::encode_mask_pgm(std::vector<std::uint8_t>(4), 2, 2));
  CHECK(run({"eval", "--pred", (dir / "small.pgm").string(), "--scene", (dir / "s.barc").string()}).code == cli::data);
  dataplane::write_file(dir / "junk.barc", "not a scene");
  CHECK(run({"eval", "--pred", (dir / "p.pgm").string(), "--scene", (dir / "junk.barc").string()}).code == cli::data);
}

TEST_CASE("synthgen, split, train, infer and eval agree end to end") {
  const auto dir = testing::temp_dir("cli_pipeline");
  const auto cfg = small_config(dir);
  REQUIRE(run({"synthgen", "-c", cfg}).code == 0);
  const auto split = run({"split", "-c", cfg});
  REQUIRE(split.code == 0);
  const auto manifest = json::parse(dataplane::read_file(dir / "data" / "split.json"));
  REQUIRE_FALSE(manifest["test"].empty());

  const auto tr = run({"train", "-c", cfg, "-o", (dir / "run").string()});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(json::parse(tr.out)["steps"] == 3);
  for (const char* f : {"best.ckpt", "last.ckpt", "config.json", "history.jsonl"})
    CHECK(std::filesystem::exists(dir / "run" / f));

  const auto ckpt = (dir / "run" / "last.ckpt").string();
  const auto scene = (dir / "data" / (manifest["test"][0].get<std::string>() + ".barc")).string();
  const auto mask = (dir / "mask.pgm").string();
  const auto inf = run({"infer", "-c", cfg, "--checkpoint", ckpt, "--scene", scene, "--mask-out", mask,
                        "--error-map", (dir / "err.ppm").string()});
  REQUIRE_MESSAGE(inf.code == 0, inf.err);
  CHECK(dataplane::read_file(dir / "err.ppm").rfind("P6\n96 96\n255\n", 0) == 0);
  const auto direct = run({"eval", "-c", cfg, "--checkpoint", ckpt, "--scene", scene});
  const auto scored = run({"eval", "--pred", mask, "--scene", scene});
  REQUIRE(direct.code == 0);
  REQUIRE(scored.code == 0);
  const auto a = json::parse(inf.out), b = json::parse(direct.out), c = json::parse(scored.out);
  for (const char* k : {"tp", "fp", "fn", "tn"}) {
    CHECK(a[k] == b[k]);
    CHECK(a[k] == c[k]);
  }
  const auto test_eval = run({"eval", "-c", cfg, "--checkpoint", ckpt, "--split-name", "test"});
  REQUIRE(test_eval.code == 0);
  CHECK(json::parse(test_eval.out)["split"] == "test");

  const auto resumed = run({"train", "-c", cfg, "--set", "train.max_steps=4", "--resume", ckpt, "-o",
                            (dir / "run2").string()});
  REQUIRE_MESSAGE(resumed.code == 0, resumed.err);
  CHECK(json::parse(resumed.out)["steps"] == 4);

  const auto mismatch = run({"infer", "-c", cfg, "--set", "model.depth=3", "--checkpoint", ckpt, "--scene", scene});
  CHECK(mismatch.code == cli::config);
  CHECK(run({"infer", "-c", cfg, "--set", "model.depth=3", "--checkpoint", ckpt, "--scene", scene, "--force"}).code == 0);
}
