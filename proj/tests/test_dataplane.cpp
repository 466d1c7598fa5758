#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Dense>

#include "burnlora/dataplane/patches.hpp"
#include "burnlora/dataplane/rasterize.hpp"
#include "burnlora/dataplane/scene.hpp"
#include "burnlora/dataplane/split.hpp"
#include "burnlora/dataplane/synth.hpp"
#include "burnlora/errors.hpp"
#include "support.hpp"

using namespace burnlora;
using namespace burnlora::dataplane;

namespace {

RasterScene sample_scene(std::int64_t h = 4, std::int64_t w = 5) {
  RasterScene s;
  s.fire_id = "fire-001";
  s.year = 2019;
  s.biome = "Temperate Conifer Forests";
  s.area_ha = 1234.5;
  s.qa = {0.05, 0.0, 0.125};
  s.height = h;
  s.width = w;
  diffcore::Rng rng(1);
  for (std::int64_t i = 0; i < 3 * h * w; ++i) {
    s.pre.push_back(static_cast<float>(rng.uniform()));
    s.post.push_back(static_cast<float>(rng.uniform()));
  }
  for (std::int64_t i = 0; i < h * w; ++i) s.mask.push_back(static_cast<std::uint8_t>(rng.uniform() < 0.5));
  return s;
}

// Even-odd point-in-polygon by ray casting, written independently of the scanline code.
bool point_in_polygon(const std::vector<Vertex>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xi = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xi) in = !in;
    }
  }
  return in;
}

}  // namespace

TEST_CASE("BARC1 round trip is lossless and byte-stable") {
  const auto s = sample_scene();
  const auto bytes = encode_scene(s);
  const auto back = decode_scene(bytes);
  CHECK(back.fire_id == s.fire_id);
  CHECK(back.year == s.year);
  CHECK(back.biome == s.biome);
  CHECK(back.area_ha == s.area_ha);
  CHECK(back.qa.missing == s.qa.missing);
  CHECK(back.pre == s.pre);
  CHECK(back.post == s.post);
  CHECK(back.mask == s.mask);
  CHECK(encode_scene(back) == bytes);
  const auto dir = testing::temp_dir("barc");
  write_scene(s, dir / "a.barc");
  CHECK(read_file(dir / "a.barc") == bytes);
  CHECK(read_scene(dir / "a.barc").pre == s.pre);
  CHECK_THROWS_AS(read_scene(dir / "missing.barc"), IoError);
}

TEST_CASE("BARC1 rejects malformed files with an offset") {
  const auto bytes = encode_scene(sample_scene());
  auto expect = [](const std::string& b, const std::string& needle) {
    try {
      decode_scene(b);
      FAIL("accepted malformed input");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(needle) != std::string::npos);
      CHECK(msg.find("offset") != std::string::npos);
    }
  };
  expect("BARC2" + bytes.substr(5), "bad magic");
  expect(bytes.substr(0, bytes.size() - 1), "truncated payload");
  expect(bytes.substr(0, 30), "truncated header");
  expect(bytes + "x", "trailing bytes");
  auto bad_mask = bytes;
  bad_mask.back() = 2;
  expect(bad_mask, "not 0 or 1");
  auto bad_json = bytes;
  bad_json[bytes.find('{') + 1] = '#';
  expect(bad_json, "JSON");
  auto flipped = bytes;
  flipped[flipped.size() - 100] ^= 0x04;
  expect(flipped, "checksum");
}

TEST_CASE("BARC1 accepts a hand-built [3,64,64] file") {
  const std::string header =
      R"({"fire_id":"x","year":2020,"biome":"Tundra","area_ha":150,"qa":{"cloud":0,"snow":0,"missing":0},)"
      R"("bands":["B4","B8","B12"],"blocks":[{"name":"pre","dtype":"f32le","shape":[3,64,64]},)"
      R"({"name":"post","dtype":"f32le","shape":[3,64,64]},{"name":"mask","dtype":"u8","shape":[64,64]}]})";
  std::string bytes = "BARC1 " + std::to_string(header.size()) + "\n" + header + "\n";
  bytes.append(2 * 3 * 64 * 64 * 4, '\0');
  bytes.append(64 * 64, '\1');
  const auto s = decode_scene(bytes);
  CHECK(s.height == 64);
  CHECK(s.pre.size() == 3 * 64 * 64);
  CHECK(std::all_of(s.mask.begin(), s.mask.end(), [](auto v) { return v == 1; }));
}

TEST_CASE("rasterize_polygon examples") {
  const std::vector<Vertex> square{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
  CHECK(rasterize_polygon(square, 2, 2) == std::vector<std::uint8_t>{1, 1, 1, 1});
  const std::vector<Vertex> flat{{0, 1}, {2, 1}, {1, 1}};
  CHECK(rasterize_polygon(flat, 2, 2) == std::vector<std::uint8_t>{0, 0, 0, 0});
  const std::vector<Vertex> tri{{0, 0}, {4, 0}, {0, 4}};
  const auto m = rasterize_polygon(tri, 4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(m[static_cast<std::size_t>(r * 4 + c)] == point_in_polygon(tri, c + 0.5, r + 0.5));
  CHECK_THROWS_AS(rasterize_polygon(std::vector<Vertex>{{0, 0}, {1, 1}}, 2, 2), DataError);
}

TEST_CASE("boundary centers follow the top-left rule") {
  // square [0.5, 2.5]^2: centers at 0.5 lie on the left/top edges (in), 2.5 on the right/bottom (out)
  const std::vector<Vertex> sq{{0.5, 0.5}, {2.5, 0.5}, {2.5, 2.5}, {0.5, 2.5}};
  const auto m = rasterize_polygon(sq, 3, 3);
  CHECK(m == std::vector<std::uint8_t>{1, 1, 0, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("rasterize_polygon agrees with a point-in-polygon oracle on random polygons") {
  diffcore::Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    // star-shaped simple polygon around a random center
    const int n = static_cast<int>(rng.uniform_int(3, 9));
    std::vector<double> angles;
    for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0, 6.283185307179586));
    std::sort(angles.begin(), angles.end());
    const double cx = rng.uniform(3, 9), cy = rng.uniform(3, 9);
    std::vector<Vertex> poly;
    for (double a : angles) {
      const double r = rng.uniform(1, 6);
      poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    const auto m = rasterize_polygon(poly, 12, 12);
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c)
        CHECK(m[static_cast<std::size_t>(r * 12 + c)] == point_in_polygon(poly, c + 0.5, r + 0.5));
  }
}

TEST_CASE("qa_filter examples") {
  auto s = sample_scene();
  s.qa = {0.25, 0, 0};
  s.area_ha = 150;
  CHECK(qa_filter(s).reason == QaReason::cloud);
  s.qa = {0, 0, 0};
  CHECK(qa_filter(s).accepted);
  s.area_ha = 100;
  CHECK(qa_filter(s).reason == QaReason::area);
  s.area_ha = 150;
  s.qa = {0.2, 0.2, 0.2};
  CHECK(qa_filter(s).accepted);
  s.qa.snow = 0.21;
  CHECK(qa_filter(s).reason == QaReason::snow);
  s.qa = {0, 0, 0.3};
  CHECK(qa_filter(s).reason == QaReason::missing);
}

TEST_CASE("relaxing a QA threshold never rejects an accepted scene") {
  diffcore::Rng rng(5);
  auto s = sample_scene();
  for (int i = 0; i < 300; ++i) {
    s.qa = {rng.uniform(0, 0.4), rng.uniform(0, 0.4), rng.uniform(0, 0.4)};
    s.area_ha = rng.uniform(50, 200);
    QaThresholds t{rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(50, 150)};
    QaThresholds looser{t.cloud + rng.uniform(0, 0.1), t.snow + rng.uniform(0, 0.1), t.missing + rng.uniform(0, 0.1),
                        t.min_area_ha - rng.uniform(0, 20)};
    if (qa_filter(s, t).accepted) CHECK(qa_filter(s, looser).accepted);
  }
}

TEST_CASE("make_patches examples") {
  CHECK(make_patches(sample_scene(128, 128)).size() == 1);
  CHECK(make_patches(sample_scene(256, 256), 128, 128).size() == 4);
  const auto p = make_patches(sample_scene(160, 160), 128, 128);
  REQUIRE(p.size() == 4);
  std::set<std::pair<std::int64_t, std::int64_t>> origins;
  for (const auto& x : p) origins.insert({x.row, x.col});
  CHECK(origins == std::set<std::pair<std::int64_t, std::int64_t>>{{0, 0}, {0, 32}, {32, 0}, {32, 32}});
  CHECK_THROWS_AS(make_patches(sample_scene(100, 200)), DataError);
}

TEST_CASE("patch contents are copied from the right window") {
  const auto s = sample_scene(6, 7);
  const auto p = extract_patch(s, 2, 3, 3);
  for (std::int64_t b = 0; b < 3; ++b)
    for (std::int64_t r = 0; r < 3; ++r)
      for (std::int64_t c = 0; c < 3; ++c) {
        CHECK(p.pre[static_cast<std::size_t>((b * 3 + r) * 3 + c)] == s.pre[static_cast<std::size_t>((b * 6 + 2 + r) * 7 + 3 + c)]);
        CHECK(p.post[static_cast<std::size_t>((b * 3 + r) * 3 + c)] == s.post[static_cast<std::size_t>((b * 6 + 2 + r) * 7 + 3 + c)]);
      }
  CHECK(p.mask[4] == s.mask[3 * 7 + 4]);
}

TEST_CASE("patches cover every pixel whenever stride <= size") {
  diffcore::Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const auto size = rng.uniform_int(1, 8), stride = rng.uniform_int(1, size);
    const auto h = rng.uniform_int(size, 20), w = rng.uniform_int(size, 20);
    std::vector<int> cover(static_cast<std::size_t>(h * w), 0);
    for (auto r : window_origins(h, size, stride))
      for (auto c : window_origins(w, size, stride))
        for (std::int64_t i = 0; i < size; ++i)
          for (std::int64_t j = 0; j < size; ++j) ++cover[static_cast<std::size_t>((r + i) * w + c + j)];
    CHECK(std::all_of(cover.begin(), cover.end(), [](int v) { return v >= 1; }));
  }
}

TEST_CASE("build_split examples") {
  std::vector<SceneInfo> scenes{{"a", 2019, "Temperate Conifer Forests"},
                                {"b", 2022, "Deserts & Xeric Shrublands"},
                                {"c", 2018, "Tundra"}};
  const auto s = build_split(scenes, {});
  CHECK(s.train == std::vector<std::string>{"a"});
  CHECK(s.test == std::vector<std::string>{"b", "c"});
  SplitSpec temporal;
  temporal.mode = SplitMode::temporal;
  CHECK(build_split(scenes, temporal).test == std::vector<std::string>{"b"});
  SplitSpec biome;
  biome.mode = SplitMode::biome;
  CHECK(build_split(scenes, biome).test == std::vector<std::string>{"c"});
}

TEST_CASE("build_split errors") {
  try {
    build_split({{"a", 2019, "Temperate Conifer"}}, {});
    FAIL("unknown biome accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("Boreal Forests/Taiga") != std::string::npos);
  }
  CHECK_THROWS_AS(build_split({{"a", 2015, "Tundra"}}, {}), DataError);
  CHECK_THROWS_AS(build_split({{"a", 2019, "Tundra"}, {"a", 2020, "Tundra"}}, {}), DataError);
  SplitSpec overlap;
  overlap.target_years.insert(2019);
  CHECK_THROWS_AS(overlap.validate(), ConfigError);
  SplitSpec unknown;
  unknown.target_biomes.insert("Mars");
  CHECK_THROWS_AS(unknown.validate(), ConfigError);
}

TEST_CASE("split is a disjoint exhaustive partition in every mode") {
  diffcore::Rng rng(7);
  std::vector<SceneInfo> scenes;
  for (int i = 0; i < 300; ++i) {
    scenes.push_back({"f" + std::to_string(i), static_cast<int>(rng.uniform_int(2017, 2023)),
                      default_biomes()[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(default_biomes().size()) - 1))]});
  }
  for (auto mode : {SplitMode::temporal, SplitMode::biome, SplitMode::combined}) {
    SplitSpec spec;
    spec.mode = mode;
    const auto s = build_split(scenes, spec);
    std::set<std::string> tr(s.train.begin(), s.train.end()), te(s.test.begin(), s.test.end());
    CHECK(tr.size() + te.size() == scenes.size());
    for (const auto& id : tr) CHECK(te.count(id) == 0);
    CHECK(Split::from_json(s.to_json()).test == s.test);
  }
}

TEST_CASE("validation holdout is stable and near the requested fraction") {
  int held = 0;
  for (int i = 0; i < 5000; ++i) held += in_validation_holdout("fire" + std::to_string(i), 0.1);
  CHECK(held > 400);
  CHECK(held < 600);
  CHECK(in_validation_holdout("abc", 0.1) == in_validation_holdout("abc", 0.1));
}

TEST_CASE("synth_generate examples") {
  const auto a = synth_generate(diffcore::Rng(11), 3, 64, 64, [] {
    ScarParams p;
    p.radius_min = 6;
    p.radius_max = 12;
    return p;
  }());
  const auto b = synth_generate(diffcore::Rng(11), 3, 64, 64, [] {
    ScarParams p;
    p.radius_min = 6;
    p.radius_max = 12;
    return p;
  }());
  for (std::size_t i = 0; i < 3; ++i) CHECK(encode_scene(a[i]) == encode_scene(b[i]));

  ScarParams none;
  none.blobs_min = none.blobs_max = 0;
  none.fraction_min = 0;
  const auto empty = synth_generate(diffcore::Rng(1), 2, 128, 128, none);
  for (const auto& s : empty) {
    CHECK(std::all_of(s.mask.begin(), s.mask.end(), [](auto v) { return v == 0; }));
    CHECK(s.pre == s.post);
  }

  ScarParams huge;
  huge.radius_min = 60;
  huge.radius_max = 70;
  CHECK_THROWS_AS(synth_generate(diffcore::Rng(1), 1, 128, 128, huge), ConfigError);
  ScarParams impossible;
  impossible.blobs_max = 0;
  CHECK_THROWS_AS(synth_generate(diffcore::Rng(1), 1, 128, 128, impossible), ConfigError);
}

TEST_CASE("synthetic scenes are valid, pass QA, and burn within the fraction range") {
  const ScarParams p;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = synth_generate(diffcore::Rng(seed), 1, 128, 128, p).front();
    s.validate();
    CHECK(qa_filter(s).accepted);
    const double frac = static_cast<double>(std::count(s.mask.begin(), s.mask.end(), 1)) / 16384.0;
    CHECK(frac >= p.fraction_min);
    CHECK(frac <= p.fraction_max);
    for (float v : s.pre) CHECK((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("a linear classifier on the (B8, B12) difference separates burned pixels") {
  // Fisher discriminant on post - pre, fitted and scored on the default synthetic data.
  const auto scenes = synth_generate(diffcore::Rng(3), 8, 128, 128);
  Eigen::Vector2d mean[2] = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  double count[2] = {0, 0};
  std::vector<std::pair<Eigen::Vector2d, int>> samples;
  for (const auto& s : scenes) {
    const auto n = s.pixels();
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Vector2d d(s.post[n + i] - s.pre[n + i], s.post[2 * n + i] - s.pre[2 * n + i]);
      samples.push_back({d, s.mask[i]});
      mean[s.mask[i]] += d;
      count[s.mask[i]] += 1;
    }
  }
  for (int k = 0; k < 2; ++k) mean[k] /= count[k];
  for (const auto& [d, y] : samples) scatter += (d - mean[y]) * (d - mean[y]).transpose();
  scatter += 1e-9 * Eigen::Matrix2d::Identity();
  const Eigen::Vector2d w = scatter.ldlt().solve(mean[1] - mean[0]);
  const double thr = 0.5 * w.dot(mean[0] + mean[1]);
  std::size_t correct = 0;
  for (const auto& [d, y] : samples) correct += (w.dot(d) > thr) == (y == 1);
  CHECK(static_cast<double>(correct) / static_cast<double>(samples.size()) >= 0.95);
}
