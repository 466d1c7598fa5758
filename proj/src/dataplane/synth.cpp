// SPDX-License-Identifier: Apache-2.0

#include "burnlora/dataplane/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "burnlora/dataplane/split.hpp"
#include "burnlora/diffcore/ops.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::dataplane {

void ScarParams::validate(std::int64_t height, std::int64_t width) const {
  if (height < 1 || width < 1) throw ConfigError("synth: scene extent must be positive");
  if (blobs_min < 0 || blobs_max < blobs_min) throw ConfigError("synth: bad blob count range");
  if (radius_min <= 0 || radius_max < radius_min) throw ConfigError("synth: bad blob radius range");
  if (wobble < 0 || wobble >= 1) throw ConfigError("synth: wobble must be in [0, 1)");
  const double reach = 2.0 * radius_max * (1.0 + wobble);
  if (blobs_max > 0 && reach > static_cast<double>(std::min(height, width))) {
    throw ConfigError("synth: blob diameter up to " + std::to_string(reach) + " px does not fit a " +
                      std::to_string(height) + "x" + std::to_string(width) + " scene");
  }
  if (fraction_min < 0 || fraction_max > 1 || fraction_max < fraction_min) {
    throw ConfigError("synth: bad scar fraction range");
  }
  if (blobs_max == 0 && fraction_min > 0) throw ConfigError("synth: zero blobs cannot reach fraction_min > 0");
  if (coarse_grid < 1) throw ConfigError("synth: coarse_grid must be >= 1");
  if (severity_min < 0 || severity_min > 1) throw ConfigError("synth: severity_min must be in [0, 1]");
  if (years.empty()) throw ConfigError("synth: empty year pool");
  if (area_min_ha <= 0 || area_max_ha < area_min_ha) throw ConfigError("synth: bad area range");
  if (qa_max < 0 || qa_max > 1) throw ConfigError("synth: qa_max must be in [0, 1]");
}

namespace {

struct Blob {
  double cy, cx, radius;
  double amp[2], phase[2];
};

bool inside(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double theta = std::atan2(dy, dx);
  const double r = b.radius * (1.0 + b.amp[0] * std::cos(2.0 * theta + b.phase[0]) +
                               b.amp[1] * std::cos(3.0 * theta + b.phase[1]));
  return dx * dx + dy * dy <= r * r;
}

std::vector<std::uint8_t> draw_mask(diffcore::Rng& rng, std::int64_t h, std::int64_t w, const ScarParams& p) {
  const auto blobs = rng.uniform_int(p.blobs_min, p.blobs_max);
  std::vector<Blob> shapes;
  for (std::int64_t i = 0; i < blobs; ++i) {
    Blob b{};
    b.radius = rng.uniform(p.radius_min, p.radius_max);
    const double margin = b.radius * (1.0 + p.wobble);
    b.cy = rng.uniform(margin, static_cast<double>(h) - margin);
    b.cx = rng.uniform(margin, static_cast<double>(w) - margin);
    for (int k = 0; k < 2; ++k) {
      b.amp[k] = rng.uniform(0.0, p.wobble / 2.0);
      b.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    shapes.push_back(b);
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
      for (const auto& b : shapes) {
        if (inside(b, y, x)) {
          mask[static_cast<std::size_t>(r * w + c)] = 1;
          break;
        }
      }
    }
  }
  return mask;
}

std::vector<float> draw_background(diffcore::Rng& rng, std::int64_t h, std::int64_t w, const ScarParams& p) {
  const std::int64_t g = p.coarse_grid;
  std::vector<double> coarse(static_cast<std::size_t>(3 * g * g));
  for (std::int64_t b = 0; b < 3; ++b) {
    for (std::int64_t i = 0; i < g * g; ++i) {
      coarse[static_cast<std::size_t>(b * g * g + i)] = p.base[b] + p.background_std * rng.normal();
    }
  }
  const auto resized = diffcore::bilinear_resize(diffcore::Tensor<double>::from({3, g, g}, coarse), h, w);
  const auto smooth = resized.data();
  std::vector<float> out(smooth.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(smooth[i] + p.pixel_noise * rng.normal(), 0.0, 1.0));
  }
  return out;
}

}  // namespace

std::vector<RasterScene> synth_generate(const diffcore::Rng& rng, int n_scenes, std::int64_t height,
                                        std::int64_t width, const ScarParams& params) {
  params.validate(height, width);
  if (n_scenes < 0) throw ConfigError("synth: negative scene count");
  const auto& biomes = params.biomes.empty() ? default_biomes() : params.biomes;
  const std::int64_t pixels = height * width;
  std::vector<RasterScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i) {
    auto local = diffcore::Rng::derive(rng.seed(), "scene" + std::to_string(i));
    RasterScene s;
    s.fire_id = "syn" + std::to_string(rng.seed()) + "-" + std::to_string(i);
    s.height = height;
    s.width = width;
    s.year = params.years[static_cast<std::size_t>(local.uniform_int(0, static_cast<std::int64_t>(params.years.size()) - 1))];
    s.biome = biomes[static_cast<std::size_t>(local.uniform_int(0, static_cast<std::int64_t>(biomes.size()) - 1))];
    s.area_ha = local.uniform(params.area_min_ha, params.area_max_ha);
    s.qa = {local.uniform(0.0, params.qa_max), local.uniform(0.0, params.qa_max), local.uniform(0.0, params.qa_max)};

    bool ok = false;
    for (int attempt = 0; attempt < params.max_attempts && !ok; ++attempt) {
      s.mask = draw_mask(local, height, width, params);
      const auto burned = std::count(s.mask.begin(), s.mask.end(), std::uint8_t{1});
      const double frac = static_cast<double>(burned) / static_cast<double>(pixels);
      ok = frac >= params.fraction_min && frac <= params.fraction_max;
    }
    if (!ok) {
      throw ConfigError("synth: no scar within fraction [" + std::to_string(params.fraction_min) + ", " +
                        std::to_string(params.fraction_max) + "] after " + std::to_string(params.max_attempts) +
                        " attempts");
    }

    s.pre = draw_background(local, height, width, params);
    s.post = s.pre;
    for (std::int64_t px = 0; px < pixels; ++px) {
      if (!s.mask[static_cast<std::size_t>(px)]) continue;
      const double severity = local.uniform(params.severity_min, 1.0);
      for (std::int64_t b = 0; b < 3; ++b) {
        auto& v = s.post[static_cast<std::size_t>(b * pixels + px)];
        v = static_cast<float>(std::clamp(static_cast<double>(v) + severity * params.delta[b], 0.0, 1.0));
      }
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace burnlora::dataplane
