// SPDX-License-Identifier: Apache-2.0

#include "burnlora/tiler/tiler.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <numeric>

#include "burnlora/dataplane/patches.hpp"
#include "burnlora/engine/train.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::tiler {

void TileJob::validate() const {
  if (window < 1 || stride < 1) throw ConfigError("tiling window and stride must be positive");
  if (stride > window) {
    throw ConfigError("tiling stride " + std::to_string(stride) + " exceeds window " + std::to_string(window));
  }
}

std::vector<Origin> tile_origins(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t stride) {
  if (height < window || width < window) {
    throw DataError("scene " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than window " +
                    std::to_string(window));
  }
  std::vector<Origin> out;
  for (auto r : dataplane::window_origins(height, window, stride)) {
    for (auto c : dataplane::window_origins(width, window, stride)) out.emplace_back(r, c);
  }
  return out;
}

template <typename T>
WindowPredictor model_predictor(const engine::ModelAssembly<T>& model) {
  return [&model](const std::vector<float>& pre, const std::vector<float>& post, std::int64_t window) {
    if (window != model.config().vit.img_size) {
      throw ConfigError("tiling window " + std::to_string(window) + " does not match model input " +
                        std::to_string(model.config().vit.img_size));
    }
    const auto logits = model.forward(engine::band_tensor<T>(pre, window), engine::band_tensor<T>(post, window));
    const auto d = logits.data();
    return std::vector<double>(d.begin(), d.end());
  };
}

SceneInference infer_scene(const WindowPredictor& predictor, const dataplane::RasterScene& scene, const TileJob& job,
                           std::int64_t classes, const std::vector<std::size_t>& order) {
  job.validate();
  scene.validate();
  const auto origins = tile_origins(scene.height, scene.width, job.window, job.stride);
  std::vector<std::size_t> visit = order;
  if (visit.empty()) {
    visit.resize(origins.size());
    std::iota(visit.begin(), visit.end(), std::size_t{0});
  } else {
    auto sorted = visit;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] != i || sorted.size() != origins.size()) {
        throw ContractError("visitation order is not a permutation of the tile origins");
      }
    }
  }

  const auto h = scene.height, w = scene.width, win = job.window;
  const auto plane = static_cast<std::size_t>(h * w);
  SceneInference out;
  auto& acc = out.accum;
  acc.classes = classes;
  acc.height = h;
  acc.width = w;
  acc.sum_logits.assign(static_cast<std::size_t>(classes) * plane, 0.0);
  acc.count.assign(plane, 0);

  for (auto idx : visit) {
    const auto [r0, c0] = origins[idx];
    const auto patch = dataplane::extract_patch(scene, r0, c0, win);
    const auto logits = predictor(patch.pre, patch.post, win);
    if (static_cast<std::int64_t>(logits.size()) != classes * win * win) {
      throw ContractError("window predictor returned " + std::to_string(logits.size()) + " values");
    }
    for (std::int64_t k = 0; k < classes; ++k) {
      for (std::int64_t r = 0; r < win; ++r) {
        for (std::int64_t c = 0; c < win; ++c) {
          acc.sum_logits[static_cast<std::size_t>((k * h + r0 + r) * w + c0 + c)] +=
              logits[static_cast<std::size_t>((k * win + r) * win + c)];
        }
      }
    }
    for (std::int64_t r = 0; r < win; ++r) {
      for (std::int64_t c = 0; c < win; ++c) ++acc.count[static_cast<std::size_t>((r0 + r) * w + c0 + c)];
    }
  }

  out.logits.resize(acc.sum_logits.size());
  out.pred.assign(plane, 0);
  for (std::size_t px = 0; px < plane; ++px) {
    const auto n = acc.count[px];
    if (n < 1) throw ContractError("coverage hole at pixel " + std::to_string(px));
    std::int64_t best = 0;
    for (std::int64_t k = 0; k < classes; ++k) {
      const auto i = static_cast<std::size_t>(k) * plane + px;
      out.logits[i] = acc.sum_logits[i] / n;
      if (out.logits[i] > out.logits[static_cast<std::size_t>(best) * plane + px]) best = k;
    }
    out.pred[px] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::string encode_error_map(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                             std::int64_t height, std::int64_t width) {
  const auto n = static_cast<std::size_t>(height * width);
  if (pred.size() != n || target.size() != n) {
    throw DimensionError("error map: prediction and target must both have " + std::to_string(n) + " pixels");
  }
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + 3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred[i] != 0, t = target[i] != 0;
    unsigned char rgb[3] = {0, 0, 0};
    if (p && t) rgb[1] = 255;
    else if (p) rgb[0] = 255;
    else if (t) rgb[0] = rgb[1] = rgb[2] = 255;
    out.append(reinterpret_cast<const char*>(rgb), 3);
  }
  return out;
}

void emit_error_map(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                    std::int64_t height, std::int64_t width, const std::filesystem::path& path) {
  dataplane::write_file(path, encode_error_map(pred, target, height, width));
}

std::string encode_mask_pgm(const std::vector<std::uint8_t>& mask, std::int64_t height, std::int64_t width) {
  if (mask.size() != static_cast<std::size_t>(height * width)) throw DimensionError("mask size does not match extent");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (auto v : mask) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

std::vector<std::uint8_t> decode_mask_pgm(std::string_view bytes, std::int64_t& height, std::int64_t& width) {
  std::size_t pos = 0;
  auto token = [&]() -> std::int64_t {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::int64_t v = 0;
    auto [end, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc()) throw FormatError("PGM: bad header number at offset " + std::to_string(pos));
    pos = static_cast<std::size_t>(end - bytes.data());
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("PGM: bad magic at offset 0");
  pos = 2;
  width = token();
  height = token();
  const auto maxval = token();
  if (width < 1 || height < 1 || maxval != 255) throw FormatError("PGM: unsupported header");
  ++pos;  // single whitespace before the raster
  const auto n = static_cast<std::size_t>(height * width);
  if (bytes.size() != pos + n) {
    throw FormatError("PGM: expected " + std::to_string(n) + " raster bytes at offset " + std::to_string(pos));
  }
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<unsigned char>(bytes[pos + i]);
    if (v != 0 && v != 255) throw FormatError("PGM: non-binary value at offset " + std::to_string(pos + i));
    mask[i] = v ? 1 : 0;
  }
  return mask;
}

template WindowPredictor model_predictor(const engine::ModelAssembly<float>&);
template WindowPredictor model_predictor(const engine::ModelAssembly<double>&);

}  // namespace burnlora::tiler
