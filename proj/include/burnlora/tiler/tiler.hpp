// SPDX-License-Identifier: Apache-2.0
//
// Sliding-window full-scene inference with logit averaging, and TP/FP/FN
// error maps.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "burnlora/dataplane/scene.hpp"
#include "burnlora/engine/model.hpp"

namespace burnlora::tiler {

struct TileJob {
  std::int64_t window = 128;
  std::int64_t stride = 32;
  void validate() const;
};

using Origin = std::pair<std::int64_t, std::int64_t>;

/// Row-major (row, col) window starts; flush-edge final row and column.
std::vector<Origin> tile_origins(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t stride);

/// Maps one window (pre, post [3 x w x w]) to logits [classes x w x w].
using WindowPredictor =
    std::function<std::vector<double>(const std::vector<float>& pre, const std::vector<float>& post, std::int64_t window)>;

template <typename T>
WindowPredictor model_predictor(const engine::ModelAssembly<T>& model);

struct SceneLogits {
  std::int64_t classes = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> sum_logits;  // [classes x H x W]
  std::vector<std::int32_t> count;  // [H x W]
};

struct SceneInference {
  SceneLogits accum;
  std::vector<double> logits;       // sum_logits / count
  std::vector<std::uint8_t> pred;   // argmax over classes, ties to class 0
};

/// Visits the origins in `order` (indices into tile_origins) when given,
/// otherwise row-major. Throws ContractError on a coverage hole.
SceneInference infer_scene(const WindowPredictor& predictor, const dataplane::RasterScene& scene, const TileJob& job,
                           std::int64_t classes = 2, const std::vector<std::size_t>& order = {});

/// Binary PPM (P6): TP green, FP red, FN white, TN black.
std::string encode_error_map(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                             std::int64_t height, std::int64_t width);
void emit_error_map(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                    std::int64_t height, std::int64_t width, const std::filesystem::path& path);

/// Binary PGM (P5) with 0 / 255, and its reader.
std::string encode_mask_pgm(const std::vector<std::uint8_t>& mask, std::int64_t height, std::int64_t width);
std::vector<std::uint8_t> decode_mask_pgm(std::string_view bytes, std::int64_t& height, std::int64_t& width);

}  // namespace burnlora::tiler
