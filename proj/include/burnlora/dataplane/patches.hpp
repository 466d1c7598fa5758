// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "burnlora/dataplane/scene.hpp"

namespace burnlora::dataplane {

struct QaThresholds {
  double cloud = 0.20;
  double snow = 0.20;
  double missing = 0.20;
  double min_area_ha = 100.0;  // fires must be strictly larger
};

enum class QaReason { accepted, cloud, snow, missing, area };
const char* reason_name(QaReason reason);

struct QaDecision {
  bool accepted = true;
  QaReason reason = QaReason::accepted;
};

/// Accepts iff every QA fraction is <= its threshold and area_ha > min_area_ha.
/// The first failing criterion (cloud, snow, missing, area) is reported.
QaDecision qa_filter(const RasterScene& scene, const QaThresholds& thresholds = {});

/// Window starts 0, stride, 2 stride, ... that fit in `extent`, plus one window
/// flush with the far edge when the grid does not end there.
std::vector<std::int64_t> window_origins(std::int64_t extent, std::int64_t size, std::int64_t stride);

struct Patch {
  std::string fire_id;
  std::int64_t row = 0;
  std::int64_t col = 0;
  std::int64_t size = 0;
  std::vector<float> pre;          // [3 x size x size]
  std::vector<float> post;
  std::vector<std::uint8_t> mask;  // [size x size]
};

/// Copies `size` x `size` windows out of a scene, row-major over origins.
Patch extract_patch(const RasterScene& scene, std::int64_t row, std::int64_t col, std::int64_t size);
std::vector<Patch> make_patches(const RasterScene& scene, std::int64_t size = 128, std::int64_t stride = 128);

}  // namespace burnlora::dataplane
