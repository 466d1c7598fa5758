// SPDX-License-Identifier: Apache-2.0

#include "burnlora/dataplane/patches.hpp"

#include <algorithm>

#include "burnlora/errors.hpp"

namespace burnlora::dataplane {

const char* reason_name(QaReason reason) {
  switch (reason) {
    case QaReason::accepted: return "accepted";
    case QaReason::cloud: return "cloud";
    case QaReason::snow: return "snow";
    case QaReason::missing: return "missing";
    case QaReason::area: return "area";
  }
  return "?";
}

QaDecision qa_filter(const RasterScene& scene, const QaThresholds& t) {
  if (scene.qa.cloud > t.cloud) return {false, QaReason::cloud};
  if (scene.qa.snow > t.snow) return {false, QaReason::snow};
  if (scene.qa.missing > t.missing) return {false, QaReason::missing};
  if (!(scene.area_ha > t.min_area_ha)) return {false, QaReason::area};
  return {};
}

std::vector<std::int64_t> window_origins(std::int64_t extent, std::int64_t size, std::int64_t stride) {
  if (size < 1 || stride < 1) throw DataError("window size and stride must be positive");
  if (extent < size) {
    throw DataError("extent " + std::to_string(extent) + " is smaller than window " + std::to_string(size));
  }
  std::vector<std::int64_t> origins;
  for (std::int64_t o = 0; o + size <= extent; o += stride) origins.push_back(o);
  if (origins.back() + size < extent) origins.push_back(extent - size);
  return origins;
}

Patch extract_patch(const RasterScene& scene, std::int64_t row, std::int64_t col, std::int64_t size) {
  if (row < 0 || col < 0 || row + size > scene.height || col + size > scene.width) {
    throw DataError("patch at (" + std::to_string(row) + "," + std::to_string(col) + ") leaves scene " + scene.fire_id);
  }
  Patch p;
  p.fire_id = scene.fire_id;
  p.row = row;
  p.col = col;
  p.size = size;
  const auto n = static_cast<std::size_t>(size * size);
  p.pre.resize(3 * n);
  p.post.resize(3 * n);
  p.mask.resize(n);
  for (std::int64_t b = 0; b < 3; ++b) {
    for (std::int64_t r = 0; r < size; ++r) {
      const auto src = static_cast<std::size_t>((b * scene.height + row + r) * scene.width + col);
      const auto dst = static_cast<std::size_t>((b * size + r) * size);
      std::copy_n(scene.pre.begin() + static_cast<std::ptrdiff_t>(src), size, p.pre.begin() + static_cast<std::ptrdiff_t>(dst));
      std::copy_n(scene.post.begin() + static_cast<std::ptrdiff_t>(src), size, p.post.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  for (std::int64_t r = 0; r < size; ++r) {
    std::copy_n(scene.mask.begin() + static_cast<std::ptrdiff_t>((row + r) * scene.width + col), size,
                p.mask.begin() + static_cast<std::ptrdiff_t>(r * size));
  }
  return p;
}

std::vector<Patch> make_patches(const RasterScene& scene, std::int64_t size, std::int64_t stride) {
  if (scene.height < size || scene.width < size) {
    throw DataError("scene " + scene.fire_id + " (" + std::to_string(scene.height) + "x" + std::to_string(scene.width) +
                    ") is smaller than patch size " + std::to_string(size));
  }
  std::vector<Patch> out;
  for (auto r : window_origins(scene.height, size, stride)) {
    for (auto c : window_origins(scene.width, size, stride)) out.push_back(extract_patch(scene, r, c, size));
  }
  return out;
}

}  // namespace burnlora::dataplane
