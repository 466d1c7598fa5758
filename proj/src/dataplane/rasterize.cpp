// SPDX-License-Identifier: Apache-2.0

#include "burnlora/dataplane/rasterize.hpp"

#include <algorithm>
#include <cmath>

#include "burnlora/errors.hpp"

namespace burnlora::dataplane {

std::vector<std::uint8_t> rasterize_polygon(std::span<const Vertex> polygon, std::int64_t height, std::int64_t width) {
  if (polygon.size() < 3) throw DataError("rasterize_polygon: need at least 3 vertices, got " + std::to_string(polygon.size()));
  if (height < 1 || width < 1) throw DataError("rasterize_polygon: empty raster");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
  std::vector<double> xs;
  const std::size_t n = polygon.size();
  for (std::int64_t r = 0; r < height; ++r) {
    const double yc = static_cast<double>(r) + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto& a = polygon[i];
      const auto& b = polygon[j];
      // half-open in y: an edge spans [min y, max y)
      if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // centers c + 0.5 with left <= c + 0.5 < right
      const auto first = static_cast<std::int64_t>(std::ceil(xs[k] - 0.5));
      const auto last = static_cast<std::int64_t>(std::ceil(xs[k + 1] - 0.5)) - 1;
      for (auto c = std::max<std::int64_t>(first, 0); c <= std::min(last, width - 1); ++c) {
        mask[static_cast<std::size_t>(r * width + c)] ^= 1;
      }
    }
  }
  return mask;
}

}  // namespace burnlora::dataplane
