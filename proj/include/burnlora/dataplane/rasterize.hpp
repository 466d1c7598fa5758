// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace burnlora::dataplane {

struct Vertex {
  double x = 0.0;  // column, pixel units
  double y = 0.0;  // row, pixel units; pixel (r, c) has center (c + 0.5, r + 0.5)
};

/// Burns a polygon into an [H x W] mask by scanlines through pixel centers.
/// A pixel is set iff its center is inside under the even-odd rule; centers
/// on a left or top edge count as inside, on a right or bottom edge as outside.
std::vector<std::uint8_t> rasterize_polygon(std::span<const Vertex> polygon, std::int64_t height, std::int64_t width);

}  // namespace burnlora::dataplane
