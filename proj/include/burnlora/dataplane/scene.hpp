// SPDX-License-Identifier: Apache-2.0
//
// RasterScene and the BARC1 container:
//
//   "BARC1 <n>\n"            magic and header length in bytes
//   <n bytes of JSON>\n      header: fire_id, year, biome, area_ha, qa, bands,
//                            blocks [{name, dtype, shape}] in payload order,
//                            payload_fnv1a64 (hex, optional on read)
//   payload                  pre (f32le [3,H,W]), post (f32le [3,H,W]),
//                            mask (u8 [H,W])

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace burnlora::dataplane {

struct QaFractions {
  double cloud = 0.0;
  double snow = 0.0;
  double missing = 0.0;
};

struct RasterScene {
  static constexpr std::array<const char*, 3> kBands{"B4", "B8", "B12"};

  std::string fire_id;
  int year = 0;
  std::string biome;
  double area_ha = 0.0;
  QaFractions qa;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> pre;            // [3 x H x W] reflectance
  std::vector<float> post;           // [3 x H x W] reflectance
  std::vector<std::uint8_t> mask;    // [H x W], 1 = burned

  std::size_t pixels() const { return static_cast<std::size_t>(height * width); }
  /// Throws DataError when buffers and extents disagree or the mask is not binary.
  void validate() const;
};

std::string encode_scene(const RasterScene& scene);
/// Throws FormatError (with the byte offset) on any malformed input.
RasterScene decode_scene(std::string_view bytes);

void write_scene(const RasterScene& scene, const std::filesystem::path& path);
RasterScene read_scene(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace burnlora::dataplane
