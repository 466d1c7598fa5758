// SPDX-License-Identifier: Apache-2.0

#include "burnlora/dataplane/scene.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::dataplane {

namespace {

constexpr std::string_view kMagic = "BARC1";

[[noreturn]] void format_error(std::size_t offset, const std::string& what) {
  throw FormatError("BARC1: " + what + " (offset " + std::to_string(offset) + ")");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void append_f32le(std::string& out, const std::vector<float>& values) {
  const auto start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  for (float v : values) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
}

std::vector<float> read_f32le(std::string_view bytes, std::size_t offset, std::size_t count) {
  std::vector<float> out(count);
  const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(src[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

void RasterScene::validate() const {
  if (height < 1 || width < 1) throw DataError("scene " + fire_id + ": empty extent");
  const auto n = pixels();
  if (pre.size() != 3 * n || post.size() != 3 * n || mask.size() != n) {
    throw DataError("scene " + fire_id + ": band or mask buffers do not match " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] > 1) throw DataError("scene " + fire_id + ": mask value " + std::to_string(mask[i]) + " at pixel " + std::to_string(i));
  }
}

std::string encode_scene(const RasterScene& scene) {
  scene.validate();
  std::string payload;
  payload.reserve(scene.pixels() * 25);
  append_f32le(payload, scene.pre);
  append_f32le(payload, scene.post);
  payload.append(reinterpret_cast<const char*>(scene.mask.data()), scene.mask.size());
  const nlohmann::json header = {
      {"fire_id", scene.fire_id},
      {"year", scene.year},
      {"biome", scene.biome},
      {"area_ha", scene.area_ha},
      {"qa", {{"cloud", scene.qa.cloud}, {"snow", scene.qa.snow}, {"missing", scene.qa.missing}}},
      {"bands", {RasterScene::kBands[0], RasterScene::kBands[1], RasterScene::kBands[2]}},
      {"blocks",
       {{{"name", "pre"}, {"dtype", "f32le"}, {"shape", {3, scene.height, scene.width}}},
        {{"name", "post"}, {"dtype", "f32le"}, {"shape", {3, scene.height, scene.width}}},
        {{"name", "mask"}, {"dtype", "u8"}, {"shape", {scene.height, scene.width}}}}},
      {"payload_fnv1a64", hex64(diffcore::fnv1a64(payload))},
  };
  const std::string text = header.dump();
  std::string out;
  out.reserve(text.size() + 32 + payload.size());
  out += kMagic;
  out += ' ';
  out += std::to_string(text.size());
  out += '\n';
  out += text;
  out += '\n';
  out += payload;
  return out;
}

RasterScene decode_scene(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 1 || bytes.substr(0, kMagic.size()) != kMagic || bytes[kMagic.size()] != ' ') {
    format_error(0, "bad magic");
  }
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos || eol > 32) format_error(kMagic.size(), "missing header length line");
  std::size_t header_len = 0;
  {
    const auto digits = bytes.substr(kMagic.size() + 1, eol - kMagic.size() - 1);
    if (digits.empty()) format_error(kMagic.size() + 1, "missing header length");
    for (char c : digits) {
      if (c < '0' || c > '9') format_error(kMagic.size() + 1, "malformed header length");
      header_len = header_len * 10 + static_cast<std::size_t>(c - '0');
    }
  }
  const std::size_t header_start = eol + 1;
  if (bytes.size() < header_start + header_len + 1) format_error(bytes.size(), "truncated header");
  if (bytes[header_start + header_len] != '\n') format_error(header_start + header_len, "header not newline-terminated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    format_error(header_start + e.byte, std::string("header is not valid JSON: ") + e.what());
  }

  RasterScene scene;
  std::size_t offset = header_start + header_len + 1;
  std::string checksum;
  try {
    // optional: files written elsewhere may omit it
    if (header.contains("payload_fnv1a64")) checksum = header.at("payload_fnv1a64").get<std::string>();
    scene.fire_id = header.at("fire_id").get<std::string>();
    scene.year = header.at("year").get<int>();
    scene.biome = header.at("biome").get<std::string>();
    scene.area_ha = header.at("area_ha").get<double>();
    const auto& qa = header.at("qa");
    scene.qa = {qa.at("cloud").get<double>(), qa.at("snow").get<double>(), qa.at("missing").get<double>()};
    const auto bands = header.at("bands").get<std::vector<std::string>>();
    if (bands.size() != 3 || bands[0] != "B4" || bands[1] != "B8" || bands[2] != "B12") {
      format_error(header_start, "band order must be B4, B8, B12");
    }
    const auto& blocks = header.at("blocks");
    if (!blocks.is_array() || blocks.size() != 3) format_error(header_start, "expected 3 payload blocks");
    const char* names[3] = {"pre", "post", "mask"};
    for (std::size_t b = 0; b < 3; ++b) {
      const auto& blk = blocks[b];
      const auto name = blk.at("name").get<std::string>();
      const auto dtype = blk.at("dtype").get<std::string>();
      const auto shape = blk.at("shape").get<std::vector<std::int64_t>>();
      if (name != names[b]) format_error(header_start, "block " + std::to_string(b) + " should be '" + names[b] + "'");
      const bool is_mask = b == 2;
      if (dtype != (is_mask ? "u8" : "f32le")) format_error(header_start, "block '" + name + "' has dtype " + dtype);
      if (shape.size() != (is_mask ? 2u : 3u) || (!is_mask && shape[0] != 3)) {
        format_error(header_start, "block '" + name + "' has an invalid shape");
      }
      const auto h = shape[is_mask ? 0 : 1], w = shape[is_mask ? 1 : 2];
      if (h < 1 || w < 1) format_error(header_start, "block '" + name + "' has an empty extent");
      if (b == 0) {
        scene.height = h;
        scene.width = w;
      } else if (h != scene.height || w != scene.width) {
        format_error(header_start, "block '" + name + "' extent differs from 'pre'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    format_error(header_start, std::string("header field error: ") + e.what());
  }

  const std::size_t n = scene.pixels();
  const std::size_t payload = 2 * 3 * n * 4 + n;
  if (bytes.size() < offset + payload) {
    format_error(bytes.size(), "truncated payload: need " + std::to_string(payload) + " bytes after offset " +
                                   std::to_string(offset));
  }
  if (bytes.size() > offset + payload) format_error(offset + payload, "trailing bytes after payload");
  const std::size_t payload_start = offset;
  scene.pre = read_f32le(bytes, offset, 3 * n);
  offset += 3 * n * 4;
  scene.post = read_f32le(bytes, offset, 3 * n);
  offset += 3 * n * 4;
  scene.mask.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
  for (std::size_t i = 0; i < n; ++i) {
    if (scene.mask[i] > 1) format_error(offset + i, "mask value " + std::to_string(scene.mask[i]) + " is not 0 or 1");
  }
  if (!checksum.empty() && hex64(diffcore::fnv1a64(bytes.substr(payload_start, payload))) != checksum) {
    format_error(payload_start, "payload checksum mismatch (header says " + checksum + ")");
  }
  return scene;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_scene(const RasterScene& scene, const std::filesystem::path& path) {
  write_file(path, encode_scene(scene));
}

RasterScene read_scene(const std::filesystem::path& path) {
  try {
    return decode_scene(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace burnlora::dataplane
