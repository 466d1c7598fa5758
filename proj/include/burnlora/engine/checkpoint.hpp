// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, all integers and floats little-endian:
//
//   "BLCKPT\r\n"  magic (8 bytes)
//   u32 version, u64 architecture hash, u8 dtype (0 = f32, 1 = f64)
//   i64 step, f64 best_val_iou, i64 optimizer step
//   u32 n + n bytes   architecture JSON
//   u32 entry count, then per entry:
//     u8 kind (0 = parameter, 1 = adam m, 2 = adam v), u8 trainable,
//     u32 n + n bytes name, u32 rank, i64 dims[rank], raw values
//   u64 FNV-1a of every preceding byte

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "burnlora/diffcore/adam.hpp"
#include "burnlora/engine/model.hpp"

namespace burnlora::engine {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryKind : std::uint8_t { parameter = 0, adam_m = 1, adam_v = 2 };

template <typename T>
struct CheckpointEntry {
  EntryKind kind = EntryKind::parameter;
  bool trainable = false;
  std::string name;
  diffcore::Shape shape;
  std::vector<T> values;
};

template <typename T>
struct Checkpoint {
  std::uint64_t architecture_hash = 0;
  std::string architecture;  // JSON text
  std::int64_t step = 0;
  double best_val_iou = 0.0;
  std::int64_t optimizer_step = 0;
  std::vector<CheckpointEntry<T>> entries;
};

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ckpt);
/// Throws FormatError naming the offset on bad magic, version, dtype,
/// truncation, trailing bytes or checksum mismatch.
template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes);

/// Reads only the architecture JSON and dtype, whatever the value type.
struct CheckpointInfo {
  std::uint64_t architecture_hash = 0;
  std::string architecture;
  diffcore::DType dtype = diffcore::DType::f32;
};
CheckpointInfo peek_checkpoint(std::string_view bytes);

/// Captures model parameters and optimizer slots.
template <typename T>
Checkpoint<T> capture(const ModelAssembly<T>& model, const diffcore::Adam<T>* optimizer, std::int64_t step,
                      double best_val_iou);

/// Copies parameter values (and optimizer state when given) into `model`.
/// Refuses a different architecture hash unless `force`; with `force`, only
/// same-named, same-shaped tensors are restored.
template <typename T>
void restore(const Checkpoint<T>& ckpt, ModelAssembly<T>& model, diffcore::Adam<T>* optimizer, bool force = false);

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace burnlora::engine
