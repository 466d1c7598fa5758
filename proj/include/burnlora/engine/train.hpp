// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "burnlora/dataplane/patches.hpp"
#include "burnlora/engine/checkpoint.hpp"
#include "burnlora/objective/objective.hpp"

namespace burnlora::engine {

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t batch_size = 2;
  std::int64_t max_epochs = 1000;
  std::int64_t max_steps = 2000;
  std::uint64_t seed = 0;
  objective::ClassWeights weights;
  std::int64_t eval_every = 50;
  /// Stop once validation IoU reaches this value; 0 disables.
  double target_val_iou = 0.0;
  /// Append-only JSON-lines history; empty disables.
  std::filesystem::path log_path;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct HistoryEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> val_iou;
};

template <typename T>
struct TrainResult {
  std::vector<HistoryEntry> history;
  std::int64_t steps = 0;
  double best_val_iou = 0.0;
  std::int64_t best_step = 0;
  Checkpoint<T> best;  // parameters at the best validation IoU
  Checkpoint<T> last;  // parameters and optimizer state after the final step
};

template <typename T>
Tensor<T> band_tensor(const std::vector<float>& values, std::int64_t size);

/// Sums confusion counts of argmax predictions over all patches.
template <typename T>
objective::ConfusionCounts evaluate(const ModelAssembly<T>& model, const std::vector<dataplane::Patch>& patches);

/// Mini-batch Adam on the weighted cross-entropy. Patches are visited in a
/// seeded permutation per epoch; each batch loss is the mean over its
/// patches. Validation IoU (micro) is computed every eval_every steps and
/// after the last step. With `resume`, parameters, optimizer state, step and
/// best IoU continue from the checkpoint (which must match the model).
template <typename T>
TrainResult<T> train(ModelAssembly<T>& model, const std::vector<dataplane::Patch>& train_set,
                     const std::vector<dataplane::Patch>& val_set, const TrainConfig& config,
                     const Checkpoint<T>* resume = nullptr);

}  // namespace burnlora::engine
