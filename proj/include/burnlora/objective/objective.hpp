// SPDX-License-Identifier: Apache-2.0
//
// Class-weighted cross-entropy and the burned-class metric suite. Channel 1
// of the logits is "burned" (the positive class), channel 0 "unburned".

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "burnlora/diffcore/tensor.hpp"

namespace burnlora::objective {

using diffcore::Tensor;

struct ClassWeights {
  double burn = 3.0;
  double unburn = 1.0;
};

enum class Reduction { mean, sum };

/// -w_y log softmax(logits)_y per pixel, summed or averaged over pixels
/// (the mean divides by the pixel count, not by the summed weights).
/// logits [2 x H x W]; target holds H*W labels in {0, 1}.
template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& logits, std::span<const std::uint8_t> target, const ClassWeights& weights,
                      Reduction reduction = Reduction::mean);

/// Per-pixel argmax over the class axis of [2 x H x W]; ties go to class 0.
template <typename T>
std::vector<std::uint8_t> argmax_mask(std::span<const T> logits, std::size_t pixels);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

/// tp / (tp + fp + fn); 1.0 when there are no positives in either mask.
double iou(const ConfusionCounts& c);
/// 2 tp / (2 tp + fp + fn); 1.0 when there are no positives in either mask.
double f1(const ConfusionCounts& c);
/// F1 implied by an IoU value: 2 iou / (1 + iou).
double f1_from_iou(double iou);

/// One evaluated split/strategy, serialized as a flat JSON object.
struct MetricReport {
  std::string split;
  std::string strategy;
  ConfusionCounts counts;

  double iou() const { return objective::iou(counts); }
  double f1() const { return objective::f1(counts); }
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace burnlora::objective
