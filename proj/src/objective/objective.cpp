// SPDX-License-Identifier: Apache-2.0

#include "burnlora/objective/objective.hpp"

#include <cmath>

#include "burnlora/errors.hpp"

namespace burnlora::objective {

namespace dc = diffcore;

template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& logits, std::span<const std::uint8_t> target, const ClassWeights& weights,
                      Reduction reduction) {
  if (logits.ndim() != 3 || logits.dim(0) != 2) {
    throw DimensionError("weighted_ce: expected logits [2 x H x W], got " + dc::shape_str(logits.shape()));
  }
  const auto pixels = static_cast<std::size_t>(logits.dim(1) * logits.dim(2));
  if (target.size() != pixels) {
    throw DimensionError("weighted_ce: target has " + std::to_string(target.size()) + " labels for " +
                         std::to_string(pixels) + " pixels");
  }
  if (!(weights.burn > 0.0) || !(weights.unburn > 0.0)) throw ConfigError("class weights must be positive");
  for (std::size_t i = 0; i < pixels; ++i) {
    if (target[i] > 1) throw DataError("weighted_ce: label " + std::to_string(target[i]) + " at pixel " + std::to_string(i));
  }
  const T* z = logits.data().data();
  const T norm = reduction == Reduction::mean ? T(1) / static_cast<T>(pixels) : T(1);
  const T w[2] = {static_cast<T>(weights.unburn), static_cast<T>(weights.burn)};

  // probabilities of class 1 are kept for backward
  std::vector<T> p1(pixels);
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const T z0 = z[i], z1 = z[pixels + i];
    const T m = std::max(z0, z1);
    const T lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    const std::uint8_t y = target[i];
    total += static_cast<double>(w[y] * (lse - (y ? z1 : z0)));
    p1[i] = std::exp(z1 - lse);
  }
  std::vector<std::uint8_t> labels(target.begin(), target.end());
  auto nl = logits.node();
  return dc::make_result<T>({1}, {static_cast<T>(total) * norm}, {nl},
                            [nl, p1 = std::move(p1), labels = std::move(labels), norm, w0 = w[0], w1 = w[1]](dc::Node<T>& self) {
    if (!nl->requires_grad) return;
    nl->ensure_grad();
    const T g = self.grad[0] * norm;
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t y = labels[i];
      const T wy = y ? w1 : w0;
      const T p = p1[i];
      // d/dz1 = w (p1 - [y==1]); d/dz0 = -d/dz1
      const T d1 = g * wy * (p - static_cast<T>(y));
      nl->grad[n + i] += d1;
      nl->grad[i] -= d1;
    }
  }, "weighted_ce");
}

template <typename T>
std::vector<std::uint8_t> argmax_mask(std::span<const T> logits, std::size_t pixels) {
  if (logits.size() != 2 * pixels) throw DimensionError("argmax_mask: expected 2 x pixels logits");
  std::vector<std::uint8_t> out(pixels);
  for (std::size_t i = 0; i < pixels; ++i) out[i] = logits[pixels + i] > logits[i] ? 1 : 0;
  return out;
}

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) {
    throw DimensionError("confusion: prediction has " + std::to_string(pred.size()) + " pixels, target " +
                         std::to_string(target.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = target[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const auto denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(const ConfusionCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1_from_iou(double value) { return 2.0 * value / (1.0 + value); }

nlohmann::json MetricReport::to_json() const {
  return {{"split", split}, {"strategy", strategy}, {"tp", counts.tp}, {"fp", counts.fp},
          {"fn", counts.fn}, {"tn", counts.tn}, {"iou", iou()}, {"f1", f1()}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.split = j.value("split", "");
  r.strategy = j.value("strategy", "");
  r.counts.tp = j.at("tp").get<std::uint64_t>();
  r.counts.fp = j.at("fp").get<std::uint64_t>();
  r.counts.fn = j.at("fn").get<std::uint64_t>();
  r.counts.tn = j.at("tn").get<std::uint64_t>();
  return r;
}

template Tensor<float> weighted_ce(const Tensor<float>&, std::span<const std::uint8_t>, const ClassWeights&, Reduction);
template Tensor<double> weighted_ce(const Tensor<double>&, std::span<const std::uint8_t>, const ClassWeights&, Reduction);
template std::vector<std::uint8_t> argmax_mask(std::span<const float>, std::size_t);
template std::vector<std::uint8_t> argmax_mask(std::span<const double>, std::size_t);

}  // namespace burnlora::objective
