// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "burnlora/diffcore/parameter.hpp"

namespace burnlora::diffcore {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place. `step` is 1-based.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamOptions& options);

/// First/second moment buffers keyed by parameter name. Only trainable
/// parameters that received a gradient are touched by step().
template <typename T>
class Adam {
 public:
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };

  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(std::vector<Parameter<T>>& params);

  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamOptions options_;
  std::int64_t step_count_ = 0;
  std::map<std::string, Slot> slots_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace burnlora::diffcore
