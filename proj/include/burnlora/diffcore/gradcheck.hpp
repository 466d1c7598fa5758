// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "burnlora/diffcore/tensor.hpp"

namespace burnlora::diffcore {

struct GradCheckOptions {
  double step = 1e-5;                 // central-difference half-width
  std::size_t max_coords = 24;        // sampled coordinates per input tensor
  std::uint64_t seed = 17;
  double abs_floor = 1e-6;            // denominator floor for near-zero gradients
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input#k[i] analytic=.. numeric=.."
};

/// Compares reverse-mode gradients of the scalar `f` with respect to each
/// leaf in `inputs` against central differences. The relative error of a
/// coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace burnlora::diffcore
