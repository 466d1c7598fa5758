// SPDX-License-Identifier: Apache-2.0

#include "burnlora/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::diffcore {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.defined() || !in.requires_grad() || in.node()->backward_fn) {
      throw ContractError("grad_check inputs must be leaf tensors that require grad");
    }
    in.zero_grad();
  }
  Tensor<double> out = f();
  if (out.numel() != 1) throw ContractError("grad_check needs a scalar function, got " + shape_str(out.shape()));
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(in.numel()), 0.0);
    }
  }

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords(data.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > options.max_coords) {
      auto perm = rng.permutation(coords.size());
      coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(options.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = f().item();
      data[i] = saved - options.step;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          std::ostringstream os;
          os << "input#" << k << "[" << i << "] analytic=" << a << " numeric=" << numeric;
          report.worst = os.str();
        }
      }
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return report;
}

}  // namespace burnlora::diffcore
