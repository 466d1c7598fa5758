// SPDX-License-Identifier: Apache-2.0

#include "burnlora/diffcore/adam.hpp"

#include <cmath>

#include "burnlora/errors.hpp"

namespace burnlora::diffcore {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamOptions& o) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ContractError("adam_update: parameter, gradient and state sizes differ");
  }
  if (step < 1) throw ContractError("adam_update: step count starts at 1");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step_size = static_cast<T>(o.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(o.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    param[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
  }
}

template <typename T>
void Adam<T>::step(std::vector<Parameter<T>>& params) {
  ++step_count_;
  for (auto& p : params) {
    if (!p.trainable || !p.tensor.defined() || !p.tensor.has_grad()) continue;
    auto& slot = slots_[p.name];
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    if (slot.m.empty()) {
      slot.m.assign(n, T(0));
      slot.v.assign(n, T(0));
    }
    if (slot.m.size() != n || slot.v.size() != n) {
      throw ContractError("Adam state for " + p.name + " does not match parameter shape");
    }
    adam_update<T>(p.tensor.mutable_data(), p.tensor.grad(), slot.m, slot.v, step_count_, options_);
  }
}

template void adam_update(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                          std::int64_t, const AdamOptions&);
template void adam_update(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                          std::int64_t, const AdamOptions&);
template class Adam<float>;
template class Adam<double>;

}  // namespace burnlora::diffcore
