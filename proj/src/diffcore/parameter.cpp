// SPDX-License-Identifier: Apache-2.0

#include "burnlora/diffcore/parameter.hpp"

#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::diffcore {

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::neck: return "neck";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::head: return "head";
  }
  return "?";
}

template <typename T>
void Parameter<T>::set_trainable(bool value) {
  trainable = value;
  if (tensor.defined()) {
    tensor.set_requires_grad(value);
    if (!value) tensor.zero_grad();
  }
}

template <typename T>
Tensor<T> ParameterStore<T>::add(std::string name, Shape shape, ParamGroup group, Init init) {
  if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("parameter " + name + " has non-positive shape " + shape_str(shape));
  }
  Parameter<T> p;
  p.name = name;
  p.shape = shape;
  p.group = group;
  if (materialize_) {
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    Rng rng = Rng::derive(seed_, name);
    switch (init.kind) {
      case Init::Kind::zeros: break;
      case Init::Kind::ones: std::fill(data.begin(), data.end(), T(1)); break;
      case Init::Kind::normal:
        for (auto& v : data) v = static_cast<T>(init.scale * rng.normal());
        break;
      case Init::Kind::uniform:
        for (auto& v : data) v = static_cast<T>(rng.uniform(-init.scale, init.scale));
        break;
    }
    p.tensor = Tensor<T>::from(shape, std::move(data), true);
  }
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back().tensor;
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw ContractError("unknown parameter " + name);
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw ContractError("unknown parameter " + name);
}

template <typename T>
std::int64_t ParameterStore<T>::total_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

template <typename T>
std::int64_t ParameterStore<T>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.numel();
  }
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.tensor.defined()) p.tensor.zero_grad();
  }
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace burnlora::diffcore
