// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "burnlora/diffcore/tensor.hpp"

namespace burnlora::diffcore {

/// Which part of the segmentation network owns a parameter.
enum class ParamGroup { encoder, adapter, neck, decoder, head };

const char* group_name(ParamGroup group);

template <typename T>
struct Parameter {
  std::string name;  // hierarchical, e.g. "encoder.blocks.3.attn.qkv.weight"
  Shape shape;
  ParamGroup group = ParamGroup::encoder;
  bool trainable = true;
  Tensor<T> tensor;  // undefined for shape-only (unmaterialized) stores

  std::int64_t numel() const { return diffcore::numel(shape); }
  void set_trainable(bool value);
};

struct Init {
  enum class Kind { zeros, ones, normal, uniform };
  Kind kind = Kind::zeros;
  double scale = 0.0;  // std-dev for normal, half-width for uniform

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::ones, 0.0}; }
  static Init normal(double std) { return {Kind::normal, std}; }
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
};

/// Ordered registry of named parameters. Each tensor draws its initial values
/// from an Rng derived from (seed, name), so values do not depend on the order
/// or presence of other parameters. A store built with materialize=false only
/// records shapes, which makes parameter accounting of large backbones free.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed, bool materialize = true)
      : seed_(seed), materialize_(materialize) {}

  Tensor<T> add(std::string name, Shape shape, ParamGroup group, Init init);

  bool materialized() const { return materialize_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Parameter<T>>& params() { return params_; }
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;

  std::int64_t total_count() const;
  std::int64_t trainable_count() const;
  void zero_grad();

 private:
  std::uint64_t seed_;
  bool materialize_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace burnlora::diffcore
