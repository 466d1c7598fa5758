// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters on frozen linear maps: y = W x + b + alpha * B (A x).

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "burnlora/diffcore/parameter.hpp"

namespace burnlora::lora {

using diffcore::ParameterStore;
using diffcore::Tensor;

enum class TargetRole { qkv_fused, attn_out, mlp_fc1, mlp_fc2, patch_embed_1x1 };

const char* role_name(TargetRole role);
TargetRole parse_role(const std::string& name);

struct LoraSpec {
  std::int64_t rank = 8;
  double alpha = 1.0;
  std::set<TargetRole> targets{TargetRole::qkv_fused, TargetRole::attn_out};

  bool targets_role(TargetRole role) const { return targets.count(role) != 0; }
  /// Throws ConfigError on rank < 1, negative alpha or empty targets.
  void validate() const;
};

constexpr std::int64_t adapter_param_count(std::int64_t d_in, std::int64_t d_out, std::int64_t rank) {
  return rank * (d_in + d_out);
}

template <typename T>
struct LoraAdapter {
  Tensor<T> a;     // [r x d_in], trainable
  Tensor<T> b;     // [d_out x r], trainable, zero at attach time
  double alpha = 1.0;
  Tensor<T> base;  // [d_out x d_in], frozen
  std::int64_t rank = 0;
  std::int64_t d_in = 0;
  std::int64_t d_out = 0;
  bool rank_warning = false;  // rank >= min(d_in, d_out)

  std::int64_t param_count() const { return adapter_param_count(d_in, d_out, rank); }
};

/// Registers "<prefix>.lora_a" / "<prefix>.lora_b" next to the base weight
/// "<prefix>.weight" and freezes that weight. A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)),
/// B = 0, so the adapted layer starts out identical to the base layer.
template <typename T>
LoraAdapter<T> attach(ParameterStore<T>& store, const std::string& prefix, const LoraSpec& spec);

/// W x + b + alpha * B (A x) for x [.. x d_in].
template <typename T>
Tensor<T> forward_adapted(const LoraAdapter<T>& adapter, const Tensor<T>& x, const Tensor<T>& bias = {});

/// Dense W + alpha * B A, detached from the tape.
template <typename T>
Tensor<T> merge_dense(const LoraAdapter<T>& adapter);

/// A linear layer whose weight may carry one adapter.
template <typename T>
class AdaptableLinear {
 public:
  AdaptableLinear() = default;
  AdaptableLinear(ParameterStore<T>& store, std::string prefix, std::int64_t d_in, std::int64_t d_out,
                  diffcore::ParamGroup group, diffcore::Init weight_init, bool with_bias = true);

  /// Attaches an adapter when `spec` targets `role`; returns whether it did.
  bool maybe_attach(ParameterStore<T>& store, const LoraSpec& spec, TargetRole role);

  Tensor<T> forward(const Tensor<T>& x) const;

  const std::string& prefix() const { return prefix_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  const std::optional<LoraAdapter<T>>& adapter() const { return adapter_; }
  std::int64_t d_in() const { return d_in_; }
  std::int64_t d_out() const { return d_out_; }

 private:
  std::string prefix_;
  std::int64_t d_in_ = 0;
  std::int64_t d_out_ = 0;
  Tensor<T> weight_;
  Tensor<T> bias_;
  std::optional<LoraAdapter<T>> adapter_;
};

struct LoraCount {
  std::int64_t total = 0;
  std::map<int, std::int64_t> per_block;  // keyed by encoder block index
  std::int64_t outside_blocks = 0;        // e.g. patch-embedding adapters
  std::int64_t adapters = 0;
};

/// Sums r * (d_in + d_out) over every adapter pair registered in `store`,
/// checking each pair's rank against `spec`.
template <typename T>
LoraCount count_lora_params(const ParameterStore<T>& store, const LoraSpec& spec);

extern template class AdaptableLinear<float>;
extern template class AdaptableLinear<double>;

}  // namespace burnlora::lora
