// SPDX-License-Identifier: Apache-2.0

#include "burnlora/lora/lora.hpp"

#include <Eigen/Core>
#include <cmath>
#include <iostream>

#include "burnlora/diffcore/ops.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::lora {

namespace dc = diffcore;

const char* role_name(TargetRole role) {
  switch (role) {
    case TargetRole::qkv_fused: return "qkv_fused";
    case TargetRole::attn_out: return "attn_out";
    case TargetRole::mlp_fc1: return "mlp_fc1";
    case TargetRole::mlp_fc2: return "mlp_fc2";
    case TargetRole::patch_embed_1x1: return "patch_embed_1x1";
  }
  return "?";
}

TargetRole parse_role(const std::string& name) {
  for (auto role : {TargetRole::qkv_fused, TargetRole::attn_out, TargetRole::mlp_fc1, TargetRole::mlp_fc2,
                    TargetRole::patch_embed_1x1}) {
    if (name == role_name(role)) return role;
  }
  throw ConfigError("unknown LoRA target '" + name +
                    "' (expected qkv_fused, attn_out, mlp_fc1, mlp_fc2 or patch_embed_1x1)");
}

void LoraSpec::validate() const {
  if (rank < 1) throw ConfigError("LoRA rank must be >= 1, got " + std::to_string(rank));
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("LoRA alpha must be a finite non-negative scalar");
  if (targets.empty()) throw ConfigError("LoRA strategy needs at least one target role");
}

template <typename T>
LoraAdapter<T> attach(ParameterStore<T>& store, const std::string& prefix, const LoraSpec& spec) {
  spec.validate();
  auto& base = store.at(prefix + ".weight");
  if (base.shape.size() != 2) throw DimensionError("LoRA base weight " + base.name + " must be 2-D");
  LoraAdapter<T> adapter;
  adapter.d_out = base.shape[0];
  adapter.d_in = base.shape[1];
  adapter.rank = spec.rank;
  adapter.alpha = spec.alpha;
  adapter.rank_warning = spec.rank >= std::min(adapter.d_in, adapter.d_out);
  if (adapter.rank_warning) {
    std::clog << "warning: LoRA rank " << spec.rank << " >= min(d_in, d_out) for " << prefix << "\n";
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(adapter.d_in));
  adapter.a = store.add(prefix + ".lora_a", {spec.rank, adapter.d_in}, dc::ParamGroup::adapter,
                        dc::Init::uniform(bound));
  adapter.b = store.add(prefix + ".lora_b", {adapter.d_out, spec.rank}, dc::ParamGroup::adapter,
                        dc::Init::zeros());
  // store.add may reallocate; look the base up again before freezing it
  auto& frozen = store.at(prefix + ".weight");
  frozen.set_trainable(false);
  adapter.base = frozen.tensor;
  return adapter;
}

template <typename T>
Tensor<T> forward_adapted(const LoraAdapter<T>& adapter, const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.dim(-1) != adapter.d_in) {
    throw DimensionError("forward_adapted: input " + dc::shape_str(x.shape()) + " vs d_in " +
                         std::to_string(adapter.d_in));
  }
  auto base = dc::linear(x, adapter.base, bias);
  auto low = dc::linear(dc::linear(x, adapter.a), adapter.b);
  return dc::add(base, dc::scale(low, static_cast<T>(adapter.alpha)));
}

template <typename T>
Tensor<T> merge_dense(const LoraAdapter<T>& adapter) {
  using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::vector<T> out(adapter.base.data().begin(), adapter.base.data().end());
  if (adapter.alpha != 0.0) {
    Eigen::Map<MatR> w(out.data(), adapter.d_out, adapter.d_in);
    Eigen::Map<const MatR> a(adapter.a.data().data(), adapter.rank, adapter.d_in);
    Eigen::Map<const MatR> b(adapter.b.data().data(), adapter.d_out, adapter.rank);
    w.noalias() += static_cast<T>(adapter.alpha) * (b * a);
  }
  return Tensor<T>::from({adapter.d_out, adapter.d_in}, std::move(out));
}

template <typename T>
AdaptableLinear<T>::AdaptableLinear(ParameterStore<T>& store, std::string prefix, std::int64_t d_in,
                                    std::int64_t d_out, dc::ParamGroup group, dc::Init weight_init,
                                    bool with_bias)
    : prefix_(std::move(prefix)), d_in_(d_in), d_out_(d_out) {
  weight_ = store.add(prefix_ + ".weight", {d_out, d_in}, group, weight_init);
  if (with_bias) bias_ = store.add(prefix_ + ".bias", {d_out}, group, dc::Init::zeros());
}

template <typename T>
bool AdaptableLinear<T>::maybe_attach(ParameterStore<T>& store, const LoraSpec& spec, TargetRole role) {
  if (!spec.targets_role(role)) return false;
  if (adapter_) throw ContractError("layer " + prefix_ + " already carries an adapter");
  adapter_ = attach(store, prefix_, spec);
  return true;
}

template <typename T>
Tensor<T> AdaptableLinear<T>::forward(const Tensor<T>& x) const {
  if (adapter_) return forward_adapted(*adapter_, x, bias_);
  return dc::linear(x, weight_, bias_);
}

template <typename T>
LoraCount count_lora_params(const ParameterStore<T>& store, const LoraSpec& spec) {
  LoraCount count;
  const std::string suffix = ".lora_a";
  for (const auto& p : store.params()) {
    if (p.name.size() <= suffix.size() || p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    const std::string prefix = p.name.substr(0, p.name.size() - suffix.size());
    const auto& b = store.at(prefix + ".lora_b");
    const std::int64_t rank = p.shape[0];
    if (rank != spec.rank || b.shape[1] != rank) {
      throw ContractError("adapter " + prefix + " has rank " + std::to_string(rank) + ", spec says " +
                          std::to_string(spec.rank));
    }
    const std::int64_t n = adapter_param_count(p.shape[1], b.shape[0], rank);
    count.total += n;
    ++count.adapters;
    const std::string block_prefix = "encoder.blocks.";
    if (prefix.rfind(block_prefix, 0) == 0) {
      const int block = std::stoi(prefix.substr(block_prefix.size()));
      count.per_block[block] += n;
    } else {
      count.outside_blocks += n;
    }
  }
  return count;
}

template LoraAdapter<float> attach(ParameterStore<float>&, const std::string&, const LoraSpec&);
template LoraAdapter<double> attach(ParameterStore<double>&, const std::string&, const LoraSpec&);
template Tensor<float> forward_adapted(const LoraAdapter<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> forward_adapted(const LoraAdapter<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> merge_dense(const LoraAdapter<float>&);
template Tensor<double> merge_dense(const LoraAdapter<double>&);
template class AdaptableLinear<float>;
template class AdaptableLinear<double>;
template LoraCount count_lora_params(const ParameterStore<float>&, const LoraSpec&);
template LoraCount count_lora_params(const ParameterStore<double>&, const LoraSpec&);

}  // namespace burnlora::lora
