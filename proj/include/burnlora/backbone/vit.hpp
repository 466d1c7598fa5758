// SPDX-License-Identifier: Apache-2.0
//
// Vision Transformer encoder shared by the pre- and post-fire streams.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "burnlora/diffcore/parameter.hpp"
#include "burnlora/lora/lora.hpp"

namespace burnlora::backbone {

using diffcore::ParameterStore;
using diffcore::Tensor;

struct VitConfig {
  std::int64_t img_size = 128;
  std::int64_t patch = 16;
  std::int64_t in_chans = 3;
  std::int64_t d_model = 768;
  std::int64_t depth = 12;
  std::int64_t heads = 12;
  double mlp_ratio = 4.0;
  bool use_cls_token = false;
  std::array<int, 4> selected_layers{2, 5, 8, 11};

  std::int64_t grid() const { return img_size / patch; }
  std::int64_t num_patches() const { return grid() * grid(); }
  std::int64_t mlp_hidden() const { return static_cast<std::int64_t>(static_cast<double>(d_model) * mlp_ratio); }
  void validate() const;

  /// Four evenly spaced blocks ending at the last: ceil((k+1) * depth / 4) - 1.
  static std::array<int, 4> default_layers(std::int64_t depth);
};

/// Token sequences recorded after each selected block, in selection order.
template <typename T>
struct TokenFeatures {
  std::vector<Tensor<T>> layers;
  std::array<int, 4> indices{};
  bool has_cls = false;
};

template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore<T>& store, const std::string& prefix, const VitConfig& config);

  void attach_adapters(ParameterStore<T>& store, const lora::LoraSpec& spec);
  Tensor<T> forward(const Tensor<T>& tokens) const;

  const lora::AdaptableLinear<T>& qkv() const { return qkv_; }
  const lora::AdaptableLinear<T>& proj() const { return proj_; }
  const lora::AdaptableLinear<T>& fc1() const { return fc1_; }
  const lora::AdaptableLinear<T>& fc2() const { return fc2_; }

 private:
  std::int64_t heads_ = 1;
  Tensor<T> ln1_gamma_, ln1_beta_, ln2_gamma_, ln2_beta_;
  lora::AdaptableLinear<T> qkv_, proj_, fc1_, fc2_;
};

template <typename T>
class VitEncoder {
 public:
  VitEncoder() = default;
  VitEncoder(ParameterStore<T>& store, const VitConfig& config);

  /// Attaches adapters to every layer whose role `spec` targets.
  void attach_adapters(ParameterStore<T>& store, const lora::LoraSpec& spec);

  /// x [in_chans x img_size x img_size] -> tokens after each selected block.
  TokenFeatures<T> encode(const Tensor<T>& x) const;

  const VitConfig& config() const { return config_; }
  const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

 private:
  VitConfig config_;
  lora::AdaptableLinear<T> patch_embed_;
  Tensor<T> cls_token_;
  Tensor<T> pos_embed_;
  std::vector<TransformerBlock<T>> blocks_;
};

/// [N(+1) x D] -> [D x h x w] with F[d, i, j] = T[i * w + j, d]. Drops the
/// leading class token when `has_cls`; the remaining count must be square.
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, bool has_cls);

enum class Strategy { full_ft, decoder_only, lora };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

/// FullFT: everything trainable. DecoderOnly: encoder and adapters frozen.
/// LoRA: encoder frozen, adapters trainable (ConfigError if there are none).
/// Neck, decoder and head stay trainable under every strategy.
template <typename T>
void set_trainability(ParameterStore<T>& store, Strategy strategy);

extern template class VitEncoder<float>;
extern template class VitEncoder<double>;

}  // namespace burnlora::backbone
