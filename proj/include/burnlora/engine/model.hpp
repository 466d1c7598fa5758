// SPDX-License-Identifier: Apache-2.0
//
// Full bi-temporal segmentation network: shared ViT encoder, pyramidal neck,
// channel-concat fusion, UPerNet decoder and pixel head.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "burnlora/backbone/vit.hpp"
#include "burnlora/diffcore/parameter.hpp"
#include "burnlora/lora/lora.hpp"
#include "burnlora/seghead/seghead.hpp"

namespace burnlora::engine {

using backbone::Strategy;
using diffcore::Tensor;

struct ModelConfig {
  backbone::VitConfig vit;
  seghead::HeadConfig head;
  // Per-band standardization (B4, B8, B12) applied before the encoder.
  std::array<double, 3> band_mean{0.07, 0.25, 0.18};
  std::array<double, 3> band_std{0.05, 0.08, 0.07};

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are a ConfigError.
  static ModelConfig from_json(const nlohmann::json& j);
};

nlohmann::json lora_to_json(const lora::LoraSpec& spec);
lora::LoraSpec lora_from_json(const nlohmann::json& j);

/// Canonical description of everything that fixes the tensor set and the
/// forward function; its FNV-1a hash stamps checkpoints.
nlohmann::json architecture_json(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec,
                                 diffcore::DType dtype);
std::uint64_t architecture_hash(const nlohmann::json& architecture);

template <typename T>
class ModelAssembly {
 public:
  ModelAssembly(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec, std::uint64_t seed,
                bool materialize);

  /// pre, post [3 x H x W] with H = W = img_size -> logits [classes x H x W].
  Tensor<T> forward(const Tensor<T>& pre, const Tensor<T>& post) const;

  const ModelConfig& config() const { return config_; }
  Strategy strategy() const { return strategy_; }
  const lora::LoraSpec& lora_spec() const { return spec_; }
  bool has_adapters() const { return has_adapters_; }
  diffcore::ParameterStore<T>& store() { return store_; }
  const diffcore::ParameterStore<T>& store() const { return store_; }
  const backbone::VitEncoder<T>& encoder() const { return encoder_; }
  std::uint64_t seed() const { return store_.seed(); }
  nlohmann::json architecture() const;
  std::uint64_t architecture_hash() const { return engine::architecture_hash(architecture()); }

 private:
  ModelConfig config_;
  Strategy strategy_;
  lora::LoraSpec spec_;
  bool has_adapters_ = false;
  diffcore::ParameterStore<T> store_;
  backbone::VitEncoder<T> encoder_;
  seghead::PyramidNeck<T> neck_;
  seghead::UperNetDecoder<T> decoder_;
  seghead::ClassifierHead<T> head_;
};

/// Builds the network, attaches adapters for the LoRA strategy and applies
/// the strategy's trainability. Identical seeds give identical weights.
template <typename T>
ModelAssembly<T> build_model(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec,
                             std::uint64_t seed, bool materialize = true);

enum class Scope { encoder_only, full_network };
const char* scope_name(Scope scope);
Scope parse_scope(const std::string& name);

struct ParamReport {
  Scope scope = Scope::encoder_only;
  std::int64_t total = 0;
  std::int64_t trainable = 0;
  double percent() const { return total > 0 ? 100.0 * static_cast<double>(trainable) / static_cast<double>(total) : 0.0; }
  nlohmann::json to_json() const;
};

/// Encoder scope counts encoder and adapter parameters; full scope counts all.
template <typename T>
ParamReport param_report(const diffcore::ParameterStore<T>& store, Scope scope);

/// FNV-1a over names and raw values of the parameters accepted by `filter`.
template <typename T>
std::uint64_t param_checksum(const diffcore::ParameterStore<T>& store,
                             const std::function<bool(const diffcore::Parameter<T>&)>& filter);

extern template class ModelAssembly<float>;
extern template class ModelAssembly<double>;

}  // namespace burnlora::engine
