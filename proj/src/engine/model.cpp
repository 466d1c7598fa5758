// SPDX-License-Identifier: Apache-2.0

#include "burnlora/engine/model.hpp"

#include <cstring>
#include <set>

#include "burnlora/diffcore/ops.hpp"
#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::engine {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read_key(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void ModelConfig::validate() const {
  vit.validate();
  head.validate();
  for (int b = 0; b < 3; ++b) {
    if (!(band_std[b] > 0)) throw ConfigError("model.band_std must be positive");
  }
}

json ModelConfig::to_json() const {
  return {
      {"img_size", vit.img_size},
      {"patch", vit.patch},
      {"in_chans", vit.in_chans},
      {"d_model", vit.d_model},
      {"depth", vit.depth},
      {"heads", vit.heads},
      {"mlp_ratio", vit.mlp_ratio},
      {"use_cls_token", vit.use_cls_token},
      {"selected_layers", vit.selected_layers},
      {"neck_channels", head.neck_channels},
      {"decoder_channels", head.decoder_channels},
      {"pool_scales", head.pool_scales},
      {"num_classes", head.num_classes},
      {"band_mean", band_mean},
      {"band_std", band_std},
  };
}

ModelConfig ModelConfig::from_json(const json& j) {
  const std::string where = "model";
  reject_unknown(j,
                 {"img_size", "patch", "in_chans", "d_model", "depth", "heads", "mlp_ratio", "use_cls_token",
                  "selected_layers", "neck_channels", "decoder_channels", "pool_scales", "num_classes", "band_mean",
                  "band_std", "reference_total_params"},
                 where);
  ModelConfig c;
  read_key(j, "img_size", c.vit.img_size, where);
  read_key(j, "patch", c.vit.patch, where);
  read_key(j, "in_chans", c.vit.in_chans, where);
  read_key(j, "d_model", c.vit.d_model, where);
  read_key(j, "depth", c.vit.depth, where);
  read_key(j, "heads", c.vit.heads, where);
  read_key(j, "mlp_ratio", c.vit.mlp_ratio, where);
  read_key(j, "use_cls_token", c.vit.use_cls_token, where);
  if (j.contains("selected_layers")) {
    read_key(j, "selected_layers", c.vit.selected_layers, where);
  } else {
    c.vit.selected_layers = backbone::VitConfig::default_layers(c.vit.depth);
  }
  read_key(j, "neck_channels", c.head.neck_channels, where);
  read_key(j, "decoder_channels", c.head.decoder_channels, where);
  read_key(j, "pool_scales", c.head.pool_scales, where);
  read_key(j, "num_classes", c.head.num_classes, where);
  read_key(j, "band_mean", c.band_mean, where);
  read_key(j, "band_std", c.band_std, where);
  c.validate();
  return c;
}

json lora_to_json(const lora::LoraSpec& spec) {
  std::vector<std::string> targets;
  for (auto role : spec.targets) targets.emplace_back(lora::role_name(role));
  return {{"rank", spec.rank}, {"alpha", spec.alpha}, {"targets", targets}};
}

lora::LoraSpec lora_from_json(const json& j) {
  const std::string where = "lora";
  reject_unknown(j, {"rank", "alpha", "targets"}, where);
  lora::LoraSpec s;
  read_key(j, "rank", s.rank, where);
  read_key(j, "alpha", s.alpha, where);
  if (j.contains("targets")) {
    std::vector<std::string> names;
    read_key(j, "targets", names, where);
    s.targets.clear();
    for (const auto& n : names) s.targets.insert(lora::parse_role(n));
  }
  s.validate();
  return s;
}

json architecture_json(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec,
                       diffcore::DType dtype) {
  json j{{"model", config.to_json()}, {"strategy", backbone::strategy_name(strategy)},
         {"dtype", diffcore::dtype_name(dtype)}};
  if (strategy == Strategy::lora) j["lora"] = lora_to_json(spec);
  return j;
}

std::uint64_t architecture_hash(const json& architecture) {
  return diffcore::fnv1a64(architecture.dump());
}

template <typename T>
ModelAssembly<T>::ModelAssembly(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec,
                                std::uint64_t seed, bool materialize)
    : config_(config), strategy_(strategy), spec_(spec), store_(seed, materialize) {
  config_.validate();
  encoder_ = backbone::VitEncoder<T>(store_, config_.vit);
  if (strategy_ == Strategy::lora) {
    spec_.validate();
    encoder_.attach_adapters(store_, spec_);
    has_adapters_ = true;
  }
  neck_ = seghead::PyramidNeck<T>(store_, config_.vit.d_model, config_.head);
  decoder_ = seghead::UperNetDecoder<T>(store_, 2 * config_.head.neck_channels, config_.head);
  head_ = seghead::ClassifierHead<T>(store_, config_.head.decoder_channels, config_.head.num_classes);
  backbone::set_trainability(store_, strategy_);
}

template <typename T>
Tensor<T> ModelAssembly<T>::forward(const Tensor<T>& pre, const Tensor<T>& post) const {
  if (!store_.materialized()) throw ContractError("forward on a shape-only model");
  std::vector<T> shift(3), factor(3);
  for (int b = 0; b < 3; ++b) {
    shift[static_cast<std::size_t>(b)] = static_cast<T>(config_.band_mean[b]);
    factor[static_cast<std::size_t>(b)] = static_cast<T>(1.0 / config_.band_std[b]);
  }
  auto stream = [&](const Tensor<T>& x) {
    const auto feats = encoder_.encode(diffcore::channel_affine(x, shift, factor));
    std::vector<Tensor<T>> grids;
    for (const auto& tokens : feats.layers) grids.push_back(backbone::tokens_to_grid(tokens, feats.has_cls));
    return neck_.forward(grids);
  };
  const auto fused = seghead::fuse_bitemporal(stream(pre), stream(post));
  return head_.logits(decoder_.forward(fused), pre.dim(1), pre.dim(2));
}

template <typename T>
json ModelAssembly<T>::architecture() const {
  return architecture_json(config_, strategy_, spec_, diffcore::dtype_of<T>());
}

template <typename T>
ModelAssembly<T> build_model(const ModelConfig& config, Strategy strategy, const lora::LoraSpec& spec,
                             std::uint64_t seed, bool materialize) {
  return ModelAssembly<T>(config, strategy, spec, seed, materialize);
}

const char* scope_name(Scope scope) {
  return scope == Scope::encoder_only ? "encoder_only" : "full_network";
}

Scope parse_scope(const std::string& name) {
  if (name == "encoder_only" || name == "encoder") return Scope::encoder_only;
  if (name == "full_network" || name == "full") return Scope::full_network;
  throw ConfigError("unknown scope '" + name + "' (expected encoder_only or full_network)");
}

json ParamReport::to_json() const {
  return {{"scope", scope_name(scope)}, {"total", total}, {"trainable", trainable}, {"percent", percent()}};
}

template <typename T>
ParamReport param_report(const diffcore::ParameterStore<T>& store, Scope scope) {
  ParamReport r;
  r.scope = scope;
  for (const auto& p : store.params()) {
    const bool in_scope = scope == Scope::full_network || p.group == diffcore::ParamGroup::encoder ||
                          p.group == diffcore::ParamGroup::adapter;
    if (!in_scope) continue;
    r.total += p.numel();
    if (p.trainable) r.trainable += p.numel();
  }
  return r;
}

template <typename T>
std::uint64_t param_checksum(const diffcore::ParameterStore<T>& store,
                             const std::function<bool(const diffcore::Parameter<T>&)>& filter) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : store.params()) {
    if (!filter(p)) continue;
    h = diffcore::fnv1a64(p.name, h);
    if (p.tensor.defined()) {
      const auto d = p.tensor.data();
      h = diffcore::fnv1a64({reinterpret_cast<const char*>(d.data()), d.size_bytes()}, h);
    }
  }
  return h;
}

template class ModelAssembly<float>;
template class ModelAssembly<double>;
template ModelAssembly<float> build_model(const ModelConfig&, Strategy, const lora::LoraSpec&, std::uint64_t, bool);
template ModelAssembly<double> build_model(const ModelConfig&, Strategy, const lora::LoraSpec&, std::uint64_t, bool);
template ParamReport param_report(const diffcore::ParameterStore<float>&, Scope);
template ParamReport param_report(const diffcore::ParameterStore<double>&, Scope);
template std::uint64_t param_checksum(const diffcore::ParameterStore<float>&,
                                      const std::function<bool(const diffcore::Parameter<float>&)>&);
template std::uint64_t param_checksum(const diffcore::ParameterStore<double>&,
                                      const std::function<bool(const diffcore::Parameter<double>&)>&);

}  // namespace burnlora::engine
