// SPDX-License-Identifier: Apache-2.0

#include "burnlora/backbone/vit.hpp"

#include <cmath>

#include "burnlora/diffcore/ops.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::backbone {

namespace dc = diffcore;
using dc::Init;
using dc::ParamGroup;
using lora::TargetRole;

void VitConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("vit config: " + msg); };
  if (img_size < 1 || patch < 1 || in_chans < 1 || d_model < 1 || depth < 1 || heads < 1) {
    fail("all sizes must be positive");
  }
  if (img_size % patch != 0) fail("patch " + std::to_string(patch) + " does not divide img_size " + std::to_string(img_size));
  if (d_model % heads != 0) fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) fail("mlp_ratio must be positive");
  for (int idx : selected_layers) {
    if (idx < 0 || idx >= depth) fail("selected layer " + std::to_string(idx) + " outside depth " + std::to_string(depth));
  }
}

std::array<int, 4> VitConfig::default_layers(std::int64_t depth) {
  std::array<int, 4> out{};
  for (int k = 0; k < 4; ++k) {
    out[static_cast<std::size_t>(k)] = static_cast<int>(((k + 1) * depth + 3) / 4 - 1);
  }
  return out;
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterStore<T>& store, const std::string& prefix, const VitConfig& c)
    : heads_(c.heads) {
  const auto d = c.d_model, hidden = c.mlp_hidden();
  ln1_gamma_ = store.add(prefix + ".norm1.weight", {d}, ParamGroup::encoder, Init::ones());
  ln1_beta_ = store.add(prefix + ".norm1.bias", {d}, ParamGroup::encoder, Init::zeros());
  qkv_ = lora::AdaptableLinear<T>(store, prefix + ".attn.qkv", d, 3 * d, ParamGroup::encoder,
                                  Init::normal(1.0 / std::sqrt(static_cast<double>(d))));
  proj_ = lora::AdaptableLinear<T>(store, prefix + ".attn.proj", d, d, ParamGroup::encoder,
                                   Init::normal(1.0 / std::sqrt(static_cast<double>(d))));
  ln2_gamma_ = store.add(prefix + ".norm2.weight", {d}, ParamGroup::encoder, Init::ones());
  ln2_beta_ = store.add(prefix + ".norm2.bias", {d}, ParamGroup::encoder, Init::zeros());
  fc1_ = lora::AdaptableLinear<T>(store, prefix + ".mlp.fc1", d, hidden, ParamGroup::encoder,
                                  Init::normal(1.0 / std::sqrt(static_cast<double>(d))));
  fc2_ = lora::AdaptableLinear<T>(store, prefix + ".mlp.fc2", hidden, d, ParamGroup::encoder,
                                  Init::normal(1.0 / std::sqrt(static_cast<double>(hidden))));
}

template <typename T>
void TransformerBlock<T>::attach_adapters(ParameterStore<T>& store, const lora::LoraSpec& spec) {
  qkv_.maybe_attach(store, spec, TargetRole::qkv_fused);
  proj_.maybe_attach(store, spec, TargetRole::attn_out);
  fc1_.maybe_attach(store, spec, TargetRole::mlp_fc1);
  fc2_.maybe_attach(store, spec, TargetRole::mlp_fc2);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) const {
  constexpr T eps = T(1e-6);
  const auto n = x.dim(0), d = x.dim(1), dh = d / heads_;

  auto h = dc::layer_norm(x, ln1_gamma_, ln1_beta_, eps);
  auto qkv = dc::permute(dc::reshape(qkv_.forward(h), {n, 3, heads_, dh}), {1, 2, 0, 3});
  auto q = dc::reshape(dc::narrow(qkv, 0, 0, 1), {heads_, n, dh});
  auto k = dc::reshape(dc::narrow(qkv, 0, 1, 1), {heads_, n, dh});
  auto v = dc::reshape(dc::narrow(qkv, 0, 2, 1), {heads_, n, dh});
  auto scores = dc::scale(dc::bmm(q, dc::permute(k, {0, 2, 1})), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto ctx = dc::bmm(dc::softmax(scores, 2), v);
  auto merged = dc::reshape(dc::permute(ctx, {1, 0, 2}), {n, d});
  auto y = dc::add(x, proj_.forward(merged));

  auto m = dc::layer_norm(y, ln2_gamma_, ln2_beta_, eps);
  return dc::add(y, fc2_.forward(dc::gelu(fc1_.forward(m))));
}

template <typename T>
VitEncoder<T>::VitEncoder(ParameterStore<T>& store, const VitConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.d_model;
  const auto patch_dim = config_.in_chans * config_.patch * config_.patch;
  patch_embed_ = lora::AdaptableLinear<T>(store, "encoder.patch_embed", patch_dim, d, ParamGroup::encoder,
                                          Init::normal(1.0 / std::sqrt(static_cast<double>(patch_dim))));
  const auto tokens = config_.num_patches() + (config_.use_cls_token ? 1 : 0);
  if (config_.use_cls_token) cls_token_ = store.add("encoder.cls_token", {1, d}, ParamGroup::encoder, Init::normal(0.02));
  pos_embed_ = store.add("encoder.pos_embed", {tokens, d}, ParamGroup::encoder, Init::normal(0.02));
  blocks_.reserve(static_cast<std::size_t>(config_.depth));
  for (std::int64_t i = 0; i < config_.depth; ++i) {
    blocks_.emplace_back(store, "encoder.blocks." + std::to_string(i), config_);
  }
}

template <typename T>
void VitEncoder<T>::attach_adapters(ParameterStore<T>& store, const lora::LoraSpec& spec) {
  spec.validate();
  patch_embed_.maybe_attach(store, spec, TargetRole::patch_embed_1x1);
  for (auto& block : blocks_) block.attach_adapters(store, spec);
}

template <typename T>
TokenFeatures<T> VitEncoder<T>::encode(const Tensor<T>& x) const {
  const auto& c = config_;
  if (x.ndim() != 3 || x.dim(0) != c.in_chans || x.dim(1) != c.img_size || x.dim(2) != c.img_size) {
    throw DimensionError("encode: expected input [" + std::to_string(c.in_chans) + "," + std::to_string(c.img_size) +
                         "," + std::to_string(c.img_size) + "], got " + dc::shape_str(x.shape()));
  }
  auto tokens = patch_embed_.forward(dc::patchify(x, c.patch));
  if (c.use_cls_token) tokens = dc::concat<T>({cls_token_, tokens}, 0);
  if (tokens.shape() != pos_embed_.shape()) {
    throw DimensionError("positional embedding " + dc::shape_str(pos_embed_.shape()) + " does not match tokens " +
                         dc::shape_str(tokens.shape()));
  }
  tokens = dc::add(tokens, pos_embed_);

  TokenFeatures<T> out;
  out.indices = c.selected_layers;
  out.has_cls = c.use_cls_token;
  out.layers.resize(4);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    tokens = blocks_[i].forward(tokens);
    for (std::size_t k = 0; k < 4; ++k) {
      if (c.selected_layers[k] == static_cast<int>(i)) out.layers[k] = tokens;
    }
  }
  return out;
}

template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, bool has_cls) {
  if (tokens.ndim() != 2) throw DimensionError("tokens_to_grid: expected [N x D], got " + dc::shape_str(tokens.shape()));
  auto spatial = tokens;
  std::int64_t n = tokens.dim(0);
  if (has_cls) {
    if (n < 2) throw DimensionError("tokens_to_grid: no spatial tokens after dropping the class token");
    spatial = dc::narrow(tokens, 0, 1, n - 1);
    n -= 1;
  }
  auto side = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw DimensionError("tokens_to_grid: " + std::to_string(n) + " spatial tokens do not form a square grid");
  }
  const auto d = tokens.dim(1);
  return dc::reshape(dc::permute(spatial, {1, 0}), {d, side, side});
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::full_ft: return "full_ft";
    case Strategy::decoder_only: return "decoder_only";
    case Strategy::lora: return "lora";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "full_ft" || name == "full") return Strategy::full_ft;
  if (name == "decoder_only" || name == "decoder") return Strategy::decoder_only;
  if (name == "lora") return Strategy::lora;
  throw ConfigError("unknown strategy '" + name + "' (expected full_ft, decoder_only or lora)");
}

template <typename T>
void set_trainability(ParameterStore<T>& store, Strategy strategy) {
  bool has_adapters = false;
  for (const auto& p : store.params()) has_adapters |= p.group == ParamGroup::adapter;
  if (strategy == Strategy::lora && !has_adapters) {
    throw ConfigError("LoRA strategy selected but no adapters are attached");
  }
  for (auto& p : store.params()) {
    bool trainable = true;
    if (p.group == ParamGroup::encoder) trainable = strategy == Strategy::full_ft;
    if (p.group == ParamGroup::adapter) trainable = strategy != Strategy::decoder_only;
    p.set_trainable(trainable);
  }
}

template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class VitEncoder<float>;
template class VitEncoder<double>;
template Tensor<float> tokens_to_grid(const Tensor<float>&, bool);
template Tensor<double> tokens_to_grid(const Tensor<double>&, bool);
template void set_trainability(ParameterStore<float>&, Strategy);
template void set_trainability(ParameterStore<double>&, Strategy);

}  // namespace burnlora::backbone
