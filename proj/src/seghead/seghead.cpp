// SPDX-License-Identifier: Apache-2.0

#include "burnlora/seghead/seghead.hpp"

#include <cmath>

#include "burnlora/diffcore/ops.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::seghead {

namespace dc = diffcore;
using dc::Init;
using dc::ParamGroup;

namespace {

Init he(std::int64_t fan_in) { return Init::normal(std::sqrt(2.0 / static_cast<double>(fan_in))); }

template <typename T>
Tensor<T> conv_gelu(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return dc::gelu(dc::conv2d(x, w, b));
}

}  // namespace

void HeadConfig::validate() const {
  if (neck_channels < 1 || decoder_channels < 1) throw ConfigError("head config: channel widths must be positive");
  if (num_classes < 2) throw ConfigError("head config: need at least two classes");
  for (auto s : pool_scales) {
    if (s < 1) throw ConfigError("head config: pool scales must be positive");
  }
}

template <typename T>
PyramidNeck<T>::PyramidNeck(ParameterStore<T>& store, std::int64_t in_dim, const HeadConfig& config) : in_dim_(in_dim) {
  config.validate();
  const auto c = config.neck_channels;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string p = "neck.levels." + std::to_string(k) + ".proj";
    proj_w_[k] = store.add(p + ".weight", {c, in_dim, 1, 1}, ParamGroup::neck, he(in_dim));
    proj_b_[k] = store.add(p + ".bias", {c}, ParamGroup::neck, Init::zeros());
  }
  up4a_w_ = store.add("neck.levels.0.up.0.weight", {c, c, 2, 2}, ParamGroup::neck, he(c));
  up4a_b_ = store.add("neck.levels.0.up.0.bias", {c}, ParamGroup::neck, Init::zeros());
  up4b_w_ = store.add("neck.levels.0.up.1.weight", {c, c, 2, 2}, ParamGroup::neck, he(c));
  up4b_b_ = store.add("neck.levels.0.up.1.bias", {c}, ParamGroup::neck, Init::zeros());
  up2_w_ = store.add("neck.levels.1.up.0.weight", {c, c, 2, 2}, ParamGroup::neck, he(c));
  up2_b_ = store.add("neck.levels.1.up.0.bias", {c}, ParamGroup::neck, Init::zeros());
}

template <typename T>
PyramidLevels<T> PyramidNeck<T>::forward(const std::vector<Tensor<T>>& features) const {
  if (features.size() != 4) {
    throw ConfigError("neck expects 4 feature maps, got " + std::to_string(features.size()));
  }
  PyramidLevels<T> out;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& f = features[k];
    if (f.ndim() != 3 || f.dim(0) != in_dim_) {
      throw DimensionError("neck input " + std::to_string(k) + " has shape " + dc::shape_str(f.shape()) +
                           ", expected channel width " + std::to_string(in_dim_));
    }
    if (f.shape() != features[0].shape()) throw DimensionError("neck inputs must share one grid size");
    auto p = dc::conv2d(f, proj_w_[k], proj_b_[k]);
    switch (k) {
      case 0:
        p = dc::conv_transpose2x2(dc::gelu(dc::conv_transpose2x2(p, up4a_w_, up4a_b_)), up4b_w_, up4b_b_);
        break;
      case 1:
        p = dc::conv_transpose2x2(p, up2_w_, up2_b_);
        break;
      case 2:
        break;
      case 3:
        if (p.dim(1) < 2 || p.dim(2) < 2) throw DimensionError("neck: patch grid too small to pool");
        p = dc::adaptive_avg_pool2d(p, p.dim(1) / 2, p.dim(2) / 2);
        break;
    }
    out.levels[k] = p;
  }
  return out;
}

template <typename T>
FusedPyramid<T> fuse_bitemporal(const PyramidLevels<T>& pre, const PyramidLevels<T>& post) {
  FusedPyramid<T> z;
  for (std::size_t k = 0; k < 4; ++k) {
    if (pre.levels[k].shape() != post.levels[k].shape()) {
      throw DimensionError("fuse_bitemporal: level " + std::to_string(k) + " shapes differ " +
                           dc::shape_str(pre.levels[k].shape()) + " vs " + dc::shape_str(post.levels[k].shape()));
    }
    z.levels[k] = dc::concat<T>({pre.levels[k], post.levels[k]}, 0);
  }
  return z;
}

template <typename T>
UperNetDecoder<T>::UperNetDecoder(ParameterStore<T>& store, std::int64_t in_channels, const HeadConfig& config)
    : config_(config) {
  config_.validate();
  const auto c = config_.decoder_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string p = "decoder.ppm." + std::to_string(s);
    ppm_w_[s] = store.add(p + ".weight", {c, in_channels, 1, 1}, ParamGroup::decoder, he(in_channels));
    ppm_b_[s] = store.add(p + ".bias", {c}, ParamGroup::decoder, Init::zeros());
  }
  const auto bottleneck_in = in_channels + 4 * c;
  bottleneck_w_ = store.add("decoder.bottleneck.weight", {c, bottleneck_in, 3, 3}, ParamGroup::decoder, he(9 * bottleneck_in));
  bottleneck_b_ = store.add("decoder.bottleneck.bias", {c}, ParamGroup::decoder, Init::zeros());
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string l = "decoder.lateral." + std::to_string(i);
    lateral_w_[i] = store.add(l + ".weight", {c, in_channels, 1, 1}, ParamGroup::decoder, he(in_channels));
    lateral_b_[i] = store.add(l + ".bias", {c}, ParamGroup::decoder, Init::zeros());
    const std::string s = "decoder.smooth." + std::to_string(i);
    smooth_w_[i] = store.add(s + ".weight", {c, c, 3, 3}, ParamGroup::decoder, he(9 * c));
    smooth_b_[i] = store.add(s + ".bias", {c}, ParamGroup::decoder, Init::zeros());
  }
  fuse_w_ = store.add("decoder.fuse.weight", {c, 4 * c, 1, 1}, ParamGroup::decoder, he(4 * c));
  fuse_b_ = store.add("decoder.fuse.bias", {c}, ParamGroup::decoder, Init::zeros());
}

template <typename T>
Tensor<T> UperNetDecoder<T>::forward(const FusedPyramid<T>& z) const {
  const auto& top = z.levels[3];
  const auto th = top.dim(1), tw = top.dim(2);

  // pyramid pooling on the coarsest level
  std::vector<Tensor<T>> branches{top};
  for (std::size_t s = 0; s < 4; ++s) {
    const auto scale = config_.pool_scales[s];
    auto pooled = conv_gelu(dc::adaptive_avg_pool2d(top, scale, scale), ppm_w_[s], ppm_b_[s]);
    branches.push_back(dc::bilinear_resize(pooled, th, tw));
  }
  auto coarse = conv_gelu(dc::concat(branches, 0), bottleneck_w_, bottleneck_b_);

  // top-down pathway
  std::array<Tensor<T>, 4> lat;
  for (std::size_t i = 0; i < 3; ++i) lat[i] = conv_gelu(z.levels[i], lateral_w_[i], lateral_b_[i]);
  lat[3] = coarse;
  for (int i = 2; i >= 0; --i) {
    const auto& finer = lat[static_cast<std::size_t>(i)];
    lat[static_cast<std::size_t>(i)] =
        dc::add(finer, dc::bilinear_resize(lat[static_cast<std::size_t>(i + 1)], finer.dim(1), finer.dim(2)));
  }

  const auto h = lat[0].dim(1), w = lat[0].dim(2);
  std::vector<Tensor<T>> outs;
  for (std::size_t i = 0; i < 3; ++i) {
    auto smoothed = conv_gelu(lat[i], smooth_w_[i], smooth_b_[i]);
    outs.push_back(i == 0 ? smoothed : dc::bilinear_resize(smoothed, h, w));
  }
  outs.push_back(dc::bilinear_resize(lat[3], h, w));
  return conv_gelu(dc::concat(outs, 0), fuse_w_, fuse_b_);
}

template <typename T>
ClassifierHead<T>::ClassifierHead(ParameterStore<T>& store, std::int64_t in_channels, std::int64_t num_classes) {
  weight_ = store.add("head.weight", {num_classes, in_channels, 1, 1}, ParamGroup::head, Init::normal(0.01));
  bias_ = store.add("head.bias", {num_classes}, ParamGroup::head, Init::zeros());
}

template <typename T>
Tensor<T> ClassifierHead<T>::logits(const Tensor<T>& dense, std::int64_t height, std::int64_t width) const {
  return dc::bilinear_resize(dc::conv2d(dense, weight_, bias_), height, width);
}

template <typename T>
Prediction<T> ClassifierHead<T>::classify(const Tensor<T>& dense, std::int64_t height, std::int64_t width) const {
  Prediction<T> p;
  p.logits = logits(dense, height, width);
  p.probabilities = dc::softmax(p.logits, 0);
  return p;
}

template class PyramidNeck<float>;
template class PyramidNeck<double>;
template class UperNetDecoder<float>;
template class UperNetDecoder<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;
template FusedPyramid<float> fuse_bitemporal(const PyramidLevels<float>&, const PyramidLevels<float>&);
template FusedPyramid<double> fuse_bitemporal(const PyramidLevels<double>&, const PyramidLevels<double>&);

}  // namespace burnlora::seghead
