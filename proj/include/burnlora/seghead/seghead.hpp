// SPDX-License-Identifier: Apache-2.0
//
// Pyramidal neck, bi-temporal fusion, UPerNet-style decoder and the 2-class
// pixel head.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "burnlora/diffcore/parameter.hpp"

namespace burnlora::seghead {

using diffcore::ParameterStore;
using diffcore::Tensor;

struct HeadConfig {
  std::int64_t neck_channels = 128;
  std::int64_t decoder_channels = 128;
  std::array<std::int64_t, 4> pool_scales{1, 2, 3, 6};
  std::int64_t num_classes = 2;

  void validate() const;
};

/// Four maps [c_neck x h_k x w_k] at 4x, 2x, 1x and 1/2x the patch grid,
/// i.e. strides 4, 8, 16, 32 for 16-pixel patches.
template <typename T>
struct PyramidLevels {
  std::array<Tensor<T>, 4> levels;
};

/// Level-wise channel concatenation, pre-fire channels first.
template <typename T>
struct FusedPyramid {
  std::array<Tensor<T>, 4> levels;
};

template <typename T>
class PyramidNeck {
 public:
  PyramidNeck() = default;
  PyramidNeck(ParameterStore<T>& store, std::int64_t in_dim, const HeadConfig& config);

  /// Each feature is [in_dim x g x g]; level k projects with a 1x1 conv and
  /// resamples: two 2x2 transposed convs, one, identity, 2x2 average pool.
  PyramidLevels<T> forward(const std::vector<Tensor<T>>& features) const;

 private:
  std::int64_t in_dim_ = 0;
  std::array<Tensor<T>, 4> proj_w_, proj_b_;
  Tensor<T> up4a_w_, up4a_b_, up4b_w_, up4b_b_, up2_w_, up2_b_;
};

template <typename T>
FusedPyramid<T> fuse_bitemporal(const PyramidLevels<T>& pre, const PyramidLevels<T>& post);

template <typename T>
class UperNetDecoder {
 public:
  UperNetDecoder() = default;
  UperNetDecoder(ParameterStore<T>& store, std::int64_t in_channels, const HeadConfig& config);

  /// Returns a [c_dec x h_1 x w_1] map at the finest pyramid level.
  Tensor<T> forward(const FusedPyramid<T>& z) const;

 private:
  HeadConfig config_;
  std::array<Tensor<T>, 4> ppm_w_, ppm_b_;
  Tensor<T> bottleneck_w_, bottleneck_b_;
  std::array<Tensor<T>, 3> lateral_w_, lateral_b_, smooth_w_, smooth_b_;
  Tensor<T> fuse_w_, fuse_b_;
};

template <typename T>
struct Prediction {
  Tensor<T> logits;         // [classes x H x W]
  Tensor<T> probabilities;  // softmax over the class axis
};

template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ParameterStore<T>& store, std::int64_t in_channels, std::int64_t num_classes);

  /// 1x1 conv to class logits, then bilinear upsampling to (height, width).
  Tensor<T> logits(const Tensor<T>& dense, std::int64_t height, std::int64_t width) const;
  Prediction<T> classify(const Tensor<T>& dense, std::int64_t height, std::int64_t width) const;

 private:
  Tensor<T> weight_, bias_;
};

extern template class PyramidNeck<float>;
extern template class PyramidNeck<double>;
extern template class UperNetDecoder<float>;
extern template class UperNetDecoder<double>;
extern template class ClassifierHead<float>;
extern template class ClassifierHead<double>;

}  // namespace burnlora::seghead
