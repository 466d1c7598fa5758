// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Only the shapes the segmentation network needs
// are supported; there is no general broadcasting.
//
// Spatial tensors are channel-first without a batch axis: [C x H x W].

#pragma once

#include <vector>

#include "burnlora/diffcore/tensor.hpp"

namespace burnlora::diffcore {

/// [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x [.. x d_in], weight [d_out x d_in], optional bias [d_out] -> [.. x d_out].
/// Computes x * weight^T + bias over the flattened leading axes.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

/// Batched matmul [B x m x k] * [B x k x n] -> [B x m x n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
/// Per-channel affine on [C x ...]: (x - shift[c]) * factor[c]. Constants only.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const std::vector<T>& shift, const std::vector<T>& factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Normalizes over the last axis, then applies gamma/beta of shape [d].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& dims);
/// Slice [start, start + length) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);

/// Bilinear resampling of [C x h x w] with half-pixel centers
/// (align_corners = false): src = (dst + 0.5) * in / out - 0.5, clamped at 0.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

/// Adaptive average pooling of [C x h x w]; bin i spans
/// [floor(i * in / out), ceil((i + 1) * in / out)). Output may exceed input.
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

enum class Padding { zeros, replicate };

/// Stride-1 "same" convolution. x [Cin x H x W], weight [Cout x Cin x k x k]
/// with odd k, bias [Cout] (optional).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {},
                 Padding padding = Padding::replicate);

/// 2x2 kernel, stride-2 transposed convolution. x [Cin x h x w],
/// weight [Cin x Cout x 2 x 2], bias [Cout] -> [Cout x 2h x 2w].
template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

/// [C x H x W] -> [N x C*p*p]; patches in row-major order, each flattened as
/// (channel, row, col).
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::int64_t patch);

/// Linear projection of non-overlapping patches: patchify(x) * proj with
/// proj [(C*p*p) x d] -> tokens [N x d].
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, std::int64_t patch, const Tensor<T>& proj);

}  // namespace burnlora::diffcore
