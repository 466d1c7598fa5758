// SPDX-License-Identifier: Apache-2.0

#include "burnlora/diffcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "burnlora/errors.hpp"

namespace burnlora::diffcore {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
  throw DimensionError(op + ": " + detail);
}

int norm_axis(int axis, int ndim, const char* op) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    dim_error(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
  }
  return a;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
void require_rank(const Tensor<T>& x, int rank, const char* op) {
  if (!x.defined()) throw ContractError(std::string(op) + ": undefined input");
  if (x.ndim() != rank) {
    dim_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    dim_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) dim_error("matmul", "inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Buffer<T> out(static_cast<std::size_t>(m * n));
  Map<T>(out.data(), m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  NodePtr<T> na = a.node(), nb = b.node();
  return make_result<T>({m, n}, std::move(out), {na, nb}, [na, nb, m, k, n](Node<T>& self) {
    CMap<T> dc(self.grad.data(), m, n);
    if (na->requires_grad) {
      na->ensure_grad();
      Map<T>(na->grad.data(), m, k).noalias() += dc * CMap<T>(nb->value.data(), k, n).transpose();
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      Map<T>(nb->grad.data(), k, n).noalias() += CMap<T>(na->value.data(), m, k).transpose() * dc;
    }
  }, "matmul");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(weight, 2, "linear");
  if (!x.defined() || x.ndim() < 1) throw ContractError("linear: undefined input");
  const auto d_out = weight.dim(0), d_in = weight.dim(1);
  if (x.dim(-1) != d_in) {
    dim_error("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != d_out)) {
    dim_error("linear", "bias " + shape_str(bias.shape()) + " vs d_out " + std::to_string(d_out));
  }
  const auto rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Buffer<T> out(static_cast<std::size_t>(rows * d_out));
  Map<T> y(out.data(), rows, d_out);
  y.noalias() = CMap<T>(x.data().data(), rows, d_in) * CMap<T>(weight.data().data(), d_out, d_in).transpose();
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), d_out);
  NodePtr<T> nx = x.node(), nw = weight.node(), nb = has_bias ? bias.node() : nullptr;
  std::vector<NodePtr<T>> inputs{nx, nw};
  if (nb) inputs.push_back(nb);
  return make_result<T>(std::move(out_shape), std::move(out), std::move(inputs),
                        [nx, nw, nb, rows, d_in, d_out](Node<T>& self) {
    CMap<T> dy(self.grad.data(), rows, d_out);
    if (nx->requires_grad) {
      nx->ensure_grad();
      Map<T>(nx->grad.data(), rows, d_in).noalias() += dy * CMap<T>(nw->value.data(), d_out, d_in);
    }
    if (nw->requires_grad) {
      nw->ensure_grad();
      Map<T>(nw->grad.data(), d_out, d_in).noalias() += dy.transpose() * CMap<T>(nx->value.data(), rows, d_in);
    }
    if (nb && nb->requires_grad) {
      nb->ensure_grad();
      Map<T>(nb->grad.data(), 1, d_out) += dy.colwise().sum();
    }
  }, "linear");
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    dim_error("bmm", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Buffer<T> out(static_cast<std::size_t>(batch * m * n));
  for (std::int64_t i = 0; i < batch; ++i) {
    Map<T>(out.data() + i * m * n, m, n).noalias() =
        CMap<T>(a.data().data() + i * m * k, m, k) * CMap<T>(b.data().data() + i * k * n, k, n);
  }
  NodePtr<T> na = a.node(), nb = b.node();
  return make_result<T>({batch, m, n}, std::move(out), {na, nb}, [na, nb, batch, m, k, n](Node<T>& self) {
    if (na->requires_grad) na->ensure_grad();
    if (nb->requires_grad) nb->ensure_grad();
    for (std::int64_t i = 0; i < batch; ++i) {
      CMap<T> dc(self.grad.data() + i * m * n, m, n);
      if (na->requires_grad) {
        Map<T>(na->grad.data() + i * m * k, m, k).noalias() +=
            dc * CMap<T>(nb->value.data() + i * k * n, k, n).transpose();
      }
      if (nb->requires_grad) {
        Map<T>(nb->grad.data() + i * k * n, k, n).noalias() +=
            CMap<T>(na->value.data() + i * m * k, m, k).transpose() * dc;
      }
    }
  }, "bmm");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  Buffer<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  NodePtr<T> na = a.node(), nb = b.node();
  return make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](Node<T>& self) {
    accumulate<T>(*na, self.grad);
    accumulate<T>(*nb, self.grad);
  }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "sub");
  Buffer<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  NodePtr<T> na = a.node(), nb = b.node();
  return make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](Node<T>& self) {
    accumulate<T>(*na, self.grad);
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] -= self.grad[i];
    }
  }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  Buffer<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  NodePtr<T> na = a.node(), nb = b.node();
  return make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) na->grad[i] += self.grad[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) nb->grad[i] += self.grad[i] * na->value[i];
    }
  }, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  NodePtr<T> na = a.node();
  return make_result<T>(a.shape(), std::move(out), {na}, [na, factor](Node<T>& self) {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += factor * self.grad[i];
  }, "scale");
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const std::vector<T>& shift, const std::vector<T>& factor) {
  if (!x.defined() || x.ndim() < 1) throw ContractError("channel_affine: undefined input");
  const auto channels = x.dim(0);
  if (static_cast<std::int64_t>(shift.size()) != channels || static_cast<std::int64_t>(factor.size()) != channels) {
    dim_error("channel_affine", "expected " + std::to_string(channels) + " channel constants");
  }
  const auto inner = x.numel() / channels;
  Buffer<T> out(x.data().begin(), x.data().end());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < inner; ++i) {
      auto& v = out[static_cast<std::size_t>(c * inner + i)];
      v = (v - shift[static_cast<std::size_t>(c)]) * factor[static_cast<std::size_t>(c)];
    }
  }
  NodePtr<T> nx = x.node();
  return make_result<T>(x.shape(), std::move(out), {nx}, [nx, factor, channels, inner](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::int64_t c = 0; c < channels; ++c) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const auto idx = static_cast<std::size_t>(c * inner + i);
        nx->grad[idx] += self.grad[idx] * factor[static_cast<std::size_t>(c)];
      }
    }
  }, "channel_affine");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto d = a.data();
  const T total = std::accumulate(d.begin(), d.end(), T(0));
  NodePtr<T> na = a.node();
  return make_result<T>({1}, {total}, {na}, [na](Node<T>& self) {
    if (!na->requires_grad) return;
    na->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : na->grad) v += g;
  }, "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!x.defined() || x.ndim() < 1) throw ContractError("layer_norm: undefined input");
  const auto d = x.dim(-1);
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    dim_error("layer_norm", "affine parameters must have length " + std::to_string(d));
  }
  const auto rows = x.numel() / d;
  Buffer<T> out(static_cast<std::size_t>(rows * d));
  Buffer<T> xhat(out.size());
  Buffer<T> rstd(static_cast<std::size_t>(rows));
  const T* xs = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xs + r * d;
    T mu = 0;
    for (std::int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t i = 0; i < d; ++i) {
      const auto idx = static_cast<std::size_t>(r * d + i);
      xhat[idx] = (row[i] - mu) * rs;
      out[idx] = xhat[idx] * g[i] + b[i];
    }
  }
  NodePtr<T> nx = x.node(), ng = gamma.node(), nb = beta.node();
  return make_result<T>(x.shape(), std::move(out), {nx, ng, nb},
                        [nx, ng, nb, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    const T* dy = self.grad.data();
    if (ng->requires_grad) ng->ensure_grad();
    if (nb->requires_grad) nb->ensure_grad();
    if (nx->requires_grad) nx->ensure_grad();
    const T* g = ng->value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const auto base = static_cast<std::size_t>(r * d);
      T mean_dxhat = 0, mean_dxhat_xhat = 0;
      for (std::int64_t i = 0; i < d; ++i) {
        const auto idx = base + static_cast<std::size_t>(i);
        const T dxh = dy[idx] * g[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[idx];
        if (ng->requires_grad) ng->grad[static_cast<std::size_t>(i)] += dy[idx] * xhat[idx];
        if (nb->requires_grad) nb->grad[static_cast<std::size_t>(i)] += dy[idx];
      }
      if (!nx->requires_grad) continue;
      mean_dxhat /= static_cast<T>(d);
      mean_dxhat_xhat /= static_cast<T>(d);
      const T rs = rstd[static_cast<std::size_t>(r)];
      for (std::int64_t i = 0; i < d; ++i) {
        const auto idx = base + static_cast<std::size_t>(i);
        const T dxh = dy[idx] * g[i];
        nx->grad[idx] += rs * (dxh - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
      }
    }
  }, "layer_norm");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int a = norm_axis(axis, x.ndim(), "softmax");
  const auto s = split_at(x.shape(), a);
  Buffer<T> out(x.data().begin(), x.data().end());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      T* base = out.data() + o * s.extent * s.inner + in;
      T mx = base[0];
      for (std::int64_t e = 1; e < s.extent; ++e) mx = std::max(mx, base[e * s.inner]);
      T z = 0;
      for (std::int64_t e = 0; e < s.extent; ++e) {
        base[e * s.inner] = std::exp(base[e * s.inner] - mx);
        z += base[e * s.inner];
      }
      for (std::int64_t e = 0; e < s.extent; ++e) base[e * s.inner] /= z;
    }
  }
  NodePtr<T> nx = x.node();
  return make_result<T>(x.shape(), std::move(out), {nx}, [nx, s](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t in = 0; in < s.inner; ++in) {
        const auto off = o * s.extent * s.inner + in;
        const T* y = self.value.data() + off;
        const T* dy = self.grad.data() + off;
        T dot = 0;
        for (std::int64_t e = 0; e < s.extent; ++e) dot += y[e * s.inner] * dy[e * s.inner];
        T* dx = nx->grad.data() + off;
        for (std::int64_t e = 0; e < s.extent; ++e) dx[e * s.inner] += y[e * s.inner] * (dy[e * s.inner] - dot);
      }
    }
  }, "softmax");
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  NodePtr<T> nx = x.node();
  return make_result<T>(x.shape(), std::move(out), {nx}, [nx](Node<T>& self) {
    if (!nx->requires_grad) return;
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    nx->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = nx->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      nx->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  }, "gelu");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const int a = norm_axis(axis, parts[0].ndim(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(a)] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != parts[0].ndim()) dim_error("concat", "rank mismatch");
    for (int i = 0; i < p.ndim(); ++i) {
      if (i != a && p.shape()[static_cast<std::size_t>(i)] != parts[0].shape()[static_cast<std::size_t>(i)]) {
        dim_error("concat", shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[static_cast<std::size_t>(a)] += p.dim(a);
  }
  const auto s = split_at(out_shape, a);
  Buffer<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<std::int64_t> chunk;  // contiguous elements each part owns per outer index
  std::vector<NodePtr<T>> inputs;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const auto len = p.dim(a) * s.inner;
    const T* src = p.data().data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(src + o * len, len, out.data() + o * s.extent * s.inner + offset);
    }
    chunk.push_back(len);
    offset += len;
    inputs.push_back(p.node());
  }
  auto nodes = inputs;
  return make_result<T>(std::move(out_shape), std::move(out), std::move(inputs),
                        [nodes, chunk, s](Node<T>& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto len = chunk[k];
      if (nodes[k]->requires_grad) {
        nodes[k]->ensure_grad();
        for (std::int64_t o = 0; o < s.outer; ++o) {
          const T* g = self.grad.data() + o * s.extent * s.inner + off;
          T* dst = nodes[k]->grad.data() + o * len;
          for (std::int64_t i = 0; i < len; ++i) dst[i] += g[i];
        }
      }
      off += len;
    }
  }, "concat");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    dim_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  for (auto d : shape) {
    if (d <= 0) dim_error("reshape", "non-positive dimension in " + shape_str(shape));
  }
  NodePtr<T> nx = x.node();
  return make_result<T>(std::move(shape), Buffer<T>(x.data().begin(), x.data().end()), {nx},
                        [nx](Node<T>& self) { accumulate<T>(*nx, self.grad); }, "reshape");
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& dims) {
  const int n = x.ndim();
  if (static_cast<int>(dims.size()) != n) dim_error("permute", "expected " + std::to_string(n) + " axes");
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int d : dims) {
    if (d < 0 || d >= n || used[static_cast<std::size_t>(d)]) dim_error("permute", "invalid axis order");
    used[static_cast<std::size_t>(d)] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(n), 1);
  for (int i = n - 2; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(i + 1)] * in_shape[static_cast<std::size_t>(i + 1)];
  }
  Shape out_shape(static_cast<std::size_t>(n));
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
    src_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
  }
  // gather[i] = source index of output element i
  const auto total = x.numel();
  std::vector<std::int64_t> gather(static_cast<std::size_t>(total));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    gather[static_cast<std::size_t>(i)] = src;
    for (int ax = n - 1; ax >= 0; --ax) {
      auto& c = idx[static_cast<std::size_t>(ax)];
      ++c;
      src += src_stride[static_cast<std::size_t>(ax)];
      if (c < out_shape[static_cast<std::size_t>(ax)]) break;
      src -= c * src_stride[static_cast<std::size_t>(ax)];
      c = 0;
    }
  }
  Buffer<T> out(static_cast<std::size_t>(total));
  const T* xs = x.data().data();
  for (std::int64_t i = 0; i < total; ++i) out[static_cast<std::size_t>(i)] = xs[gather[static_cast<std::size_t>(i)]];
  NodePtr<T> nx = x.node();
  return make_result<T>(std::move(out_shape), std::move(out), {nx}, [nx, gather = std::move(gather)](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t i = 0; i < gather.size(); ++i) nx->grad[static_cast<std::size_t>(gather[i])] += self.grad[i];
  }, "permute");
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = norm_axis(axis, x.ndim(), "narrow");
  const auto s = split_at(x.shape(), a);
  if (start < 0 || length <= 0 || start + length > s.extent) {
    dim_error("narrow", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") outside axis of extent " + std::to_string(s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  const auto len = length * s.inner;
  Buffer<T> out(static_cast<std::size_t>(s.outer * len));
  const T* xs = x.data().data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xs + o * s.extent * s.inner + start * s.inner, len, out.data() + o * len);
  }
  NodePtr<T> nx = x.node();
  return make_result<T>(std::move(out_shape), std::move(out), {nx}, [nx, s, start, len](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      T* dst = nx->grad.data() + o * s.extent * s.inner + start * s.inner;
      const T* g = self.grad.data() + o * len;
      for (std::int64_t i = 0; i < len; ++i) dst[i] += g[i];
    }
  }, "narrow");
}

namespace {

struct LerpTap {
  std::int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LerpTap> half_pixel_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 3, "bilinear_resize");
  if (out_h < 1 || out_w < 1) dim_error("bilinear_resize", "target size must be at least 1x1");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) {
    NodePtr<T> nx = x.node();
    return make_result<T>(x.shape(), Buffer<T>(x.data().begin(), x.data().end()), {nx},
                          [nx](Node<T>& self) { accumulate<T>(*nx, self.grad); }, "bilinear_resize");
  }
  auto ty = half_pixel_taps(h, out_h);
  auto tx = half_pixel_taps(w, out_w);
  Buffer<T> out(static_cast<std::size_t>(c * out_h * out_w));
  const T* xs = x.data().data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T* plane = xs + ch * h * w;
    T* dst = out.data() + ch * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& yt = ty[static_cast<std::size_t>(oy)];
      const T wy1 = static_cast<T>(yt.w1), wy0 = T(1) - wy1;
      const T* r0 = plane + yt.i0 * w;
      const T* r1 = plane + yt.i1 * w;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& xt = tx[static_cast<std::size_t>(ox)];
        const T wx1 = static_cast<T>(xt.w1), wx0 = T(1) - wx1;
        dst[oy * out_w + ox] = wy0 * (wx0 * r0[xt.i0] + wx1 * r0[xt.i1]) + wy1 * (wx0 * r1[xt.i0] + wx1 * r1[xt.i1]);
      }
    }
  }
  NodePtr<T> nx = x.node();
  return make_result<T>({c, out_h, out_w}, std::move(out), {nx},
                        [nx, c, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* plane = nx->grad.data() + ch * h * w;
      const T* g = self.grad.data() + ch * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const auto& yt = ty[static_cast<std::size_t>(oy)];
        const T wy1 = static_cast<T>(yt.w1), wy0 = T(1) - wy1;
        T* r0 = plane + yt.i0 * w;
        T* r1 = plane + yt.i1 * w;
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const auto& xt = tx[static_cast<std::size_t>(ox)];
          const T wx1 = static_cast<T>(xt.w1), wx0 = T(1) - wx1;
          const T gv = g[oy * out_w + ox];
          r0[xt.i0] += gv * wy0 * wx0;
          r0[xt.i1] += gv * wy0 * wx1;
          r1[xt.i0] += gv * wy1 * wx0;
          r1[xt.i1] += gv * wy1 * wx1;
        }
      }
    }
  }, "bilinear_resize");
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 3, "adaptive_avg_pool2d");
  if (out_h < 1 || out_w < 1) dim_error("adaptive_avg_pool2d", "target size must be at least 1x1");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto bins = [](std::int64_t in, std::int64_t out) {
    std::vector<std::pair<std::int64_t, std::int64_t>> b(static_cast<std::size_t>(out));
    for (std::int64_t o = 0; o < out; ++o) {
      b[static_cast<std::size_t>(o)] = {(o * in) / out, ((o + 1) * in + out - 1) / out};
    }
    return b;
  };
  auto by = bins(h, out_h);
  auto bx = bins(w, out_w);
  Buffer<T> out(static_cast<std::size_t>(c * out_h * out_w));
  const T* xs = x.data().data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto [y0, y1] = by[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto [x0, x1] = bx[static_cast<std::size_t>(ox)];
        T acc = 0;
        for (auto yy = y0; yy < y1; ++yy) {
          for (auto xx = x0; xx < x1; ++xx) acc += xs[(ch * h + yy) * w + xx];
        }
        out[static_cast<std::size_t>((ch * out_h + oy) * out_w + ox)] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  NodePtr<T> nx = x.node();
  return make_result<T>({c, out_h, out_w}, std::move(out), {nx},
                        [nx, c, h, w, out_h, out_w, by = std::move(by), bx = std::move(bx)](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const auto [y0, y1] = by[static_cast<std::size_t>(oy)];
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const auto [x0, x1] = bx[static_cast<std::size_t>(ox)];
          const T g = self.grad[static_cast<std::size_t>((ch * out_h + oy) * out_w + ox)] /
                      static_cast<T>((y1 - y0) * (x1 - x0));
          for (auto yy = y0; yy < y1; ++yy) {
            for (auto xx = x0; xx < x1; ++xx) nx->grad[static_cast<std::size_t>((ch * h + yy) * w + xx)] += g;
          }
        }
      }
    }
  }, "adaptive_avg_pool2d");
}

namespace {

// Source index of every (channel, ky, kx, pixel) column entry, or -1 for a
// zero-padded tap.
std::vector<std::int64_t> im2col_index(std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
                                       Padding padding) {
  const std::int64_t pad = k / 2;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(cin * k * k * h * w));
  std::size_t pos = 0;
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        for (std::int64_t y = 0; y < h; ++y) {
          std::int64_t sy = y + ky - pad;
          const bool out_y = sy < 0 || sy >= h;
          sy = std::clamp<std::int64_t>(sy, 0, h - 1);
          for (std::int64_t x = 0; x < w; ++x) {
            std::int64_t sx = x + kx - pad;
            const bool out_x = sx < 0 || sx >= w;
            sx = std::clamp<std::int64_t>(sx, 0, w - 1);
            idx[pos++] = (padding == Padding::zeros && (out_x || out_y)) ? -1 : (c * h + sy) * w + sx;
          }
        }
      }
    }
  }
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Padding padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const auto cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k || k % 2 == 0) {
    dim_error("conv2d", "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != cout)) dim_error("conv2d", "bias shape " + shape_str(bias.shape()));
  const auto hw = h * w;
  const auto kk = cin * k * k;

  Buffer<T> cols;
  std::vector<std::int64_t> index;
  const T* col_ptr = x.data().data();
  if (k > 1) {
    index = im2col_index(cin, h, w, k, padding);
    cols.resize(index.size());
    const T* xs = x.data().data();
    for (std::size_t i = 0; i < index.size(); ++i) cols[i] = index[i] < 0 ? T(0) : xs[index[i]];
    col_ptr = cols.data();
  }
  Buffer<T> out(static_cast<std::size_t>(cout * hw));
  Map<T> y(out.data(), cout, hw);
  y.noalias() = CMap<T>(weight.data().data(), cout, kk) * CMap<T>(col_ptr, kk, hw);
  if (has_bias) y.colwise() += CVecMap<T>(bias.data().data(), cout);

  NodePtr<T> nx = x.node(), nw = weight.node(), nb = has_bias ? bias.node() : nullptr;
  std::vector<NodePtr<T>> inputs{nx, nw};
  if (nb) inputs.push_back(nb);
  return make_result<T>({cout, h, w}, std::move(out), std::move(inputs),
                        [nx, nw, nb, cout, hw, kk, k, cols = std::move(cols), index = std::move(index)](Node<T>& self) {
    CMap<T> dy(self.grad.data(), cout, hw);
    const T* cp = k > 1 ? cols.data() : nx->value.data();
    if (nw->requires_grad) {
      nw->ensure_grad();
      Map<T>(nw->grad.data(), cout, kk).noalias() += dy * CMap<T>(cp, kk, hw).transpose();
    }
    if (nb && nb->requires_grad) {
      nb->ensure_grad();
      VecMap<T>(nb->grad.data(), cout) += dy.rowwise().sum();
    }
    if (nx->requires_grad) {
      nx->ensure_grad();
      if (k == 1) {
        Map<T>(nx->grad.data(), kk, hw).noalias() += CMap<T>(nw->value.data(), cout, kk).transpose() * dy;
      } else {
        MatR<T> dcols = CMap<T>(nw->value.data(), cout, kk).transpose() * dy;
        const T* dc = dcols.data();
        for (std::size_t i = 0; i < index.size(); ++i) {
          if (index[i] >= 0) nx->grad[static_cast<std::size_t>(index[i])] += dc[i];
        }
      }
    }
  }, "conv2d");
}

template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 3, "conv_transpose2x2");
  require_rank(weight, 4, "conv_transpose2x2");
  const auto cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto cout = weight.dim(1);
  if (weight.dim(0) != cin || weight.dim(2) != 2 || weight.dim(3) != 2) {
    dim_error("conv_transpose2x2", "weight " + shape_str(weight.shape()) + " incompatible with " + shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != cout)) {
    dim_error("conv_transpose2x2", "bias shape " + shape_str(bias.shape()));
  }
  const auto hw = h * w, oh = 2 * h, ow = 2 * w;
  // taps [(cout*4) x hw]: row (co, a, b) holds the contribution to output (2i+a, 2j+b).
  MatR<T> taps = CMap<T>(weight.data().data(), cin, cout * 4).transpose() * CMap<T>(x.data().data(), cin, hw);
  Buffer<T> out(static_cast<std::size_t>(cout * oh * ow));
  const T* bs = has_bias ? bias.data().data() : nullptr;
  for (std::int64_t co = 0; co < cout; ++co) {
    const T b = bs ? bs[co] : T(0);
    for (std::int64_t a = 0; a < 2; ++a) {
      for (std::int64_t bb = 0; bb < 2; ++bb) {
        const T* src = taps.data() + (co * 4 + a * 2 + bb) * hw;
        for (std::int64_t i = 0; i < h; ++i) {
          T* dst = out.data() + (co * oh + 2 * i + a) * ow + bb;
          for (std::int64_t j = 0; j < w; ++j) dst[2 * j] = src[i * w + j] + b;
        }
      }
    }
  }
  NodePtr<T> nx = x.node(), nw = weight.node(), nb = has_bias ? bias.node() : nullptr;
  std::vector<NodePtr<T>> inputs{nx, nw};
  if (nb) inputs.push_back(nb);
  return make_result<T>({cout, oh, ow}, std::move(out), std::move(inputs),
                        [nx, nw, nb, cin, cout, h, w, hw, oh, ow](Node<T>& self) {
    MatR<T> dtaps(cout * 4, hw);
    for (std::int64_t co = 0; co < cout; ++co) {
      for (std::int64_t a = 0; a < 2; ++a) {
        for (std::int64_t bb = 0; bb < 2; ++bb) {
          T* dst = dtaps.data() + (co * 4 + a * 2 + bb) * hw;
          for (std::int64_t i = 0; i < h; ++i) {
            const T* g = self.grad.data() + (co * oh + 2 * i + a) * ow + bb;
            for (std::int64_t j = 0; j < w; ++j) dst[i * w + j] = g[2 * j];
          }
        }
      }
    }
    if (nx->requires_grad) {
      nx->ensure_grad();
      Map<T>(nx->grad.data(), cin, hw).noalias() += CMap<T>(nw->value.data(), cin, cout * 4) * dtaps;
    }
    if (nw->requires_grad) {
      nw->ensure_grad();
      Map<T>(nw->grad.data(), cin, cout * 4).noalias() += CMap<T>(nx->value.data(), cin, hw) * dtaps.transpose();
    }
    if (nb && nb->requires_grad) {
      nb->ensure_grad();
      for (std::int64_t co = 0; co < cout; ++co) {
        nb->grad[static_cast<std::size_t>(co)] += dtaps.middleRows(co * 4, 4).sum();
      }
    }
  }, "conv_transpose2x2");
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::int64_t patch) {
  require_rank(x, 3, "patchify");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    dim_error("patchify", "patch size " + std::to_string(patch) + " does not divide " + shape_str(x.shape()));
  }
  const auto gh = h / patch, gw = w / patch, n = gh * gw, width = c * patch * patch;
  std::vector<std::int64_t> gather(static_cast<std::size_t>(n * width));
  std::size_t pos = 0;
  for (std::int64_t py = 0; py < gh; ++py) {
    for (std::int64_t px = 0; px < gw; ++px) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t dy = 0; dy < patch; ++dy) {
          for (std::int64_t dx = 0; dx < patch; ++dx) {
            gather[pos++] = (ch * h + py * patch + dy) * w + px * patch + dx;
          }
        }
      }
    }
  }
  Buffer<T> out(gather.size());
  const T* xs = x.data().data();
  for (std::size_t i = 0; i < gather.size(); ++i) out[i] = xs[gather[i]];
  NodePtr<T> nx = x.node();
  return make_result<T>({n, width}, std::move(out), {nx}, [nx, gather = std::move(gather)](Node<T>& self) {
    if (!nx->requires_grad) return;
    nx->ensure_grad();
    for (std::size_t i = 0; i < gather.size(); ++i) nx->grad[static_cast<std::size_t>(gather[i])] += self.grad[i];
  }, "patchify");
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, std::int64_t patch, const Tensor<T>& proj) {
  return matmul(patchify(x, patch), proj);
}

#define BURNLORA_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                     \
  template Tensor<T> channel_affine(const Tensor<T>&, const std::vector<T>&, const std::vector<T>&); \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);            \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                             \
  template Tensor<T> narrow(const Tensor<T>&, int, std::int64_t, std::int64_t);                      \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::int64_t, std::int64_t);                  \
  template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, std::int64_t, std::int64_t);              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Padding);          \
  template Tensor<T> conv_transpose2x2(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> patchify(const Tensor<T>&, std::int64_t);                                       \
  template Tensor<T> patch_embed(const Tensor<T>&, std::int64_t, const Tensor<T>&);

BURNLORA_INSTANTIATE_OPS(float)
BURNLORA_INSTANTIATE_OPS(double)

#undef BURNLORA_INSTANTIATE_OPS

}  // namespace burnlora::diffcore
