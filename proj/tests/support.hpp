// Shared fixtures and brute-force oracles for the test suites.
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "burnlora/diffcore/rng.hpp"
#include "burnlora/diffcore/tensor.hpp"
#include "burnlora/engine/model.hpp"

namespace testing {

using burnlora::diffcore::Rng;
using burnlora::diffcore::Shape;
using burnlora::diffcore::Tensor;

template <typename T = double>
inline Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<T> v(static_cast<std::size_t>(burnlora::diffcore::numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v), grad);
}

/// Small network used wherever a full assembly is needed quickly.
inline burnlora::engine::ModelConfig tiny_model(std::int64_t img = 16, std::int64_t patch = 4, std::int64_t d = 16,
                                                std::int64_t depth = 2) {
  burnlora::engine::ModelConfig c;
  c.vit.img_size = img;
  c.vit.patch = patch;
  c.vit.d_model = d;
  c.vit.depth = depth;
  c.vit.heads = 2;
  c.vit.selected_layers = burnlora::backbone::VitConfig::default_layers(depth);
  c.head.neck_channels = 8;
  c.head.decoder_channels = 8;
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("burnlora_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Direct-sum 2D convolution with explicit padding rule.
inline std::vector<double> conv2d_oracle(const std::vector<double>& x, std::int64_t cin, std::int64_t h, std::int64_t w,
                                         const std::vector<double>& wt, std::int64_t cout, std::int64_t k,
                                         const std::vector<double>& bias, bool replicate) {
  std::vector<double> out(static_cast<std::size_t>(cout * h * w), 0.0);
  const std::int64_t pad = k / 2;
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) {
        double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < cin; ++i)
          for (std::int64_t u = 0; u < k; ++u)
            for (std::int64_t v = 0; v < k; ++v) {
              std::int64_t rr = r + u - pad, cc = c + v - pad;
              if (replicate) {
                rr = std::clamp<std::int64_t>(rr, 0, h - 1);
                cc = std::clamp<std::int64_t>(cc, 0, w - 1);
              } else if (rr < 0 || rr >= h || cc < 0 || cc >= w) {
                continue;
              }
              s += x[static_cast<std::size_t>((i * h + rr) * w + cc)] *
                   wt[static_cast<std::size_t>(((o * cin + i) * k + u) * k + v)];
            }
        out[static_cast<std::size_t>((o * h + r) * w + c)] = s;
      }
  return out;
}

/// Half-pixel bilinear sample of one channel, evaluated pointwise.
inline double bilinear_oracle(const std::vector<double>& img, std::int64_t h, std::int64_t w, std::int64_t oh,
                              std::int64_t ow, std::int64_t r, std::int64_t c) {
  auto src = [](std::int64_t dst, std::int64_t in, std::int64_t out) {
    return std::max(0.0, (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5);
  };
  const double y = src(r, h, oh), x = src(c, w, ow);
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(y)), h - 1);
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(x)), w - 1);
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::int64_t a, std::int64_t b) { return img[static_cast<std::size_t>(a * w + b)]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace testing
