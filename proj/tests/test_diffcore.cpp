#include <doctest.h>

#include <cmath>
#include <numeric>

#include "burnlora/diffcore/gradcheck.hpp"
#include "burnlora/diffcore/ops.hpp"
#include "burnlora/errors.hpp"
#include "support.hpp"

using namespace burnlora;
using namespace burnlora::diffcore;
using testing::random_tensor;

namespace {

using TD = Tensor<double>;

void check_close(std::span<const double> got, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

// Random projection to a scalar so every output coordinate gets a distinct weight.
TD project(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor(rng, y.shape(), -1, 1, false);
  return sum(mul(y, w));
}

double gc(const std::function<TD()>& f, std::vector<TD> inputs) {
  const auto report = grad_check(f, std::move(inputs));
  INFO(report.worst);
  return report.max_rel_error;
}

}  // namespace

TEST_CASE("matmul examples") {
  auto m = TD::from({2, 2}, {3, -1, 4, 2});
  auto eye = TD::from({2, 2}, {1, 0, 0, 1});
  check_close(matmul(eye, m).data(), {3, -1, 4, 2});
  auto a = TD::from({2, 2}, {1, 2, 3, 4});
  auto b = TD::from({2, 1}, {5, 6});
  check_close(matmul(a, b).data(), {17, 39});
  CHECK_THROWS_AS(matmul(a, TD::from({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("gradient of sum(A B) wrt A is ones * B^T") {
  Rng rng(3);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {4, 2}, -1, 1, false);
  sum(matmul(a, b)).backward();
  const auto g = a.grad();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      const double want = b.data()[static_cast<std::size_t>(k * 2)] + b.data()[static_cast<std::size_t>(k * 2 + 1)];
      CHECK(g[static_cast<std::size_t>(i * 4 + k)] == doctest::Approx(want).epsilon(1e-14));
    }
  CHECK(gc([&] { return sum(matmul(a, b)); }, {a}) < 1e-6);
}

TEST_CASE("layer_norm examples") {
  auto ones = TD::full({2}, 1.0), zeros = TD::zeros({2});
  check_close(layer_norm(TD::full({1, 4}, 7.0), TD::full({4}, 1.0), TD::zeros({4}), 1e-6).data(), {0, 0, 0, 0});
  check_close(layer_norm(TD::from({1, 2}, {1, 3}), ones, zeros, 0.0).data(), {-1, 1});
  Rng rng(5);
  auto x = random_tensor(rng, {3, 5});
  auto g = random_tensor(rng, {5});
  auto b = random_tensor(rng, {5});
  CHECK(gc([&] { return project(layer_norm(x, g, b, 1e-5), 1); }, {x, g, b}) < 1e-5);
  CHECK_THROWS_AS(layer_norm(x, TD::full({4}, 1.0), TD::zeros({4}), 1e-5), DimensionError);
}

TEST_CASE("softmax, gelu and concat examples") {
  check_close(softmax(TD::from({2}, {0, 0}), 0).data(), {0.5, 0.5});
  check_close(gelu(TD::from({1}, {0.0})).data(), {0.0});
  CHECK(gelu(TD::from({1}, {1.0})).item() == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))));
  auto a = TD::from({1, 2, 2}, {1, 2, 3, 4});
  auto b = TD::from({1, 2, 2}, {5, 6, 7, 8});
  auto c = concat<double>({a, b}, 0);
  CHECK(c.shape() == Shape{2, 2, 2});
  check_close(c.data(), {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK_THROWS_AS(softmax(a, 3), DimensionError);
  CHECK_THROWS_AS(concat<double>({a, b}, -4), DimensionError);
}

TEST_CASE("softmax rows sum to one on any axis") {
  Rng rng(9);
  auto x = random_tensor(rng, {3, 4, 5}, -10, 10, false);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    std::vector<double> totals(static_cast<std::size_t>(60 / x.dim(axis)), 0.0);
    // sum along axis by brute force over the index space
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t k = 0; k < 5; ++k) {
          std::int64_t idx[3] = {i, j, k};
          std::int64_t key = 0;
          for (int d = 0; d < 3; ++d)
            if (d != axis) key = key * x.dim(d) + idx[d];
          totals[static_cast<std::size_t>(key)] += s.data()[static_cast<std::size_t>((i * 4 + j) * 5 + k)];
        }
    for (double t : totals) CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bilinear_resize examples") {
  check_close(bilinear_resize(TD::from({1, 1, 2}, {0, 2}), 1, 4).data(), {0, 0.5, 1.5, 2});
  check_close(bilinear_resize(TD::from({1, 1, 1}, {5}), 2, 2).data(), {5, 5, 5, 5});
  auto k = bilinear_resize(TD::full({2, 3, 5}, 0.25), 7, 2);
  for (double v : k.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(bilinear_resize(TD::full({1, 2, 2}, 1.0), 0, 3), DimensionError);
}

TEST_CASE("bilinear_resize matches the pointwise half-pixel oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const auto oh = rng.uniform_int(1, 13), ow = rng.uniform_int(1, 13);
    auto x = random_tensor(rng, {1, h, w}, -1, 1, false);
    auto y = bilinear_resize(x, oh, ow);
    std::vector<double> img(x.data().begin(), x.data().end());
    for (std::int64_t r = 0; r < oh; ++r)
      for (std::int64_t c = 0; c < ow; ++c)
        CHECK(y.data()[static_cast<std::size_t>(r * ow + c)] ==
              doctest::Approx(testing::bilinear_oracle(img, h, w, oh, ow, r, c)).epsilon(1e-12));
  }
}

TEST_CASE("patch_embed examples") {
  Rng rng(13);
  auto x = random_tensor(rng, {3, 4, 4}, -1, 1, false);
  CHECK(patch_embed(x, 4, random_tensor(rng, {48, 5}, -1, 1, false)).shape() == Shape{1, 5});
  // p = 1 with identity projection returns the per-pixel channel vectors
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto tok = patch_embed(x, 1, TD::from({3, 3}, eye));
  REQUIRE(tok.shape() == Shape{16, 3});
  for (std::int64_t n = 0; n < 16; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      CHECK(tok.data()[static_cast<std::size_t>(n * 3 + c)] == x.data()[static_cast<std::size_t>(c * 16 + n)]);
  auto big = TD::zeros({3, 128, 128});
  CHECK(patch_embed(big, 16, TD::zeros({768, 8})).dim(0) == 64);
  CHECK_THROWS_AS(patch_embed(TD::zeros({3, 10, 16}), 4, TD::zeros({48, 2})), DimensionError);
}

TEST_CASE("patchify orders patches row-major and flattens (channel, row, col)") {
  std::vector<double> v(2 * 4 * 4);
  std::iota(v.begin(), v.end(), 0.0);
  auto p = patchify(TD::from({2, 4, 4}, v), 2);
  REQUIRE(p.shape() == Shape{4, 8});
  // patch 1 is rows 0-1, cols 2-3
  check_close(narrow(p, 0, 1, 1).data(), {2, 3, 6, 7, 18, 19, 22, 23});
}

TEST_CASE("conv2d matches the direct-sum oracle for both padding rules") {
  Rng rng(17);
  for (int k : {1, 3, 5}) {
    for (bool replicate : {false, true}) {
      const std::int64_t cin = 2, cout = 3, h = 5, w = 4;
      auto x = random_tensor(rng, {cin, h, w}, -1, 1, false);
      auto wt = random_tensor(rng, {cout, cin, k, k}, -1, 1, false);
      auto b = random_tensor(rng, {cout}, -1, 1, false);
      auto y = conv2d(x, wt, b, replicate ? Padding::replicate : Padding::zeros);
      const auto want = testing::conv2d_oracle({x.data().begin(), x.data().end()}, cin, h, w,
                                               {wt.data().begin(), wt.data().end()}, cout, k,
                                               {b.data().begin(), b.data().end()}, replicate);
      check_close(y.data(), want, 1e-12);
    }
  }
  CHECK_THROWS_AS(conv2d(TD::zeros({2, 3, 3}), TD::zeros({1, 2, 2, 2})), DimensionError);
  CHECK_THROWS_AS(conv2d(TD::zeros({2, 3, 3}), TD::zeros({1, 3, 3, 3})), DimensionError);
}

TEST_CASE("replicate-padded conv of a constant image is constant") {
  Rng rng(19);
  auto wt = random_tensor(rng, {2, 1, 3, 3}, -1, 1, false);
  auto y = conv2d(TD::full({1, 4, 4}, 2.0), wt);
  for (std::int64_t o = 0; o < 2; ++o)
    for (std::int64_t i = 1; i < 16; ++i)
      CHECK(y.data()[static_cast<std::size_t>(o * 16 + i)] == doctest::Approx(y.data()[static_cast<std::size_t>(o * 16)]));
}

TEST_CASE("conv_transpose2x2 scatters each input pixel into a 2x2 block") {
  Rng rng(23);
  const std::int64_t cin = 2, cout = 3, h = 2, w = 3;
  auto x = random_tensor(rng, {cin, h, w}, -1, 1, false);
  auto wt = random_tensor(rng, {cin, cout, 2, 2}, -1, 1, false);
  auto b = random_tensor(rng, {cout}, -1, 1, false);
  auto y = conv_transpose2x2(x, wt, b);
  REQUIRE(y.shape() == Shape{cout, 2 * h, 2 * w});
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t r = 0; r < 2 * h; ++r)
      for (std::int64_t c = 0; c < 2 * w; ++c) {
        double s = b.data()[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < cin; ++i)
          s += x.data()[static_cast<std::size_t>((i * h + r / 2) * w + c / 2)] *
               wt.data()[static_cast<std::size_t>(((i * cout + o) * 2 + r % 2) * 2 + c % 2)];
        CHECK(y.data()[static_cast<std::size_t>((o * 2 * h + r) * 2 * w + c)] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("adaptive_avg_pool2d uses floor/ceil bins") {
  std::vector<double> v(5);
  std::iota(v.begin(), v.end(), 0.0);
  // bins over 5 -> 3: [0,2) [1,4) [3,5)
  check_close(adaptive_avg_pool2d(TD::from({1, 1, 5}, v), 1, 3).data(), {0.5, 2.0, 3.5});
  // upsampling: 2 -> 3 bins [0,1) [0,2) [1,2)
  check_close(adaptive_avg_pool2d(TD::from({1, 1, 2}, {4, 8}), 1, 3).data(), {4, 6, 8});
  check_close(adaptive_avg_pool2d(TD::from({1, 2, 2}, {1, 2, 3, 4}), 1, 1).data(), {2.5});
}

TEST_CASE("reshape, permute and narrow move data as documented") {
  std::vector<double> v(24);
  std::iota(v.begin(), v.end(), 0.0);
  auto x = TD::from({2, 3, 4}, v);
  auto p = permute(x, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 3; ++j)
      for (std::int64_t k = 0; k < 4; ++k)
        CHECK(p.data()[static_cast<std::size_t>((k * 2 + i) * 3 + j)] == v[static_cast<std::size_t>((i * 3 + j) * 4 + k)]);
  check_close(narrow(x, 2, 1, 2).data(), {1, 2, 5, 6, 9, 10, 13, 14, 17, 18, 21, 22});
  CHECK(reshape(x, {6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
  CHECK_THROWS_AS(narrow(x, 1, 2, 2), DimensionError);
  CHECK_THROWS_AS(permute(x, {0, 0, 1}), DimensionError);
}

TEST_CASE("every op passes a finite-difference check on random shapes") {
  Rng rng(29);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = rng.uniform_int(1, 4), k = rng.uniform_int(1, 4), n = rng.uniform_int(1, 4);
    const auto c = rng.uniform_int(1, 3), h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
    auto a = random_tensor(rng, {m, k});
    auto b = random_tensor(rng, {k, n});
    auto a2 = random_tensor(rng, {m, k});
    auto wl = random_tensor(rng, {n, k});
    auto bl = random_tensor(rng, {n});
    auto ba = random_tensor(rng, {2, m, k});
    auto bb = random_tensor(rng, {2, k, n});
    auto img = random_tensor(rng, {c, h, w});
    auto img2 = random_tensor(rng, {c, h, w});
    auto w3 = random_tensor(rng, {2, c, 3, 3});
    auto w1 = random_tensor(rng, {2, c, 1, 1});
    auto cb = random_tensor(rng, {2});
    auto wt = random_tensor(rng, {c, 2, 2, 2});
    auto proj = random_tensor(rng, {c * 4, 3});
    auto even = random_tensor(rng, {c, 4, 6});
    auto g = random_tensor(rng, {k});
    auto be = random_tensor(rng, {k});

    CHECK(gc([&] { return project(matmul(a, b), 1); }, {a, b}) < 1e-4);
    CHECK(gc([&] { return project(linear(a, wl, bl), 2); }, {a, wl, bl}) < 1e-4);
    CHECK(gc([&] { return project(bmm(ba, bb), 3); }, {ba, bb}) < 1e-4);
    CHECK(gc([&] { return project(add(a, a2), 4); }, {a, a2}) < 1e-4);
    CHECK(gc([&] { return project(sub(a, a2), 5); }, {a, a2}) < 1e-4);
    CHECK(gc([&] { return project(mul(a, a2), 6); }, {a, a2}) < 1e-4);
    CHECK(gc([&] { return project(scale(a, 2.5), 7); }, {a}) < 1e-4);
    CHECK(gc([&] { return mean(mul(a, a)); }, {a}) < 1e-4);
    CHECK(gc([&] {
      return project(channel_affine(img, std::vector<double>(static_cast<std::size_t>(c), 0.3),
                                    std::vector<double>(static_cast<std::size_t>(c), 1.7)), 8);
    }, {img}) < 1e-4);
    CHECK(gc([&] { return project(layer_norm(a, g, be, 1e-6), 9); }, {a, g, be}) < 1e-4);
    for (int axis = 0; axis < 3; ++axis) CHECK(gc([&] { return project(softmax(img, axis), 10); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(gelu(scale(img, 3.0)), 11); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(concat<double>({img, img2}, 0), 12); }, {img, img2}) < 1e-4);
    CHECK(gc([&] { return project(concat<double>({img, img2}, 2), 13); }, {img, img2}) < 1e-4);
    CHECK(gc([&] { return project(reshape(img, {c * h, w}), 14); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(permute(img, {1, 2, 0}), 15); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(narrow(img, 1, 1, h - 1), 16); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(bilinear_resize(img, 2 * h + 1, w + 2), 17); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(bilinear_resize(img, 1, 2), 18); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(adaptive_avg_pool2d(img, 3, 2), 19); }, {img}) < 1e-4);
    CHECK(gc([&] { return project(conv2d(img, w3, cb, Padding::replicate), 20); }, {img, w3, cb}) < 1e-4);
    CHECK(gc([&] { return project(conv2d(img, w3, cb, Padding::zeros), 21); }, {img, w3, cb}) < 1e-4);
    CHECK(gc([&] { return project(conv2d(img, w1, cb), 22); }, {img, w1, cb}) < 1e-4);
    CHECK(gc([&] { return project(conv_transpose2x2(img, wt, cb), 23); }, {img, wt, cb}) < 1e-4);
    CHECK(gc([&] { return project(patch_embed(even, 2, proj), 24); }, {even, proj}) < 1e-4);
  }
}

TEST_CASE("grad_check examples") {
  auto x = TD::from({2}, {1, 2}, true);
  const auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
  CHECK(r.max_rel_error < 1e-8);
  sum(mul(x, x)).backward();
  check_close(x.grad(), {2, 4});
  Rng rng(31);
  auto y = random_tensor(rng, {4, 3});
  CHECK(grad_check([&] { return project(y, 5); }, {y}).max_rel_error < 1e-9);
  CHECK_THROWS_AS(grad_check([&] { return mul(x, x); }, {x}), ContractError);
}

TEST_CASE("backward contract") {
  auto x = TD::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
  CHECK_THROWS_AS(sum(TD::from({2}, {1, 2})).backward(), ContractError);
  // shared subexpression: d/dx sum((x + x) * x) = 4x
  auto s = add(x, x);
  sum(mul(s, x)).backward();
  check_close(x.grad(), {4, 8});
}

TEST_CASE("ops reject non-finite results") {
  CHECK_THROWS_AS(mul(TD::from({1}, {1e200}), TD::from({1}, {1e200})), NumericError);
}

TEST_CASE("forward and backward stay finite on inputs in [-10, 10]") {
  Rng rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor(rng, {2, 6, 6}, -10, 10);
    auto w = random_tensor(rng, {3, 2, 3, 3}, -10, 10);
    auto g = random_tensor(rng, {6}, -10, 10);
    auto b = random_tensor(rng, {6}, -10, 10);
    auto y = softmax(gelu(conv2d(x, w)), 0);
    auto z = layer_norm(bilinear_resize(y, 5, 6), g, b, 1e-6);
    auto loss = mean(mul(z, z));
    loss.backward();
    for (double v : x.grad()) CHECK(std::isfinite(v));
    for (double v : w.grad()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("tensor invariants and float32 path") {
  CHECK_THROWS_AS(TD::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(TD::from({0}, {}), DimensionError);
  auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4}, true);
  auto loss = sum(matmul(a, a));
  loss.backward();
  CHECK(a.grad().size() == 4);
  CHECK(Tensor<float>::dtype() == DType::f32);
  // results of frozen inputs keep no graph
  auto frozen = matmul(TD::from({1, 1}, {2}), TD::from({1, 1}, {3}));
  CHECK_FALSE(frozen.requires_grad());
  CHECK(frozen.node()->inputs.empty());
}
