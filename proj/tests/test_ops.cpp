#include <cmath>
#include <functional>
#include <vector>

#include "al2/ops.hpp"
#include "al2/rng.hpp"
#include "al2/tensor.hpp"
#include "doctest.h"

using namespace al2;

namespace {

// Quadruple-loop convolution reference, independent of the production kernels.
std::vector<real> conv_ref(const std::vector<real>& in, int64_t n, int64_t cin, int64_t h,
                           int64_t w, const std::vector<real>& wgt, int64_t cout, int64_t k,
                           const std::vector<real>& bias, int64_t stride, int64_t pad,
                           int64_t ho, int64_t wo) {
  std::vector<real> out(static_cast<size_t>(n * cout * ho * wo), real(0));
  for (int64_t s = 0; s < n; ++s)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oi = 0; oi < ho; ++oi)
        for (int64_t oj = 0; oj < wo; ++oj) {
          real acc = bias[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ki = 0; ki < k; ++ki)
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t ii = oi * stride - pad + ki;
                const int64_t jj = oj * stride - pad + kj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                acc += wgt[static_cast<size_t>(((co * cin + ci) * k + ki) * k + kj)] *
                       in[static_cast<size_t>(((s * cin + ci) * h + ii) * w + jj)];
              }
          out[static_cast<size_t>(((s * cout + co) * ho + oi) * wo + oj)] = acc;
        }
  return out;
}

std::vector<real> random_vec(size_t n, uint64_t seed, real lo = real(-1), real hi = real(1)) {
  Rng rng(seed);
  std::vector<real> v(n);
  for (real& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return v;
}

// Central finite difference of scalar_fn at x[i].
double central_diff(const std::function<double(const std::vector<real>&)>& f,
                    std::vector<real> x, size_t i, double h) {
  const real x0 = x[i];
  x[i] = x0 + static_cast<real>(h);
  const double fp = f(x);
  x[i] = x0 - static_cast<real>(h);
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

// Checks every coordinate of `leaf` against finite differences of sum(op(leaf)).
void check_grad_against_fd(const std::function<Tensor(const Tensor&, Tape*)>& op,
                           const Shape& shape, const std::vector<real>& x0,
                           double tol = 1e-6) {
  Tensor leaf = Tensor::from(shape, x0, true);
  Tape tape;
  Tensor out = op(leaf, &tape);
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  REQUIRE(leaf.has_grad());
  const std::vector<real> analytic = leaf.grad_values();

  auto objective = [&](const std::vector<real>& xs) {
    Tensor l = Tensor::from(shape, xs, false);
    Tensor o = op(l, nullptr);
    double acc = 0;
    for (real v : o.values()) acc += v;
    return acc;
  };
  for (size_t i = 0; i < x0.size(); ++i) {
    const double numeric = central_diff(objective, x0, i, 1e-6);
    CHECK(std::abs(analytic[i] - numeric) <=
          tol * std::max({1.0, std::abs(numeric), std::abs(double(analytic[i]))}));
  }
}

}  // namespace

TEST_CASE("conv2d matches the reference on stride 1 pad 0") {
  const int64_t n = 2, cin = 3, h = 7, w = 6, cout = 4, k = 3, ho = 5, wo = 4;
  auto in = random_vec(static_cast<size_t>(n * cin * h * w), 11);
  auto wg = random_vec(static_cast<size_t>(cout * cin * k * k), 12);
  auto bs = random_vec(static_cast<size_t>(cout), 13);
  Tensor out = conv2d(Tensor::from({n, cin, h, w}, in), Tensor::from({cout, cin, k, k}, wg),
                      Tensor::from({cout}, bs), 1, 0, nullptr);
  REQUIRE(out.shape() == Shape{n, cout, ho, wo});
  auto ref = conv_ref(in, n, cin, h, w, wg, cout, k, bs, 1, 0, ho, wo);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d matches the reference on the model geometries") {
  struct G { int64_t cin, h, w, cout; };
  for (const G& g : {G{1, 28, 28, 4}, G{3, 32, 32, 4}, G{6, 12, 12, 5}, G{6, 14, 14, 5}}) {
    const int64_t n = 2, k = 5, ho = g.h - k + 1, wo = g.w - k + 1;
    auto in = random_vec(static_cast<size_t>(n * g.cin * g.h * g.w), 21 + g.h);
    auto wg = random_vec(static_cast<size_t>(g.cout * g.cin * k * k), 22 + g.h);
    auto bs = random_vec(static_cast<size_t>(g.cout), 23 + g.h);
    Tensor out =
        conv2d(Tensor::from({n, g.cin, g.h, g.w}, in), Tensor::from({g.cout, g.cin, k, k}, wg),
               Tensor::from({g.cout}, bs), 1, 0, nullptr);
    auto ref = conv_ref(in, n, g.cin, g.h, g.w, wg, g.cout, k, bs, 1, 0, ho, wo);
    double maxdiff = 0;
    for (size_t i = 0; i < ref.size(); ++i)
      maxdiff = std::max(maxdiff, std::abs(double(out.values()[i] - ref[i])));
    CHECK(maxdiff < 1e-10);
  }
}

TEST_CASE("conv2d matches the reference with stride 2 and padding 1") {
  const int64_t n = 2, cin = 2, h = 9, w = 8, cout = 3, k = 3, stride = 2, pad = 1;
  const int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  auto in = random_vec(static_cast<size_t>(n * cin * h * w), 31);
  auto wg = random_vec(static_cast<size_t>(cout * cin * k * k), 32);
  auto bs = random_vec(static_cast<size_t>(cout), 33);
  Tensor out = conv2d(Tensor::from({n, cin, h, w}, in), Tensor::from({cout, cin, k, k}, wg),
                      Tensor::from({cout}, bs), static_cast<int>(stride),
                      static_cast<int>(pad), nullptr);
  REQUIRE(out.shape() == Shape{n, cout, ho, wo});
  auto ref = conv_ref(in, n, cin, h, w, wg, cout, k, bs, stride, pad, ho, wo);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d is a cross-correlation, not a flipped convolution") {
  // Single 2x2 kernel over a 2x2 input picks out the unflipped dot product.
  Tensor in = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor wg = Tensor::from({1, 1, 2, 2}, {10, 0, 0, 1});
  Tensor bias = Tensor::zeros({1});
  Tensor out = conv2d(in, wg, bias, 1, 0, nullptr);
  CHECK(out.item() == real(14));  // flipped would give 4*10 + 1 = 41
}

TEST_CASE("conv2d gradients match finite differences in all three slots") {
  const int64_t n = 2, cin = 2, h = 6, w = 6, cout = 3, k = 3;
  auto in0 = random_vec(static_cast<size_t>(n * cin * h * w), 41);
  auto wg0 = random_vec(static_cast<size_t>(cout * cin * k * k), 42);
  auto bs0 = random_vec(static_cast<size_t>(cout), 43);

  // weight slot
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return conv2d(Tensor::from({n, cin, h, w}, in0), leaf, Tensor::from({cout}, bs0), 1,
                      0, tape);
      },
      {cout, cin, k, k}, wg0);
  // input slot
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return conv2d(leaf, Tensor::from({cout, cin, k, k}, wg0), Tensor::from({cout}, bs0),
                      1, 0, tape);
      },
      {n, cin, h, w}, in0);
  // bias slot
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return conv2d(Tensor::from({n, cin, h, w}, in0), Tensor::from({cout, cin, k, k}, wg0),
                      leaf, 1, 0, tape);
      },
      {cout}, bs0);
}

TEST_CASE("conv2d strided gradients match finite differences") {
  const int64_t n = 1, cin = 2, h = 7, w = 7, cout = 2, k = 3;
  auto in0 = random_vec(static_cast<size_t>(n * cin * h * w), 44);
  auto wg0 = random_vec(static_cast<size_t>(cout * cin * k * k), 45);
  auto bs0 = random_vec(static_cast<size_t>(cout), 46);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return conv2d(leaf, Tensor::from({cout, cin, k, k}, wg0), Tensor::from({cout}, bs0),
                      2, 1, tape);
      },
      {n, cin, h, w}, in0);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return conv2d(Tensor::from({n, cin, h, w}, in0), leaf, Tensor::from({cout}, bs0), 2, 1,
                      tape);
      },
      {cout, cin, k, k}, wg0);
}

TEST_CASE("conv2d validates shapes with descriptive errors") {
  Tensor in = Tensor::zeros({1, 2, 6, 6});
  Tensor wg = Tensor::zeros({3, 2, 3, 3});
  Tensor bias = Tensor::zeros({3});
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 6, 6}), wg, bias, 1, 0, nullptr), ShapeError);
  CHECK_THROWS_AS(conv2d(in, Tensor::zeros({3, 5, 3, 3}), bias, 1, 0, nullptr), ShapeError);
  CHECK_THROWS_AS(conv2d(in, Tensor::zeros({3, 2, 3, 2}), bias, 1, 0, nullptr), ShapeError);
  CHECK_THROWS_AS(conv2d(in, wg, Tensor::zeros({4}), 1, 0, nullptr), ShapeError);
  CHECK_THROWS_AS(conv2d(in, wg, bias, 0, 0, nullptr), ShapeError);
  CHECK_THROWS_AS(conv2d(in, wg, bias, 1, -1, nullptr), ShapeError);
  // kernel larger than padded input
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2, 2}), wg, bias, 1, 0, nullptr), ShapeError);
}

TEST_CASE("maxpool2 takes the window maximum and halves the geometry") {
  // 1 channel, 4x4: windows are [[.,.],[.,.]] blocks.
  Tensor in = Tensor::from({1, 1, 4, 4},
                           {1, 2, 8, 3,
                            4, 5, 6, 7,
                            0, -1, -2, -3,
                            9, 1, 2, -4});
  Tensor out = maxpool2(in, nullptr);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  CHECK(out.values() == std::vector<real>{5, 8, 9, 2});
}

TEST_CASE("maxpool2 rejects odd spatial dimensions") {
  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 1, 3, 4}), nullptr), ShapeError);
  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 1, 4, 5}), nullptr), ShapeError);
  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 4, 4}), nullptr), ShapeError);
}

TEST_CASE("maxpool2 gradient goes only to the argmax cell") {
  Tensor in = Tensor::from({1, 1, 2, 2}, {1, 4, 2, 3}, true);
  Tape tape;
  Tensor out = maxpool2(in, &tape);
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  CHECK(in.grad_values() == std::vector<real>{0, 1, 0, 0});
}

TEST_CASE("maxpool2 ties route the gradient to the first cell in scan order") {
  Tensor in = Tensor::from({1, 1, 2, 2}, {7, 7, 7, 7}, true);
  Tape tape;
  Tensor out = maxpool2(in, &tape);
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  CHECK(in.grad_values() == std::vector<real>{1, 0, 0, 0});
}

TEST_CASE("maxpool2 gradient matches finite differences away from ties") {
  auto x0 = random_vec(2 * 2 * 4 * 4, 51);
  check_grad_against_fd([](const Tensor& leaf, Tape* tape) { return maxpool2(leaf, tape); },
                        {2, 2, 4, 4}, x0);
}

TEST_CASE("relu clamps negatives and passes positives") {
  Tensor in = Tensor::from({5}, {-2, -0.5, 0, 0.5, 2});
  Tensor out = relu(in, nullptr);
  CHECK(out.values() == std::vector<real>{0, 0, 0, 0.5, 2});
}

TEST_CASE("relu subgradient at exactly zero is zero") {
  Tensor in = Tensor::from({3}, {-1, 0, 1}, true);
  Tape tape;
  Tensor out = relu(in, &tape);
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  CHECK(in.grad_values() == std::vector<real>{0, 0, 1});
}

TEST_CASE("relu gradient matches finite differences away from zero") {
  auto x0 = random_vec(24, 52);
  for (real& v : x0)
    if (std::abs(v) < real(0.05)) v += real(0.1);  // keep clear of the kink
  check_grad_against_fd([](const Tensor& leaf, Tape* tape) { return relu(leaf, tape); },
                        {4, 6}, x0);
}

TEST_CASE("linear matches a hand matmul and validates shapes") {
  Tensor in = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor wg = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor bias = Tensor::from({2}, {10, 20});
  Tensor out = linear(in, wg, bias, nullptr);
  REQUIRE(out.shape() == Shape{2, 2});
  CHECK(out.values() == std::vector<real>{14, 25, 20, 31});

  CHECK_THROWS_AS(linear(Tensor::zeros({2, 4}), wg, bias, nullptr), ShapeError);
  CHECK_THROWS_AS(linear(in, wg, Tensor::zeros({3}), nullptr), ShapeError);
  CHECK_THROWS_AS(linear(Tensor::zeros({2, 3, 1}), wg, bias, nullptr), ShapeError);
}

TEST_CASE("linear gradients match finite differences in all three slots") {
  const int64_t n = 3, d = 4, m = 5;
  auto in0 = random_vec(static_cast<size_t>(n * d), 61);
  auto wg0 = random_vec(static_cast<size_t>(d * m), 62);
  auto bs0 = random_vec(static_cast<size_t>(m), 63);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return linear(leaf, Tensor::from({d, m}, wg0), Tensor::from({m}, bs0), tape);
      },
      {n, d}, in0);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return linear(Tensor::from({n, d}, in0), leaf, Tensor::from({m}, bs0), tape);
      },
      {d, m}, wg0);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return linear(Tensor::from({n, d}, in0), Tensor::from({d, m}, wg0), leaf, tape);
      },
      {m}, bs0);
}

TEST_CASE("flatten keeps the leading dimension and back-propagates unchanged") {
  Tensor in = Tensor::from({2, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, true);
  Tape tape;
  Tensor out = flatten(in, &tape);
  REQUIRE(out.shape() == Shape{2, 6});
  CHECK(out.values() == in.values());
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  for (real g : in.grad_values()) CHECK(g == real(1));
}

TEST_CASE("softmax_cross_entropy matches a direct computation") {
  Tensor logits = Tensor::from({2, 3}, {1, 2, 3, 0.5, -1, 0.25});
  std::vector<int> labels{2, 0};
  Tensor loss = softmax_cross_entropy(logits, labels, nullptr);

  double expected = 0;
  const double rows[2][3] = {{1, 2, 3}, {0.5, -1, 0.25}};
  for (int s = 0; s < 2; ++s) {
    double mx = std::max({rows[s][0], rows[s][1], rows[s][2]});
    double z = 0;
    for (double v : rows[s]) z += std::exp(v - mx);
    expected += -(rows[s][labels[s]] - mx - std::log(z));
  }
  expected /= 2;
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy gradient is (softmax - onehot)/N") {
  const int64_t n = 2, c = 4;
  auto x0 = random_vec(static_cast<size_t>(n * c), 71);
  std::vector<int> labels{3, 1};
  Tensor logits = Tensor::from({n, c}, x0, true);
  Tape tape;
  Tensor loss = softmax_cross_entropy(logits, labels, &tape);
  tape.backward(loss);
  for (int64_t s = 0; s < n; ++s) {
    double mx = -1e300, z = 0;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, double(x0[s * c + j]));
    for (int64_t j = 0; j < c; ++j) z += std::exp(double(x0[s * c + j]) - mx);
    for (int64_t j = 0; j < c; ++j) {
      double soft = std::exp(double(x0[s * c + j]) - mx) / z;
      double expected = (soft - (labels[s] == j ? 1.0 : 0.0)) / double(n);
      CHECK(double(logits.grad_values()[s * c + j]) == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("softmax_cross_entropy is shift-invariant and validates labels") {
  Tensor a = Tensor::from({1, 3}, {1, 2, 3});
  Tensor b = Tensor::from({1, 3}, {1001, 1002, 1003});
  CHECK(softmax_cross_entropy(a, {1}, nullptr).item() ==
        doctest::Approx(softmax_cross_entropy(b, {1}, nullptr).item()).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_cross_entropy(a, {3}, nullptr), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(a, {-1}, nullptr), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(a, {0, 1}, nullptr), ShapeError);
}

TEST_CASE("elementwise ops compute and differentiate correctly") {
  auto a0 = random_vec(6, 81);
  auto b0 = random_vec(6, 82);

  Tensor a = Tensor::from({2, 3}, a0, true);
  Tensor b = Tensor::from({2, 3}, b0, true);
  Tape tape;
  Tensor s = add(a, b, &tape);
  Tensor m = mul(s, b, &tape);
  Tensor sc = scale(m, real(2.5), &tape);
  Tensor loss = sum(sc, &tape);
  double expected = 0;
  for (size_t i = 0; i < 6; ++i) expected += 2.5 * (a0[i] + b0[i]) * b0[i];
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));

  tape.backward(loss);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(double(a.grad_values()[i]) == doctest::Approx(2.5 * b0[i]).epsilon(1e-12));
    CHECK(double(b.grad_values()[i]) ==
          doctest::Approx(2.5 * (a0[i] + 2 * b0[i])).epsilon(1e-12));
  }

  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2}), nullptr), ShapeError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({6}), nullptr), ShapeError);
}

TEST_CASE("sum_squares is the squared Frobenius norm with gradient 2x") {
  auto x0 = random_vec(8, 83);
  Tensor x = Tensor::from({2, 4}, x0, true);
  Tape tape;
  Tensor ss = sum_squares(x, &tape);
  double expected = 0;
  for (real v : x0) expected += double(v) * double(v);
  CHECK(ss.item() == doctest::Approx(expected).epsilon(1e-12));
  tape.backward(ss);
  for (size_t i = 0; i < 8; ++i)
    CHECK(double(x.grad_values()[i]) == doctest::Approx(2 * double(x0[i])).epsilon(1e-12));
}

TEST_CASE("batchnorm2d normalizes per channel with biased batch variance") {
  const int64_t n = 4, c = 2, h = 3, w = 3;
  auto x0 = random_vec(static_cast<size_t>(n * c * h * w), 91, real(-2), real(3));
  Tensor x = Tensor::from({n, c, h, w}, x0);
  Tensor gamma = Tensor::full({c}, real(1));
  Tensor beta = Tensor::zeros({c});
  Tensor rmean = Tensor::zeros({c});
  Tensor rvar = Tensor::full({c}, real(1));
  Tensor out = batchnorm2d(x, gamma, beta, rmean, rvar, true, real(0.1), real(1e-5), nullptr);

  const int64_t per = n * h * w;
  for (int64_t ci = 0; ci < c; ++ci) {
    double mean = 0, var = 0;
    for (int64_t s = 0; s < n; ++s)
      for (int64_t p = 0; p < h * w; ++p) mean += out.values()[(s * c + ci) * h * w + p];
    mean /= double(per);
    for (int64_t s = 0; s < n; ++s)
      for (int64_t p = 0; p < h * w; ++p) {
        double d = out.values()[(s * c + ci) * h * w + p] - mean;
        var += d * d;
      }
    var /= double(per);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly

    // Running buffers: (1-m)*old + m*batch, unbiased variance pushed.
    double bmean = 0, bvar = 0;
    for (int64_t s = 0; s < n; ++s)
      for (int64_t p = 0; p < h * w; ++p) bmean += x0[(s * c + ci) * h * w + p];
    bmean /= double(per);
    for (int64_t s = 0; s < n; ++s)
      for (int64_t p = 0; p < h * w; ++p) {
        double d = x0[(s * c + ci) * h * w + p] - bmean;
        bvar += d * d;
      }
    bvar /= double(per - 1);
    CHECK(double(rmean.values()[ci]) == doctest::Approx(0.1 * bmean).epsilon(1e-10));
    CHECK(double(rvar.values()[ci]) == doctest::Approx(0.9 + 0.1 * bvar).epsilon(1e-10));
  }
}

TEST_CASE("batchnorm2d eval uses running statistics, not batch statistics") {
  Tensor x = Tensor::from({1, 1, 1, 2}, {3, 5});
  Tensor gamma = Tensor::full({1}, real(2));
  Tensor beta = Tensor::full({1}, real(1));
  Tensor rmean = Tensor::full({1}, real(1));
  Tensor rvar = Tensor::full({1}, real(4));
  Tensor out = batchnorm2d(x, gamma, beta, rmean, rvar, false, real(0.1), real(0), nullptr);
  CHECK(double(out.values()[0]) == doctest::Approx(1 + 2 * (3 - 1) / 2.0).epsilon(1e-12));
  CHECK(double(out.values()[1]) == doctest::Approx(1 + 2 * (5 - 1) / 2.0).epsilon(1e-12));
  // Eval must not move the buffers.
  CHECK(rmean.values()[0] == real(1));
  CHECK(rvar.values()[0] == real(4));
}

TEST_CASE("batchnorm2d training gradients match finite differences") {
  const int64_t n = 3, c = 2, h = 2, w = 2;
  auto x0 = random_vec(static_cast<size_t>(n * c * h * w), 92, real(-2), real(2));
  auto g0 = random_vec(static_cast<size_t>(c), 93, real(0.5), real(1.5));
  auto b0 = random_vec(static_cast<size_t>(c), 94);

  // Fresh running buffers per evaluation keep the objective pure.
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return batchnorm2d(leaf, Tensor::from({c}, g0), Tensor::from({c}, b0),
                           Tensor::zeros({c}), Tensor::full({c}, real(1)), true, real(0.1),
                           real(1e-5), tape);
      },
      {n, c, h, w}, x0, 1e-5);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return batchnorm2d(Tensor::from({n, c, h, w}, x0), leaf, Tensor::from({c}, b0),
                           Tensor::zeros({c}), Tensor::full({c}, real(1)), true, real(0.1),
                           real(1e-5), tape);
      },
      {c}, g0, 1e-5);
  check_grad_against_fd(
      [&](const Tensor& leaf, Tape* tape) {
        return batchnorm2d(Tensor::from({n, c, h, w}, x0), Tensor::from({c}, g0), leaf,
                           Tensor::zeros({c}), Tensor::full({c}, real(1)), true, real(0.1),
                           real(1e-5), tape);
      },
      {c}, b0, 1e-5);
}

TEST_CASE("batchnorm2d rejects a single-sample training batch") {
  Tensor x = Tensor::zeros({1, 2, 3, 3});
  Tensor gamma = Tensor::full({2}, real(1));
  Tensor beta = Tensor::zeros({2});
  Tensor rmean = Tensor::zeros({2});
  Tensor rvar = Tensor::full({2}, real(1));
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, rmean, rvar, true, real(0.1), real(1e-5), nullptr),
                  ShapeError);
  // Eval mode is fine at batch 1.
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, rmean, rvar, false, real(0.1), real(1e-5), nullptr));
}

TEST_CASE("dropout keeps scale in training and is identity in eval") {
  const size_t n = 20000;
  Tensor x = Tensor::full({static_cast<int64_t>(n)}, real(1));
  Rng rng(7);
  Tensor out = dropout(x, real(0.5), rng, true, nullptr);
  size_t zeros = 0;
  double mean = 0;
  for (real v : out.values()) {
    if (v == real(0)) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(2.0).epsilon(1e-12));  // 1/(1-rate)
    }
    mean += v;
  }
  mean /= double(n);
  CHECK(double(zeros) / double(n) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));

  Rng rng2(7);
  Tensor ev = dropout(x, real(0.5), rng2, false, nullptr);
  for (real v : ev.values()) CHECK(v == real(1));
}

TEST_CASE("dropout consumes exactly numel draws in training, none in eval") {
  Tensor x = Tensor::full({13}, real(1));
  Rng a(3), b(3);
  (void)dropout(x, real(0.5), a, true, nullptr);
  for (int i = 0; i < 13; ++i) (void)b.uniform();
  CHECK(a.next_u64() == b.next_u64());

  Rng c(3), d(3);
  (void)dropout(x, real(0.5), c, false, nullptr);
  CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("dropout rate 0 keeps everything; invalid rates throw") {
  Tensor x = Tensor::full({8}, real(3));
  Rng rng(1);
  Tensor out = dropout(x, real(0), rng, true, nullptr);
  for (real v : out.values()) CHECK(v == real(3));
  CHECK_THROWS_AS(dropout(x, real(1), rng, true, nullptr), ShapeError);
  CHECK_THROWS_AS(dropout(x, real(-0.1), rng, true, nullptr), ShapeError);
}

TEST_CASE("dropout gradient masks exactly like the forward pass") {
  Tensor x = Tensor::from({16}, random_vec(16, 95), true);
  Rng rng(11);
  Tape tape;
  Tensor out = dropout(x, real(0.25), rng, true, &tape);
  Tensor loss = sum(out, &tape);
  tape.backward(loss);
  for (size_t i = 0; i < 16; ++i) {
    if (out.values()[i] == real(0)) {
      CHECK(x.grad_values()[i] == real(0));
    } else {
      CHECK(double(x.grad_values()[i]) == doctest::Approx(1.0 / 0.75).epsilon(1e-12));
    }
  }
}

TEST_CASE("kink trace captures relu signs and pool argmax choices") {
  KinkTrace trace;
  {
    KinkTraceScope scope(&trace);
    CHECK(active_kink_trace() == &trace);
    (void)relu(Tensor::from({3}, {-1, 2, -3}), nullptr);
  }
  CHECK(active_kink_trace() == nullptr);
  const std::vector<uint8_t> after_relu = trace.bytes();
  CHECK(after_relu.size() == 3);
  CHECK(after_relu[0] != after_relu[1]);

  {
    KinkTraceScope scope(&trace);
    (void)maxpool2(Tensor::from({1, 1, 2, 2}, {1, 9, 2, 3}), nullptr);
  }
  CHECK(trace.bytes().size() == 4);  // one argmax byte appended
  CHECK(trace.bytes().back() == 1);  // index of the 9 within its window

  // Same inputs reproduce the same trace.
  KinkTrace again;
  {
    KinkTraceScope scope(&again);
    (void)relu(Tensor::from({3}, {-1, 2, -3}), nullptr);
    (void)maxpool2(Tensor::from({1, 1, 2, 2}, {1, 9, 2, 3}), nullptr);
  }
  CHECK(again.bytes() == trace.bytes());
}

TEST_CASE("untaped forward passes record nothing") {
  Tape tape;
  Tensor x = Tensor::from({4}, {1, -2, 3, -4}, true);
  (void)relu(x, nullptr);
  CHECK(tape.size() == 0);
  // Taped op on a requires_grad input records exactly one step.
  (void)relu(x, &tape);
  CHECK(tape.size() == 1);
  // Taped op on inert inputs records nothing.
  Tensor inert = Tensor::from({4}, {1, -2, 3, -4}, false);
  (void)relu(inert, &tape);
  CHECK(tape.size() == 1);
}
