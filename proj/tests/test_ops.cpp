#include <doctest.h>

#include <cmath>
#include <random>

#include "mscnn/ops.hpp"
#include "oracles.hpp"

using namespace mscnn;
using oracle::random_tensor;
using oracle::random_vector;

namespace {

ConvSpec spec(std::size_t in, std::size_t out, std::size_t f, std::size_t s, bool transposed = false) {
  ConvSpec c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = f;
  c.stride = s;
  c.transposed = transposed;
  return c;
}

std::span<const double> cspan(const std::vector<double>& v) { return v; }

}  // namespace

TEST_CASE("conv2d scalar affine and 3x3 sum") {
  TensorD x(1, 1, 1, 1, 2.0), w(1, 1, 1, 1, 3.0);
  std::vector<double> b{1.0};
  CHECK(conv2d<double>(x, w, b, spec(1, 1, 1, 1))[0] == 7.0);

  TensorD img(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  TensorD ones(1, 1, 3, 3, 1.0);
  std::vector<double> zero{0.0};
  CHECK(conv2d<double>(img, ones, zero, spec(1, 1, 3, 1)).at(0, 0, 1, 1) == 45.0);

  const auto g = conv2d_backward<double>(x, w, TensorD(1, 1, 1, 1, 1.0), spec(1, 1, 1, 1));
  CHECK(g.weights[0] == 2.0);
  CHECK(g.input[0] == 3.0);
  CHECK(g.bias[0] == 1.0);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 9), ch(1, 4), ks(0, 2), st(1, 2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = ch(rng) % 2 + 1, c = ch(rng), o = ch(rng), h = dim(rng), w = dim(rng);
    const std::size_t f = 2 * ks(rng) + 1, s = st(rng);
    const TensorD x = random_tensor({n, c, h, w}, rng);
    const TensorD k = random_tensor({o, c, f, f}, rng);
    const auto b = random_vector(o, rng);
    const TensorD got = conv2d<double>(x, k, b, spec(c, o, f, s));
    const TensorD want = oracle::conv_same(x, k, b, s);
    REQUIRE(got.shape() == want.shape());
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);
  }
  SUBCASE("explicit padding") {
    const TensorD x = random_tensor({2, 3, 8, 8}, rng);
    const TensorD k = random_tensor({4, 3, 5, 5}, rng);
    const auto b = random_vector(4, rng);
    ConvSpec sp = spec(3, 4, 5, 1);
    sp.padding = Padding::Explicit;
    sp.explicit_pad = 1;
    const TensorD got = conv2d<double>(x, k, b, sp);
    CHECK(got.shape() == Shape{2, 4, 6, 6});
    CHECK(oracle::max_abs_diff(got, oracle::conv(x, k, b, 1, 6, 6, 1, 1)) < 1e-12);
  }
}

TEST_CASE("transposed conv: oracle, adjoint, scatter example") {
  std::mt19937_64 rng(12);
  for (std::size_t f : {1, 3, 5, 9})
    for (std::size_t s : {1, 2}) {
      const TensorD y = random_tensor({2, 3, 5, 6}, rng);
      const TensorD w = random_tensor({3, 2, f, f}, rng);
      const auto b = random_vector(2, rng);
      const TensorD got = transposed_conv2d<double>(y, w, b, spec(3, 2, f, s, true));
      CHECK(oracle::max_abs_diff(got, oracle::transposed_same(y, w, b, s)) < 1e-12);

      // <conv(x), y> == <x, convT(y)> with the same weights
      const TensorD x = random_tensor(got.shape(), rng);
      const TensorD cx = conv2d<double>(x, w.cast<double>(), {}, spec(2, 3, f, s));
      REQUIRE(cx.shape() == y.shape());
      const TensorD ty = transposed_conv2d<double>(y, w, {}, spec(3, 2, f, s, true));
      CHECK(std::abs(oracle::dot(cx, y) - oracle::dot(x, ty)) < 1e-9);
    }

  TensorD v(1, 1, 1, 1, 2.5);
  TensorD k(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const TensorD out = transposed_conv2d<double>(v, k, {}, spec(1, 1, 2, 2, true));
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == 2.5 * k[i]);

  std::vector<double> bias{0.5, -1.0};
  const TensorD zb = transposed_conv2d<double>(TensorD(1, 1, 3, 3), TensorD(1, 2, 3, 3, 1.0), bias, spec(1, 2, 3, 2, true));
  for (std::size_t i = 0; i < zb.numel(); ++i) CHECK(zb[i] == (i < 36 ? 0.5 : -1.0));
}

TEST_CASE("conv primitives match central finite differences") {
  std::mt19937_64 rng(13);
  for (auto [ci, co] : {std::pair<std::size_t, std::size_t>{3, 4}, {4, 3}})
    for (bool transposed : {false, true})
      for (std::size_t s : {1, 2}) {
        TensorD x = random_tensor({2, ci, 5, 5}, rng);
        TensorD w = transposed ? random_tensor({ci, co, 3, 3}, rng) : random_tensor({co, ci, 3, 3}, rng);
        std::vector<double> b = random_vector(co, rng);
        const ConvSpec sp = spec(ci, co, 3, s, transposed);
        auto fwd = [&] {
          return transposed ? transposed_conv2d<double>(x, w, b, sp) : conv2d<double>(x, w, b, sp);
        };
        const TensorD probe = random_tensor(fwd().shape(), rng);
        auto f = [&] { return oracle::dot(fwd(), probe); };
        const auto g = transposed ? transposed_conv2d_backward<double>(x, w, probe, sp)
                                  : conv2d_backward<double>(x, w, probe, sp);
        CHECK(oracle::compare(g.input.data(), oracle::numeric_gradient(x.data(), f, 1e-4)).rel_error < 1e-8);
        CHECK(oracle::compare(g.weights.data(), oracle::numeric_gradient(w.data(), f, 1e-4)).rel_error < 1e-8);
        CHECK(oracle::compare(cspan(g.bias), oracle::numeric_gradient(b, f, 1e-4)).rel_error < 1e-8);
      }
}

TEST_CASE("conv validation") {
  CHECK_THROWS_AS(conv2d<double>(TensorD(1, 2, 4, 4), TensorD(1, 1, 3, 3), {}, spec(1, 1, 3, 1)), Error);
  CHECK_THROWS_AS(conv2d<double>(TensorD(1, 1, 4, 4), TensorD(1, 1, 2, 2), {}, spec(1, 1, 2, 1)), Error);
  CHECK_THROWS_AS(conv2d<double>(TensorD(1, 1, 4, 4), TensorD(1, 1, 3, 3), {}, spec(1, 1, 3, 3)), Error);
  TensorD big(1, 1, 1, 1, 1e300);
  CHECK_THROWS_AS(conv2d<double>(big, TensorD(1, 1, 1, 1, 1e300), {}, spec(1, 1, 1, 1)), Error);
  CHECK(conv2d_backward<double>(TensorD(1, 1, 4, 4, 1.0), TensorD(1, 1, 3, 3, 1.0), TensorD(1, 1, 4, 4),
                                spec(1, 1, 3, 1))
            .weights == TensorD(1, 1, 3, 3));
}

TEST_CASE("max-pool, switches, unpool") {
  TensorD x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto [p, sw] = maxpool2x2(x);
  CHECK(p[0] == 4.0);
  CHECK(sw.index[0] == 3);
  const TensorD u = unpool2x2(p, sw);
  CHECK(u == TensorD(Shape{1, 1, 2, 2}, {0, 0, 0, 4}));

  auto [pc, swc] = maxpool2x2(TensorD(1, 2, 4, 4, 7.0));
  for (double v : pc.data()) CHECK(v == 7.0);
  for (auto i : swc.index) CHECK(i == 0);

  CHECK_THROWS_AS(maxpool2x2(TensorD(1, 1, 3, 4)), Error);
  auto [po, swo] = maxpool2x2(TensorD(Shape{1, 1, 1, 3}, {-5, -6, -7}), PoolEdge::PadNegInf);
  CHECK(po.shape() == Shape{1, 1, 1, 2});
  CHECK(po[0] == -5.0);
  CHECK(po[1] == -7.0);

  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorD r = random_tensor({1, 2, 8, 8}, rng, 0.1, 1.0);
    std::vector<std::uint8_t> where;
    const TensorD want = oracle::maxpool(r, &where);
    auto [got, s] = maxpool2x2(r);
    CHECK(got == want);
    CHECK(s.index == where);
    const TensorD un = unpool2x2(got, s);
    CHECK(maxpool2x2(un).first == got);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK((un[i] == 0.0 || un[i] == r[i]));
    const TensorD y = random_tensor(got.shape(), rng);
    double sy = 0, su = 0;
    for (double v : y.data()) sy += v;
    const TensorD spread = unpool2x2(y, s);
    for (double v : spread.data()) su += v;
    CHECK(su == doctest::Approx(sy).epsilon(1e-12));
    // unpool and gather are adjoint
    const TensorD z = random_tensor(r.shape(), rng);
    CHECK(oracle::dot(unpool2x2(y, s), z) == doctest::Approx(oracle::dot(y, unpool2x2_backward(z, s))));
    CHECK(maxpool2x2_backward(y, s) == unpool2x2(y, s));
  }

  PoolSwitches bad = sw;
  bad.index[0] = 4;
  CHECK_THROWS_AS(unpool2x2(p, bad), Error);
  CHECK_THROWS_AS(unpool2x2(TensorD(1, 1, 2, 2), sw), Error);
}

TEST_CASE("switch cycling for channel-count changes") {
  std::mt19937_64 rng(15);
  auto [p, sw] = maxpool2x2(random_tensor({1, 2, 4, 4}, rng));
  const PoolSwitches c = sw.cycled(5);
  CHECK(c.pooled.c == 5);
  const std::size_t plane = 4;
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < plane; ++i) CHECK(c.index[k * plane + i] == sw.index[(k % 2) * plane + i]);
}

TEST_CASE("avgpool_same") {
  CHECK(avgpool_same(TensorD(1, 1, 1, 1, 9.0), 3)[0] == doctest::Approx(1.0));
  const TensorD c = avgpool_same(TensorD(1, 1, 5, 5, 2.0), 3);
  CHECK(c.at(0, 0, 2, 2) == doctest::Approx(2.0));
  CHECK_THROWS_AS(avgpool_same(TensorD(1, 1, 5, 5), 2), Error);
  std::mt19937_64 rng(16);
  for (std::size_t win : {1, 3, 5}) {
    const TensorD x = random_tensor({2, 3, 7, 6}, rng);
    CHECK(oracle::max_abs_diff(avgpool_same(x, win), oracle::avgpool(x, win)) < 1e-12);
    const TensorD y = random_tensor(x.shape(), rng);
    CHECK(oracle::dot(avgpool_same(x, win), y) == doctest::Approx(oracle::dot(x, avgpool_same_backward(y, win))));
  }
}

TEST_CASE("up-sampling variants and their adjoints") {
  std::mt19937_64 rng(17);
  const TensorD x = random_tensor({1, 2, 3, 4}, rng);
  const TensorD n = upsample_nearest2x(x), a = upsample_average2x(x);
  CHECK(n.shape() == Shape{1, 2, 6, 8});
  CHECK(n.at(0, 1, 5, 7) == x.at(0, 1, 2, 3));
  CHECK(a.at(0, 1, 4, 6) == doctest::Approx(x.at(0, 1, 2, 3) / 4));
  const TensorD y = random_tensor(n.shape(), rng);
  CHECK(oracle::dot(n, y) == doctest::Approx(oracle::dot(x, upsample_nearest2x_backward(y))));
  CHECK(oracle::dot(a, y) == doctest::Approx(oracle::dot(x, upsample_average2x_backward(y))));
}

TEST_CASE("elementwise ops") {
  const TensorD r = relu(TensorD(Shape{1, 1, 1, 3}, {-1, 0, 2}));
  CHECK(r == TensorD(Shape{1, 1, 1, 3}, {0, 0, 2}));
  CHECK(sigmoid(TensorD(1, 1, 1, 1))[0] == 0.5);
  CHECK(hadamard(TensorD(Shape{1, 1, 1, 2}, {2, 3}), TensorD(Shape{1, 1, 1, 2}, {4, 5})) ==
        TensorD(Shape{1, 1, 1, 2}, {8, 15}));
  CHECK_THROWS_AS(hadamard(TensorD(1, 1, 1, 2), TensorD(1, 1, 2, 1)), Error);

  std::mt19937_64 rng(18);
  const TensorD x = random_tensor({1, 1, 10, 10}, rng, -30, 30);
  TensorD neg = x;
  for (double& v : neg.data()) v = -v;
  const TensorD s = sigmoid(x), sn = sigmoid(neg);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(s[i] + sn[i] - 1.0) < 1e-7);
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
  }
  const Tensor huge(1, 1, 1, 2, 1000.0f);
  const Tensor sh = sigmoid(huge);
  for (float v : sh.data()) CHECK(v < 1.0f);

  TensorD z = random_tensor({1, 2, 4, 4}, rng);
  const TensorD probe = random_tensor(z.shape(), rng);
  auto fs = [&] { return oracle::dot(sigmoid(z), probe); };
  CHECK(oracle::compare(sigmoid_backward(probe, sigmoid(z)).data(), oracle::numeric_gradient(z.data(), fs, 1e-5))
            .rel_error < 1e-8);
  auto fr = [&] { return oracle::dot(relu(z), probe); };
  CHECK(oracle::compare(relu_backward(probe, relu(z)).data(), oracle::numeric_gradient(z.data(), fr, 1e-6))
            .rel_error < 1e-8);

  const TensorD a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
  const TensorD cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape{2, 5, 3, 3});
  auto [a2, b2] = split_channels(cat, 2);
  CHECK(a2 == a);
  CHECK(b2 == b);
}

TEST_CASE("SGD with momentum and weight decay") {
  auto step = [](double w, double g, double v, SgdHyper h) {
    std::vector<double> p{w}, gr{g}, vel{v};
    sgd_momentum_step<double>(p, gr, vel, h);
    return std::pair{p[0], vel[0]};
  };
  CHECK(step(1, 0.5, 0, {0.1, 0.0, 0.0}).first == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(std::abs(step(1, 0.5, 0, {0.1, 0.0, 1e-4}).first - 0.94998) < 1e-12);

  std::vector<double> p{0.0}, g{1.0}, v{0.0};
  sgd_momentum_step<double>(p, g, v, {0.1, 0.9, 0.0});
  const double first = -p[0];
  const double before = p[0];
  sgd_momentum_step<double>(p, g, v, {0.1, 0.9, 0.0});
  CHECK((before - p[0]) == doctest::Approx(1.9 * first));

  std::vector<double> q{1.0, -2.0}, zero{0.0, 0.0}, vel{0.0, 0.0};
  const double norm0 = 5.0;
  sgd_momentum_step<double>(q, zero, vel, {0.1, 0.9, 1e-2});
  CHECK(q[0] * q[0] + q[1] * q[1] < norm0);

  std::vector<double> nan{std::nan("")};
  CHECK_THROWS_AS(sgd_momentum_step<double>(q, nan, vel, {}), Error);
  CHECK_THROWS_AS(sgd_momentum_step<double>(q, zero, vel, {0.1, 1.0, 0.0}), Error);
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(19);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng).cast<float>();
  const Tensor w = random_tensor({8, 3, 5, 5}, rng).cast<float>();
  const Tensor a = conv2d<float>(x, w, {}, spec(3, 8, 5, 2));
  const Tensor b = conv2d<float>(x, w, {}, spec(3, 8, 5, 2));
  CHECK(a == b);
}
