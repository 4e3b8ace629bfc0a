#include <doctest.h>

#include <random>

#include "mscnn/fusion.hpp"
#include "oracles.hpp"

using namespace mscnn;

TEST_CASE("constant example: additive 4, multiplicative 3.75") {
  const TensorD cur(1, 1, 4, 4, 5.0), ref(1, 1, 4, 4, 3.0);
  const auto add = fuse_forward(cur, ref, FusionParameters<double>::zeros(1, FusionMode::Additive));
  const auto mul = fuse_forward(cur, ref, FusionParameters<double>::zeros(1, FusionMode::Multiplicative));
  for (double v : add.fused.data()) CHECK(v == 4.0);
  for (double v : mul.fused.data()) CHECK(v == 3.75);
  for (const auto& s : gate_statistics(add.bundle)) {
    CHECK(s.mean == 0.5);
    CHECK(s.min == 0.5);
    CHECK(s.max == 0.5);
  }

  auto sat = FusionParameters<double>::zeros(1);
  sat.bias[0] = 20.0;
  const auto out = fuse_forward(cur, ref, sat);
  for (double v : out.fused.data()) CHECK(std::abs(v - 5.0) < 1e-6);
  CHECK(gate_statistics(out.bundle)[0].mean > 0.999);
}

TEST_CASE("gate invariants on random inputs") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = trial % 3 + 1;
    const TensorD a = oracle::random_tensor({2, c, 5, 6}, rng, -3, 3), b = oracle::random_tensor({2, c, 5, 6}, rng, -3, 3);
    auto p = FusionParameters<double>::init(c, trial);
    for (double& v : p.bias) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    const auto out = fuse_forward(a, b, p);
    const TensorD gr = out.bundle.gate_ref();
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double g = out.bundle.gate[i];
      CHECK(g > 0.0);
      CHECK(g < 1.0);
      CHECK(out.bundle.gate_cur()[i] + gr[i] == 1.0);
      CHECK(out.fused[i] >= std::min(a[i], b[i]) - 1e-12);
      CHECK(out.fused[i] <= std::max(a[i], b[i]) + 1e-12);
    }
    const auto stats = gate_statistics(out.bundle);
    for (const auto& s : stats) {
      CHECK(s.min <= s.mean);
      CHECK(s.mean <= s.max);
    }
  }
}

TEST_CASE("mirror: swapped inputs with swapped, negated gate weights") {
  std::mt19937_64 rng(32);
  const std::size_t c = 3;
  const TensorD a = oracle::random_tensor({1, c, 6, 6}, rng), b = oracle::random_tensor({1, c, 6, 6}, rng);
  auto p = FusionParameters<double>::init(c, 4);
  for (double& v : p.bias) v = 0.3;
  auto m = p;
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t i = 0; i < c; ++i) {
      m.weights.at(o, i, 0, 0) = -p.weights.at(o, c + i, 0, 0);
      m.weights.at(o, c + i, 0, 0) = -p.weights.at(o, i, 0, 0);
    }
  for (double& v : m.bias) v = -v;
  const auto x = fuse_forward(a, b, p), y = fuse_forward(b, a, m);
  CHECK(oracle::max_abs_diff(x.fused, y.fused) < 1e-12);
}

TEST_CASE("fusion gradients match finite differences") {
  std::mt19937_64 rng(33);
  for (FusionMode mode : {FusionMode::Additive, FusionMode::Multiplicative}) {
    TensorD a = oracle::random_tensor({2, 2, 5, 5}, rng), b = oracle::random_tensor({2, 2, 5, 5}, rng);
    auto p = FusionParameters<double>::init(2, 8, mode);
    for (double& v : p.bias) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const TensorD probe = oracle::random_tensor(a.shape(), rng);
    const auto out = fuse_forward(a, b, p);
    const auto g = fuse_backward(out.bundle, a, b, p, probe);
    auto f = [&] { return oracle::dot(fuse_forward(a, b, p).fused, probe); };
    CHECK(oracle::compare(g.cur.data(), oracle::numeric_gradient(a.data(), f, 1e-5)).rel_error < 1e-8);
    CHECK(oracle::compare(g.ref.data(), oracle::numeric_gradient(b.data(), f, 1e-5)).rel_error < 1e-8);
    CHECK(oracle::compare(g.weights.data(), oracle::numeric_gradient(p.weights.data(), f, 1e-5)).rel_error < 1e-8);
    CHECK(oracle::compare(std::span<const double>(g.bias), oracle::numeric_gradient(p.bias, f, 1e-5)).rel_error < 1e-8);
  }
}

TEST_CASE("fusion backward special cases") {
  std::mt19937_64 rng(34);
  const TensorD a = oracle::random_tensor({1, 1, 4, 4}, rng);
  const auto p = FusionParameters<double>::zeros(1);
  const TensorD grad = oracle::random_tensor(a.shape(), rng);
  const auto out = fuse_forward(a, a, p);
  const auto g = fuse_backward(out.bundle, a, a, p, grad);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(g.cur[i] == doctest::Approx(0.5 * grad[i]));
    CHECK(g.ref[i] == doctest::Approx(0.5 * grad[i]));
  }
  const auto z = fuse_backward(out.bundle, a, a, p, TensorD(a.shape()));
  for (double v : z.cur.data()) CHECK(v == 0.0);
  for (double v : z.weights.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(fuse_forward(a, TensorD(1, 1, 4, 5), p), Error);
  CHECK_THROWS_AS(fuse_forward(TensorD(1, 2, 4, 4), TensorD(1, 2, 4, 4), p), Error);
  CHECK(parse_fusion_mode(to_string(FusionMode::Multiplicative)) == FusionMode::Multiplicative);
  CHECK_THROWS_AS(parse_fusion_mode("sum"), Error);
}
