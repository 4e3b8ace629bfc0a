#pragma once

// Brute-force references and finite-difference helpers shared by the unit
// tests and the acceptance binary. Nothing here calls the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "mscnn/data.hpp"
#include "mscnn/network.hpp"
#include "mscnn/tensor.hpp"

namespace oracle {

using mscnn::Shape;
using mscnn::TensorD;

inline TensorD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(s);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Pads {
  std::size_t out, pad_before;
};

// Output size ceil(in / s); total padding max((out-1)s + f - in, 0), split with the smaller half first.
inline Pads same_pads(std::size_t in, std::size_t f, std::size_t s) {
  const std::size_t out = (in + s - 1) / s;
  const long need = static_cast<long>((out - 1) * s + f) - static_cast<long>(in);
  return {out, static_cast<std::size_t>(std::max(need, 0L)) / 2};
}

// Six nested loops over (n, o, y, x) and (c, ky, kx).
inline TensorD conv(const TensorD& in, const TensorD& w, const std::vector<double>& b, std::size_t stride,
                    std::size_t out_h, std::size_t out_w, std::size_t pad_t, std::size_t pad_l) {
  const Shape si = in.shape(), sw = w.shape();
  TensorD out(si.n, sw.n, out_h, out_w);
  for (std::size_t n = 0; n < si.n; ++n)
    for (std::size_t o = 0; o < sw.n; ++o)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t c = 0; c < si.c; ++c)
            for (std::size_t ky = 0; ky < sw.h; ++ky)
              for (std::size_t kx = 0; kx < sw.w; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad_t);
                const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad_l);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(si.h) || ix >= static_cast<long>(si.w)) continue;
                acc += in.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

inline TensorD conv_same(const TensorD& in, const TensorD& w, const std::vector<double>& b, std::size_t stride) {
  const auto ph = same_pads(in.shape().h, w.shape().h, stride);
  const auto pw = same_pads(in.shape().w, w.shape().w, stride);
  return conv(in, w, b, stride, ph.out, pw.out, ph.pad_before, pw.pad_before);
}

// Scatter form: every input sample adds value * kernel into the output, with
// weights (in, out, f, f) and output side in * stride.
inline TensorD transposed_same(const TensorD& in, const TensorD& w, const std::vector<double>& b, std::size_t stride) {
  const Shape si = in.shape(), sw = w.shape();
  const std::size_t oh = si.h * stride, ow = si.w * stride;
  const std::size_t pt = same_pads(oh, sw.h, stride).pad_before, pl = same_pads(ow, sw.w, stride).pad_before;
  TensorD out(si.n, sw.c, oh, ow);
  for (std::size_t n = 0; n < si.n; ++n) {
    for (std::size_t o = 0; o < sw.c; ++o)
      for (std::size_t i = 0; i < oh * ow; ++i) out.plane(n, o)[i] = b.empty() ? 0.0 : b[o];
    for (std::size_t c = 0; c < si.c; ++c)
      for (std::size_t y = 0; y < si.h; ++y)
        for (std::size_t x = 0; x < si.w; ++x)
          for (std::size_t o = 0; o < sw.c; ++o)
            for (std::size_t ky = 0; ky < sw.h; ++ky)
              for (std::size_t kx = 0; kx < sw.w; ++kx) {
                const long oy = static_cast<long>(y * stride + ky) - static_cast<long>(pt);
                const long ox = static_cast<long>(x * stride + kx) - static_cast<long>(pl);
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) continue;
                out.at(n, o, oy, ox) += in.at(n, c, y, x) * w.at(c, o, ky, kx);
              }
  }
  return out;
}

inline TensorD maxpool(const TensorD& in, std::vector<std::uint8_t>* where = nullptr) {
  const Shape s = in.shape();
  TensorD out(s.n, s.c, s.h / 2, s.w / 2);
  if (where) where->clear();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h / 2; ++y)
        for (std::size_t x = 0; x < s.w / 2; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          std::uint8_t arg = 0;
          for (std::uint8_t k = 0; k < 4; ++k) {
            const double v = in.at(n, c, 2 * y + k / 2, 2 * x + k % 2);
            if (v > best) best = v, arg = k;
          }
          out.at(n, c, y, x) = best;
          if (where) where->push_back(arg);
        }
  return out;
}

inline TensorD avgpool(const TensorD& in, std::size_t window) {
  const Shape s = in.shape();
  const long r = static_cast<long>(window / 2);
  TensorD out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (long y = 0; y < static_cast<long>(s.h); ++y)
        for (long x = 0; x < static_cast<long>(s.w); ++x) {
          double acc = 0.0;
          for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
              const long yy = y + dy, xx = x + dx;
              if (yy >= 0 && xx >= 0 && yy < static_cast<long>(s.h) && xx < static_cast<long>(s.w))
                acc += in.at(n, c, yy, xx);
            }
          out.at(n, c, y, x) = acc / static_cast<double>(window * window);
        }
  return out;
}

/// Central-difference gradient of f with respect to every entry of `x`
/// Entries where `kink_crossed` fires at either probe are left at NaN.
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double h,
                                            const std::function<bool()>& kink_crossed = {}) {
  std::vector<double> g(x.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    const bool kp = kink_crossed ? kink_crossed() : false;
    x[i] = keep - h;
    const double fm = f();
    const bool km = kink_crossed ? kink_crossed() : false;
    x[i] = keep;
    if (kp || km) continue;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct GradCheck {
  double rel_error = 0.0;  // ||a - n|| / max(||a||, ||n||) over checked entries
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline GradCheck compare(std::span<const double> analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  GradCheck r;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    if (std::isnan(numeric[i])) {
      ++r.skipped;
      continue;
    }
    ++r.checked;
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  r.rel_error = denom > 0 ? std::sqrt(diff) / denom : std::sqrt(diff);
  return r;
}

/// A 32x32-capable network with one pool/unpool pair and the stride-2
/// conv/deconv bottleneck, small enough for exhaustive finite differences.
inline mscnn::NetworkConfig tiny_network() {
  using mscnn::Activation;
  using mscnn::LayerKind;
  mscnn::NetworkConfig cfg;
  cfg.layers = {{LayerKind::Conv, 3, 3, 1, Activation::Relu},
                {LayerKind::Conv, 4, 3, 2, Activation::Relu},
                {LayerKind::Transposed, 4, 3, 2, Activation::Relu},
                {LayerKind::Transposed, 3, 5, 1, Activation::Relu},
                {LayerKind::Conv, 1, 1, 1, Activation::Linear}};
  cfg.pool_after = {0};
  cfg.unpool_before = {3};
  cfg.variant = mscnn::DecoderVariant::parse("custom");
  cfg.validate();
  return cfg;
}

/// Deterministic textured 8-bit image: smooth gradients, a few discs and edges, mild noise.
inline mscnn::Plane8 synthetic_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 1.0 + 4.0 * u(rng), fy = 1.0 + 4.0 * u(rng), phase = 6.28 * u(rng);
  struct Disc {
    double x, y, r, v;
  };
  std::vector<Disc> discs;
  for (int i = 0; i < 6; ++i) discs.push_back({u(rng) * w, u(rng) * h, 8 + u(rng) * w / 5, 40 + 180 * u(rng)});
  std::normal_distribution<double> noise(0.0, 3.0);
  mscnn::Plane8 p(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v = 128 + 50 * std::sin(fx * 6.28 * x / w + phase) * std::cos(fy * 6.28 * y / h);
      for (const Disc& d : discs)
        if ((x - d.x) * (x - d.x) + (y - d.y) * (y - d.y) < d.r * d.r) v = 0.5 * v + 0.5 * d.v;
      if ((x / 16 + y / 16) % 7 == 0) v += 40;
      v += noise(rng);
      p.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return p;
}

}  // namespace oracle
