#include "mscnn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mscnn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Patch-matrix layout: row (c * f + ky) * f + kx, column oy * ow + ox.
// `pad_top`/`pad_left` are signed so the flipped-kernel route can use them.

// Output columns [lo, hi) whose input column ox * stride + kx - pad lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_span(std::size_t ow, std::size_t w, std::size_t kx, std::size_t stride,
                                               std::ptrdiff_t pad) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w) - off <= 0 ? 0 : (static_cast<std::ptrdiff_t>(w) - off + s - 1) / s;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(ow));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
            std::size_t f, std::size_t stride, std::ptrdiff_t pad_top, std::ptrdiff_t pad_left, T* cols) {
  const std::size_t n_cols = oh * ow;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x + c * h * w;
    for (std::size_t ky = 0; ky < f; ++ky) {
      for (std::size_t kx = 0; kx < f; ++kx) {
        T* row = cols + ((c * f + ky) * f + kx) * n_cols;
        const auto [lo, hi] = valid_span(ow, w, kx, stride, pad_left);
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(lo * stride + kx) - pad_left;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || lo == hi) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + ow, T(0));
          const T* line = src + static_cast<std::size_t>(iy) * w + x0;
          if (stride == 1) {
            std::copy_n(line, hi - lo, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = line[(ox - lo) * stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col; accumulates into x.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
            std::size_t f, std::size_t stride, std::ptrdiff_t pad_top, std::ptrdiff_t pad_left, T* x) {
  const std::size_t n_cols = oh * ow;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = x + c * h * w;
    for (std::size_t ky = 0; ky < f; ++ky) {
      for (std::size_t kx = 0; kx < f; ++kx) {
        const T* row = cols + ((c * f + ky) * f + kx) * n_cols;
        const auto [lo, hi] = valid_span(ow, w, kx, stride, pad_left);
        if (lo == hi) continue;
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(lo * stride + kx) - pad_left;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* line = dst + static_cast<std::size_t>(iy) * w + x0;
          const T* src = row + oy * ow;
          if (stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) line[ox - lo] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) line[(ox - lo) * stride] += src[ox];
          }
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; contents are overwritten before use.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<T> buffers[2];
  std::vector<T>& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

bool is_pointwise(const ConvSpec& spec, const ConvGeometry& g) {
  return spec.kernel == 1 && spec.stride == 1 && g.pad_top == 0 && g.pad_left == 0 && g.in_h == g.out_h &&
         g.in_w == g.out_w;
}

template <typename T>
void check_weights(const BasicTensor<T>& weights, std::size_t d0, std::size_t d1, const ConvSpec& spec,
                   const char* what) {
  const Shape want{d0, d1, spec.kernel, spec.kernel};
  if (weights.shape() != want)
    throw Error(std::string(what) + ": weights shaped " + to_string(weights.shape()) + ", expected " +
                to_string(want));
}

template <typename T>
void check_bias(std::span<const T> bias, std::size_t channels, const char* what) {
  if (!bias.empty() && bias.size() != channels)
    throw Error(std::string(what) + ": bias length " + std::to_string(bias.size()) + ", expected " +
                std::to_string(channels));
}

template <typename T>
void add_bias(BasicTensor<T>& out, std::span<const T> bias) {
  if (bias.empty()) return;
  const Shape& s = out.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = out.plane(n, c);
      const T b = bias[c];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
}

template <typename T>
void accumulate_bias_grad(const BasicTensor<T>& grad_out, std::vector<T>& grad_bias) {
  const Shape& s = grad_out.shape();
  grad_bias.assign(s.c, T(0));
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = grad_out.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      grad_bias[c] += acc;
    }
}

// Weights (in_t, out_t, f, f) of a transposed conv, rearranged into the
// (out_t, in_t, f, f) kernel of the equivalent stride-1 regular convolution.
template <typename T>
std::vector<T> flip_transpose(const BasicTensor<T>& weights) {
  const Shape& s = weights.shape();
  const std::size_t f = s.h;
  std::vector<T> out(weights.numel());
  for (std::size_t ci = 0; ci < s.n; ++ci)
    for (std::size_t co = 0; co < s.c; ++co)
      for (std::size_t ky = 0; ky < f; ++ky)
        for (std::size_t kx = 0; kx < f; ++kx)
          out[((co * s.n + ci) * f + (f - 1 - ky)) * f + (f - 1 - kx)] = weights.at(ci, co, ky, kx);
  return out;
}

}  // namespace

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) throw Error("ConvSpec: channel counts must be positive");
  if (kernel == 0) throw Error("ConvSpec: kernel must be >= 1");
  if (!transposed && kernel % 2 == 0) throw Error("ConvSpec: convolution kernel must be odd");
  if (stride != 1 && stride != 2) throw Error("ConvSpec: stride must be 1 or 2");
}

ConvGeometry resolve_geometry(const ConvSpec& spec, std::size_t in_h, std::size_t in_w) {
  spec.validate();
  if (in_h == 0 || in_w == 0) throw Error("convolution input has empty spatial extent");
  const std::size_t f = spec.kernel;
  const std::size_t s = spec.stride;
  ConvGeometry g{in_h, in_w, 0, 0, 0, 0};
  auto conv_pad = [&](std::size_t conv_in, std::size_t conv_out) -> std::size_t {
    if (spec.padding == Padding::Explicit) return spec.explicit_pad;
    const std::size_t need = (conv_out - 1) * s + f;
    return need > conv_in ? (need - conv_in) / 2 : 0;
  };
  if (!spec.transposed) {
    auto out_len = [&](std::size_t in) -> std::size_t {
      if (spec.padding == Padding::Same) return ceil_div(in, s);
      if (in + 2 * spec.explicit_pad < f) throw Error("convolution kernel larger than padded input");
      return (in + 2 * spec.explicit_pad - f) / s + 1;
    };
    g.out_h = out_len(in_h);
    g.out_w = out_len(in_w);
    g.pad_top = conv_pad(in_h, g.out_h);
    g.pad_left = conv_pad(in_w, g.out_w);
  } else {
    auto out_len = [&](std::size_t in) -> std::size_t {
      if (spec.padding == Padding::Same) return in * s;
      const std::size_t full = (in - 1) * s + f;
      if (full <= 2 * spec.explicit_pad) throw Error("transposed convolution output would be empty");
      return full - 2 * spec.explicit_pad;
    };
    g.out_h = out_len(in_h);
    g.out_w = out_len(in_w);
    // Padding of the regular convolution mapping out -> in.
    g.pad_top = conv_pad(g.out_h, in_h);
    g.pad_left = conv_pad(g.out_w, in_w);
  }
  return g;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                      const ConvSpec& spec) {
  if (spec.transposed) throw Error("conv2d: spec is marked transposed");
  const Shape& is = input.shape();
  if (is.c != spec.in_channels)
    throw Error("conv2d: input has " + std::to_string(is.c) + " channels, spec expects " +
                std::to_string(spec.in_channels));
  check_weights(weights, spec.out_channels, spec.in_channels, spec, "conv2d");
  check_bias(bias, spec.out_channels, "conv2d");
  const ConvGeometry g = resolve_geometry(spec, is.h, is.w);
  const std::size_t k = spec.in_channels * spec.kernel * spec.kernel;
  const std::size_t cols_n = g.out_h * g.out_w;

  BasicTensor<T> out(is.n, spec.out_channels, g.out_h, g.out_w);
  const bool pointwise = is_pointwise(spec, g);
  T* cols = pointwise ? nullptr : scratch<T>(0, k * cols_n);
  MapC<T> w(weights.ptr(), static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(k));
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* src = input.plane(n, 0);
    if (!pointwise) {
      im2col(src, is.c, is.h, is.w, g.out_h, g.out_w, spec.kernel, spec.stride,
             static_cast<std::ptrdiff_t>(g.pad_top), static_cast<std::ptrdiff_t>(g.pad_left), cols);
      src = cols;
    }
    Map<T> y(out.plane(n, 0), static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(cols_n));
    y.noalias() = w * MapC<T>(src, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols_n));
  }
  add_bias(out, bias);
  require_finite(out, "conv2d");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_out, const ConvSpec& spec, bool need_input_grad) {
  if (spec.transposed) throw Error("conv2d_backward: spec is marked transposed");
  const Shape& is = input.shape();
  if (is.c != spec.in_channels) throw Error("conv2d_backward: input channel mismatch");
  check_weights(weights, spec.out_channels, spec.in_channels, spec, "conv2d_backward");
  const ConvGeometry g = resolve_geometry(spec, is.h, is.w);
  const Shape want{is.n, spec.out_channels, g.out_h, g.out_w};
  if (grad_out.shape() != want)
    throw Error("conv2d_backward: grad_out shaped " + to_string(grad_out.shape()) + ", expected " +
                to_string(want));

  const std::size_t k = spec.in_channels * spec.kernel * spec.kernel;
  const std::size_t cols_n = g.out_h * g.out_w;
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(cols_n);
  const auto eo = static_cast<Eigen::Index>(spec.out_channels);

  ConvGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  if (need_input_grad) grads.input = BasicTensor<T>(is);
  accumulate_bias_grad(grad_out, grads.bias);

  const bool pointwise = is_pointwise(spec, g);
  T* cols = pointwise ? nullptr : scratch<T>(0, k * cols_n);
  T* dcols = pointwise || !need_input_grad ? nullptr : scratch<T>(1, k * cols_n);
  MapC<T> w(weights.ptr(), eo, ek);
  Map<T> dw(grads.weights.ptr(), eo, ek);
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* src = input.plane(n, 0);
    if (!pointwise) {
      im2col(src, is.c, is.h, is.w, g.out_h, g.out_w, spec.kernel, spec.stride,
             static_cast<std::ptrdiff_t>(g.pad_top), static_cast<std::ptrdiff_t>(g.pad_left), cols);
      src = cols;
    }
    MapC<T> dy(grad_out.plane(n, 0), eo, en);
    dw.noalias() += dy * MapC<T>(src, ek, en).transpose();
    if (!need_input_grad) continue;
    if (pointwise) {
      Map<T>(grads.input.plane(n, 0), ek, en).noalias() = w.transpose() * dy;
    } else {
      Map<T>(dcols, ek, en).noalias() = w.transpose() * dy;
      col2im(dcols, is.c, is.h, is.w, g.out_h, g.out_w, spec.kernel, spec.stride,
             static_cast<std::ptrdiff_t>(g.pad_top), static_cast<std::ptrdiff_t>(g.pad_left),
             grads.input.plane(n, 0));
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 std::span<const T> bias, const ConvSpec& spec) {
  if (!spec.transposed) throw Error("transposed_conv2d: spec.transposed must be set");
  const Shape& is = input.shape();
  if (is.c != spec.in_channels)
    throw Error("transposed_conv2d: input has " + std::to_string(is.c) + " channels, spec expects " +
                std::to_string(spec.in_channels));
  check_weights(weights, spec.in_channels, spec.out_channels, spec, "transposed_conv2d");
  check_bias(bias, spec.out_channels, "transposed_conv2d");
  const ConvGeometry g = resolve_geometry(spec, is.h, is.w);
  const std::size_t f = spec.kernel;
  const auto ci = static_cast<Eigen::Index>(spec.in_channels);
  const auto co = static_cast<Eigen::Index>(spec.out_channels);

  BasicTensor<T> out(is.n, spec.out_channels, g.out_h, g.out_w);
  if (spec.stride == 1) {
    // Stride 1: a regular convolution with the flipped, channel-swapped kernel.
    const std::vector<T> flipped = flip_transpose(weights);
    const std::size_t k = spec.in_channels * f * f;
    const std::size_t cols_n = g.out_h * g.out_w;
    T* cols = scratch<T>(0, k * cols_n);
    const auto pt = static_cast<std::ptrdiff_t>(f - 1) - static_cast<std::ptrdiff_t>(g.pad_top);
    const auto pl = static_cast<std::ptrdiff_t>(f - 1) - static_cast<std::ptrdiff_t>(g.pad_left);
    MapC<T> w(flipped.data(), co, static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < is.n; ++n) {
      im2col(input.plane(n, 0), is.c, is.h, is.w, g.out_h, g.out_w, f, 1, pt, pl, cols);
      Map<T>(out.plane(n, 0), co, static_cast<Eigen::Index>(cols_n)).noalias() =
          w * MapC<T>(cols, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols_n));
    }
  } else {
    const std::size_t k = spec.out_channels * f * f;
    const std::size_t cols_n = is.h * is.w;
    T* dcols = scratch<T>(1, k * cols_n);
    MapC<T> w(weights.ptr(), ci, static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < is.n; ++n) {
      Map<T>(dcols, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols_n)).noalias() =
          w.transpose() * MapC<T>(input.plane(n, 0), ci, static_cast<Eigen::Index>(cols_n));
      col2im(dcols, spec.out_channels, g.out_h, g.out_w, is.h, is.w, f, spec.stride,
             static_cast<std::ptrdiff_t>(g.pad_top), static_cast<std::ptrdiff_t>(g.pad_left), out.plane(n, 0));
    }
  }
  add_bias(out, bias);
  require_finite(out, "transposed_conv2d");
  return out;
}

template <typename T>
ConvGrads<T> transposed_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                        const BasicTensor<T>& grad_out, const ConvSpec& spec,
                                        bool need_input_grad) {
  if (!spec.transposed) throw Error("transposed_conv2d_backward: spec.transposed must be set");
  const Shape& is = input.shape();
  if (is.c != spec.in_channels) throw Error("transposed_conv2d_backward: input channel mismatch");
  check_weights(weights, spec.in_channels, spec.out_channels, spec, "transposed_conv2d_backward");
  const ConvGeometry g = resolve_geometry(spec, is.h, is.w);
  const Shape want{is.n, spec.out_channels, g.out_h, g.out_w};
  if (grad_out.shape() != want)
    throw Error("transposed_conv2d_backward: grad_out shaped " + to_string(grad_out.shape()) +
                ", expected " + to_string(want));

  const std::size_t f = spec.kernel;
  const std::size_t k = spec.out_channels * f * f;
  const std::size_t cols_n = is.h * is.w;
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(cols_n);
  const auto ci = static_cast<Eigen::Index>(spec.in_channels);

  ConvGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  if (need_input_grad) grads.input = BasicTensor<T>(is);
  accumulate_bias_grad(grad_out, grads.bias);

  if (spec.stride == 1 && spec.in_channels <= spec.out_channels) {
    // Patch matrix over the (narrower) input: the flipped-kernel convolution route.
    const auto co = static_cast<Eigen::Index>(spec.out_channels);
    const std::vector<T> flipped = flip_transpose(weights);
    const std::size_t kf = spec.in_channels * f * f;
    const std::size_t n_out = g.out_h * g.out_w;
    const auto ekf = static_cast<Eigen::Index>(kf);
    const auto eno = static_cast<Eigen::Index>(n_out);
    const auto pt = static_cast<std::ptrdiff_t>(f - 1) - static_cast<std::ptrdiff_t>(g.pad_top);
    const auto pl = static_cast<std::ptrdiff_t>(f - 1) - static_cast<std::ptrdiff_t>(g.pad_left);
    T* cols = scratch<T>(0, kf * n_out);
    T* dcols = need_input_grad ? scratch<T>(1, kf * n_out) : nullptr;
    RowMat<T> dflip = RowMat<T>::Zero(co, ekf);
    MapC<T> wf(flipped.data(), co, ekf);
    for (std::size_t n = 0; n < is.n; ++n) {
      MapC<T> dy(grad_out.plane(n, 0), co, eno);
      im2col(input.plane(n, 0), is.c, is.h, is.w, g.out_h, g.out_w, f, 1, pt, pl, cols);
      dflip.noalias() += dy * MapC<T>(cols, ekf, eno).transpose();
      if (need_input_grad) {
        Map<T>(dcols, ekf, eno).noalias() = wf.transpose() * dy;
        col2im(dcols, is.c, is.h, is.w, g.out_h, g.out_w, f, 1, pt, pl, grads.input.plane(n, 0));
      }
    }
    for (std::size_t i = 0; i < spec.in_channels; ++i)
      for (std::size_t o = 0; o < spec.out_channels; ++o)
        for (std::size_t ky = 0; ky < f; ++ky)
          for (std::size_t kx = 0; kx < f; ++kx)
            grads.weights.at(i, o, ky, kx) = dflip(static_cast<Eigen::Index>(o),
                                                   static_cast<Eigen::Index>((i * f + (f - 1 - ky)) * f + (f - 1 - kx)));
    return grads;
  }

  T* cols = scratch<T>(0, k * cols_n);
  MapC<T> w(weights.ptr(), ci, ek);
  Map<T> dw(grads.weights.ptr(), ci, ek);
  for (std::size_t n = 0; n < is.n; ++n) {
    im2col(grad_out.plane(n, 0), spec.out_channels, g.out_h, g.out_w, is.h, is.w, f, spec.stride,
           static_cast<std::ptrdiff_t>(g.pad_top), static_cast<std::ptrdiff_t>(g.pad_left), cols);
    MapC<T> c(cols, ek, en);
    dw.noalias() += MapC<T>(input.plane(n, 0), ci, en) * c.transpose();
    if (need_input_grad) Map<T>(grads.input.plane(n, 0), ci, en).noalias() = w * c;
  }
  return grads;
}

PoolSwitches PoolSwitches::cycled(std::size_t channels) const {
  if (pooled.c == 0) throw Error("PoolSwitches::cycled: empty switches");
  if (channels == pooled.c) return *this;
  PoolSwitches out;
  out.pooled = Shape{pooled.n, channels, pooled.h, pooled.w};
  out.source_h = source_h;
  out.source_w = source_w;
  out.index.resize(out.pooled.numel());
  const std::size_t plane = pooled.plane();
  for (std::size_t n = 0; n < pooled.n; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const auto* src = index.data() + (n * pooled.c + c % pooled.c) * plane;
      std::copy_n(src, plane, out.index.data() + (n * channels + c) * plane);
    }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, PoolSwitches> maxpool2x2(const BasicTensor<T>& input, PoolEdge edge) {
  const Shape& s = input.shape();
  if ((s.h % 2 != 0 || s.w % 2 != 0) && edge == PoolEdge::Reject)
    throw Error("maxpool2x2: odd spatial size " + to_string(s));
  const std::size_t oh = ceil_div(s.h, 2);
  const std::size_t ow = ceil_div(s.w, 2);
  BasicTensor<T> out(s.n, s.c, oh, ow);
  PoolSwitches sw{Shape{s.n, s.c, oh, ow}, s.h, s.w, std::vector<std::uint8_t>(s.n * s.c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = input.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::uint8_t arg = 0;
          bool seen = false;
          for (std::uint8_t i = 0; i < 4; ++i) {
            const std::size_t iy = 2 * y + i / 2;
            const std::size_t ix = 2 * x + i % 2;
            if (iy >= s.h || ix >= s.w) continue;
            const T v = p[iy * s.w + ix];
            if (!seen || v > best) {
              best = v;
              arg = i;
              seen = true;
            }
          }
          out[o] = best;
          sw.index[o] = arg;
        }
    }
  return {std::move(out), std::move(sw)};
}

template <typename T>
BasicTensor<T> unpool2x2(const BasicTensor<T>& input, const PoolSwitches& switches) {
  const Shape& s = input.shape();
  if (s != switches.pooled)
    throw Error("unpool2x2: input shaped " + to_string(s) + ", switches recorded for " +
                to_string(switches.pooled));
  BasicTensor<T> out(s.n, s.c, switches.source_h, switches.source_w);
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x, ++o) {
          const std::uint8_t i = switches.index[o];
          const std::size_t iy = 2 * y + i / 2;
          const std::size_t ix = 2 * x + i % 2;
          if (i > 3 || iy >= switches.source_h || ix >= switches.source_w)
            throw Error("unpool2x2: switch index outside its window");
          p[iy * switches.source_w + ix] = input[o];
        }
    }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, const PoolSwitches& switches) {
  return unpool2x2(grad_out, switches);
}

template <typename T>
BasicTensor<T> unpool2x2_backward(const BasicTensor<T>& grad_out, const PoolSwitches& switches) {
  const Shape& ps = switches.pooled;
  const Shape want{ps.n, ps.c, switches.source_h, switches.source_w};
  if (grad_out.shape() != want)
    throw Error("unpool2x2_backward: grad_out shaped " + to_string(grad_out.shape()) + ", expected " +
                to_string(want));
  BasicTensor<T> out(ps);
  std::size_t o = 0;
  for (std::size_t n = 0; n < ps.n; ++n)
    for (std::size_t c = 0; c < ps.c; ++c) {
      const T* p = grad_out.plane(n, c);
      for (std::size_t y = 0; y < ps.h; ++y)
        for (std::size_t x = 0; x < ps.w; ++x, ++o) {
          const std::uint8_t i = switches.index[o];
          if (i > 3) throw Error("unpool2x2_backward: switch index outside its window");
          out[o] = p[(2 * y + i / 2) * switches.source_w + 2 * x + i % 2];
        }
    }
  return out;
}

namespace {

template <typename T>
BasicTensor<T> spread2x(const BasicTensor<T>& input, T scale) {
  const Shape& s = input.shape();
  BasicTensor<T> out(s.n, s.c, 2 * s.h, 2 * s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < 2 * s.h; ++y)
        for (std::size_t x = 0; x < 2 * s.w; ++x) dst[y * 2 * s.w + x] = src[(y / 2) * s.w + x / 2] * scale;
    }
  return out;
}

template <typename T>
BasicTensor<T> gather2x(const BasicTensor<T>& grad_out, T scale) {
  const Shape& s = grad_out.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw Error("upsample backward: odd gradient extent " + to_string(s));
  BasicTensor<T> out(s.n, s.c, s.h / 2, s.w / 2);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = grad_out.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.h / 2; ++y)
        for (std::size_t x = 0; x < s.w / 2; ++x) {
          const T* a = src + 2 * y * s.w + 2 * x;
          dst[y * (s.w / 2) + x] = (a[0] + a[1] + a[s.w] + a[s.w + 1]) * scale;
        }
    }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input) {
  return spread2x(input, T(1));
}
template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out) {
  return gather2x(grad_out, T(1));
}
template <typename T>
BasicTensor<T> upsample_average2x(const BasicTensor<T>& input) {
  return spread2x(input, T(0.25));
}
template <typename T>
BasicTensor<T> upsample_average2x_backward(const BasicTensor<T>& grad_out) {
  return gather2x(grad_out, T(0.25));
}

template <typename T>
BasicTensor<T> avgpool_same(const BasicTensor<T>& input, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw Error("avgpool_same: window must be odd");
  const Shape& s = input.shape();
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  const auto h = static_cast<std::ptrdiff_t>(s.h);
  const auto w = static_cast<std::ptrdiff_t>(s.w);
  const T inv_area = T(1) / static_cast<T>(window * window);
  BasicTensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = input.plane(n, c);
      T* q = out.plane(n, c);
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          T acc = 0;
          for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
            for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
              acc += p[yy * w + xx];
          q[y * w + x] = acc * inv_area;
        }
    }
  return out;
}

template <typename T>
BasicTensor<T> avgpool_same_backward(const BasicTensor<T>& grad_out, std::size_t window) {
  return avgpool_same(grad_out, window);
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  require_same_shape(grad_out, output, "relu_backward");
  BasicTensor<T> out(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) out[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  // Clamped so the result stays strictly inside (0, 1) even when saturated.
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T v = T(1) / (T(1) + std::exp(-input[i]));
    out[i] = std::clamp(v, lo, hi);
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  require_same_shape(grad_out, output, "sigmoid_backward");
  BasicTensor<T> out(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) out[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  return out;
}

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "hadamard");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw Error("concat_channels: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  BasicTensor<T> out(sa.n, sa.c + sb.c, sa.h, sa.w);
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.plane(n, 0), sa.sample(), out.plane(n, 0));
    std::copy_n(b.plane(n, 0), sb.sample(), out.plane(n, sa.c));
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, std::size_t first) {
  const Shape& s = t.shape();
  if (first > s.c) throw Error("split_channels: split point beyond channel count");
  BasicTensor<T> a(s.n, first, s.h, s.w);
  BasicTensor<T> b(s.n, s.c - first, s.h, s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(t.plane(n, 0), a.shape().sample(), a.plane(n, 0));
    std::copy_n(t.plane(n, first), b.shape().sample(), b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void sgd_momentum_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdHyper& hyper) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw Error("sgd_momentum_step: parameter, gradient and velocity sizes differ");
  if (!(hyper.lr >= 0.0) || !(hyper.momentum >= 0.0 && hyper.momentum < 1.0) || !(hyper.weight_decay >= 0.0))
    throw Error("sgd_momentum_step: invalid hyper-parameters");
  const T lr = static_cast<T>(hyper.lr);
  const T mom = static_cast<T>(hyper.momentum);
  const T decay2 = static_cast<T>(2.0 * hyper.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!std::isfinite(param[i]) || !std::isfinite(grad[i]) || !std::isfinite(velocity[i]))
      throw Error("sgd_momentum_step: non-finite input at index " + std::to_string(i));
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mom * velocity[i] + (grad[i] + decay2 * param[i]);
    param[i] -= lr * velocity[i];
  }
}

#define MSCNN_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>, const ConvSpec&); \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                        const ConvSpec&, bool);                                                    \
  template BasicTensor<T> transposed_conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,      \
                                            const ConvSpec&);                                                      \
  template ConvGrads<T> transposed_conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                   const BasicTensor<T>&, const ConvSpec&, bool);                  \
  template std::pair<BasicTensor<T>, PoolSwitches> maxpool2x2(const BasicTensor<T>&, PoolEdge);                    \
  template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&, const PoolSwitches&);                         \
  template BasicTensor<T> unpool2x2(const BasicTensor<T>&, const PoolSwitches&);                                   \
  template BasicTensor<T> unpool2x2_backward(const BasicTensor<T>&, const PoolSwitches&);                          \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                               \
  template BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>&);                                      \
  template BasicTensor<T> upsample_average2x(const BasicTensor<T>&);                                               \
  template BasicTensor<T> upsample_average2x_backward(const BasicTensor<T>&);                                      \
  template BasicTensor<T> avgpool_same(const BasicTensor<T>&, std::size_t);                                        \
  template BasicTensor<T> avgpool_same_backward(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>&, std::size_t);           \
  template void sgd_momentum_step(std::span<T>, std::span<const T>, std::span<T>, const SgdHyper&);

MSCNN_INSTANTIATE_OPS(float)
MSCNN_INSTANTIATE_OPS(double)

#undef MSCNN_INSTANTIATE_OPS

}  // namespace mscnn
