#include "mscnn/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mscnn/ops.hpp"

namespace mscnn {
namespace {

ConvSpec gate_conv(std::size_t c) {
  ConvSpec s;
  s.in_channels = 2 * c;
  s.out_channels = c;
  s.kernel = 1;
  return s;
}

}  // namespace

std::string to_string(FusionMode mode) { return mode == FusionMode::Additive ? "additive" : "multiplicative"; }

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "additive") return FusionMode::Additive;
  if (text == "multiplicative") return FusionMode::Multiplicative;
  throw Error("unknown fusion mode '" + text + "'");
}

template <typename T>
void FusionParameters<T>::validate() const {
  const std::size_t c = bias.size();
  if (c == 0) throw Error("fusion parameters: zero channels");
  if (weights.shape() != Shape{c, 2 * c, 1, 1})
    throw Error("fusion parameters: gate weights shaped " + to_string(weights.shape()) + " for " +
                std::to_string(c) + " channels");
  if (pool_window == 0 || pool_window % 2 == 0) throw Error("fusion parameters: pool window must be odd");
}

template <typename T>
FusionParameters<T> FusionParameters<T>::zeros(std::size_t channels, FusionMode mode, std::size_t pool_window) {
  FusionParameters p;
  p.weights = BasicTensor<T>(channels, 2 * channels, 1, 1);
  p.bias.assign(channels, T(0));
  p.mode = mode;
  p.pool_window = pool_window;
  p.validate();
  return p;
}

template <typename T>
FusionParameters<T> FusionParameters<T>::init(std::size_t channels, std::uint64_t seed, FusionMode mode,
                                              std::size_t pool_window) {
  FusionParameters p = zeros(channels, mode, pool_window);
  std::mt19937_64 rng(seed);
  const double half_width = std::sqrt(3.0 / static_cast<double>(2 * channels));
  for (T& w : p.weights.data()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    w = static_cast<T>((2.0 * u - 1.0) * half_width);
  }
  return p;
}

template <typename T>
template <typename U>
FusionParameters<U> FusionParameters<T>::cast() const {
  FusionParameters<U> out;
  out.weights = weights.template cast<U>();
  out.bias.assign(bias.begin(), bias.end());
  out.pool_window = pool_window;
  out.mode = mode;
  return out;
}

template <typename T>
BasicTensor<T> GateBundle<T>::gate_ref() const {
  BasicTensor<T> out(gate.shape());
  for (std::size_t i = 0; i < gate.numel(); ++i) out[i] = T(1) - gate[i];
  return out;
}

template <typename T>
FusionOutput<T> fuse_forward(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_ref,
                             const FusionParameters<T>& params) {
  params.validate();
  require_same_shape(f_cur, f_ref, "fuse_forward");
  if (f_cur.shape().c != params.channels())
    throw Error("fuse_forward: inputs have " + std::to_string(f_cur.shape().c) + " channels, gate expects " +
                std::to_string(params.channels()));

  FusionOutput<T> out;
  GateBundle<T>& b = out.bundle;
  b.fused_concat = concat_channels(f_cur, f_ref);
  b.pooled = avgpool_same(b.fused_concat, params.pool_window);
  b.gate = sigmoid(conv2d<T>(b.pooled, params.weights, params.bias, gate_conv(params.channels())));

  out.fused = BasicTensor<T>(f_cur.shape());
  for (std::size_t i = 0; i < f_cur.numel(); ++i) {
    const T g = b.gate[i];
    const T g_ref = T(1) - g;
    out.fused[i] = params.mode == FusionMode::Additive ? g * f_cur[i] + g_ref * f_ref[i]
                                                       : (g * f_cur[i]) * (g_ref * f_ref[i]);
  }
  require_finite(out.fused, "fuse_forward");
  return out;
}

template <typename T>
FusionGrads<T> fuse_backward(const GateBundle<T>& bundle, const BasicTensor<T>& f_cur, const BasicTensor<T>& f_ref,
                             const FusionParameters<T>& params, const BasicTensor<T>& grad_fused) {
  params.validate();
  require_same_shape(f_cur, f_ref, "fuse_backward");
  require_same_shape(f_cur, grad_fused, "fuse_backward");
  require_same_shape(f_cur, bundle.gate, "fuse_backward");

  FusionGrads<T> grads;
  grads.cur = BasicTensor<T>(f_cur.shape());
  grads.ref = BasicTensor<T>(f_cur.shape());
  BasicTensor<T> grad_gate(f_cur.shape());
  for (std::size_t i = 0; i < f_cur.numel(); ++i) {
    const T g = bundle.gate[i];
    const T g_ref = T(1) - g;
    const T d = grad_fused[i];
    if (params.mode == FusionMode::Additive) {
      grads.cur[i] = g * d;
      grads.ref[i] = g_ref * d;
      grad_gate[i] = (f_cur[i] - f_ref[i]) * d;
    } else {
      const T gg = g * g_ref;
      grads.cur[i] = gg * f_ref[i] * d;
      grads.ref[i] = gg * f_cur[i] * d;
      grad_gate[i] = (T(1) - T(2) * g) * f_cur[i] * f_ref[i] * d;
    }
  }
  const BasicTensor<T> grad_logits = sigmoid_backward(grad_gate, bundle.gate);
  ConvGrads<T> cg = conv2d_backward(bundle.pooled, params.weights, grad_logits, gate_conv(params.channels()));
  grads.weights = std::move(cg.weights);
  grads.bias = std::move(cg.bias);
  const BasicTensor<T> grad_concat = avgpool_same_backward(cg.input, params.pool_window);
  auto [gc, gr] = split_channels(grad_concat, params.channels());
  for (std::size_t i = 0; i < f_cur.numel(); ++i) {
    grads.cur[i] += gc[i];
    grads.ref[i] += gr[i];
  }
  return grads;
}

template <typename T>
std::vector<GateChannelStats> gate_statistics(const GateBundle<T>& bundle) {
  const Shape& s = bundle.gate.shape();
  std::vector<GateChannelStats> stats(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = bundle.gate.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double v = p[i];
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const double count = static_cast<double>(s.n * s.plane());
    stats[c] = {count > 0 ? sum / count : 0.0, lo, hi};
  }
  return stats;
}

#define MSCNN_INSTANTIATE_FUSION(T)                                                                               \
  template struct FusionParameters<T>;                                                                            \
  template struct GateBundle<T>;                                                                                  \
  template FusionOutput<T> fuse_forward(const BasicTensor<T>&, const BasicTensor<T>&, const FusionParameters<T>&); \
  template FusionGrads<T> fuse_backward(const GateBundle<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                        const FusionParameters<T>&, const BasicTensor<T>&);                       \
  template std::vector<GateChannelStats> gate_statistics(const GateBundle<T>&);

MSCNN_INSTANTIATE_FUSION(float)
MSCNN_INSTANTIATE_FUSION(double)
template FusionParameters<double> FusionParameters<float>::cast<double>() const;
template FusionParameters<float> FusionParameters<double>::cast<float>() const;

#undef MSCNN_INSTANTIATE_FUSION

}  // namespace mscnn
