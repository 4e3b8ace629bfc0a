#pragma once

// Gated fusion of the current-frame and reference-frame branch outputs.
//
//   G = sigmoid(conv1x1(avgpool(concat(f_cur, f_ref))) + bias)
//   additive:       G * f_cur + (1 - G) * f_ref
//   multiplicative: (G * f_cur) * ((1 - G) * f_ref)

#include <cstdint>
#include <string>
#include <vector>

#include "mscnn/tensor.hpp"

namespace mscnn {

enum class FusionMode { Additive, Multiplicative };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

template <typename T>
struct FusionParameters {
  BasicTensor<T> weights;  // (c, 2c, 1, 1)
  std::vector<T> bias;     // c
  std::size_t pool_window = 3;
  FusionMode mode = FusionMode::Additive;

  std::size_t channels() const { return bias.size(); }
  void validate() const;

  static FusionParameters zeros(std::size_t channels, FusionMode mode = FusionMode::Additive,
                                std::size_t pool_window = 3);
  /// Uniform weights with standard deviation 1/sqrt(2c), zero bias.
  static FusionParameters init(std::size_t channels, std::uint64_t seed, FusionMode mode = FusionMode::Additive,
                               std::size_t pool_window = 3);
  template <typename U>
  FusionParameters<U> cast() const;
  friend bool operator==(const FusionParameters&, const FusionParameters&) = default;
};

template <typename T>
struct GateBundle {
  BasicTensor<T> fused_concat;  // (n, 2c, h, w)
  BasicTensor<T> pooled;        // avgpool of fused_concat
  BasicTensor<T> gate;          // G, (n, c, h, w)

  const BasicTensor<T>& gate_cur() const { return gate; }
  BasicTensor<T> gate_ref() const;
};

template <typename T>
struct FusionOutput {
  BasicTensor<T> fused;
  GateBundle<T> bundle;
};

template <typename T>
struct FusionGrads {
  BasicTensor<T> cur;
  BasicTensor<T> ref;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
FusionOutput<T> fuse_forward(const BasicTensor<T>& f_cur, const BasicTensor<T>& f_ref,
                             const FusionParameters<T>& params);

template <typename T>
FusionGrads<T> fuse_backward(const GateBundle<T>& bundle, const BasicTensor<T>& f_cur, const BasicTensor<T>& f_ref,
                             const FusionParameters<T>& params, const BasicTensor<T>& grad_fused);

struct GateChannelStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Mean, min and max of G per channel (pooled over batch and positions).
template <typename T>
std::vector<GateChannelStats> gate_statistics(const GateBundle<T>& bundle);

}  // namespace mscnn
