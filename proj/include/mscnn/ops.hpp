#pragma once

// Forward and backward primitives for the conv/deconv network. Every function
// is a pure function of its arguments; gradients are hand-derived.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mscnn/tensor.hpp"

namespace mscnn {

enum class Padding { Same, Explicit };

/// Geometry of one (possibly transposed) convolution layer.
///
/// Regular convolution weights are (out_channels, in_channels, f, f).
/// Transposed convolution weights are (in_channels, out_channels, f, f), i.e.
/// the weights of the regular convolution it is the adjoint of.
///
/// "Same" padding zero-pads so that a regular convolution produces
/// ceil(in / stride) outputs (any excess padding goes to the bottom/right) and
/// a transposed convolution produces in * stride outputs.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  std::size_t explicit_pad = 0;
  bool transposed = false;

  void validate() const;
};

/// Resolved spatial geometry for one spatial axis pair.
struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

/// Geometry of the regular convolution described by `spec` (or of the
/// transposed one; then in/out refer to the transposed op's input/output).
ConvGeometry resolve_geometry(const ConvSpec& spec, std::size_t in_h, std::size_t in_w);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                      const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_out, const ConvSpec& spec, bool need_input_grad = true);

template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 std::span<const T> bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> transposed_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                        const BasicTensor<T>& grad_out, const ConvSpec& spec,
                                        bool need_input_grad = true);

/// Argmax positions of a 2x2 max-pool. `index` holds one entry per pooled
/// cell: the window-local position dy * 2 + dx of the maximum.
struct PoolSwitches {
  Shape pooled{};
  std::size_t source_h = 0;
  std::size_t source_w = 0;
  std::vector<std::uint8_t> index;

  /// Switches for `channels` channels, channel k reusing channel k mod c.
  PoolSwitches cycled(std::size_t channels) const;
};

enum class PoolEdge { Reject, PadNegInf };

template <typename T>
std::pair<BasicTensor<T>, PoolSwitches> maxpool2x2(const BasicTensor<T>& input, PoolEdge edge = PoolEdge::Reject);

/// Routes pooled-gradient values back to the recorded argmax positions.
template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, const PoolSwitches& switches);

template <typename T>
BasicTensor<T> unpool2x2(const BasicTensor<T>& input, const PoolSwitches& switches);

/// Gathers the gradient at the switch positions.
template <typename T>
BasicTensor<T> unpool2x2_backward(const BasicTensor<T>& grad_out, const PoolSwitches& switches);

/// Nearest-neighbour 2x upsampling (each value replicated over its 2x2 cell).
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out);

/// Uniform 2x spreading: each value divided by 4 over its 2x2 cell.
template <typename T>
BasicTensor<T> upsample_average2x(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> upsample_average2x_backward(const BasicTensor<T>& grad_out);

/// Shape-preserving window mean; zero padding, divisor = window * window.
template <typename T>
BasicTensor<T> avgpool_same(const BasicTensor<T>& input, std::size_t window = 3);

/// The zero-padded box filter is self-adjoint, so this equals avgpool_same.
template <typename T>
BasicTensor<T> avgpool_same_backward(const BasicTensor<T>& grad_out, std::size_t window = 3);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
/// Gradient through relu given its forward output.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Splits along channels at `first` into (channels [0, first), channels [first, C)).
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, std::size_t first);

struct SgdHyper {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v' = momentum * v + (grad + 2 * weight_decay * param); param' = param - lr * v'.
/// Updates `param` and `velocity` in place.
template <typename T>
void sgd_momentum_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdHyper& hyper);

}  // namespace mscnn
