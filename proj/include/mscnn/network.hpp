#pragma once

// One conv/deconv branch of the filter network: ten layers, three max-pools in
// the encoder, a stride-2 convolution at the bottleneck, and a mirrored
// decoder that restores the input resolution before a residual add.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mscnn/ops.hpp"
#include "mscnn/tensor.hpp"

namespace mscnn {

enum class LayerKind { Conv, Transposed };
enum class Activation { Relu, Linear };
enum class Upsampling { Unpool, Nearest, Average };
enum class FusionPoint { Reconstruction, Features };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t filters = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Activation activation = Activation::Relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Decoder ablation. `UnpoolDeconv` with depth N in 1..3 keeps the first N
/// transposed layers followed by the 1x1 projection; depths 4 and 5 have the
/// same structure as `Full`.
struct DecoderVariant {
  enum class Kind { Full, PaddingUpsampling, UnpoolDeconv, AverageUpPooling, Custom };
  Kind kind = Kind::Full;
  int depth = 5;

  std::string name() const;
  static DecoderVariant parse(const std::string& text);
  friend bool operator==(const DecoderVariant&, const DecoderVariant&) = default;
};

struct NetworkConfig {
  std::vector<LayerSpec> layers;
  /// Layer indices after which a 2x2 max-pool runs.
  std::vector<std::size_t> pool_after;
  /// Layer indices before which a 2x up-sampling runs (repeats allowed). The
  /// k-th up-sampling pairs with the (P-1-k)-th pool.
  std::vector<std::size_t> unpool_before;
  Upsampling upsampling = Upsampling::Unpool;
  std::size_t input_channels = 1;
  FusionPoint fusion_point = FusionPoint::Reconstruction;
  DecoderVariant variant{};
  PoolEdge pool_edge = PoolEdge::Reject;

  /// The ten-layer network 96(9)-32(7)-64(5)-32(3)-16(1)-128[3]-64[5]-32[7]-64[9]-1(1).
  static NetworkConfig canonical(std::size_t input_channels = 1);
  static NetworkConfig for_variant(DecoderVariant variant, std::size_t input_channels = 1);

  /// Throws Error when the layer chain or pool plan is inconsistent.
  void validate() const;
  ConvSpec conv_spec(std::size_t layer) const;
  std::size_t layer_in_channels(std::size_t layer) const;
  /// Spatial factor the input side length must be divisible by.
  std::size_t downsampling_factor() const;
  /// Channels of the tensor fed to the last layer.
  std::size_t feature_channels() const;

  /// Deterministic text form; the checkpoint stores it and digests it.
  std::string to_text() const;
  static NetworkConfig from_text(const std::string& text);
  std::uint64_t digest() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Execution order of a branch: layers interleaved with pool/up-sampling steps.
struct Step {
  enum class Kind { Layer, Pool, Up };
  Kind kind;
  std::size_t index;  // layer index, or pool slot
};
std::vector<Step> build_plan(const NetworkConfig& config);

template <typename T>
struct LayerParams {
  BasicTensor<T> weights;
  std::vector<T> bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
struct BranchParameters {
  std::vector<LayerParams<T>> layers;

  std::size_t size() const;
  /// Zero-filled parameters with the shapes the config implies.
  static BranchParameters zeros(const NetworkConfig& config);
  template <typename U>
  BranchParameters<U> cast() const;
  friend bool operator==(const BranchParameters&, const BranchParameters&) = default;
};

template <typename T>
struct BranchActivations {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> layer_inputs;
  std::vector<BasicTensor<T>> outputs;  // F_1 .. F_L, post-activation
  std::vector<PoolSwitches> switches;   // one per pool slot
  BasicTensor<T> head_input;            // tensor fed to the last layer
  BasicTensor<T> reconstruction;        // F_L + input plane 0; empty if stopped early
};

template <typename T>
struct BranchGradients {
  BranchParameters<T> params;
  BasicTensor<T> input;
};

/// Uniform zero-mean weights with standard deviation 1/sqrt(in_channels * f^2), zero biases.
template <typename T>
BranchParameters<T> init_parameters(const NetworkConfig& config, std::uint64_t seed);

/// Runs the branch. With `stop_before_last` the last layer is skipped and no
/// reconstruction is produced (used when fusing intermediate features).
template <typename T>
BranchActivations<T> branch_forward(const BranchParameters<T>& params, const NetworkConfig& config,
                                    const BasicTensor<T>& patch, bool stop_before_last = false);

/// Reverse pass. `grad_top` is the gradient with respect to the
/// reconstruction, or with respect to `head_input` when the forward stopped
/// before the last layer. `output_grads` optionally adds gradients on the
/// layer outputs (a prefix of the computed outputs, empty tensors meaning zero).
template <typename T>
BranchGradients<T> branch_backward(const BranchParameters<T>& params, const NetworkConfig& config,
                                   const BranchActivations<T>& activations, const BasicTensor<T>& grad_top,
                                   std::span<const BasicTensor<T>> output_grads = {}, bool need_input_grad = true);

/// Applies only the last layer plus the residual add to `features`.
template <typename T>
BasicTensor<T> head_forward(const LayerParams<T>& last, const NetworkConfig& config, const BasicTensor<T>& features,
                            const BasicTensor<T>& patch);

/// Returns the gradient with respect to `features`; parameter gradients go to `grad_last`.
template <typename T>
BasicTensor<T> head_backward(const LayerParams<T>& last, const NetworkConfig& config, const BasicTensor<T>& features,
                             const BasicTensor<T>& grad_reconstruction, LayerParams<T>& grad_last);

/// Sum over layers of n_{i-1} * f_i^2 * n_i + n_i, with n_0 = input channels.
std::size_t parameter_count(const NetworkConfig& config);
std::vector<std::size_t> layer_parameter_counts(const NetworkConfig& config);

/// Total printed in the original layer table (its per-layer rows do not follow dense chaining).
inline constexpr std::size_t kPublishedParameterTotal = 70596;

}  // namespace mscnn
