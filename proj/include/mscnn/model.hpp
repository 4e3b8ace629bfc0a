#pragma once

// The full filter: an upper branch on the current patch, a lower branch on the
// reference patch, and the gate that fuses them. Also the binary checkpoint.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mscnn/fusion.hpp"
#include "mscnn/network.hpp"

namespace mscnn {

template <typename T>
struct Model {
  NetworkConfig config;
  BranchParameters<T> upper;
  BranchParameters<T> lower;
  FusionParameters<T> fusion;

  /// Gate channel count at the configured fusion point.
  static std::size_t fusion_channels(const NetworkConfig& config);
  static Model zeros(const NetworkConfig& config, FusionMode mode = FusionMode::Additive, std::size_t pool_window = 3);
  /// Branch and gate seeds are derived from `seed`, so the two branches differ.
  static Model init(const NetworkConfig& config, std::uint64_t seed, FusionMode mode = FusionMode::Additive,
                    std::size_t pool_window = 3);

  std::size_t size() const { return upper.size() + lower.size() + fusion.weights.numel() + fusion.bias.size(); }

  /// Every parameter array in a fixed order: upper layers (weights, bias),
  /// lower layers, gate weights, gate bias.
  std::vector<std::span<T>> arrays();
  std::vector<std::span<const T>> arrays() const;

  template <typename U>
  Model<U> cast() const;
  friend bool operator==(const Model&, const Model&) = default;
};

template <typename T>
struct ModelForward {
  BranchActivations<T> upper;
  BranchActivations<T> lower;
  FusionOutput<T> fusion;
  BasicTensor<T> output;  // final reconstruction (n, 1, h, w)
};

template <typename T>
ModelForward<T> model_forward(const Model<T>& model, const BasicTensor<T>& current, const BasicTensor<T>& reference);

/// Gradients of a scalar objective given d/d(output) and optional gradients on
/// the upper branch's layer outputs. Returned in a Model-shaped container.
template <typename T>
Model<T> model_backward(const Model<T>& model, const ModelForward<T>& forward, const BasicTensor<T>& grad_output,
                        std::span<const BasicTensor<T>> upper_output_grads = {});

/// Checkpoint layout (little-endian):
///   "MSCN" | u32 version | u64 config digest | u32 n + n bytes config text |
///   u32 layer count | per branch (upper, lower), per layer:
///     u32 dims[4] | f32 weights | u32 bias count | f32 bias |
///   "FUSE" | u32 mode | u32 pool window | u32 dims[4] | f32 weights | u32 count | f32 bias
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model);
Model<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace mscnn
