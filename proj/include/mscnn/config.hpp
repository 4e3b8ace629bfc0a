#pragma once

// INI run configuration shared by every command.

#include <filesystem>
#include <string>
#include <vector>

#include "mscnn/data.hpp"
#include "mscnn/fusion.hpp"
#include "mscnn/network.hpp"
#include "mscnn/training.hpp"

namespace mscnn {

struct RunConfig {
  // [network]
  DecoderVariant variant{};
  FusionPoint fusion_point = FusionPoint::Reconstruction;
  FusionMode fusion_mode = FusionMode::Additive;
  std::size_t gate_pool_window = 3;
  std::size_t input_channels = 1;

  TrainConfig train{};  // [train]
  LossConfig loss{};    // [loss]

  // [codec]
  std::vector<int> qps{22, 27, 32, 37};
  int codec_max_passes = 32;

  // [data]
  std::string sources;
  std::string dataset;
  std::size_t patch_size = 128;
  std::size_t stride = 10;
  bool augment = true;
  std::size_t yuv_width = 0;
  std::size_t yuv_height = 0;

  // [filter]
  bool overlap = false;
  std::size_t overlap_stride = 0;  // 0 = half a patch

  // [output]
  std::string out = "out";

  NetworkConfig network() const;
  DatasetSpec dataset_spec() const;
  void validate() const;

  /// Every key with its resolved value.
  std::string to_ini() const;
  /// Unknown sections or keys throw.
  static RunConfig from_ini(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Writes to_ini() as `effective_config.ini` under `dir`.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace mscnn
