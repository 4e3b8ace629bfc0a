#pragma once

// Raw planar YUV 4:2:0 I/O, PGM images, overlapping patches, augmentation,
// the block-DCT codec proxy, and the patch-triple dataset.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mscnn/tensor.hpp"

namespace mscnn {

template <typename T>
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

  T& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  bool empty() const { return data.empty(); }
  friend bool operator==(const Plane&, const Plane&) = default;
};

using Plane8 = Plane<std::uint8_t>;
using PlaneF = Plane<float>;

struct YuvFrame {
  Plane8 y, u, v;
  friend bool operator==(const YuvFrame&, const YuvFrame&) = default;
};

struct YuvSequence {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<YuvFrame> frames;

  static YuvSequence blank(std::size_t width, std::size_t height, std::size_t frames);
  std::size_t frame_bytes() const { return width * height * 3 / 2; }
  friend bool operator==(const YuvSequence&, const YuvSequence&) = default;
};

YuvSequence read_yuv(const std::filesystem::path& path, std::size_t width, std::size_t height);
void write_yuv(const YuvSequence& seq, const std::filesystem::path& path);

/// Binary (P5) 8-bit PGM.
Plane8 read_pgm(const std::filesystem::path& path);
void write_pgm(const Plane8& plane, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Patch origins at multiples of `stride`, plus a final origin clamped so the
/// last patch touches the right/bottom border.
struct PatchGrid {
  std::size_t patch_size = 128;
  std::size_t stride = 10;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::size_t> xs;
  std::vector<std::size_t> ys;

  static PatchGrid make(std::size_t width, std::size_t height, std::size_t patch_size, std::size_t stride);
  std::size_t count() const { return xs.size() * ys.size(); }
  /// Origin of patch i (row-major over ys then xs).
  std::pair<std::size_t, std::size_t> origin(std::size_t i) const { return {xs[i % xs.size()], ys[i / xs.size()]}; }
};

template <typename T>
std::vector<Plane<T>> extract_patches(const Plane<T>& plane, const PatchGrid& grid);

/// Uniform average over overlapping contributions.
template <typename T>
Plane<T> reassemble(const std::vector<Plane<T>>& patches, const PatchGrid& grid);

// ---------------------------------------------------------------------------

struct AugmentVariant {
  int rotation = 0;  // degrees, clockwise
  double scale = 1.0;
  bool flip = false;
  friend bool operator==(const AugmentVariant&, const AugmentVariant&) = default;
};

struct AugmentationSpec {
  std::vector<int> rotations{0, 90, 180};
  std::vector<double> scales{1.0, 0.75, 0.5, 0.25};
  std::vector<bool> flips{false, true};

  /// Rotation-major, then scale, then flip.
  std::vector<AugmentVariant> variants() const;
  static AugmentationSpec identity_only() { return {{0}, {1.0}, {false}}; }
};

Plane8 rotate(const Plane8& image, int degrees);
Plane8 flip_horizontal(const Plane8& image);
/// Bilinear resampling to dimensions rounded to even; scale 1 is the identity.
Plane8 rescale(const Plane8& image, double scale);
Plane8 apply_variant(const Plane8& image, const AugmentVariant& variant);
std::vector<std::pair<AugmentVariant, Plane8>> augment(const Plane8& image, const AugmentationSpec& spec = {});

// ---------------------------------------------------------------------------

/// Per-8x8-block orthonormal DCT, uniform quantization with step
/// 2^((qp - 4) / 6), inverse DCT, rounding and clamping to [0, 255]. The block
/// is re-coded until it no longer changes, so applying the proxy twice equals
/// applying it once.
struct CodecProxyConfig {
  int qp = 37;
  std::size_t block = 8;
  int max_passes = 32;

  double qstep() const;
  void validate() const;
};

Plane8 codec_proxy(const Plane8& plane, const CodecProxyConfig& cfg);

/// x / 255 into a (1, 1, h, w) tensor.
Tensor normalize(const Plane8& plane);
/// round(clamp(x, 0, 1) * 255) from plane (n, c) of a tensor.
Plane8 denormalize(const Tensor& t, std::size_t n = 0, std::size_t c = 0);

// ---------------------------------------------------------------------------

struct SourceImage {
  std::string path;
  std::vector<Plane8> frames;  // luma planes
};

/// Loads every *.pgm and *.yuv file in `dir` (sorted by name). YUV files need
/// the frame dimensions.
std::vector<SourceImage> load_sources(const std::filesystem::path& dir, std::size_t yuv_width = 0,
                                      std::size_t yuv_height = 0);

struct ManifestEntry {
  std::size_t id = 0;
  std::string source;
  std::size_t frame = 0;
  std::size_t x = 0;
  std::size_t y = 0;
  int qp = 0;
  AugmentVariant augmentation;
};

/// Aligned 8-bit patch triples for one QP.
struct PatchStore {
  int qp = 0;
  std::size_t patch_size = 0;
  std::vector<std::uint8_t> current;
  std::vector<std::uint8_t> reference;
  std::vector<std::uint8_t> ground_truth;

  std::size_t count() const { return patch_size ? ground_truth.size() / (patch_size * patch_size) : 0; }
  void append(const Plane8& cur, const Plane8& ref, const Plane8& gt);
  friend bool operator==(const PatchStore&, const PatchStore&) = default;
};

struct DatasetSpec {
  std::vector<int> qps{22, 27, 32, 37};
  AugmentationSpec augmentation{};
  std::size_t patch_size = 128;
  std::size_t stride = 10;
};

struct Dataset {
  std::vector<PatchStore> stores;  // one per QP, in qps order
  std::vector<ManifestEntry> manifest;
  std::size_t skipped_variants = 0;  // augmented images smaller than a patch

  const PatchStore& store(int qp) const;
};

/// Ground truth = the augmented source frame; current = its codec-proxy
/// version; reference = the proxy version of the previous frame (frame 0
/// pairs with itself).
Dataset build_dataset(const std::vector<SourceImage>& sources, const DatasetSpec& spec);

/// Layout: dir/manifest.jsonl and dir/qp<QP>.tiles, each tile file being
/// "MSPT" | u32 version | u32 qp | u32 patch size | u32 count | count x (cur, ref, gt) tiles.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
PatchStore load_patch_store(const std::filesystem::path& dir, int qp);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
std::string manifest_line(const ManifestEntry& entry);

}  // namespace mscnn
