#include "mscnn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mscnn {
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error("tile file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

void check_yuv_dims(std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || width % 2 || height % 2)
    throw Error("YUV 4:2:0 needs positive even dimensions, got " + std::to_string(width) + "x" +
                std::to_string(height));
}

std::uint8_t clamp_round(double v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); }

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::vector<std::size_t> o;
  for (std::size_t x = 0; x + patch <= extent; x += stride) o.push_back(x);
  if (o.back() + patch < extent) o.push_back(extent - patch);
  return o;
}

using Block = std::array<double, 64>;

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n) {
        const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        b[k * 8 + n] = scale * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
      }
    return b;
  }();
  return basis;
}

// Y = B X B^T, and the transpose for the inverse.
Block transform(const Block& x, bool inverse) {
  const auto& b = dct_basis();
  Block tmp{}, out{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += (inverse ? b[k * 8 + i] : b[i * 8 + k]) * x[k * 8 + j];
      tmp[i * 8 + j] = s;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[i * 8 + k] * (inverse ? b[k * 8 + j] : b[j * 8 + k]);
      out[i * 8 + j] = s;
    }
  return out;
}

using Pixels = std::array<std::uint8_t, 64>;

Pixels code_block_once(const Pixels& in, double qstep) {
  Block x;
  for (int i = 0; i < 64; ++i) x[i] = static_cast<double>(in[i]) - 128.0;
  Block c = transform(x, false);
  for (double& v : c) v = std::nearbyint(v / qstep) * qstep;
  const Block r = transform(c, true);
  Pixels out;
  for (int i = 0; i < 64; ++i) out[i] = clamp_round(r[i] + 128.0);
  return out;
}

// Iterates to a fixed point; on a cycle, returns its lexicographically
// smallest member, which is itself reached again from any cycle member.
Pixels code_block(const Pixels& in, double qstep, int max_passes) {
  std::vector<Pixels> seen{in};
  Pixels cur = in;
  for (int pass = 0; pass < max_passes; ++pass) {
    const Pixels next = code_block_once(cur, qstep);
    if (next == cur) return cur;
    auto hit = std::find(seen.begin(), seen.end(), next);
    if (hit != seen.end()) return *std::min_element(hit, seen.end());
    seen.push_back(next);
    cur = next;
  }
  return cur;
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

YuvSequence YuvSequence::blank(std::size_t width, std::size_t height, std::size_t frames) {
  check_yuv_dims(width, height);
  YuvSequence s;
  s.width = width;
  s.height = height;
  for (std::size_t f = 0; f < frames; ++f)
    s.frames.push_back({Plane8(width, height), Plane8(width / 2, height / 2, 128), Plane8(width / 2, height / 2, 128)});
  return s;
}

YuvSequence read_yuv(const fs::path& path, std::size_t width, std::size_t height) {
  check_yuv_dims(width, height);
  const std::vector<std::uint8_t> bytes = read_file(path);
  const std::size_t frame = width * height * 3 / 2;
  if (bytes.empty() || bytes.size() % frame != 0)
    throw Error("'" + path.string() + "' has " + std::to_string(bytes.size()) + " bytes, not a multiple of the " +
                std::to_string(width) + "x" + std::to_string(height) + " frame size " + std::to_string(frame));
  YuvSequence seq = YuvSequence::blank(width, height, bytes.size() / frame);
  auto src = bytes.begin();
  for (YuvFrame& f : seq.frames)
    for (Plane8* p : {&f.y, &f.u, &f.v}) {
      std::copy_n(src, p->data.size(), p->data.begin());
      src += static_cast<std::ptrdiff_t>(p->data.size());
    }
  return seq;
}

void write_yuv(const YuvSequence& seq, const fs::path& path) {
  check_yuv_dims(seq.width, seq.height);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(seq.frame_bytes() * seq.frames.size());
  for (const YuvFrame& f : seq.frames) {
    if (f.y.width != seq.width || f.y.height != seq.height || f.u.width != seq.width / 2 ||
        f.u.height != seq.height / 2 || f.v.width != seq.width / 2 || f.v.height != seq.height / 2)
      throw Error("write_yuv: frame planes do not match the sequence dimensions");
    for (const Plane8* p : {&f.y, &f.u, &f.v}) bytes.insert(bytes.end(), p->data.begin(), p->data.end());
  }
  write_file(path, bytes.data(), bytes.size());
}

Plane8 read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  auto token = [&] {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P5") throw Error("'" + path.string() + "' is not a binary PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw Error("'" + path.string() + "': malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw Error("'" + path.string() + "': only 8-bit PGM is supported");
  Plane8 p(w, h);
  in.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(p.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != p.data.size()) throw Error("'" + path.string() + "': truncated PGM");
  return p;
}

void write_pgm(const Plane8& plane, const fs::path& path) {
  std::string header = "P5\n" + std::to_string(plane.width) + " " + std::to_string(plane.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), plane.data.begin(), plane.data.end());
  write_file(path, bytes.data(), bytes.size());
}

PatchGrid PatchGrid::make(std::size_t width, std::size_t height, std::size_t patch_size, std::size_t stride) {
  if (patch_size == 0 || stride == 0) throw Error("patch grid: patch size and stride must be positive");
  if (width < patch_size || height < patch_size)
    throw Error("patch grid: " + std::to_string(width) + "x" + std::to_string(height) + " plane is smaller than a " +
                std::to_string(patch_size) + " patch");
  PatchGrid g;
  g.patch_size = patch_size;
  g.stride = stride;
  g.width = width;
  g.height = height;
  g.xs = axis_origins(width, patch_size, stride);
  g.ys = axis_origins(height, patch_size, stride);
  return g;
}

template <typename T>
std::vector<Plane<T>> extract_patches(const Plane<T>& plane, const PatchGrid& grid) {
  if (plane.width != grid.width || plane.height != grid.height)
    throw Error("extract_patches: plane does not match the grid dimensions");
  const std::size_t p = grid.patch_size;
  std::vector<Plane<T>> out;
  out.reserve(grid.count());
  for (std::size_t i = 0; i < grid.count(); ++i) {
    const auto [x0, y0] = grid.origin(i);
    Plane<T> patch(p, p);
    for (std::size_t y = 0; y < p; ++y)
      std::copy_n(&plane.at(x0, y0 + y), p, &patch.at(0, y));
    out.push_back(std::move(patch));
  }
  return out;
}

template <typename T>
Plane<T> reassemble(const std::vector<Plane<T>>& patches, const PatchGrid& grid) {
  if (patches.size() != grid.count())
    throw Error("reassemble: " + std::to_string(patches.size()) + " patches for a grid of " +
                std::to_string(grid.count()));
  const std::size_t p = grid.patch_size;
  std::vector<double> sum(grid.width * grid.height, 0.0);
  std::vector<std::uint32_t> hits(sum.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].width != p || patches[i].height != p) throw Error("reassemble: patch has the wrong size");
    const auto [x0, y0] = grid.origin(i);
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) {
        const std::size_t k = (y0 + y) * grid.width + x0 + x;
        sum[k] += static_cast<double>(patches[i].at(x, y));
        ++hits[k];
      }
  }
  Plane<T> out(grid.width, grid.height);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double v = sum[k] / hits[k];
    if constexpr (std::is_integral_v<T>)
      out.data[k] = clamp_round(v);
    else
      out.data[k] = static_cast<T>(v);
  }
  return out;
}

template std::vector<Plane8> extract_patches(const Plane8&, const PatchGrid&);
template std::vector<PlaneF> extract_patches(const PlaneF&, const PatchGrid&);
template Plane8 reassemble(const std::vector<Plane8>&, const PatchGrid&);
template PlaneF reassemble(const std::vector<PlaneF>&, const PatchGrid&);

std::vector<AugmentVariant> AugmentationSpec::variants() const {
  std::vector<AugmentVariant> v;
  for (int r : rotations)
    for (double s : scales)
      for (bool f : flips) v.push_back({r, s, f});
  return v;
}

Plane8 rotate(const Plane8& image, int degrees) {
  const int d = ((degrees % 360) + 360) % 360;
  const std::size_t w = image.width, h = image.height;
  switch (d) {
    case 0:
      return image;
    case 90: {
      Plane8 out(h, w);
      for (std::size_t y = 0; y < w; ++y)
        for (std::size_t x = 0; x < h; ++x) out.at(x, y) = image.at(y, h - 1 - x);
      return out;
    }
    case 180: {
      Plane8 out(w, h);
      for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = image.data[image.data.size() - 1 - i];
      return out;
    }
    case 270: {
      Plane8 out(h, w);
      for (std::size_t y = 0; y < w; ++y)
        for (std::size_t x = 0; x < h; ++x) out.at(x, y) = image.at(w - 1 - y, x);
      return out;
    }
    default:
      throw Error("rotate: only multiples of 90 degrees are supported");
  }
}

Plane8 flip_horizontal(const Plane8& image) {
  Plane8 out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) out.at(x, y) = image.at(image.width - 1 - x, y);
  return out;
}

Plane8 rescale(const Plane8& image, double scale) {
  if (!(scale > 0.0)) throw Error("rescale: scale must be positive");
  if (scale == 1.0) return image;
  auto even = [](double v) { return std::max<std::size_t>(2, 2 * static_cast<std::size_t>(std::lround(v / 2.0))); };
  const std::size_t nw = even(image.width * scale), nh = even(image.height * scale);
  const double sx = static_cast<double>(image.width) / nw, sy = static_cast<double>(image.height) / nh;
  Plane8 out(nw, nh);
  for (std::size_t y = 0; y < nh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < nw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * image.at(x0, y0) + wx * image.at(x1, y0);
      const double bot = (1 - wx) * image.at(x0, y1) + wx * image.at(x1, y1);
      out.at(x, y) = clamp_round((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

Plane8 apply_variant(const Plane8& image, const AugmentVariant& variant) {
  Plane8 out = rescale(rotate(image, variant.rotation), variant.scale);
  return variant.flip ? flip_horizontal(out) : out;
}

std::vector<std::pair<AugmentVariant, Plane8>> augment(const Plane8& image, const AugmentationSpec& spec) {
  if (image.empty()) throw Error("augment: empty image");
  std::vector<std::pair<AugmentVariant, Plane8>> out;
  for (const AugmentVariant& v : spec.variants()) out.emplace_back(v, apply_variant(image, v));
  return out;
}

double CodecProxyConfig::qstep() const { return std::exp2((qp - 4) / 6.0); }

void CodecProxyConfig::validate() const {
  if (qp < 0) throw Error("codec proxy: qp must be non-negative");
  if (block != 8) throw Error("codec proxy: only 8x8 blocks are supported");
  if (max_passes < 1) throw Error("codec proxy: max_passes must be positive");
}

Plane8 codec_proxy(const Plane8& plane, const CodecProxyConfig& cfg) {
  cfg.validate();
  if (plane.empty()) throw Error("codec proxy: empty plane");
  const std::size_t pw = (plane.width + 7) / 8 * 8, ph = (plane.height + 7) / 8 * 8;
  Plane8 padded(pw, ph);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x)
      padded.at(x, y) = plane.at(reflect(static_cast<std::ptrdiff_t>(x), plane.width),
                                 reflect(static_cast<std::ptrdiff_t>(y), plane.height));
  const double q = cfg.qstep();
  for (std::size_t by = 0; by < ph; by += 8)
    for (std::size_t bx = 0; bx < pw; bx += 8) {
      Pixels px;
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) px[y * 8 + x] = padded.at(bx + x, by + y);
      px = code_block(px, q, cfg.max_passes);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) padded.at(bx + x, by + y) = px[y * 8 + x];
    }
  Plane8 out(plane.width, plane.height);
  for (std::size_t y = 0; y < plane.height; ++y)
    std::copy_n(&padded.at(0, y), plane.width, &out.at(0, y));
  return out;
}

Tensor normalize(const Plane8& plane) {
  Tensor t(1, 1, plane.height, plane.width);
  for (std::size_t i = 0; i < plane.data.size(); ++i) t[i] = static_cast<float>(plane.data[i]) / 255.0f;
  return t;
}

Plane8 denormalize(const Tensor& t, std::size_t n, std::size_t c) {
  const Shape& s = t.shape();
  if (n >= s.n || c >= s.c) throw Error("denormalize: plane index out of range");
  Plane8 out(s.w, s.h);
  const float* p = t.plane(n, c);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    const double v = std::isnan(p[i]) ? 0.0 : std::clamp(static_cast<double>(p[i]), 0.0, 1.0);
    out.data[i] = clamp_round(v * 255.0);
  }
  return out;
}

std::vector<SourceImage> load_sources(const fs::path& dir, std::size_t yuv_width, std::size_t yuv_height) {
  if (!fs::is_directory(dir)) throw Error("source directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".pgm" || e.path().extension() == ".yuv"))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SourceImage> out;
  for (const fs::path& f : files) {
    SourceImage src{f.filename().string(), {}};
    if (f.extension() == ".pgm") {
      src.frames.push_back(read_pgm(f));
    } else {
      if (yuv_width == 0 || yuv_height == 0) throw Error("'" + f.string() + "' needs --width and --height");
      for (YuvFrame& fr : read_yuv(f, yuv_width, yuv_height).frames) src.frames.push_back(std::move(fr.y));
    }
    out.push_back(std::move(src));
  }
  if (out.empty()) throw Error("no .pgm or .yuv sources in '" + dir.string() + "'");
  return out;
}

void PatchStore::append(const Plane8& cur, const Plane8& ref, const Plane8& gt) {
  for (const Plane8* p : {&cur, &ref, &gt})
    if (p->width != patch_size || p->height != patch_size) throw Error("patch store: tile has the wrong size");
  current.insert(current.end(), cur.data.begin(), cur.data.end());
  reference.insert(reference.end(), ref.data.begin(), ref.data.end());
  ground_truth.insert(ground_truth.end(), gt.data.begin(), gt.data.end());
}

const PatchStore& Dataset::store(int qp) const {
  for (const PatchStore& s : stores)
    if (s.qp == qp) return s;
  throw Error("dataset has no patches for QP " + std::to_string(qp));
}

Dataset build_dataset(const std::vector<SourceImage>& sources, const DatasetSpec& spec) {
  if (sources.empty()) throw Error("build_dataset: no sources");
  if (spec.qps.empty()) throw Error("build_dataset: no QPs");
  Dataset ds;
  std::vector<std::vector<ManifestEntry>> per_qp(spec.qps.size());
  for (int qp : spec.qps) ds.stores.push_back({qp, spec.patch_size, {}, {}, {}});

  for (const SourceImage& src : sources) {
    if (src.frames.empty()) throw Error("build_dataset: source '" + src.path + "' has no frames");
    for (std::size_t f = 0; f < src.frames.size(); ++f) {
      for (const AugmentVariant& v : spec.augmentation.variants()) {
        const Plane8 gt = apply_variant(src.frames[f], v);
        if (gt.width < spec.patch_size || gt.height < spec.patch_size) {
          ++ds.skipped_variants;
          continue;
        }
        const Plane8 prev = f == 0 ? gt : apply_variant(src.frames[f - 1], v);
        const PatchGrid grid = PatchGrid::make(gt.width, gt.height, spec.patch_size, spec.stride);
        const auto gt_patches = extract_patches(gt, grid);
        for (std::size_t q = 0; q < spec.qps.size(); ++q) {
          const CodecProxyConfig codec{spec.qps[q]};
          const Plane8 cur = codec_proxy(gt, codec);
          const Plane8 ref = f == 0 ? cur : codec_proxy(prev, codec);
          const auto cur_patches = extract_patches(cur, grid);
          const auto ref_patches = extract_patches(ref, grid);
          for (std::size_t i = 0; i < grid.count(); ++i) {
            ds.stores[q].append(cur_patches[i], ref_patches[i], gt_patches[i]);
            const auto [x, y] = grid.origin(i);
            per_qp[q].push_back({0, src.path, f, x, y, spec.qps[q], v});
          }
        }
      }
    }
  }
  for (auto& entries : per_qp)
    for (ManifestEntry& e : entries) {
      e.id = ds.manifest.size();
      ds.manifest.push_back(std::move(e));
    }
  return ds;
}

std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["source"] = e.source;
  j["frame"] = e.frame;
  j["x"] = e.x;
  j["y"] = e.y;
  j["qp"] = e.qp;
  j["rot"] = e.augmentation.rotation;
  j["scale"] = e.augmentation.scale;
  j["flip"] = e.augmentation.flip;
  return j.dump();
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::string manifest;
  for (const ManifestEntry& e : dataset.manifest) manifest += manifest_line(e) + "\n";
  write_file(dir / "manifest.jsonl", manifest.data(), manifest.size());
  for (const PatchStore& s : dataset.stores) {
    std::vector<std::uint8_t> bytes{'M', 'S', 'P', 'T'};
    put_u32(bytes, 1);
    put_u32(bytes, static_cast<std::uint32_t>(s.qp));
    put_u32(bytes, static_cast<std::uint32_t>(s.patch_size));
    put_u32(bytes, static_cast<std::uint32_t>(s.count()));
    const std::size_t tile = s.patch_size * s.patch_size;
    for (std::size_t i = 0; i < s.count(); ++i)
      for (const auto* v : {&s.current, &s.reference, &s.ground_truth})
        bytes.insert(bytes.end(), v->begin() + i * tile, v->begin() + (i + 1) * tile);
    char name[32];
    std::snprintf(name, sizeof name, "qp%02d.tiles", s.qp);
    write_file(dir / name, bytes.data(), bytes.size());
  }
}

PatchStore load_patch_store(const fs::path& dir, int qp) {
  char name[32];
  std::snprintf(name, sizeof name, "qp%02d.tiles", qp);
  const fs::path path = dir / name;
  if (!fs::exists(path)) throw Error("no dataset for QP " + std::to_string(qp) + " at '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "MSPT"))
    throw Error("'" + path.string() + "' is not a tile file");
  std::size_t pos = 4;
  if (get_u32(bytes, pos) != 1) throw Error("'" + path.string() + "': unsupported tile file version");
  PatchStore s;
  s.qp = static_cast<int>(get_u32(bytes, pos));
  s.patch_size = get_u32(bytes, pos);
  const std::size_t count = get_u32(bytes, pos);
  const std::size_t tile = s.patch_size * s.patch_size;
  if (s.qp != qp) throw Error("'" + path.string() + "' holds QP " + std::to_string(s.qp));
  if (bytes.size() != pos + 3 * tile * count) throw Error("'" + path.string() + "': size does not match its header");
  for (std::size_t i = 0; i < count; ++i)
    for (auto* v : {&s.current, &s.reference, &s.ground_truth}) {
      v->insert(v->end(), bytes.begin() + pos, bytes.begin() + pos + tile);
      pos += tile;
    }
  return s;
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id");
      e.source = j.at("source");
      e.frame = j.at("frame");
      e.x = j.at("x");
      e.y = j.at("y");
      e.qp = j.at("qp");
      e.augmentation = {j.at("rot"), j.at("scale"), j.at("flip")};
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error("'" + path.string() + "': bad manifest line: " + ex.what());
    }
  }
  return out;
}

}  // namespace mscnn
