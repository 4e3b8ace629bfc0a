#include "mscnn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mscnn {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& g) {
  require_same_shape(acc, g, "model_backward");
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

}  // namespace

template <typename T>
std::size_t Model<T>::fusion_channels(const NetworkConfig& config) {
  return config.fusion_point == FusionPoint::Reconstruction ? 1 : config.feature_channels();
}

template <typename T>
Model<T> Model<T>::zeros(const NetworkConfig& config, FusionMode mode, std::size_t pool_window) {
  config.validate();
  return Model{config, BranchParameters<T>::zeros(config), BranchParameters<T>::zeros(config),
               FusionParameters<T>::zeros(fusion_channels(config), mode, pool_window)};
}

template <typename T>
Model<T> Model<T>::init(const NetworkConfig& config, std::uint64_t seed, FusionMode mode, std::size_t pool_window) {
  config.validate();
  return Model{config, init_parameters<T>(config, splitmix(seed)), init_parameters<T>(config, splitmix(seed + 1)),
               FusionParameters<T>::init(fusion_channels(config), splitmix(seed + 2), mode, pool_window)};
}

template <typename T>
std::vector<std::span<T>> Model<T>::arrays() {
  std::vector<std::span<T>> out;
  for (auto* branch : {&upper, &lower})
    for (auto& l : branch->layers) {
      out.emplace_back(l.weights.data());
      out.emplace_back(l.bias);
    }
  out.emplace_back(fusion.weights.data());
  out.emplace_back(fusion.bias);
  return out;
}

template <typename T>
std::vector<std::span<const T>> Model<T>::arrays() const {
  std::vector<std::span<const T>> out;
  for (const auto* branch : {&upper, &lower})
    for (const auto& l : branch->layers) {
      out.emplace_back(l.weights.data());
      out.emplace_back(l.bias);
    }
  out.emplace_back(fusion.weights.data());
  out.emplace_back(fusion.bias);
  return out;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  return Model<U>{config, upper.template cast<U>(), lower.template cast<U>(), fusion.template cast<U>()};
}

template <typename T>
ModelForward<T> model_forward(const Model<T>& model, const BasicTensor<T>& current, const BasicTensor<T>& reference) {
  require_same_shape(current, reference, "model_forward");
  const NetworkConfig& cfg = model.config;
  ModelForward<T> fw;
  if (cfg.fusion_point == FusionPoint::Reconstruction) {
    fw.upper = branch_forward(model.upper, cfg, current);
    fw.lower = branch_forward(model.lower, cfg, reference);
    fw.fusion = fuse_forward(fw.upper.reconstruction, fw.lower.reconstruction, model.fusion);
    fw.output = fw.fusion.fused;
  } else {
    fw.upper = branch_forward(model.upper, cfg, current, true);
    fw.lower = branch_forward(model.lower, cfg, reference, true);
    fw.fusion = fuse_forward(fw.upper.head_input, fw.lower.head_input, model.fusion);
    fw.output = head_forward(model.upper.layers.back(), cfg, fw.fusion.fused, current);
  }
  return fw;
}

template <typename T>
Model<T> model_backward(const Model<T>& model, const ModelForward<T>& forward, const BasicTensor<T>& grad_output,
                        std::span<const BasicTensor<T>> upper_output_grads) {
  const NetworkConfig& cfg = model.config;
  require_same_shape(grad_output, forward.output, "model_backward");
  Model<T> grads = Model<T>::zeros(cfg, model.fusion.mode, model.fusion.pool_window);

  BasicTensor<T> grad_fused = grad_output;
  LayerParams<T> head_grad;
  const bool features = cfg.fusion_point == FusionPoint::Features;
  if (features) {
    grad_fused = head_backward(model.upper.layers.back(), cfg, forward.fusion.fused, grad_output, head_grad);
  }
  const BasicTensor<T>& fcur = features ? forward.upper.head_input : forward.upper.reconstruction;
  const BasicTensor<T>& fref = features ? forward.lower.head_input : forward.lower.reconstruction;
  FusionGrads<T> fg = fuse_backward(forward.fusion.bundle, fcur, fref, model.fusion, grad_fused);
  grads.fusion.weights = std::move(fg.weights);
  grads.fusion.bias = std::move(fg.bias);

  auto ug = branch_backward(model.upper, cfg, forward.upper, fg.cur, upper_output_grads, false);
  auto lg = branch_backward(model.lower, cfg, forward.lower, fg.ref, {}, false);
  grads.upper = std::move(ug.params);
  grads.lower = std::move(lg.params);
  if (features) {
    LayerParams<T>& last = grads.upper.layers.back();
    add_into(last.weights, head_grad.weights);
    for (std::size_t i = 0; i < last.bias.size(); ++i) last.bias[i] += head_grad.bias[i];
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32s(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  void tensor(const Tensor& t) {
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) u32(static_cast<std::uint32_t>(d));
    f32s(t.data());
  }
  void vec(const std::vector<float>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    f32s(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error("checkpoint: truncated file");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  void f32s(std::span<float> v) {
    need(4 * v.size());
    for (float& f : v) f = std::bit_cast<float>(u32());
  }
  Tensor tensor(const Shape& expected, const char* what) {
    Shape s;
    s.n = u32();
    s.c = u32();
    s.h = u32();
    s.w = u32();
    if (s != expected)
      throw Error(std::string("checkpoint: ") + what + " shaped " + to_string(s) + ", config implies " +
                  to_string(expected));
    Tensor t(s);
    f32s(t.data());
    return t;
  }
  std::vector<float> vec(std::size_t expected, const char* what) {
    const std::uint32_t n = u32();
    if (n != expected) throw Error(std::string("checkpoint: ") + what + " length mismatch");
    std::vector<float> v(n);
    f32s(v);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model) {
  Writer w;
  w.bytes("MSCN", 4);
  w.u32(kCheckpointVersion);
  w.u64(model.config.digest());
  const std::string text = model.config.to_text();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.u32(static_cast<std::uint32_t>(model.config.layers.size()));
  for (const auto* branch : {&model.upper, &model.lower}) {
    if (branch->layers.size() != model.config.layers.size())
      throw Error("checkpoint: branch layer count differs from config");
    for (const auto& l : branch->layers) {
      w.tensor(l.weights);
      w.vec(l.bias);
    }
  }
  w.bytes("FUSE", 4);
  w.u32(model.fusion.mode == FusionMode::Additive ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(model.fusion.pool_window));
  w.tensor(model.fusion.weights);
  w.vec(model.fusion.bias);
  return w.take();
}

Model<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "MSCN") throw Error("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t digest = r.u64();
  const std::uint32_t text_len = r.u32();
  NetworkConfig cfg = NetworkConfig::from_text(r.bytes(text_len));
  if (cfg.digest() != digest) throw Error("checkpoint: config digest mismatch");
  const std::uint32_t layers = r.u32();
  if (layers != cfg.layers.size()) throw Error("checkpoint: layer count differs from config");

  Model<float> m = Model<float>::zeros(cfg);
  for (auto* branch : {&m.upper, &m.lower})
    for (auto& l : branch->layers) {
      l.weights = r.tensor(l.weights.shape(), "layer weights");
      l.bias = r.vec(l.bias.size(), "layer bias");
    }
  if (r.bytes(4) != "FUSE") throw Error("checkpoint: missing fusion section");
  const std::uint32_t mode = r.u32();
  if (mode > 1) throw Error("checkpoint: unknown fusion mode");
  m.fusion.mode = mode == 0 ? FusionMode::Additive : FusionMode::Multiplicative;
  m.fusion.pool_window = r.u32();
  m.fusion.weights = r.tensor(m.fusion.weights.shape(), "gate weights");
  m.fusion.bias = r.vec(m.fusion.bias.size(), "gate bias");
  m.fusion.validate();
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return m;
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

#define MSCNN_INSTANTIATE_MODEL(T)                                                                                \
  template struct Model<T>;                                                                                       \
  template ModelForward<T> model_forward(const Model<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
  template Model<T> model_backward(const Model<T>&, const ModelForward<T>&, const BasicTensor<T>&,                \
                                   std::span<const BasicTensor<T>>);

MSCNN_INSTANTIATE_MODEL(float)
MSCNN_INSTANTIATE_MODEL(double)
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

#undef MSCNN_INSTANTIATE_MODEL

}  // namespace mscnn
