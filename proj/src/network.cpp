#include "mscnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace mscnn {
namespace {

const char* kind_name(LayerKind k) { return k == LayerKind::Conv ? "conv" : "deconv"; }
const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "linear"; }

const char* upsampling_name(Upsampling u) {
  switch (u) {
    case Upsampling::Unpool: return "unpool";
    case Upsampling::Nearest: return "nearest";
    case Upsampling::Average: return "average";
  }
  return "?";
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw Error("network config: expected an unsigned integer, got '" + s + "'");
  }
  if (pos != s.size()) throw Error("network config: expected an unsigned integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ',')) out.push_back(to_size(part));
  return out;
}

// Uniform in [0, 1) from the top 53 bits; independent of the standard library's distributions.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

constexpr std::size_t kCanonicalKernels[10] = {9, 7, 5, 3, 1, 3, 5, 7, 9, 1};
constexpr std::size_t kCanonicalFilters[10] = {96, 32, 64, 32, 16, 128, 64, 32, 64, 1};

}  // namespace

std::string DecoderVariant::name() const {
  switch (kind) {
    case Kind::Full: return "full";
    case Kind::PaddingUpsampling: return "padding-upsampling";
    case Kind::AverageUpPooling: return "average-up-pooling";
    case Kind::UnpoolDeconv: return "unpool-deconv" + std::to_string(depth);
    case Kind::Custom: return "custom";
  }
  return "?";
}

DecoderVariant DecoderVariant::parse(const std::string& text) {
  if (text == "full") return {Kind::Full, 5};
  if (text == "padding-upsampling") return {Kind::PaddingUpsampling, 5};
  if (text == "average-up-pooling") return {Kind::AverageUpPooling, 5};
  if (text == "custom") return {Kind::Custom, 0};
  const std::string prefix = "unpool-deconv";
  if (text.rfind(prefix, 0) == 0 && text.size() == prefix.size() + 1) {
    const int d = text.back() - '0';
    if (d >= 1 && d <= 5) return {Kind::UnpoolDeconv, d};
  }
  throw Error("unknown decoder variant '" + text + "'");
}

NetworkConfig NetworkConfig::canonical(std::size_t input_channels) {
  NetworkConfig cfg;
  cfg.input_channels = input_channels;
  for (std::size_t i = 0; i < 10; ++i) {
    LayerSpec l;
    l.kind = (i >= 5 && i <= 8) ? LayerKind::Transposed : LayerKind::Conv;
    l.filters = kCanonicalFilters[i];
    l.kernel = kCanonicalKernels[i];
    l.stride = (i == 3 || i == 5) ? 2 : 1;
    l.activation = i == 9 ? Activation::Linear : Activation::Relu;
    cfg.layers.push_back(l);
  }
  cfg.pool_after = {0, 1, 2};
  cfg.unpool_before = {6, 7, 8};
  return cfg;
}

NetworkConfig NetworkConfig::for_variant(DecoderVariant variant, std::size_t input_channels) {
  NetworkConfig cfg = canonical(input_channels);
  cfg.variant = variant;
  switch (variant.kind) {
    case DecoderVariant::Kind::Full: break;
    case DecoderVariant::Kind::Custom: throw Error("the custom variant has no canonical layer plan");
    case DecoderVariant::Kind::PaddingUpsampling: cfg.upsampling = Upsampling::Nearest; break;
    case DecoderVariant::Kind::AverageUpPooling: cfg.upsampling = Upsampling::Average; break;
    case DecoderVariant::Kind::UnpoolDeconv: {
      if (variant.depth < 1 || variant.depth > 5) throw Error("decoder depth must be in 1..5");
      const auto kept = static_cast<std::size_t>(std::min(variant.depth, 4));
      if (kept == 4) break;
      // Keep layers 0..4 (encoder), the first `kept` transposed layers, then the projection.
      std::vector<LayerSpec> layers(cfg.layers.begin(), cfg.layers.begin() + 5 + static_cast<std::ptrdiff_t>(kept));
      layers.push_back(cfg.layers.back());
      const std::size_t projection = layers.size() - 1;
      std::vector<std::size_t> ups;
      for (std::size_t canonical_before : cfg.unpool_before)
        ups.push_back(std::min(canonical_before, projection));
      cfg.layers = std::move(layers);
      cfg.unpool_before = std::move(ups);
      break;
    }
  }
  cfg.validate();
  return cfg;
}

std::size_t NetworkConfig::layer_in_channels(std::size_t layer) const {
  return layer == 0 ? input_channels : layers.at(layer - 1).filters;
}

ConvSpec NetworkConfig::conv_spec(std::size_t layer) const {
  const LayerSpec& l = layers.at(layer);
  ConvSpec s;
  s.in_channels = layer_in_channels(layer);
  s.out_channels = l.filters;
  s.kernel = l.kernel;
  s.stride = l.stride;
  s.padding = Padding::Same;
  s.transposed = l.kind == LayerKind::Transposed;
  return s;
}

std::vector<Step> build_plan(const NetworkConfig& config) {
  std::vector<Step> plan;
  std::size_t pool_slot = 0;
  std::size_t ups_done = 0;
  const std::size_t pools = config.pool_after.size();
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    for (std::size_t u : config.unpool_before)
      if (u == i) {
        if (ups_done >= pools) throw Error("network config: more up-sampling steps than pools");
        plan.push_back({Step::Kind::Up, pools - 1 - ups_done});
        ++ups_done;
      }
    plan.push_back({Step::Kind::Layer, i});
    if (std::find(config.pool_after.begin(), config.pool_after.end(), i) != config.pool_after.end())
      plan.push_back({Step::Kind::Pool, pool_slot++});
  }
  return plan;
}

void NetworkConfig::validate() const {
  if (layers.empty()) throw Error("network config: no layers");
  if (input_channels == 0) throw Error("network config: input_channels must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    conv_spec(i).validate();
    if (layers[i].filters == 0) throw Error("network config: layer " + std::to_string(i) + " has no filters");
  }
  if (layers.back().filters != 1) throw Error("network config: last layer must produce one channel");
  if (layers.back().activation != Activation::Linear) throw Error("network config: last layer must be linear");
  if (!std::is_sorted(pool_after.begin(), pool_after.end()) ||
      std::adjacent_find(pool_after.begin(), pool_after.end()) != pool_after.end())
    throw Error("network config: pool positions must be strictly increasing");
  if (!std::is_sorted(unpool_before.begin(), unpool_before.end()))
    throw Error("network config: up-sampling positions must be non-decreasing");
  if (pool_after.size() != unpool_before.size())
    throw Error("network config: pool count differs from up-sampling count");
  for (std::size_t p : pool_after)
    if (p + 1 >= layers.size()) throw Error("network config: pool after the last layer");
  for (std::size_t u : unpool_before)
    if (u == 0 || u >= layers.size()) throw Error("network config: up-sampling position out of range");

  // Trace resolution levels; each up-sampling must return to its pool's source level.
  int level = 0;
  std::vector<int> pool_source;
  for (const Step& s : build_plan(*this)) {
    switch (s.kind) {
      case Step::Kind::Layer: {
        const LayerSpec& l = layers[s.index];
        if (l.stride == 2) level += l.kind == LayerKind::Conv ? 1 : -1;
        break;
      }
      case Step::Kind::Pool: pool_source.push_back(level++); break;
      case Step::Kind::Up:
        if (pool_source[s.index] != level - 1)
          throw Error("network config: up-sampling step does not mirror its pool's resolution");
        --level;
        break;
    }
    if (level < 0) throw Error("network config: decoder up-samples beyond the input resolution");
  }
  if (level != 0) throw Error("network config: output resolution differs from input resolution");

  if (variant.kind == DecoderVariant::Kind::Full) {
    if (layers.size() != 10) throw Error("network config: full variant requires exactly 10 layers");
    for (std::size_t i = 0; i < 10; ++i)
      if (layers[i].kernel != kCanonicalKernels[i] || layers[i].filters != kCanonicalFilters[i])
        throw Error("network config: full variant requires the canonical kernels and filter counts");
  }
}

std::size_t NetworkConfig::downsampling_factor() const {
  std::size_t factor = 1, best = 1;
  for (const Step& s : build_plan(*this)) {
    if (s.kind == Step::Kind::Pool) factor *= 2;
    if (s.kind == Step::Kind::Up) factor /= 2;
    if (s.kind == Step::Kind::Layer && layers[s.index].stride == 2) {
      if (layers[s.index].kind == LayerKind::Conv) factor *= 2;
      else factor /= 2;
    }
    best = std::max(best, factor);
  }
  return best;
}

std::size_t NetworkConfig::feature_channels() const { return layer_in_channels(layers.size() - 1); }

std::string NetworkConfig::to_text() const {
  std::ostringstream out;
  out << "input_channels=" << input_channels << '\n';
  out << "variant=" << variant.name() << '\n';
  out << "upsampling=" << upsampling_name(upsampling) << '\n';
  out << "fusion_point=" << (fusion_point == FusionPoint::Reconstruction ? "reconstruction" : "features") << '\n';
  out << "pool_edge=" << (pool_edge == PoolEdge::Reject ? "reject" : "pad") << '\n';
  out << "pool_after=" << join(pool_after) << '\n';
  out << "unpool_before=" << join(unpool_before) << '\n';
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    out << "layer" << i << '=' << kind_name(l.kind) << ',' << l.filters << ',' << l.kernel << ',' << l.stride << ','
        << activation_name(l.activation) << '\n';
  }
  return out.str();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("network config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error("network config: missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  NetworkConfig cfg;
  cfg.input_channels = to_size(take("input_channels"));
  cfg.variant = DecoderVariant::parse(take("variant"));
  const std::string up = take("upsampling");
  if (up == "unpool") cfg.upsampling = Upsampling::Unpool;
  else if (up == "nearest") cfg.upsampling = Upsampling::Nearest;
  else if (up == "average") cfg.upsampling = Upsampling::Average;
  else throw Error("network config: unknown upsampling '" + up + "'");
  const std::string fp = take("fusion_point");
  if (fp == "reconstruction") cfg.fusion_point = FusionPoint::Reconstruction;
  else if (fp == "features") cfg.fusion_point = FusionPoint::Features;
  else throw Error("network config: unknown fusion_point '" + fp + "'");
  const std::string edge = take("pool_edge");
  if (edge == "reject") cfg.pool_edge = PoolEdge::Reject;
  else if (edge == "pad") cfg.pool_edge = PoolEdge::PadNegInf;
  else throw Error("network config: unknown pool_edge '" + edge + "'");
  cfg.pool_after = parse_list(take("pool_after"));
  cfg.unpool_before = parse_list(take("unpool_before"));
  for (std::size_t i = 0;; ++i) {
    auto it = kv.find("layer" + std::to_string(i));
    if (it == kv.end()) break;
    const auto f = split(it->second, ',');
    if (f.size() != 5) throw Error("network config: malformed layer entry '" + it->second + "'");
    LayerSpec l;
    if (f[0] == "conv") l.kind = LayerKind::Conv;
    else if (f[0] == "deconv") l.kind = LayerKind::Transposed;
    else throw Error("network config: unknown layer kind '" + f[0] + "'");
    l.filters = to_size(f[1]);
    l.kernel = to_size(f[2]);
    l.stride = to_size(f[3]);
    if (f[4] == "relu") l.activation = Activation::Relu;
    else if (f[4] == "linear") l.activation = Activation::Linear;
    else throw Error("network config: unknown activation '" + f[4] + "'");
    cfg.layers.push_back(l);
    kv.erase(it);
  }
  if (!kv.empty()) throw Error("network config: unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

std::uint64_t NetworkConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::size_t BranchParameters<T>::size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.numel() + l.bias.size();
  return n;
}

template <typename T>
BranchParameters<T> BranchParameters<T>::zeros(const NetworkConfig& config) {
  config.validate();
  BranchParameters<T> p;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const ConvSpec s = config.conv_spec(i);
    const Shape shape = s.transposed ? Shape{s.in_channels, s.out_channels, s.kernel, s.kernel}
                                     : Shape{s.out_channels, s.in_channels, s.kernel, s.kernel};
    p.layers.push_back({BasicTensor<T>(shape), std::vector<T>(s.out_channels, T(0))});
  }
  return p;
}

template <typename T>
template <typename U>
BranchParameters<U> BranchParameters<T>::cast() const {
  BranchParameters<U> out;
  for (const auto& l : layers)
    out.layers.push_back({l.weights.template cast<U>(), std::vector<U>(l.bias.begin(), l.bias.end())});
  return out;
}

template <typename T>
BranchParameters<T> init_parameters(const NetworkConfig& config, std::uint64_t seed) {
  BranchParameters<T> p = BranchParameters<T>::zeros(config);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const ConvSpec s = config.conv_spec(i);
    const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
    const double half_width = std::sqrt(3.0 / fan_in);
    for (T& w : p.layers[i].weights.data()) w = static_cast<T>((2.0 * uniform01(rng) - 1.0) * half_width);
  }
  return p;
}

namespace {

template <typename T>
BasicTensor<T> layer_forward(const LayerParams<T>& p, const ConvSpec& spec, const LayerSpec& layer,
                             const BasicTensor<T>& x) {
  BasicTensor<T> y = spec.transposed ? transposed_conv2d<T>(x, p.weights, p.bias, spec)
                                     : conv2d<T>(x, p.weights, p.bias, spec);
  return layer.activation == Activation::Relu ? relu(y) : y;
}

template <typename T>
BasicTensor<T> up_forward(const NetworkConfig& config, const BasicTensor<T>& x, const PoolSwitches& switches) {
  switch (config.upsampling) {
    case Upsampling::Unpool: return unpool2x2(x, switches.cycled(x.shape().c));
    case Upsampling::Nearest: return upsample_nearest2x(x);
    case Upsampling::Average: return upsample_average2x(x);
  }
  throw Error("unknown upsampling");
}

template <typename T>
BasicTensor<T> up_backward(const NetworkConfig& config, const BasicTensor<T>& g, const PoolSwitches& switches) {
  switch (config.upsampling) {
    case Upsampling::Unpool: return unpool2x2_backward(g, switches.cycled(g.shape().c));
    case Upsampling::Nearest: return upsample_nearest2x_backward(g);
    case Upsampling::Average: return upsample_average2x_backward(g);
  }
  throw Error("unknown upsampling");
}

template <typename T>
void add_plane0(BasicTensor<T>& dst, const BasicTensor<T>& residual_src) {
  const Shape& d = dst.shape();
  const Shape& s = residual_src.shape();
  if (d.n != s.n || d.h != s.h || d.w != s.w || d.c != 1)
    throw Error("residual add: output " + to_string(d) + " incompatible with input " + to_string(s));
  for (std::size_t n = 0; n < d.n; ++n) {
    T* p = dst.plane(n, 0);
    const T* q = residual_src.plane(n, 0);
    for (std::size_t i = 0; i < d.plane(); ++i) p[i] += q[i];
  }
}

template <typename T>
void check_params(const BranchParameters<T>& params, const NetworkConfig& config) {
  if (params.layers.size() != config.layers.size())
    throw Error("branch parameters have " + std::to_string(params.layers.size()) + " layers, config has " +
                std::to_string(config.layers.size()));
}

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& g) {
  if (g.empty()) return;
  if (acc.empty()) {
    acc = g;
    return;
  }
  require_same_shape(acc, g, "gradient accumulation");
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

}  // namespace

template <typename T>
BranchActivations<T> branch_forward(const BranchParameters<T>& params, const NetworkConfig& config,
                                    const BasicTensor<T>& patch, bool stop_before_last) {
  check_params(params, config);
  const Shape& s = patch.shape();
  if (s.c != config.input_channels)
    throw Error("branch_forward: patch has " + std::to_string(s.c) + " channels, network expects " +
                std::to_string(config.input_channels));
  const std::size_t factor = config.downsampling_factor();
  if (config.pool_edge == PoolEdge::Reject && (s.h % factor != 0 || s.w % factor != 0))
    throw Error("branch_forward: patch " + to_string(s) + " not divisible by downsampling factor " +
                std::to_string(factor));

  BranchActivations<T> acts;
  acts.input = patch;
  acts.switches.resize(config.pool_after.size());
  const std::size_t last = config.layers.size() - 1;
  BasicTensor<T> x = patch;
  for (const Step& step : build_plan(config)) {
    switch (step.kind) {
      case Step::Kind::Layer: {
        if (step.index == last) acts.head_input = x;
        if (stop_before_last && step.index == last) break;
        acts.layer_inputs.push_back(x);
        x = layer_forward(params.layers[step.index], config.conv_spec(step.index), config.layers[step.index], x);
        acts.outputs.push_back(x);
        break;
      }
      case Step::Kind::Pool: {
        auto [pooled, sw] = maxpool2x2(x, config.pool_edge);
        acts.switches[step.index] = std::move(sw);
        x = std::move(pooled);
        break;
      }
      case Step::Kind::Up: x = up_forward(config, x, acts.switches[step.index]); break;
    }
  }
  if (!stop_before_last) {
    acts.reconstruction = acts.outputs.back();
    add_plane0(acts.reconstruction, patch);
  }
  return acts;
}

template <typename T>
BranchGradients<T> branch_backward(const BranchParameters<T>& params, const NetworkConfig& config,
                                   const BranchActivations<T>& activations, const BasicTensor<T>& grad_top,
                                   std::span<const BasicTensor<T>> output_grads, bool need_input_grad) {
  check_params(params, config);
  const std::size_t computed = activations.outputs.size();
  const bool stopped = activations.reconstruction.empty();
  if (computed != (stopped ? config.layers.size() - 1 : config.layers.size()) ||
      activations.layer_inputs.size() != computed)
    throw Error("branch_backward: activations do not match the network config");
  if (output_grads.size() > computed)
    throw Error("branch_backward: more output_grads than computed layers");
  const Shape& top = stopped ? activations.head_input.shape() : activations.reconstruction.shape();
  if (grad_top.shape() != top)
    throw Error("branch_backward: top gradient shaped " + to_string(grad_top.shape()) + ", expected " +
                to_string(top));
  for (std::size_t i = 0; i < computed; ++i) {
    const ConvSpec spec = config.conv_spec(i);
    if (activations.layer_inputs[i].shape().c != spec.in_channels ||
        activations.outputs[i].shape().c != spec.out_channels)
      throw Error("branch_backward: stale activations for layer " + std::to_string(i));
  }

  BranchGradients<T> grads;
  grads.params = BranchParameters<T>::zeros(config);
  BasicTensor<T> g = grad_top;

  auto plan = build_plan(config);
  std::reverse(plan.begin(), plan.end());
  for (const Step& step : plan) {
    switch (step.kind) {
      case Step::Kind::Layer: {
        const std::size_t i = step.index;
        if (i >= computed) break;
        if (i < output_grads.size()) add_into(g, output_grads[i]);
        if (g.empty()) g = BasicTensor<T>(activations.outputs[i].shape());
        if (g.shape() != activations.outputs[i].shape())
          throw Error("branch_backward: gradient shape drift at layer " + std::to_string(i));
        if (config.layers[i].activation == Activation::Relu) g = relu_backward(g, activations.outputs[i]);
        const ConvSpec spec = config.conv_spec(i);
        const bool want_dx = i > 0 || need_input_grad;
        ConvGrads<T> cg = spec.transposed
                              ? transposed_conv2d_backward(activations.layer_inputs[i], params.layers[i].weights, g,
                                                           spec, want_dx)
                              : conv2d_backward(activations.layer_inputs[i], params.layers[i].weights, g, spec,
                                                want_dx);
        grads.params.layers[i].weights = std::move(cg.weights);
        grads.params.layers[i].bias = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
      case Step::Kind::Pool:
        if (!g.empty()) g = maxpool2x2_backward(g, activations.switches[step.index]);
        break;
      case Step::Kind::Up:
        if (!g.empty()) g = up_backward(config, g, activations.switches[step.index]);
        break;
    }
  }
  if (need_input_grad) {
    grads.input = g.empty() ? BasicTensor<T>(activations.input.shape()) : std::move(g);
    if (!stopped) {
      // Residual skip: identity path into input plane 0.
      const Shape& s = grads.input.shape();
      for (std::size_t n = 0; n < s.n; ++n) {
        T* p = grads.input.plane(n, 0);
        const T* q = grad_top.plane(n, 0);
        for (std::size_t k = 0; k < s.plane(); ++k) p[k] += q[k];
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> head_forward(const LayerParams<T>& last, const NetworkConfig& config, const BasicTensor<T>& features,
                            const BasicTensor<T>& patch) {
  const std::size_t i = config.layers.size() - 1;
  BasicTensor<T> y = layer_forward(last, config.conv_spec(i), config.layers[i], features);
  add_plane0(y, patch);
  return y;
}

template <typename T>
BasicTensor<T> head_backward(const LayerParams<T>& last, const NetworkConfig& config, const BasicTensor<T>& features,
                             const BasicTensor<T>& grad_reconstruction, LayerParams<T>& grad_last) {
  const std::size_t i = config.layers.size() - 1;
  const ConvSpec spec = config.conv_spec(i);
  ConvGrads<T> cg = spec.transposed ? transposed_conv2d_backward(features, last.weights, grad_reconstruction, spec)
                                    : conv2d_backward(features, last.weights, grad_reconstruction, spec);
  grad_last.weights = std::move(cg.weights);
  grad_last.bias = std::move(cg.bias);
  return std::move(cg.input);
}

std::vector<std::size_t> layer_parameter_counts(const NetworkConfig& config) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const ConvSpec s = config.conv_spec(i);
    out.push_back(s.in_channels * s.kernel * s.kernel * s.out_channels + s.out_channels);
  }
  return out;
}

std::size_t parameter_count(const NetworkConfig& config) {
  std::size_t total = 0;
  for (std::size_t c : layer_parameter_counts(config)) total += c;
  return total;
}

#define MSCNN_INSTANTIATE_NETWORK(T)                                                                              \
  template struct BranchParameters<T>;                                                                            \
  template BranchParameters<T> init_parameters<T>(const NetworkConfig&, std::uint64_t);                           \
  template BranchActivations<T> branch_forward(const BranchParameters<T>&, const NetworkConfig&,                  \
                                               const BasicTensor<T>&, bool);                                      \
  template BranchGradients<T> branch_backward(const BranchParameters<T>&, const NetworkConfig&,                   \
                                              const BranchActivations<T>&, const BasicTensor<T>&,                 \
                                              std::span<const BasicTensor<T>>, bool);                             \
  template BasicTensor<T> head_forward(const LayerParams<T>&, const NetworkConfig&, const BasicTensor<T>&,        \
                                       const BasicTensor<T>&);                                                    \
  template BasicTensor<T> head_backward(const LayerParams<T>&, const NetworkConfig&, const BasicTensor<T>&,       \
                                        const BasicTensor<T>&, LayerParams<T>&);

MSCNN_INSTANTIATE_NETWORK(float)
MSCNN_INSTANTIATE_NETWORK(double)
template BranchParameters<double> BranchParameters<float>::cast<double>() const;
template BranchParameters<float> BranchParameters<double>::cast<float>() const;

#undef MSCNN_INSTANTIATE_NETWORK

}  // namespace mscnn
