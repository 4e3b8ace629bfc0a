#include "mscnn/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace mscnn {
namespace pt = boost::property_tree;

namespace {

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("config: '" + text + "' is not a comma-separated integer list");
    }
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& key, T& value) {
    seen_.insert(key);
    auto node = tree_.get_child_optional(pt::ptree::path_type(key, '.'));
    if (!node) return;
    try {
      value = node->get_value<T>();
    } catch (const pt::ptree_error&) {
      throw Error("config: bad value '" + node->data() + "' for " + key);
    }
  }

  void check_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) throw Error("config: key '" + section + "' outside a section");
      for (const auto& kv : body)
        if (!seen_.count(section + "." + kv.first)) throw Error("config: unknown key '" + section + "." + kv.first + "'");
      bool known = false;
      for (const auto& k : seen_)
        if (k.rfind(section + ".", 0) == 0) known = true;
      if (!known) throw Error("config: unknown section [" + section + "]");
    }
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> seen_;
};

}  // namespace

NetworkConfig RunConfig::network() const {
  NetworkConfig n = NetworkConfig::for_variant(variant, input_channels);
  n.fusion_point = fusion_point;
  n.validate();
  return n;
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec d;
  d.qps = qps;
  d.augmentation = augment ? AugmentationSpec{} : AugmentationSpec::identity_only();
  d.patch_size = patch_size;
  d.stride = stride;
  return d;
}

void RunConfig::validate() const {
  train.validate();
  loss.validate();
  if (qps.empty()) throw Error("config: codec.qps is empty");
  for (int q : qps)
    if (q < 0) throw Error("config: negative QP");
  CodecProxyConfig{qps.front(), 8, codec_max_passes}.validate();
  if (patch_size == 0 || stride == 0) throw Error("config: patch_size and stride must be positive");
  if (gate_pool_window % 2 == 0) throw Error("config: network.gate_pool_window must be odd");
  network();
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os << "[network]\n"
     << "variant=" << variant.name() << "\n"
     << "fusion_point=" << (fusion_point == FusionPoint::Features ? "features" : "reconstruction") << "\n"
     << "fusion_mode=" << to_string(fusion_mode) << "\n"
     << "gate_pool_window=" << gate_pool_window << "\n"
     << "input_channels=" << input_channels << "\n\n"
     << "[train]\n"
     << "base_lr=" << fmt(train.base_lr) << "\n"
     << "last_layer_lr=" << fmt(train.last_layer_lr) << "\n"
     << "momentum=" << fmt(train.momentum) << "\n"
     << "weight_decay=" << fmt(train.weight_decay) << "\n"
     << "batch_size=" << train.batch_size << "\n"
     << "epochs=" << train.epochs << "\n"
     << "iterations_per_epoch=" << train.iterations_per_epoch << "\n"
     << "lr_drop_factor=" << fmt(train.lr_drop_factor) << "\n"
     << "stability_window=" << train.stability_window << "\n"
     << "stability_threshold=" << fmt(train.stability_threshold) << "\n"
     << "qp=" << train.qp << "\n"
     << "seed=" << train.seed << "\n"
     << "threads=" << train.threads << "\n\n"
     << "[loss]\n"
     << "lambda1=" << fmt(loss.lambda1) << "\n\n"
     << "[codec]\n"
     << "qps=" << join(qps) << "\n"
     << "max_passes=" << codec_max_passes << "\n\n"
     << "[data]\n"
     << "sources=" << sources << "\n"
     << "dataset=" << dataset << "\n"
     << "patch_size=" << patch_size << "\n"
     << "stride=" << stride << "\n"
     << "augment=" << (augment ? "true" : "false") << "\n"
     << "yuv_width=" << yuv_width << "\n"
     << "yuv_height=" << yuv_height << "\n\n"
     << "[filter]\n"
     << "overlap=" << (overlap ? "true" : "false") << "\n"
     << "overlap_stride=" << overlap_stride << "\n\n"
     << "[output]\n"
     << "dir=" << out << "\n";
  return os.str();
}

RunConfig RunConfig::from_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  RunConfig c;
  Reader r(tree);
  std::string variant = c.variant.name(), point = "reconstruction", mode = to_string(c.fusion_mode), qps = join(c.qps);
  r.get("network.variant", variant);
  r.get("network.fusion_point", point);
  r.get("network.fusion_mode", mode);
  r.get("network.gate_pool_window", c.gate_pool_window);
  r.get("network.input_channels", c.input_channels);
  r.get("train.base_lr", c.train.base_lr);
  r.get("train.last_layer_lr", c.train.last_layer_lr);
  r.get("train.momentum", c.train.momentum);
  r.get("train.weight_decay", c.train.weight_decay);
  r.get("train.batch_size", c.train.batch_size);
  r.get("train.epochs", c.train.epochs);
  r.get("train.iterations_per_epoch", c.train.iterations_per_epoch);
  r.get("train.lr_drop_factor", c.train.lr_drop_factor);
  r.get("train.stability_window", c.train.stability_window);
  r.get("train.stability_threshold", c.train.stability_threshold);
  r.get("train.qp", c.train.qp);
  r.get("train.seed", c.train.seed);
  r.get("train.threads", c.train.threads);
  r.get("loss.lambda1", c.loss.lambda1);
  r.get("codec.qps", qps);
  r.get("codec.max_passes", c.codec_max_passes);
  r.get("data.sources", c.sources);
  r.get("data.dataset", c.dataset);
  r.get("data.patch_size", c.patch_size);
  r.get("data.stride", c.stride);
  r.get("data.augment", c.augment);
  r.get("data.yuv_width", c.yuv_width);
  r.get("data.yuv_height", c.yuv_height);
  r.get("filter.overlap", c.overlap);
  r.get("filter.overlap_stride", c.overlap_stride);
  r.get("output.dir", c.out);
  r.check_unknown();

  c.variant = DecoderVariant::parse(variant);
  if (point == "reconstruction") c.fusion_point = FusionPoint::Reconstruction;
  else if (point == "features") c.fusion_point = FusionPoint::Features;
  else throw Error("config: network.fusion_point must be 'reconstruction' or 'features'");
  c.fusion_mode = parse_fusion_mode(mode);
  c.qps = parse_ints(qps);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ini(ss.str());
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "effective_config.ini", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + (dir / "effective_config.ini").string() + "'");
  out << cfg.to_ini();
}

}  // namespace mscnn
