// mscnn_cli: build-data | train | filter | eval | bd

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mscnn/config.hpp"
#include "mscnn/data.hpp"
#include "mscnn/metrics.hpp"
#include "mscnn/model.hpp"
#include "mscnn/training.hpp"

namespace fs = std::filesystem;
using namespace mscnn;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 3;

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
  if (g.seed_set) cfg.train.seed = g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

std::string format_db(double v) {
  if (std::isinf(v)) return "inf";
  char b[32];
  std::snprintf(b, sizeof b, "%.4f", v);
  return b;
}

struct BuildArgs {
  std::string sources;
  bool no_augment = false;
  std::size_t patch = 0, stride = 0, width = 0, height = 0;
};

int cmd_build(const Globals& g, const BuildArgs& a) {
  RunConfig cfg = resolve(g);
  if (!a.sources.empty()) cfg.sources = a.sources;
  if (a.no_augment) cfg.augment = false;
  if (a.patch) cfg.patch_size = a.patch;
  if (a.stride) cfg.stride = a.stride;
  if (a.width) cfg.yuv_width = a.width;
  if (a.height) cfg.yuv_height = a.height;
  cfg.validate();
  if (cfg.sources.empty()) throw Error("build-data: no source directory (--sources or data.sources)");

  const auto sources = load_sources(cfg.sources, cfg.yuv_width, cfg.yuv_height);
  const Dataset ds = build_dataset(sources, cfg.dataset_spec());
  save_dataset(ds, cfg.out);
  echo_config(cfg, cfg.out);
  std::cout << "sources " << sources.size() << "\n";
  for (const PatchStore& s : ds.stores) std::cout << "qp " << s.qp << " triples " << s.count() << "\n";
  std::cout << "manifest lines " << ds.manifest.size() << "\n";
  if (ds.skipped_variants) std::cout << "skipped variants smaller than a patch " << ds.skipped_variants << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  int qp = 0;
  long epochs = -1;
  long iterations = -1;
  std::string init = "random";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig cfg = resolve(g);
  if (!a.data.empty()) cfg.dataset = a.data;
  if (a.qp) cfg.train.qp = a.qp;
  if (a.epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(a.epochs);
  if (a.iterations >= 0) cfg.train.iterations_per_epoch = static_cast<std::size_t>(a.iterations);
  cfg.validate();
  if (cfg.dataset.empty()) throw Error("train: no dataset directory (--data or data.dataset)");

  const PatchStore store = load_patch_store(cfg.dataset, cfg.train.qp);
  const NetworkConfig net = cfg.network();
  Model<float> init;
  if (a.init == "random")
    init = Model<float>::init(net, cfg.train.seed, cfg.fusion_mode, cfg.gate_pool_window);
  else if (a.init == "zeros")
    init = Model<float>::zeros(net, cfg.fusion_mode, cfg.gate_pool_window);
  else
    throw Error("train: --init must be 'random' or 'zeros'");

  echo_config(cfg, cfg.out);
  std::cout << "training qp " << cfg.train.qp << " on " << store.count() << " triples, " << init.size()
            << " parameters\n";
  try {
    const TrainResult r = train(std::move(init), store, cfg.train, cfg.loss, cfg.out, &std::cout);
    std::cout << "iterations " << r.state.iteration << "\n";
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << " (last checkpoint kept)\n";
    return kExitDiverged;
  }
  return 0;
}

struct FilterArgs {
  std::string checkpoint, input, output;
  std::size_t width = 0, height = 0, patch = 0;
  int qp = 0;
  bool overlap = false;
};

void check_checkpoint_qp(const fs::path& checkpoint, int qp) {
  const fs::path sidecar = checkpoint.parent_path() / "effective_config.ini";
  if (!fs::exists(sidecar)) return;
  const RunConfig trained = RunConfig::load(sidecar);
  if (trained.train.qp != qp)
    throw Error("checkpoint was trained for QP " + std::to_string(trained.train.qp) + ", not " + std::to_string(qp));
}

int cmd_filter(const Globals& g, const FilterArgs& a) {
  RunConfig cfg = resolve(g);
  if (a.width) cfg.yuv_width = a.width;
  if (a.height) cfg.yuv_height = a.height;
  if (a.overlap) cfg.overlap = true;
  cfg.validate();
  if (a.qp == 0) throw Error("filter: --qp is required");
  check_checkpoint_qp(a.checkpoint, a.qp);
  const Model<float> model = load_checkpoint(a.checkpoint);
  if (model.config.input_channels != 1) throw Error("filter: only luma checkpoints are supported");
  const YuvSequence in = read_yuv(a.input, cfg.yuv_width, cfg.yuv_height);

  std::size_t patch = a.patch ? a.patch : cfg.patch_size;
  patch = std::min({patch, in.width, in.height});
  const std::size_t factor = model.config.downsampling_factor();
  if (patch % factor != 0)
    throw Error("filter: patch size " + std::to_string(patch) + " is not divisible by " + std::to_string(factor));
  const std::size_t stride = cfg.overlap ? (cfg.overlap_stride ? cfg.overlap_stride : std::max<std::size_t>(1, patch / 2))
                                         : patch;
  const PatchGrid grid = PatchGrid::make(in.width, in.height, patch, stride);

  YuvSequence out = in;
  for (std::size_t t = 0; t < in.frames.size(); ++t)
    out.frames[t].y = filter_frame(model, in.frames[t].y, in.frames[t == 0 ? 0 : t - 1].y, grid);

  fs::create_directories(cfg.out);
  const fs::path dst = fs::path(cfg.out) / fs::path(a.output).filename();
  write_yuv(out, dst);
  echo_config(cfg, cfg.out);
  std::cout << "filtered " << in.frames.size() << " frames, " << grid.count() << " patches each -> " << dst.string()
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string reference, distorted, rd_csv = "rd.csv";
  std::size_t width = 0, height = 0;
  double bitrate = 0.0;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig cfg = resolve(g);
  if (a.width) cfg.yuv_width = a.width;
  if (a.height) cfg.yuv_height = a.height;
  cfg.validate();
  const YuvSequence ref = read_yuv(a.reference, cfg.yuv_width, cfg.yuv_height);
  const YuvSequence dis = read_yuv(a.distorted, cfg.yuv_width, cfg.yuv_height);
  if (ref.frames.size() != dis.frames.size()) throw Error("eval: frame counts differ");
  std::vector<Plane8> ry, dy;
  double ssim_sum = 0.0;
  std::cout << "frame,psnr_y,ssim_y\n";
  for (std::size_t t = 0; t < ref.frames.size(); ++t) {
    const double s = ssim(ref.frames[t].y, dis.frames[t].y);
    ssim_sum += s;
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%s,%.6f\n", t, format_db(psnr(ref.frames[t].y, dis.frames[t].y)).c_str(), s);
    std::cout << line;
    ry.push_back(ref.frames[t].y);
    dy.push_back(dis.frames[t].y);
  }
  const double mean_psnr = sequence_psnr(ry, dy);
  char line[96];
  std::snprintf(line, sizeof line, "mean,%s,%.6f\n", format_db(mean_psnr).c_str(), ssim_sum / ry.size());
  std::cout << line;
  fs::create_directories(cfg.out);
  if (a.bitrate > 0.0) {
    if (std::isinf(mean_psnr)) throw Error("eval: cannot record an RD point with infinite PSNR");
    append_rd_point({a.bitrate, mean_psnr}, fs::path(cfg.out) / fs::path(a.rd_csv).filename());
  }
  echo_config(cfg, cfg.out);
  return 0;
}

int cmd_bd(const Globals& g, const std::string& anchor_path, const std::string& test_path) {
  RunConfig cfg = resolve(g);
  cfg.validate();
  const RdCurve anchor = read_rd_csv(anchor_path);
  const RdCurve test = read_rd_csv(test_path);
  for (const RdCurve* c : {&anchor, &test})
    if (const std::string w = c->validate(); !w.empty()) std::cerr << "warning: " << w << "\n";
  const BdResult rate = bd_rate(anchor, test);
  const BdResult qual = bd_psnr(anchor, test);
  char line[200];
  std::snprintf(line, sizeof line, "BD-BR %.6f %%  (psnr interval %.4f..%.4f dB)\n", rate.value, rate.lo, rate.hi);
  std::cout << line;
  std::snprintf(line, sizeof line, "BD-PSNR %.6f dB  (log10 rate interval %.6f..%.6f)\n", qual.value, qual.lo, qual.hi);
  std::cout << line;

  nlohmann::ordered_json report;
  report["method"] = "classic cubic fit";
  report["anchor"] = anchor.label;
  report["test"] = test.label;
  report["bd_rate_percent"] = rate.value;
  report["bd_rate_psnr_interval"] = {rate.lo, rate.hi};
  report["bd_psnr_db"] = qual.value;
  report["bd_psnr_log10_rate_interval"] = {qual.lo, qual.hi};
  fs::create_directories(cfg.out);
  std::ofstream(fs::path(cfg.out) / "bd_report.json") << report.dump(2) << "\n";
  echo_config(cfg, cfg.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch CNN filter: dataset building, training, filtering and RD evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed (overrides train.seed)");
  app.add_option("--out", g.out, "Output directory (overrides output.dir)");

  BuildArgs build;
  auto* b = app.add_subcommand("build-data", "Build patch triples for every configured QP");
  b->add_option("--sources", build.sources, "Directory of .pgm / .yuv sources");
  b->add_option("--patch", build.patch, "Patch size");
  b->add_option("--stride", build.stride, "Patch stride");
  b->add_option("--width", build.width, "YUV width");
  b->add_option("--height", build.height, "YUV height");
  b->add_flag("--no-augment", build.no_augment, "Disable the 24-way augmentation");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model for one QP");
  t->add_option("--data", tr.data, "Dataset directory from build-data");
  t->add_option("--qp", tr.qp, "QP (22, 27, 32 or 37)");
  t->add_option("--epochs", tr.epochs, "Epoch count");
  t->add_option("--iterations", tr.iterations, "Iterations per epoch (0 = one pass)");
  t->add_option("--init", tr.init, "random | zeros");

  FilterArgs fa;
  auto* f = app.add_subcommand("filter", "Filter the luma of a YUV 4:2:0 clip");
  f->add_option("--checkpoint", fa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  f->add_option("--input", fa.input, "Degraded YUV input")->required()->check(CLI::ExistingFile);
  f->add_option("--output", fa.output, "Output file name (written under --out)")->required();
  f->add_option("--width", fa.width, "Frame width");
  f->add_option("--height", fa.height, "Frame height");
  f->add_option("--qp", fa.qp, "QP the checkpoint was trained for")->required();
  f->add_option("--patch", fa.patch, "Patch size (default data.patch_size, capped at the frame)");
  f->add_flag("--overlap", fa.overlap, "Overlapping patches with averaging");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Per-frame and mean PSNR / SSIM of the luma");
  e->add_option("--reference", ea.reference, "Original YUV")->required()->check(CLI::ExistingFile);
  e->add_option("--distorted", ea.distorted, "Distorted YUV")->required()->check(CLI::ExistingFile);
  e->add_option("--width", ea.width, "Frame width");
  e->add_option("--height", ea.height, "Frame height");
  e->add_option("--bitrate", ea.bitrate, "Bitrate in kbps; appends an RD point");
  e->add_option("--rd-csv", ea.rd_csv, "RD CSV file name under --out");

  std::string anchor, test;
  auto* bd = app.add_subcommand("bd", "BD-BR and BD-PSNR between two RD curves");
  bd->add_option("--anchor", anchor, "Anchor RD CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("--test", test, "Test RD CSV")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (b->parsed()) return cmd_build(g, build);
    if (t->parsed()) return cmd_train(g, tr);
    if (f->parsed()) return cmd_filter(g, fa);
    if (e->parsed()) return cmd_eval(g, ea);
    if (bd->parsed()) return cmd_bd(g, anchor, test);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
