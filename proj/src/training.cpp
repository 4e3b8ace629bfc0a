#include "mscnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <thread>

#include "mscnn/ops.hpp"

namespace mscnn {
namespace fs = std::filesystem;

void LossConfig::validate() const {
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) throw Error("loss: lambda1 must be a finite value >= 0");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !(last_layer_lr > 0.0)) throw Error("train: learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error("train: weight_decay must be >= 0");
  if (batch_size == 0) throw Error("train: batch_size must be >= 1");
  if (!(lr_drop_factor >= 1.0)) throw Error("train: lr_drop_factor must be >= 1");
  if (stability_window == 0) throw Error("train: stability_window must be >= 1");
  if (!(stability_threshold >= 0.0)) throw Error("train: stability_threshold must be >= 0");
  if (qp != 22 && qp != 27 && qp != 32 && qp != 37)
    throw Error("train: qp " + std::to_string(qp) + " is not one of 22, 27, 32, 37");
  if (threads == 0) throw Error("train: threads must be >= 1");
}

template <typename T>
LossBreakdown total_loss(const BasicTensor<T>& reconstruction, const BasicTensor<T>& ground_truth,
                         std::span<const BasicTensor<T>> features, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(reconstruction, ground_truth, "total_loss");
  const Shape& s = reconstruction.shape();
  if (s.n == 0 || s.sample() == 0) throw Error("total_loss: empty batch");
  LossBreakdown out;
  double sse = 0.0;
  for (std::size_t i = 0; i < reconstruction.numel(); ++i) {
    const double d = static_cast<double>(reconstruction[i]) - static_cast<double>(ground_truth[i]);
    sse += d * d;
  }
  out.data = sse / static_cast<double>(s.numel());
  for (const BasicTensor<T>& f : features) {
    if (f.shape().n != s.n) throw Error("total_loss: feature batch size differs from the reconstruction");
    if (f.numel() == 0) continue;
    out.reg += squared_norm<T>(f.data()) / static_cast<double>(f.numel());
  }
  out.reg *= cfg.lambda1;
  out.total = out.data + out.reg;
  return out;
}

template <typename T>
LossGradients<T> total_loss_gradients(const BasicTensor<T>& reconstruction, const BasicTensor<T>& ground_truth,
                                      std::span<const BasicTensor<T>> features, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(reconstruction, ground_truth, "total_loss_gradients");
  LossGradients<T> g;
  g.reconstruction = BasicTensor<T>(reconstruction.shape());
  const double k = 2.0 / static_cast<double>(reconstruction.numel());
  for (std::size_t i = 0; i < reconstruction.numel(); ++i)
    g.reconstruction[i] = static_cast<T>(k * (static_cast<double>(reconstruction[i]) - ground_truth[i]));
  for (const BasicTensor<T>& f : features) {
    BasicTensor<T> d(f.shape());
    if (f.numel() > 0) {
      const double kf = 2.0 * cfg.lambda1 / static_cast<double>(f.numel());
      for (std::size_t i = 0; i < f.numel(); ++i) d[i] = static_cast<T>(kf * f[i]);
    }
    g.features.push_back(std::move(d));
  }
  return g;
}

namespace {

template <typename T>
std::span<const BasicTensor<T>> regularized_features(const Model<T>& model, const ModelForward<T>& fw) {
  const std::size_t count = std::min(fw.upper.outputs.size(), model.config.layers.size() - 1);
  return {fw.upper.outputs.data(), count};
}

template <typename T>
Batch<T> slice(const Batch<T>& b, std::size_t n) {
  return {b.current.sample(n), b.reference.sample(n), b.ground_truth.sample(n)};
}

template <typename T>
void check_batch(const Batch<T>& batch) {
  if (batch.size() == 0) throw Error("empty batch");
  require_same_shape(batch.current, batch.reference, "batch");
  require_same_shape(batch.current, batch.ground_truth, "batch");
}

template <typename T>
GradientResult<T> sample_gradients(const Model<T>& model, const Batch<T>& one, const LossConfig& cfg) {
  const ModelForward<T> fw = model_forward(model, one.current, one.reference);
  const auto feats = regularized_features(model, fw);
  GradientResult<T> r;
  r.loss = total_loss<T>(fw.output, one.ground_truth, feats, cfg);
  LossGradients<T> lg = total_loss_gradients<T>(fw.output, one.ground_truth, feats, cfg);
  r.grads = model_backward<T>(model, fw, lg.reconstruction, lg.features);
  return r;
}

}  // namespace

template <typename T>
LossBreakdown model_loss(const Model<T>& model, const Batch<T>& batch, const LossConfig& cfg) {
  check_batch(batch);
  const ModelForward<T> fw = model_forward(model, batch.current, batch.reference);
  return total_loss<T>(fw.output, batch.ground_truth, regularized_features(model, fw), cfg);
}

template <typename T>
GradientResult<T> compute_gradients(const Model<T>& model, const Batch<T>& batch, const LossConfig& cfg,
                                    std::size_t threads) {
  check_batch(batch);
  const std::size_t n = batch.size();
  std::vector<GradientResult<T>> parts(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < n; i += step) {
      try {
        parts[i] = sample_gradients(model, slice(batch, i), cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  GradientResult<T> out;
  out.grads = Model<T>::zeros(model.config, model.fusion.mode, model.fusion.pool_window);
  auto dst = out.grads.arrays();
  for (std::size_t i = 0; i < n; ++i) {
    out.loss.data += parts[i].loss.data;
    out.loss.reg += parts[i].loss.reg;
    const auto src = std::as_const(parts[i].grads).arrays();
    for (std::size_t a = 0; a < dst.size(); ++a)
      for (std::size_t k = 0; k < dst[a].size(); ++k) dst[a][k] += src[a][k];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& arr : dst)
    for (T& v : arr) v = static_cast<T>(v * inv);
  out.loss.data *= inv;
  out.loss.reg *= inv;
  out.loss.total = out.loss.data + out.loss.reg;
  return out;
}

TrainState TrainState::start(Model<float> model) {
  TrainState s;
  s.velocity = Model<float>::zeros(model.config, model.fusion.mode, model.fusion.pool_window);
  s.model = std::move(model);
  return s;
}

LossBreakdown train_step(TrainState& state, const Batch<float>& batch, const TrainConfig& cfg,
                         const LossConfig& loss_cfg) {
  cfg.validate();
  GradientResult<float> g = compute_gradients(state.model, batch, loss_cfg, cfg.threads);
  if (!std::isfinite(g.loss.total))
    throw DivergenceError("non-finite loss at iteration " + std::to_string(state.iteration) + " (data " +
                          std::to_string(g.loss.data) + ", reg " + std::to_string(g.loss.reg) + ")");
  for (std::span<const float> a : std::as_const(g.grads).arrays())
    for (float v : a)
      if (!std::isfinite(v))
        throw DivergenceError("non-finite gradient at iteration " + std::to_string(state.iteration));

  const std::size_t layers = state.model.config.layers.size();
  auto params = state.model.arrays();
  auto grads = std::as_const(g.grads).arrays();
  auto vel = state.velocity.arrays();
  for (std::size_t a = 0; a < params.size(); ++a) {
    const std::size_t branch_array = a % (2 * layers);
    const bool last = a >= 4 * layers || branch_array / 2 == layers - 1;
    SgdHyper h{(last ? cfg.last_layer_lr : cfg.base_lr) * state.lr_multiplier, cfg.momentum, cfg.weight_decay};
    sgd_momentum_step<float>(params[a], grads[a], vel[a], h);
  }
  state.epoch_sum += g.loss.total;
  ++state.epoch_steps;
  ++state.iteration;
  return g.loss;
}

void finish_epoch(TrainState& state) {
  if (state.epoch_steps > 0) state.epoch_loss.push_back(state.epoch_sum / static_cast<double>(state.epoch_steps));
  state.epoch_sum = 0.0;
  state.epoch_steps = 0;
  ++state.epoch;
}

bool maybe_drop_lr(TrainState& state, const TrainConfig& cfg) {
  if (state.lr_dropped) return false;
  const auto& h = state.epoch_loss;
  if (h.size() < cfg.stability_window + 1) return false;
  for (std::size_t i = h.size() - cfg.stability_window; i < h.size(); ++i) {
    const double prev = h[i - 1];
    const double rel = prev != 0.0 ? std::abs(h[i] - prev) / std::abs(prev) : std::abs(h[i] - prev);
    if (!(rel < cfg.stability_threshold)) return false;
  }
  state.lr_multiplier /= cfg.lr_drop_factor;
  state.lr_dropped = true;
  return true;
}

Batch<float> make_batch(const PatchStore& store, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("make_batch: no indices");
  const std::size_t p = store.patch_size, tile = p * p;
  Batch<float> b{Tensor(indices.size(), 1, p, p), Tensor(indices.size(), 1, p, p), Tensor(indices.size(), 1, p, p)};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= store.count()) throw Error("make_batch: patch index out of range");
    const std::size_t off = indices[i] * tile;
    for (std::size_t k = 0; k < tile; ++k) {
      b.current[i * tile + k] = store.current[off + k] / 255.0f;
      b.reference[i * tile + k] = store.reference[off + k] / 255.0f;
      b.ground_truth[i * tile + k] = store.ground_truth[off + k] / 255.0f;
    }
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void write_loss_csv(const std::vector<LossRow>& rows, const fs::path& path) {
  std::string text = "epoch,iter,data_term,reg_term,total\n";
  char line[160];
  for (const LossRow& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.10g,%.10g,%.10g\n", r.epoch, r.iteration, r.loss.data, r.loss.reg,
                  r.loss.total);
    text += line;
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

TrainResult train(Model<float> initial, const PatchStore& store, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const fs::path& out_dir, std::ostream* log) {
  cfg.validate();
  loss_cfg.validate();
  if (store.count() == 0) throw Error("train: empty dataset");
  if (store.patch_size % initial.config.downsampling_factor() != 0)
    throw Error("train: patch size " + std::to_string(store.patch_size) + " is not divisible by " +
                std::to_string(initial.config.downsampling_factor()));
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "checkpoint.mscn";
  const fs::path csv = out_dir / "loss.csv";

  TrainResult result{TrainState::start(std::move(initial)), {}};
  TrainState& st = result.state;
  save_checkpoint(st.model, ckpt);
  write_loss_csv(result.rows, csv);

  const std::size_t n = store.count();
  const std::size_t per_epoch = cfg.iterations_per_epoch ? cfg.iterations_per_epoch : (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t pass = 0, cursor = 0;
  std::vector<std::size_t> order = epoch_order(n, cfg.seed, pass);
  std::vector<std::size_t> idx(std::min(cfg.batch_size, n));

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t it = 0; it < per_epoch; ++it) {
      for (std::size_t& k : idx) {
        if (cursor == n) {
          order = epoch_order(n, cfg.seed, ++pass);
          cursor = 0;
        }
        k = order[cursor++];
      }
      LossBreakdown loss;
      try {
        loss = train_step(st, make_batch(store, idx), cfg, loss_cfg);
      } catch (const DivergenceError&) {
        write_loss_csv(result.rows, csv);
        throw;
      }
      result.rows.push_back({st.epoch, st.iteration, loss});
    }
    finish_epoch(st);
    const bool dropped = maybe_drop_lr(st, cfg);
    save_checkpoint(st.model, ckpt);
    write_loss_csv(result.rows, csv);
    if (log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %zu  mean loss %.6g  lr %.3g%s\n", st.epoch, st.epoch_loss.back(),
                    cfg.base_lr * st.lr_multiplier, dropped ? "  (dropped)" : "");
      *log << line << std::flush;
    }
  }
  return result;
}

#define MSCNN_INSTANTIATE_TRAINING(T)                                                                           \
  template LossBreakdown total_loss(const BasicTensor<T>&, const BasicTensor<T>&,                               \
                                    std::span<const BasicTensor<T>>, const LossConfig&);                        \
  template LossGradients<T> total_loss_gradients(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                                 std::span<const BasicTensor<T>>, const LossConfig&);           \
  template LossBreakdown model_loss(const Model<T>&, const Batch<T>&, const LossConfig&);                       \
  template GradientResult<T> compute_gradients(const Model<T>&, const Batch<T>&, const LossConfig&, std::size_t);

MSCNN_INSTANTIATE_TRAINING(float)
MSCNN_INSTANTIATE_TRAINING(double)

#undef MSCNN_INSTANTIATE_TRAINING

Plane8 filter_frame(const Model<float>& model, const Plane8& cur, const Plane8& ref, const PatchGrid& grid) {
  const auto cur_p = extract_patches(cur, grid);
  const auto ref_p = extract_patches(ref, grid);
  const std::size_t p = grid.patch_size, tile = p * p, chunk = 8;
  std::vector<PlaneF> out_p;
  for (std::size_t first = 0; first < cur_p.size(); first += chunk) {
    const std::size_t n = std::min(chunk, cur_p.size() - first);
    Tensor c(n, 1, p, p), r(n, 1, p, p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < tile; ++k) {
        c[i * tile + k] = cur_p[first + i].data[k] / 255.0f;
        r[i * tile + k] = ref_p[first + i].data[k] / 255.0f;
      }
    const Tensor y = model_forward(model, c, r).output;
    for (std::size_t i = 0; i < n; ++i) {
      PlaneF q(p, p);
      std::copy_n(y.plane(i, 0), tile, q.data.begin());
      out_p.push_back(std::move(q));
    }
  }
  const PlaneF merged = reassemble(out_p, grid);
  Tensor t(1, 1, merged.height, merged.width);
  std::copy(merged.data.begin(), merged.data.end(), t.data().begin());
  return denormalize(t);
}

}  // namespace mscnn
