#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mscnn/data.hpp"
#include "mscnn/model.hpp"

namespace mscnn {

struct LossConfig {
  /// Weight of the intermediate-feature norm term.
  double lambda1 = 1e-4;
  void validate() const;
};

struct TrainConfig {
  double base_lr = 1e-3;
  /// Rate for the last layer of both branches and for the gate.
  double last_layer_lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  /// 0 means one pass over the dataset per epoch.
  std::size_t iterations_per_epoch = 0;
  double lr_drop_factor = 100.0;
  std::size_t stability_window = 3;
  double stability_threshold = 0.01;
  int qp = 37;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
};

struct LossBreakdown {
  double data = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// data = mean over the batch of squared-error sum / pixel count;
/// reg = lambda1 * sum over `features` of squared norm / element count
/// (element count per sample, averaged over the batch).
template <typename T>
LossBreakdown total_loss(const BasicTensor<T>& reconstruction, const BasicTensor<T>& ground_truth,
                         std::span<const BasicTensor<T>> features, const LossConfig& cfg);

/// d(total_loss)/d(reconstruction) and d/d(features).
template <typename T>
struct LossGradients {
  BasicTensor<T> reconstruction;
  std::vector<BasicTensor<T>> features;
};

template <typename T>
LossGradients<T> total_loss_gradients(const BasicTensor<T>& reconstruction, const BasicTensor<T>& ground_truth,
                                      std::span<const BasicTensor<T>> features, const LossConfig& cfg);

/// One batch of aligned (current, reference, ground truth) patches, normalized.
template <typename T>
struct Batch {
  BasicTensor<T> current;
  BasicTensor<T> reference;
  BasicTensor<T> ground_truth;
  std::size_t size() const { return current.shape().n; }
};

template <typename T>
struct GradientResult {
  LossBreakdown loss;
  Model<T> grads;
};

/// Loss of `model` on `batch` (regularizer over upper-branch layers 1..L-1).
template <typename T>
LossBreakdown model_loss(const Model<T>& model, const Batch<T>& batch, const LossConfig& cfg);

/// Analytic gradient of model_loss. Samples run on up to `threads` workers and
/// are reduced in sample order, so results do not depend on the thread count.
template <typename T>
GradientResult<T> compute_gradients(const Model<T>& model, const Batch<T>& batch, const LossConfig& cfg,
                                    std::size_t threads = 1);

struct TrainState {
  Model<float> model;
  Model<float> velocity;
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  std::vector<double> epoch_loss;  // append-only
  double lr_multiplier = 1.0;
  bool lr_dropped = false;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;

  static TrainState start(Model<float> model);
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// One forward/backward pass and SGD update. Throws DivergenceError on a
/// non-finite loss before touching the parameters.
LossBreakdown train_step(TrainState& state, const Batch<float>& batch, const TrainConfig& cfg,
                         const LossConfig& loss_cfg);

/// Closes the running epoch: appends its mean loss to the history.
void finish_epoch(TrainState& state);

/// Divides the learning rate by lr_drop_factor once the epoch-mean loss has
/// changed by less than stability_threshold (relative) for stability_window
/// consecutive epochs. Applied at most once. Returns true when it dropped.
bool maybe_drop_lr(TrainState& state, const TrainConfig& cfg);

struct LossRow {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  LossBreakdown loss;
};

struct TrainResult {
  TrainState state;
  std::vector<LossRow> rows;
};

/// Assembles batch `index` of an epoch from a patch store (tensors in [0, 1]).
Batch<float> make_batch(const PatchStore& store, std::span<const std::size_t> indices);

/// Deterministic permutation of [0, n) for an epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Full training loop. Writes `checkpoint.mscn` (after initialization and
/// after every epoch) and `loss.csv` under `out_dir`.
TrainResult train(Model<float> initial, const PatchStore& store, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const std::filesystem::path& out_dir, std::ostream* log = nullptr);

void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path);

/// Runs the model patch-wise over one luma plane and averages overlaps.
Plane8 filter_frame(const Model<float>& model, const Plane8& cur, const Plane8& ref, const PatchGrid& grid);

}  // namespace mscnn
