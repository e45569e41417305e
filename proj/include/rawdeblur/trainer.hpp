#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rawdeblur/autodiff.hpp"
#include "rawdeblur/blur_synth.hpp"
#include "rawdeblur/checkpoint.hpp"
#include "rawdeblur/isp.hpp"
#include "rawdeblur/loss_metrics.hpp"
#include "rawdeblur/model.hpp"
#include "rawdeblur/raw_core.hpp"
#include "rawdeblur/rng.hpp"

namespace rawdeblur::train {

struct TrainConfig {
  double lr0 = 1e-4;
  int epochs_flat = 500;
  int epochs_decay = 500;
  int batch_size = 2;
  int crop_size = 256;
  double lambda = 1.0;  ///< weight of the SSIM term
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  ///< epochs between checkpoints and validation; 0 disables both
  model::ModelConfig model;
  bool checked = true;  ///< abort with NumericError on any non-finite value

  /// Four-pair overfit setting: crop 64, batch 2, 500 + 500 epochs (2000 iterations on 4 pairs).
  static TrainConfig desk();

  int total_epochs() const { return epochs_flat + epochs_decay; }
  /// Throws ConfigError unless crop_size is even and >= 16, lr0 > 0, batch_size >= 1,
  /// epochs_flat, epochs_decay >= 0 with at least one epoch in total, and Adam settings are sane.
  void validate() const;
};

/// lr0 during the flat phase, then lr0 * (1 - (epoch - epochs_flat) / epochs_decay).
/// The last epoch gets lr0 / epochs_decay; the value after the schedule would be 0.
/// Throws RangeError outside [0, total_epochs).
double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;  ///< one array per parameter, empty before the first step
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a parameter without gradient counts as zero gradient).
/// Throws ShapeError when the state does not mirror the parameter list.
template <typename T>
void adam_step(std::span<ad::Tensor<T>* const> params, AdamState<T>& state, double lr, const AdamConfig& cfg);

/// A blurred mosaic and its sharp target, both normalized with their own levels.
struct TrainPair {
  std::string id;
  raw::BayerFrame blur_frame;
  raw::BayerFrame sharp_frame;
  raw::NormalizedFrame blur;
  raw::NormalizedFrame sharp;
};

/// Reads every pair of `split`. Throws IoError/FormatError for unreadable
/// files, DimensionError when a blur frame does not match its sharp frame.
std::vector<TrainPair> load_pairs(const synth::Manifest& manifest, synth::Split split);

struct Batch {
  ad::Tensor<float> blur;   ///< N x 1 x crop x crop
  ad::Tensor<float> sharp;  ///< N x 1 x crop x crop
  std::vector<std::pair<int, int>> offsets;  ///< (x, y) of each crop, both even
};

/// Crops pairs[indices[i]] at a uniformly drawn even offset; blur and sharp
/// share the window. Throws RangeError when an image is smaller than the crop.
Batch sample_batch(std::span<const TrainPair> pairs, std::span<const std::size_t> indices, int crop_size, Rng& rng);

/// Visiting order of one epoch: a Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng);
/// ceil(n / batch_size).
int iterations_per_epoch(std::size_t n, int batch_size);
/// Stream of epoch `epoch`, independent of every other epoch.
Rng epoch_rng(std::uint64_t seed, int epoch);

struct TraceRow {
  int epoch = 0;
  std::uint64_t iteration = 0;  ///< optimizer steps taken so far, 1-based
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_raw_psnr;  ///< set on the last iteration of validation epochs
};

/// "epoch\titeration\tlr\tloss\tval_raw_psnr" with "-" for a missing value.
std::string format_trace_row(const TraceRow& row);
void write_trace(std::ostream& out, std::span<const TraceRow> rows);

struct TrainOptions {
  /// Continue from a checkpoint carrying training state; its settings must match the config.
  std::optional<model::Checkpoint> resume;
  /// Stop after this many completed epochs (the schedule still spans the full run).
  std::optional<int> stop_after_epoch;
  /// Periodic checkpoints go to <dir>/epoch_NNNNN.dbrw.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const TraceRow&)> on_iteration;
  isp::IspConfig isp;
};

struct TrainResult {
  model::Checkpoint checkpoint;  ///< includes the training state
  std::vector<TraceRow> trace;
};

/// Runs the schedule over the train split of `manifest`; validates on the val
/// split every checkpoint_every epochs. Deterministic given the config.
/// Throws ConfigError for an empty train split or mixed CFA layouts,
/// ConfigMismatchError when the resume state disagrees with the config.
TrainResult train(const synth::Manifest& manifest, const TrainConfig& cfg, const TrainOptions& options = {});

/// Scores a restored frame against its target: RAW metrics on the normalized
/// mosaics, sRGB metrics on both frames rendered through `isp`.
metrics::EvalRow score(const std::string& id, const raw::BayerFrame& restored, const raw::BayerFrame& sharp,
                       const isp::IspConfig& isp = {});

/// Full-frame restoration in eval mode, denormalized with the input's levels.
raw::BayerFrame restore_frame(model::DeblurNet<float>& net, const raw::BayerFrame& blurred);

/// Restores every pair and scores it. Throws ConfigError when `pairs` is empty.
metrics::EvalReport evaluate(model::DeblurNet<float>& net, std::span<const TrainPair> pairs,
                             const isp::IspConfig& isp = {});
metrics::EvalReport evaluate(const model::Checkpoint& ckpt, const synth::Manifest& manifest, synth::Split split,
                             const isp::IspConfig& isp = {});

/// Training state of `cfg` with the given progress, for checkpoints.
model::TrainingState training_state(const TrainConfig& cfg, int epochs_done, const AdamState<float>& adam);

}  // namespace rawdeblur::train
