#include "rawdeblur/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <utility>

#include "rawdeblur/errors.hpp"

namespace rawdeblur::train {

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.crop_size = 64;
  cfg.batch_size = 2;
  return cfg;
}

void TrainConfig::validate() const {
  if (crop_size < 16 || crop_size % 2 != 0)
    throw ConfigError("train: crop_size must be even and at least 16, got " + std::to_string(crop_size));
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train: lr0 must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (epochs_flat < 0 || epochs_decay < 0 || total_epochs() < 1)
    throw ConfigError("train: the schedule needs at least one epoch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be non-negative");
  model.validate();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs())
    throw RangeError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(cfg.total_epochs()) + ")");
  if (epoch < cfg.epochs_flat) return cfg.lr0;
  return cfg.lr0 * (1.0 - static_cast<double>(epoch - cfg.epochs_flat) / cfg.epochs_decay);
}

template <typename T>
void adam_step(std::span<ad::Tensor<T>* const> params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    for (auto* p : params) {
      state.m.emplace_back(p->numel(), T(0));
      state.v.emplace_back(p->numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i]->numel() || state.v[i].size() != params[i]->numel())
      throw ShapeError("adam_step: moment " + std::to_string(i) + " does not match its parameter");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const bool checked = ad::checked_mode();
  // Branch-free inner loop so it vectorizes; the finite scan runs afterwards.
  const auto update = [&](T* value, T* m, T* v, const T* grad, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double g = grad ? static_cast<double>(grad[k]) : 0.0;
      m[k] = static_cast<T>(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g);
      v[k] = static_cast<T>(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      value[k] = static_cast<T>(value[k] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i]->data();
    auto grad = std::as_const(*params[i]).grad();
    if (grad.empty())
      update(value.data(), state.m[i].data(), state.v[i].data(), nullptr, value.size());
    else
      update(value.data(), state.m[i].data(), state.v[i].data(), grad.data(), value.size());
    if (checked && !std::all_of(value.begin(), value.end(), [](T x) { return std::isfinite(x); }))
      throw NumericError("adam_step: parameter " + std::to_string(i) + " became non-finite at step " +
                         std::to_string(state.step));
  }
}

template void adam_step<float>(std::span<ad::Tensor<float>* const>, AdamState<float>&, double, const AdamConfig&);
template void adam_step<double>(std::span<ad::Tensor<double>* const>, AdamState<double>&, double, const AdamConfig&);

std::vector<TrainPair> load_pairs(const synth::Manifest& manifest, synth::Split split) {
  std::vector<TrainPair> pairs;
  for (const auto& e : manifest.select(split)) {
    TrainPair p;
    p.id = e.blur_path;
    p.blur_frame = raw::read_rawb(manifest.resolve(e.blur_path));
    p.sharp_frame = raw::read_rawb(manifest.resolve(e.sharp_path));
    if (p.blur_frame.width != p.sharp_frame.width || p.blur_frame.height != p.sharp_frame.height ||
        !(p.blur_frame.cfa == p.sharp_frame.cfa))
      throw DimensionError("pair " + e.blur_path + ": blurred and sharp frames differ in size or CFA");
    p.blur = raw::normalize(p.blur_frame);
    p.sharp = raw::normalize(p.sharp_frame);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Batch sample_batch(std::span<const TrainPair> pairs, std::span<const std::size_t> indices, int crop_size, Rng& rng) {
  if (indices.empty()) throw ConfigError("sample_batch: no pairs selected");
  const int n = static_cast<int>(indices.size());
  const std::size_t plane = static_cast<std::size_t>(crop_size) * crop_size;
  std::vector<float> blur(n * plane), sharp(n * plane);
  Batch batch;
  for (int i = 0; i < n; ++i) {
    const TrainPair& p = pairs[indices[static_cast<std::size_t>(i)]];
    if (p.blur.width < crop_size || p.blur.height < crop_size)
      throw RangeError("sample_batch: image " + p.id + " (" + std::to_string(p.blur.width) + "x" +
                       std::to_string(p.blur.height) + ") is smaller than the crop " + std::to_string(crop_size));
    // Offsets range over even positions only, so every crop keeps the CFA phase.
    const int x = 2 * static_cast<int>(rng.uniform_int(0, (p.blur.width - crop_size) / 2));
    const int y = 2 * static_cast<int>(rng.uniform_int(0, (p.blur.height - crop_size) / 2));
    const auto bc = raw::crop_aligned(p.blur, x, y, crop_size, crop_size);
    const auto sc = raw::crop_aligned(p.sharp, x, y, crop_size, crop_size);
    std::copy(bc.values.begin(), bc.values.end(), blur.begin() + i * plane);
    std::copy(sc.values.begin(), sc.values.end(), sharp.begin() + i * plane);
    batch.offsets.emplace_back(x, y);
  }
  const auto shape = ad::Shape::nchw(n, 1, crop_size, crop_size);
  batch.blur = ad::Tensor<float>::from(shape, std::move(blur));
  batch.sharp = ad::Tensor<float>::from(shape, std::move(sharp));
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

int iterations_per_epoch(std::size_t n, int batch_size) {
  return static_cast<int>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

Rng epoch_rng(std::uint64_t seed, int epoch) { return Rng(derive_seed(seed, static_cast<std::uint64_t>(epoch))); }

std::string format_trace_row(const TraceRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d\t%llu\t%.9g\t%.9g\t", row.epoch, static_cast<unsigned long long>(row.iteration),
                row.lr, row.loss);
  return buf + (row.val_raw_psnr ? metrics::format_metric(*row.val_raw_psnr) : std::string("-"));
}

void write_trace(std::ostream& out, std::span<const TraceRow> rows) {
  out << "epoch\titeration\tlr\tloss\tval_raw_psnr\n";
  for (const auto& r : rows) out << format_trace_row(r) << '\n';
}

model::TrainingState training_state(const TrainConfig& cfg, int epochs_done, const AdamState<float>& adam) {
  model::TrainingState t;
  t.seed = cfg.seed;
  t.epoch = static_cast<std::uint32_t>(epochs_done);
  t.step = adam.step;
  t.lr0 = cfg.lr0;
  t.epochs_flat = static_cast<std::uint32_t>(cfg.epochs_flat);
  t.epochs_decay = static_cast<std::uint32_t>(cfg.epochs_decay);
  t.batch_size = static_cast<std::uint32_t>(cfg.batch_size);
  t.crop_size = static_cast<std::uint32_t>(cfg.crop_size);
  t.lambda = cfg.lambda;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.adam_eps = cfg.adam_eps;
  t.bn_momentum = ad::BatchNormState<float>(1).momentum;
  t.bn_eps = ad::BatchNormState<float>(1).eps;
  t.adam_m = adam.m;
  t.adam_v = adam.v;
  return t;
}

namespace {

void check_resume(const model::TrainingState& s, const TrainConfig& cfg) {
  const model::TrainingState want = training_state(cfg, 0, {});
  std::string diff;
  auto note = [&](const char* name, bool same) {
    if (!same) diff += std::string(diff.empty() ? "" : ", ") + name;
  };
  note("seed", s.seed == want.seed);
  note("lr0", s.lr0 == want.lr0);
  note("epochs_flat", s.epochs_flat == want.epochs_flat);
  note("epochs_decay", s.epochs_decay == want.epochs_decay);
  note("batch_size", s.batch_size == want.batch_size);
  note("crop_size", s.crop_size == want.crop_size);
  note("lambda", s.lambda == want.lambda);
  note("beta1", s.beta1 == want.beta1);
  note("beta2", s.beta2 == want.beta2);
  note("adam_eps", s.adam_eps == want.adam_eps);
  note("bn_momentum", s.bn_momentum == want.bn_momentum);
  note("bn_eps", s.bn_eps == want.bn_eps);
  if (!diff.empty()) throw ConfigMismatchError("resume: checkpoint was trained with different " + diff);
  if (s.epoch > static_cast<std::uint32_t>(cfg.total_epochs()))
    throw ConfigMismatchError("resume: checkpoint is past the end of the schedule");
}

ad::Tensor<float> to_tensor(const raw::NormalizedFrame& nf) {
  std::vector<float> v(nf.values.begin(), nf.values.end());
  return ad::Tensor<float>::from(ad::Shape::nchw(1, 1, nf.height, nf.width), std::move(v));
}

model::Checkpoint make_checkpoint(model::DeblurNet<float>& net, const TrainConfig& cfg, int epochs_done,
                                  const AdamState<float>& adam) {
  model::Checkpoint ckpt = model::snapshot(net);
  ckpt.training = training_state(cfg, epochs_done, adam);
  return ckpt;
}

}  // namespace

TrainResult train(const synth::Manifest& manifest, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const std::vector<TrainPair> pairs = load_pairs(manifest, synth::Split::Train);
  if (pairs.empty()) throw ConfigError("train: the manifest has no train pairs");
  const raw::CfaPattern cfa = pairs.front().blur.cfa;
  for (const auto& p : pairs)
    if (!(p.blur.cfa == cfa)) throw ConfigError("train: training pairs mix CFA layouts");
  const std::vector<TrainPair> val = cfg.checkpoint_every > 0 ? load_pairs(manifest, synth::Split::Val)
                                                              : std::vector<TrainPair>{};

  ad::CheckedModeGuard checked(cfg.checked);
  model::DeblurNet<float> net(cfg.model, cfg.seed);
  AdamState<float> adam;
  int start_epoch = 0;
  if (options.resume) {
    if (!options.resume->training) throw ConfigError("resume: checkpoint carries no training state");
    check_resume(*options.resume->training, cfg);
    model::restore(net, *options.resume);
    start_epoch = static_cast<int>(options.resume->training->epoch);
    adam.step = options.resume->training->step;
    adam.m = options.resume->training->adam_m;
    adam.v = options.resume->training->adam_v;
  }
  const int end_epoch = std::min(cfg.total_epochs(), options.stop_after_epoch.value_or(cfg.total_epochs()));
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  const AdamConfig adam_cfg{cfg.beta1, cfg.beta2, cfg.adam_eps};
  auto params = net.parameters();
  const int per_epoch = iterations_per_epoch(pairs.size(), cfg.batch_size);
  TrainResult result;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    Rng rng = epoch_rng(cfg.seed, epoch);
    const auto order = epoch_order(pairs.size(), rng);
    for (int it = 0; it < per_epoch; ++it) {
      const std::size_t begin = static_cast<std::size_t>(it) * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch = sample_batch(pairs, std::span(order).subspan(begin, end - begin), cfg.crop_size, rng);

      net.set_training(true);
      for (auto* p : params) p->zero_grad();
      auto loss = metrics::total_loss(net.forward(batch.blur, cfa), batch.sharp, cfg.lambda);
      ad::backward(loss);
      adam_step<float>(params, adam, lr, adam_cfg);

      TraceRow row{epoch, adam.step, lr, static_cast<double>(loss.item()), std::nullopt};
      const bool epoch_end = it + 1 == per_epoch;
      const bool periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
      if (epoch_end && periodic && !val.empty())
        row.val_raw_psnr = evaluate(net, val, options.isp).aggregate().raw_psnr;
      if (options.on_iteration) options.on_iteration(row);
      result.trace.push_back(row);
    }
    const bool periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
    if (periodic && options.checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%05d.dbrw", epoch + 1);
      model::save_checkpoint(*options.checkpoint_dir / name, make_checkpoint(net, cfg, epoch + 1, adam));
    }
  }
  net.set_training(false);
  result.checkpoint = make_checkpoint(net, cfg, std::max(start_epoch, end_epoch), adam);
  return result;
}

metrics::EvalRow score(const std::string& id, const raw::BayerFrame& restored, const raw::BayerFrame& sharp,
                       const isp::IspConfig& isp) {
  metrics::EvalRow row;
  row.image_id = id;
  row.raw_psnr = metrics::raw_psnr(raw::normalize(restored), raw::normalize(sharp));
  row.raw_ssim = metrics::raw_ssim(raw::normalize(restored), raw::normalize(sharp));
  const auto a = isp::render(restored, isp);
  const auto b = isp::render(sharp, isp);
  row.srgb_psnr = metrics::srgb_psnr(a, b);
  row.srgb_ssim = metrics::srgb_ssim(a, b);
  return row;
}

raw::BayerFrame restore_frame(model::DeblurNet<float>& net, const raw::BayerFrame& blurred) {
  const bool was_training = net.training();
  net.set_training(false);
  ad::NoGradGuard no_grad;
  const raw::NormalizedFrame nf = raw::normalize(blurred);
  const auto y = net.forward(to_tensor(nf), nf.cfa);
  net.set_training(was_training);
  raw::NormalizedFrame out(nf.width, nf.height, nf.cfa);
  const auto data = y.data();
  std::copy(data.begin(), data.end(), out.values.begin());
  return raw::denormalize(out, blurred.black_level, blurred.white_level, blurred.bit_depth);
}

metrics::EvalReport evaluate(model::DeblurNet<float>& net, std::span<const TrainPair> pairs,
                             const isp::IspConfig& isp) {
  if (pairs.empty()) throw ConfigError("evaluate: no pairs to score");
  metrics::EvalReport report;
  for (const auto& p : pairs) report.rows.push_back(score(p.id, restore_frame(net, p.blur_frame), p.sharp_frame, isp));
  return report;
}

metrics::EvalReport evaluate(const model::Checkpoint& ckpt, const synth::Manifest& manifest, synth::Split split,
                             const isp::IspConfig& isp) {
  const auto pairs = load_pairs(manifest, split);
  if (pairs.empty()) throw ConfigError("evaluate: split '" + synth::to_string(split) + "' is empty");
  auto net = model::instantiate<float>(ckpt);
  return evaluate(net, pairs, isp);
}

}  // namespace rawdeblur::train
