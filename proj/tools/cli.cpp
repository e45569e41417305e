#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "rawdeblur/blur_synth.hpp"
#include "rawdeblur/checkpoint.hpp"
#include "rawdeblur/errors.hpp"
#include "rawdeblur/isp.hpp"
#include "rawdeblur/loss_metrics.hpp"
#include "rawdeblur/model.hpp"
#include "rawdeblur/raw_core.hpp"
#include "rawdeblur/trainer.hpp"

namespace rawdeblur::cli {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, model::Variant> kVariants{{"spatial_only", model::Variant::SpatialOnly},
                                                      {"color_only", model::Variant::ColorOnly},
                                                      {"two_branch", model::Variant::TwoBranch},
                                                      {"two_branch_bca", model::Variant::TwoBranchBca}};
const std::map<std::string, isp::DemosaicMethod> kDemosaic{{"bilinear", isp::DemosaicMethod::Bilinear},
                                                           {"ahd", isp::DemosaicMethod::Ahd}};
const std::map<std::string, synth::MotionKind> kMotion{{"global", synth::MotionKind::GlobalTranslate},
                                                       {"object", synth::MotionKind::ObjectTranslate}};
const std::map<std::string, synth::Split> kSplits{
    {"train", synth::Split::Train}, {"val", synth::Split::Val}, {"test", synth::Split::Test}};

struct ModelFlags {
  model::ModelConfig config;

  void add(CLI::App* cmd) {
    cmd->add_option("--variant", config.variant, "Network variant")
        ->transform(CLI::CheckedTransformer(kVariants))
        ->capture_default_str();
    cmd->add_option("--base-channels", config.base_channels, "Width of the first encoder stage")
        ->check(CLI::Range(1, 4096))
        ->capture_default_str();
    cmd->add_option("--resblocks", config.n_resblocks, "Residual blocks in the trunk")
        ->check(CLI::Range(1, 255))
        ->capture_default_str();
    cmd->add_option("--multiplier", config.multiplier, "Channel multiplier")
        ->check(CLI::IsMember({1, 2}))
        ->capture_default_str();
  }
};

struct SynthCmd {
  synth::SynthOptions opt;
  std::string cfa = "RGGB";
  fs::path out;
};

struct InitCmd {
  ModelFlags model;
  std::uint64_t seed = 0;
  fs::path out;
};

struct TrainCmd {
  std::string preset = "desk";
  ModelFlags model;
  train::TrainConfig cfg;
  fs::path manifest;
  fs::path out;
  std::optional<fs::path> resume;
  std::optional<int> stop_after_epoch;
  int log_every = 50;
};

struct DeblurCmd {
  fs::path checkpoint, input, output;
  std::optional<fs::path> srgb;
  isp::DemosaicMethod demosaic = isp::DemosaicMethod::Bilinear;
};

struct EvalCmd {
  std::optional<fs::path> checkpoint;
  fs::path manifest;
  synth::Split split = synth::Split::Test;
  std::string source = "model";
  std::optional<fs::path> out;
  isp::DemosaicMethod demosaic = isp::DemosaicMethod::Bilinear;
};

struct RenderCmd {
  fs::path input, out;
  isp::DemosaicMethod demosaic = isp::DemosaicMethod::Bilinear;
};

struct AttentionCmd {
  fs::path checkpoint, input, out_dir;
  bool per_channel = false;
};

// ---------------------------------------------------------------- synth

int run_synth(SynthCmd& c, std::ostream& out) {
  c.opt.sensor.cfa = raw::CfaPattern::parse(c.cfa);
  const bool existed = fs::exists(c.out);
  if (existed && (!fs::is_directory(c.out) || !fs::is_empty(c.out)))
    throw IoError(c.out.string() + " exists and is not an empty directory");
  try {
    const auto manifest = synth::synthesize(c.opt, c.out);
    out << "wrote " << manifest.entries.size() << " pairs to " << (c.out / "manifest.tsv").string() << '\n';
  } catch (...) {
    // Leave no half-written dataset behind.
    std::error_code ec;
    if (existed) {
      for (const auto& entry : fs::directory_iterator(c.out, ec)) fs::remove_all(entry.path(), ec);
    } else {
      fs::remove_all(c.out, ec);
    }
    throw;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- init

int run_init(InitCmd& c, std::ostream& out) {
  c.model.config.validate();
  model::DeblurNet<float> net(c.model.config, c.seed);
  net.set_training(false);
  model::save_checkpoint(c.out, model::snapshot(net));
  out << "wrote " << model::to_string(c.model.config.variant) << " checkpoint with " << net.parameter_count()
      << " parameters to " << c.out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

int run_train(TrainCmd& c, CLI::App* cmd, std::ostream& out) {
  // Preset first, then every explicitly given flag or config key on top of it.
  train::TrainConfig cfg = c.preset == "desk" ? train::TrainConfig::desk() : train::TrainConfig{};
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--lr")) cfg.lr0 = c.cfg.lr0;
  if (given("--epochs-flat")) cfg.epochs_flat = c.cfg.epochs_flat;
  if (given("--epochs-decay")) cfg.epochs_decay = c.cfg.epochs_decay;
  if (given("--batch")) cfg.batch_size = c.cfg.batch_size;
  if (given("--crop")) cfg.crop_size = c.cfg.crop_size;
  if (given("--lambda")) cfg.lambda = c.cfg.lambda;
  if (given("--seed")) cfg.seed = c.cfg.seed;
  if (given("--checkpoint-every")) cfg.checkpoint_every = c.cfg.checkpoint_every;
  cfg.model = c.model.config;
  cfg.validate();

  const synth::Manifest manifest = synth::read_manifest(c.manifest);
  train::TrainOptions opt;
  if (c.resume) opt.resume = model::load_checkpoint(*c.resume);
  opt.stop_after_epoch = c.stop_after_epoch;
  if (cfg.checkpoint_every > 0) opt.checkpoint_dir = c.out / "checkpoints";
  opt.on_iteration = [&](const train::TraceRow& row) {
    if (c.log_every > 0 && (row.iteration % static_cast<std::uint64_t>(c.log_every) == 0 || row.val_raw_psnr))
      out << train::format_trace_row(row) << std::endl;
  };
  fs::create_directories(c.out);
  const auto result = train::train(manifest, cfg, opt);

  std::ofstream trace(c.out / "trace.tsv");
  train::write_trace(trace, result.trace);
  if (!trace) throw IoError("cannot write " + (c.out / "trace.tsv").string());
  model::save_checkpoint(c.out / "final.dbrw", result.checkpoint);
  out << "wrote " << (c.out / "final.dbrw").string() << " after " << result.trace.size() << " iterations\n";
  return kExitOk;
}

// ---------------------------------------------------------------- deblur

int run_deblur(DeblurCmd& c, std::ostream& out) {
  const auto ckpt = model::load_checkpoint(c.checkpoint);
  const auto input = raw::read_rawb(c.input);
  auto net = model::instantiate<float>(ckpt);
  const auto restored = train::restore_frame(net, input);
  raw::write_rawb(c.output, restored);
  out << "wrote " << c.output.string() << '\n';
  if (c.srgb) {
    isp::IspConfig ic;
    ic.demosaic = c.demosaic;
    isp::write_ppm(*c.srgb, isp::render(restored, ic));
    out << "wrote " << c.srgb->string() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int run_eval(EvalCmd& c, std::ostream& out) {
  if (c.source == "model" && !c.checkpoint) throw UsageError("eval: --checkpoint is required for --source model");
  const auto manifest = synth::read_manifest(c.manifest);
  isp::IspConfig ic;
  ic.demosaic = c.demosaic;
  metrics::EvalReport report;
  if (c.source == "model") {
    report = train::evaluate(model::load_checkpoint(*c.checkpoint), manifest, c.split, ic);
  } else {
    const auto pairs = train::load_pairs(manifest, c.split);
    if (pairs.empty()) throw ConfigError("eval: split '" + synth::to_string(c.split) + "' is empty");
    for (const auto& p : pairs)
      report.rows.push_back(
          train::score(p.id, c.source == "blur" ? p.blur_frame : p.sharp_frame, p.sharp_frame, ic));
  }
  report.write(out);
  if (c.out) report.save(*c.out);
  return kExitOk;
}

// ---------------------------------------------------------------- render

int run_render(RenderCmd& c, std::ostream& out) {
  isp::IspConfig ic;
  ic.demosaic = c.demosaic;
  isp::write_ppm(c.out, isp::render(raw::read_rawb(c.input), ic));
  out << "wrote " << c.out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- dump-attention

isp::GrayImage to_gray(std::span<const float> plane_sum, int w, int h, double scale) {
  raw::NormalizedFrame nf(w, h, raw::CfaPattern::rggb());
  for (std::size_t i = 0; i < nf.values.size(); ++i) nf.values[i] = plane_sum[i] * scale;
  return isp::mosaic_preview(nf);
}

int run_dump_attention(AttentionCmd& c, std::ostream& out) {
  const auto ckpt = model::load_checkpoint(c.checkpoint);
  if (!ckpt.config.has_bca())
    throw UsageError("dump-attention: checkpoint holds a " + model::to_string(ckpt.config.variant) +
                     " net, which has no cross attention");
  const auto frame = raw::read_rawb(c.input);
  auto net = model::instantiate<float>(ckpt);
  net.set_training(false);
  const auto nf = raw::normalize(frame);
  std::vector<float> v(nf.values.begin(), nf.values.end());
  model::Trace<float> trace;
  {
    ad::NoGradGuard no_grad;
    net.forward(ad::Tensor<float>::from(ad::Shape::nchw(1, 1, nf.height, nf.width), std::move(v)), nf.cfa, &trace);
  }
  fs::create_directories(c.out_dir);
  for (const auto& [name, att] : trace.attention) {
    const auto s = att.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
    const auto data = att.data();
    if (c.per_channel) {
      for (int ch = 0; ch < s.c(); ++ch) {
        char file[64];
        std::snprintf(file, sizeof file, "%s_c%03d.pgm", name.c_str(), ch);
        isp::write_pgm(c.out_dir / file, to_gray(data.subspan(ch * plane, plane), s.w(), s.h(), 1.0));
      }
    }
    std::vector<float> sum(plane, 0.0f);
    for (int ch = 0; ch < s.c(); ++ch)
      for (std::size_t i = 0; i < plane; ++i) sum[i] += data[ch * plane + i];
    isp::write_pgm(c.out_dir / (name + ".pgm"), to_gray(sum, s.w(), s.h(), 1.0 / s.c()));
    out << "wrote " << (c.out_dir / (name + ".pgm")).string() << " (" << s.w() << "x" << s.h() << ", " << s.c()
        << " channels averaged)\n";
  }
  return kExitOk;
}

const std::set<std::string> kSubcommands{"synth", "init", "train", "deblur", "eval", "render", "dump-attention"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Turns each `key = value` line of the --config file into `--key value`,
// placed ahead of the explicit flags so that those win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (!file) return args;
  const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return kSubcommands.count(a); });
  if (sub == args.end()) return args;

  std::ifstream in(*file);
  if (!in) throw IoError("cannot read config file " + *file);
  std::vector<std::string> injected;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
    if (key.empty() || key.rfind("-", 0) == 0 || key == "config")
      throw UsageError(*file + ":" + std::to_string(n) + ": expected `key = value`");
    injected.push_back("--" + key);
    injected.push_back(trim(line.substr(eq + 1)));
  }
  std::vector<std::string> out(args.begin(), sub + 1);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), sub + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  CLI::App app{"RAW-domain deblurring toolkit", "rawdeblur"};
  app.require_subcommand(1);
  app.fallthrough(false);
  // A repeated flag keeps its last value, which is how explicit flags override the config file.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  SynthCmd synth_cmd;
  auto* synth = app.add_subcommand("synth", "Synthesize blurred/sharp RAWB pairs and a manifest");
  synth->add_option("--scenes", synth_cmd.opt.scenes, "Procedural scenes")->check(CLI::Range(1, 100000))->capture_default_str();
  synth->add_option("--frames", synth_cmd.opt.frames, "Sharp frames per scene (at least 3)")
      ->check(CLI::Range(3, 1000))
      ->capture_default_str();
  synth->add_option("--blur-frames", synth_cmd.opt.m_cycle, "Frames averaged per pair, cycled over windows")
      ->check(CLI::Range(3, 5))
      ->capture_default_str();
  synth->add_option("--motion", synth_cmd.opt.motion, "global or object translation")
      ->transform(CLI::CheckedTransformer(kMotion))
      ->capture_default_str();
  synth->add_option("--max-speed", synth_cmd.opt.max_speed, "Upper bound of per-scene speed, px/frame")
      ->check(CLI::Range(0.0, synth::MotionSpec::kMaxSpeed))
      ->capture_default_str();
  synth->add_option("--width", synth_cmd.opt.sensor.width, "Frame width")->check(CLI::Range(16, 1 << 15))->capture_default_str();
  synth->add_option("--height", synth_cmd.opt.sensor.height, "Frame height")->check(CLI::Range(16, 1 << 15))->capture_default_str();
  synth->add_option("--cfa", synth_cmd.cfa, "CFA layout")
      ->check(CLI::IsMember({"RGGB", "BGGR", "GRBG", "GBRG"}))
      ->capture_default_str();
  synth->add_option("--val-scenes", synth_cmd.opt.val_scenes, "Scenes assigned to the val split")->capture_default_str();
  synth->add_option("--test-scenes", synth_cmd.opt.test_scenes, "Scenes assigned to the test split")->capture_default_str();
  synth->add_option("--seed", synth_cmd.opt.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", synth_cmd.out, "Output directory (new or empty)")->required();

  InitCmd init_cmd;
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint (identity output head)");
  init_cmd.model.add(init);
  init->add_option("--seed", init_cmd.seed, "Initialization seed")->capture_default_str();
  init->add_option("--out", init_cmd.out, "Checkpoint path")->required();

  TrainCmd train_cmd;
  auto* trn = app.add_subcommand("train", "Train on the train split of a manifest");
  trn->add_option("--manifest", train_cmd.manifest, "Dataset manifest")->required();
  trn->add_option("--out", train_cmd.out, "Output directory for final.dbrw, trace.tsv and checkpoints/")->required();
  trn->add_option("--preset", train_cmd.preset, "desk: crop 64, batch 2; full: crop 256, batch 2")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  train_cmd.model.add(trn);
  trn->add_option("--lr", train_cmd.cfg.lr0, "Initial learning rate (default 1e-4)");
  trn->add_option("--epochs-flat", train_cmd.cfg.epochs_flat, "Epochs at the initial rate (default 500)");
  trn->add_option("--epochs-decay", train_cmd.cfg.epochs_decay, "Epochs of linear decay (default 500)");
  trn->add_option("--batch", train_cmd.cfg.batch_size, "Batch size (default 2)");
  trn->add_option("--crop", train_cmd.cfg.crop_size, "Square crop size, even and >= 16 (default from preset)");
  trn->add_option("--lambda", train_cmd.cfg.lambda, "Weight of the SSIM loss term (default 1)");
  trn->add_option("--seed", train_cmd.cfg.seed, "Seed for initialization and sampling (default 0)");
  trn->add_option("--checkpoint-every", train_cmd.cfg.checkpoint_every,
                  "Epochs between checkpoints and validation, 0 disables (default 0)");
  trn->add_option("--resume", train_cmd.resume, "Continue from a checkpoint written by train");
  trn->add_option("--stop-after-epoch", train_cmd.stop_after_epoch, "Stop once this many epochs are complete");
  trn->add_option("--log-every", train_cmd.log_every, "Iterations between progress lines, 0 silences")
      ->capture_default_str();

  DeblurCmd deblur_cmd;
  auto* deblur = app.add_subcommand("deblur", "Restore one RAWB frame");
  deblur->add_option("--checkpoint", deblur_cmd.checkpoint, "Checkpoint")->required();
  deblur->add_option("--input", deblur_cmd.input, "Blurred RAWB")->required();
  deblur->add_option("--output", deblur_cmd.output, "Restored RAWB")->required();
  deblur->add_option("--srgb", deblur_cmd.srgb, "Also render the restoration to this PPM");
  deblur->add_option("--demosaic", deblur_cmd.demosaic, "Demosaic for --srgb")
      ->transform(CLI::CheckedTransformer(kDemosaic))
      ->capture_default_str();

  EvalCmd eval_cmd;
  auto* eval = app.add_subcommand("eval", "Score a split: RAW and sRGB PSNR/SSIM per image and mean");
  eval->add_option("--checkpoint", eval_cmd.checkpoint, "Checkpoint (required for --source model)");
  eval->add_option("--manifest", eval_cmd.manifest, "Dataset manifest")->required();
  eval->add_option("--split", eval_cmd.split, "Split to score")
      ->transform(CLI::CheckedTransformer(kSplits))
      ->capture_default_str();
  eval->add_option("--source", eval_cmd.source, "model: restorations; blur: inputs as-is; sharp: ground truth")
      ->check(CLI::IsMember({"model", "blur", "sharp"}))
      ->capture_default_str();
  eval->add_option("--out", eval_cmd.out, "Also write the report here");
  eval->add_option("--demosaic", eval_cmd.demosaic, "Demosaic for the sRGB metrics")
      ->transform(CLI::CheckedTransformer(kDemosaic))
      ->capture_default_str();

  RenderCmd render_cmd;
  auto* render = app.add_subcommand("render", "Render a RAWB frame to an sRGB PPM");
  render->add_option("--input", render_cmd.input, "RAWB frame")->required();
  render->add_option("--out", render_cmd.out, "PPM path")->required();
  render->add_option("--demosaic", render_cmd.demosaic, "bilinear or ahd")
      ->transform(CLI::CheckedTransformer(kDemosaic))
      ->capture_default_str();

  AttentionCmd att_cmd;
  auto* att = app.add_subcommand("dump-attention", "Write the cross-attention maps of one frame as PGMs");
  att->add_option("--checkpoint", att_cmd.checkpoint, "two_branch_bca checkpoint")->required();
  att->add_option("--input", att_cmd.input, "RAWB frame")->required();
  att->add_option("--out-dir", att_cmd.out_dir, "Output directory")->required();
  att->add_flag("--per-channel", att_cmd.per_channel, "Also write one PGM per attention channel");

  for (auto* cmd : {synth, init, trn, deblur, eval, render, att})
    cmd->add_option("--config", config_path, "File of `key = value` lines naming long flags; explicit flags win");

  std::vector<const char*> argv{"rawdeblur"};
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(synth_cmd, out);
    if (init->parsed()) return run_init(init_cmd, out);
    if (trn->parsed()) return run_train(train_cmd, trn, out);
    if (deblur->parsed()) return run_deblur(deblur_cmd, out);
    if (eval->parsed()) return run_eval(eval_cmd, out);
    if (render->parsed()) return run_render(render_cmd, out);
    if (att->parsed()) return run_dump_attention(att_cmd, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace rawdeblur::cli
