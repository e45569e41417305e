#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "rawdeblur/blur_synth.hpp"
#include "rawdeblur/checkpoint.hpp"
#include "rawdeblur/isp.hpp"
#include "rawdeblur/raw_core.hpp"
#include "support/temp_dir.hpp"

using namespace rawdeblur;
using rawdeblur::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Maps every file under `root` to its contents.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> t;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) t[fs::relative(e.path(), root).string()] = slurp(e.path());
  return t;
}

raw::BayerFrame flat_frame(int w, int h, std::uint16_t value) {
  raw::BayerFrame f;
  f.width = w;
  f.height = h;
  f.bit_depth = 14;
  f.black_level = 512;
  f.white_level = 15871;
  f.samples.assign(static_cast<std::size_t>(w) * h, value);
  return f;
}

void small_dataset(const fs::path& dir, int scenes = 3, int val = 0) {
  const auto r = run({"synth", "--out", dir.string(), "--scenes", std::to_string(scenes), "--val-scenes",
                      std::to_string(val), "--width", "32", "--height", "32", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
}

void small_checkpoint(const fs::path& path, const std::string& variant = "two_branch_bca") {
  const auto r = run({"init", "--out", path.string(), "--variant", variant, "--base-channels", "4", "--resblocks", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace

TEST(Cli, SubcommandIsRequiredAndUnknownOnesAreUsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(run({"render", "--input", "x.rawb", "--out", "y.ppm", "--bogus"}).code, cli::kExitUsage);
}

TEST(CliSynth, DefaultsProduceParsableManifest) {
  TempDir dir;
  const auto r = run({"synth", "--out", (dir / "ds").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = synth::read_manifest(dir / "ds" / "manifest.tsv");
  EXPECT_GT(m.entries.size(), 0u);
  for (const auto& e : m.entries) EXPECT_NO_THROW(raw::read_rawb(m.resolve(e.blur_path)));
}

TEST(CliSynth, SameSeedGivesByteIdenticalTree) {
  TempDir dir;
  for (const char* name : {"a", "b"})
    ASSERT_EQ(run({"synth", "--out", (dir / name).string(), "--seed", "9", "--frames", "5", "--blur-frames", "3",
                   "--blur-frames", "4"})
                  .code,
              0);
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  EXPECT_GT(a.size(), 2u);
  EXPECT_EQ(a, b);
}

TEST(CliSynth, TooFewFramesIsUsageErrorWithoutOutput) {
  TempDir dir;
  const auto r = run({"synth", "--out", (dir / "ds").string(), "--frames", "2"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "ds"));
}

TEST(CliSynth, RuntimeFailureLeavesNothingBehind) {
  TempDir dir;
  const auto r = run({"synth", "--out", (dir / "ds").string(), "--scenes", "2", "--val-scenes", "3"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_FALSE(fs::exists(dir / "ds"));

  fs::create_directories(dir / "full");
  std::ofstream(dir / "full" / "keep.txt") << "x";
  EXPECT_EQ(run({"synth", "--out", (dir / "full").string()}).code, cli::kExitFailure);
  EXPECT_EQ(slurp(dir / "full" / "keep.txt"), "x");
}

TEST(CliDeblur, ZeroHeadCheckpointReproducesInput) {
  TempDir dir;
  small_dataset(dir / "ds", 1);
  small_checkpoint(dir / "id.dbrw");
  const auto input = dir / "ds" / "pairs" / "scene000_w0_blur.rawb";
  const auto r = run({"deblur", "--checkpoint", (dir / "id.dbrw").string(), "--input", input.string(), "--output",
                      (dir / "out.rawb").string(), "--srgb", (dir / "out.ppm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto in = raw::read_rawb(input);
  const auto out = raw::read_rawb(dir / "out.rawb");
  EXPECT_TRUE(out.same_metadata(in));
  for (std::size_t k = 0; k < in.samples.size(); ++k)
    ASSERT_LE(std::abs(int(out.samples[k]) - int(in.samples[k])), 1);
  const auto ppm = isp::read_ppm(dir / "out.ppm");
  EXPECT_EQ(ppm.width, in.width);
}

TEST(CliDeblur, IncompatibleInputFailsWithoutOutput) {
  TempDir dir;
  small_checkpoint(dir / "id.dbrw");
  raw::write_rawb(dir / "tiny.rawb", flat_frame(8, 8, 1000));
  const auto r = run({"deblur", "--checkpoint", (dir / "id.dbrw").string(), "--input", (dir / "tiny.rawb").string(),
                      "--output", (dir / "out.rawb").string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_FALSE(fs::exists(dir / "out.rawb"));
  EXPECT_EQ(run({"deblur", "--checkpoint", (dir / "missing.dbrw").string(), "--input", (dir / "tiny.rawb").string(),
                 "--output", (dir / "out.rawb").string()})
                .code,
            cli::kExitFailure);
}

TEST(CliEval, ReportHasTableColumnsAndSelfEvalIsPerfect) {
  TempDir dir;
  small_dataset(dir / "ds", 3, 1);
  const auto manifest = (dir / "ds" / "manifest.tsv").string();
  const auto r = run({"eval", "--source", "sharp", "--manifest", manifest, "--split", "val", "--out",
                      (dir / "report.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, row, mean;
  std::getline(lines, header);
  std::getline(lines, row);
  std::getline(lines, mean);
  EXPECT_EQ(header, "image_id\traw_psnr\traw_ssim\tsrgb_psnr\tsrgb_ssim");
  EXPECT_NE(row.find("\tinf\t1.000000\tinf\t1.000000"), std::string::npos) << row;
  EXPECT_EQ(mean, "mean\tinf\t1.000000\tinf\t1.000000");
  EXPECT_EQ(slurp(dir / "report.tsv"), r.out);

  small_checkpoint(dir / "id.dbrw");
  const auto model = run({"eval", "--checkpoint", (dir / "id.dbrw").string(), "--manifest", manifest, "--split", "train"});
  ASSERT_EQ(model.code, 0) << model.err;
  const auto blur = run({"eval", "--source", "blur", "--manifest", manifest, "--split", "train"});
  // The zero-head model restores its input exactly, so it scores as the blurred frames do.
  EXPECT_EQ(model.out, blur.out);
}

TEST(CliEval, EmptySplitAndMissingCheckpointAreErrors) {
  TempDir dir;
  small_dataset(dir / "ds", 2);
  const auto manifest = (dir / "ds" / "manifest.tsv").string();
  const auto r = run({"eval", "--source", "sharp", "--manifest", manifest, "--split", "test"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("empty"), std::string::npos);
  EXPECT_EQ(run({"eval", "--manifest", manifest}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--source", "sharp", "--manifest", manifest, "--split", "nope"}).code, cli::kExitUsage);
}

TEST(CliRender, BlackAndWhiteFrames) {
  TempDir dir;
  raw::write_rawb(dir / "black.rawb", flat_frame(16, 16, 512));
  raw::write_rawb(dir / "white.rawb", flat_frame(16, 16, 15871));
  for (const char* method : {"bilinear", "ahd"}) {
    ASSERT_EQ(run({"render", "--input", (dir / "black.rawb").string(), "--out", (dir / "b.ppm").string(),
                   "--demosaic", method})
                  .code,
              0);
    ASSERT_EQ(run({"render", "--input", (dir / "white.rawb").string(), "--out", (dir / "w.ppm").string(),
                   "--demosaic", method})
                  .code,
              0);
    for (auto v : isp::read_ppm(dir / "b.ppm").rgb) ASSERT_EQ(v, 0);
    for (auto v : isp::read_ppm(dir / "w.ppm").rgb) ASSERT_EQ(v, 255);
  }
  EXPECT_EQ(run({"render", "--input", (dir / "black.rawb").string(), "--out", (dir / "x.ppm").string(), "--demosaic",
                 "vng"})
                .code,
            cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "x.ppm"));
}

TEST(CliAttention, FourDeterministicMapsForBcaCheckpoint) {
  TempDir dir;
  small_dataset(dir / "ds", 1);
  raw::BayerFrame f = raw::read_rawb(dir / "ds" / "pairs" / "scene000_w0_blur.rawb");
  small_checkpoint(dir / "bca.dbrw");
  const auto input = (dir / "ds" / "pairs" / "scene000_w0_blur.rawb").string();
  for (const char* out : {"a", "b"})
    ASSERT_EQ(run({"dump-attention", "--checkpoint", (dir / "bca.dbrw").string(), "--input", input, "--out-dir",
                   (dir / out).string()})
                  .code,
              0);
  const auto a = tree(dir / "a");
  ASSERT_EQ(a.size(), 4u);
  for (const char* name : {"bca1_space.pgm", "bca1_color.pgm", "bca2_space.pgm", "bca2_color.pgm"})
    ASSERT_TRUE(a.count(name)) << name;
  EXPECT_EQ(a, tree(dir / "b"));
  const auto g1 = isp::read_pgm(dir / "a" / "bca1_space.pgm");
  const auto g2 = isp::read_pgm(dir / "a" / "bca2_color.pgm");
  EXPECT_EQ(g1.width, f.width / 2);
  EXPECT_EQ(g2.width, f.width / 4);

  ASSERT_EQ(run({"dump-attention", "--checkpoint", (dir / "bca.dbrw").string(), "--input", input, "--out-dir",
                 (dir / "pc").string(), "--per-channel"})
                .code,
            0);
  // Base width 4: 8 channels per first-stage map, 16 per second-stage map.
  EXPECT_EQ(tree(dir / "pc").size(), 4u + 2 * 8 + 2 * 16);
}

TEST(CliAttention, NonBcaCheckpointIsUsageError) {
  TempDir dir;
  small_dataset(dir / "ds", 1);
  small_checkpoint(dir / "so.dbrw", "spatial_only");
  const auto r = run({"dump-attention", "--checkpoint", (dir / "so.dbrw").string(), "--input",
                      (dir / "ds" / "pairs" / "scene000_w0_blur.rawb").string(), "--out-dir", (dir / "att").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "att"));
}

TEST(CliTrain, ConfigFileWithFlagOverrideWritesLoadableCheckpoint) {
  TempDir dir;
  small_dataset(dir / "ds", 2);
  std::ofstream(dir / "train.cfg") << "# tiny run\nepochs-flat = 2\nepochs-decay = 9\n"
                                   << "base-channels = 4\nresblocks = 1\ncrop = 32\nvariant = spatial_only\n";
  const auto r = run({"train", "--manifest", (dir / "ds" / "manifest.tsv").string(), "--config",
                      (dir / "train.cfg").string(), "--epochs-decay", "1", "--out", (dir / "run").string(),
                      "--log-every", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = model::load_checkpoint(dir / "run" / "final.dbrw");
  EXPECT_EQ(ckpt.config.variant, model::Variant::SpatialOnly);
  EXPECT_EQ(ckpt.config.base_channels, 4);
  ASSERT_TRUE(ckpt.training);
  EXPECT_EQ(ckpt.training->epochs_flat, 2u);
  EXPECT_EQ(ckpt.training->epochs_decay, 1u);
  EXPECT_EQ(ckpt.training->crop_size, 32u);
  EXPECT_EQ(ckpt.training->step, 3u);
  std::istringstream trace(slurp(dir / "run" / "trace.tsv"));
  std::string line;
  int lines = 0;
  while (std::getline(trace, line)) ++lines;
  EXPECT_EQ(lines, 4);
  EXPECT_NE(r.out.find("0\t1\t0.0001\t"), std::string::npos) << r.out;
}

TEST(CliTrain, InvalidInputsFailWithoutCheckpoint) {
  TempDir dir;
  const auto missing = run({"train", "--manifest", (dir / "nope.tsv").string(), "--out", (dir / "run").string()});
  EXPECT_EQ(missing.code, cli::kExitFailure);
  EXPECT_FALSE(fs::exists(dir / "run" / "final.dbrw"));

  std::ofstream(dir / "bad.cfg") << "bogus-key = 1\n";
  EXPECT_EQ(run({"train", "--manifest", (dir / "nope.tsv").string(), "--out", (dir / "run").string(), "--config",
                 (dir / "bad.cfg").string()})
                .code,
            cli::kExitUsage);
  std::ofstream(dir / "malformed.cfg") << "no equals sign\n";
  EXPECT_EQ(run({"train", "--manifest", (dir / "nope.tsv").string(), "--out", (dir / "run").string(), "--config",
                 (dir / "malformed.cfg").string()})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(run({"train", "--manifest", (dir / "nope.tsv").string(), "--out", (dir / "run").string(), "--crop", "15"})
                .code,
            cli::kExitFailure);
  EXPECT_FALSE(fs::exists(dir / "run" / "final.dbrw"));
}
