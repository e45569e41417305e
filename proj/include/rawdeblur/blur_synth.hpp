#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rawdeblur/raw_core.hpp"

namespace rawdeblur::synth {

/// Consecutive sharp frames sharing every piece of sensor metadata.
struct FrameSequence {
  std::string id;
  std::vector<raw::BayerFrame> frames;
  double frame_rate = 30.0;

  void validate() const;
};

struct BlurPair {
  raw::BayerFrame blurred;
  raw::BayerFrame sharp;
  std::string source_id;
  int center_index = 0;  ///< index of the sharp frame within the source sequence
  int num_averaged = 0;
};

/// Temporal mean of frames [start, start + m) in sensor counts (round half up);
/// the ground truth is frame start + m/2. Throws RangeError for m outside [3, 5]
/// or a window running past the sequence.
BlurPair average_frames(const FrameSequence& seq, int start, int m);

/// Linear-light RGB raster sampled with bilinear interpolation.
class Scene {
 public:
  Scene(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  double& at(int channel, int x, int y) { return rgb_[(static_cast<std::size_t>(channel) * height_ + y) * width_ + x]; }
  double at(int channel, int x, int y) const {
    return rgb_[(static_cast<std::size_t>(channel) * height_ + y) * width_ + x];
  }
  /// Integer coordinates return stored values exactly. Throws RangeError outside the raster.
  double sample(int channel, double x, double y) const;

 private:
  int width_;
  int height_;
  std::vector<double> rgb_;
};

/// Smooth background plus random rectangles, discs and stripe textures, all in [0.03, 0.92].
Scene make_procedural_scene(int width, int height, std::uint64_t seed);

enum class MotionKind { GlobalTranslate, ObjectTranslate };

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

struct MotionSpec {
  MotionKind kind = MotionKind::GlobalTranslate;
  double vx = 0.0;  ///< pixels per frame
  double vy = 0.0;
  std::optional<Rect> object_region;  ///< frame-0 placement, object-translate only
  std::uint64_t seed = 0;             ///< texture seed of the moving object

  static constexpr double kMaxSpeed = 4.0;
};

struct SensorSpec {
  int width = 64;
  int height = 64;
  raw::CfaPattern cfa = raw::CfaPattern::rggb();
  int bit_depth = 14;
  int black_level = 512;
  int white_level = 15871;
};

/// Renders n_frames mosaics of `scene` under cumulative motion i * velocity.
/// Throws RangeError for n_frames < 3 or speed above MotionSpec::kMaxSpeed,
/// and RangeError when the scene cannot cover every shifted window.
FrameSequence synth_sequence(const Scene& scene, const MotionSpec& motion, const SensorSpec& sensor, int n_frames,
                             std::string id = "seq");

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::string blur_path;   ///< relative to the manifest directory
  std::string sharp_path;  ///< relative to the manifest directory
  int num_averaged = 0;
  int center_index = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
  std::vector<ManifestEntry> select(Split split) const;
};

/// Line format: blur<TAB>sharp<TAB>M<TAB>center<TAB>split.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
Manifest read_manifest(const std::filesystem::path& path);

struct DatasetOptions {
  int window_stride = 1;
  std::vector<int> m_cycle{3, 4, 5};  ///< window k averages m_cycle[k % size] frames
  std::vector<Split> splits;          ///< per sequence; missing entries default to Train
};

/// Writes every window as a RAWB pair under out_dir/pairs plus out_dir/manifest.tsv.
Manifest build_dataset(const std::vector<FrameSequence>& sequences, const DatasetOptions& options,
                       const std::filesystem::path& out_dir);

struct SynthOptions {
  int scenes = 4;
  int frames = 3;  ///< sharp frames rendered per scene, at least 3
  MotionKind motion = MotionKind::GlobalTranslate;
  double max_speed = 2.0;  ///< per-scene speed is drawn uniformly in [0, max_speed] px/frame
  SensorSpec sensor;
  std::vector<int> m_cycle{3};
  int val_scenes = 0;   ///< scenes after the train scenes that go to the val split
  int test_scenes = 0;  ///< scenes after the val scenes that go to the test split
  std::uint64_t seed = 0;
};

/// Procedural scenes under random motion, written by build_dataset.
/// Deterministic in `options`. Throws RangeError/ConfigError for invalid options.
Manifest synthesize(const SynthOptions& options, const std::filesystem::path& out_dir);

}  // namespace rawdeblur::synth
