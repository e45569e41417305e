#include "rawdeblur/blur_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <fstream>
#include <sstream>

#include "rawdeblur/errors.hpp"
#include "rawdeblur/rng.hpp"

namespace rawdeblur::synth {

void FrameSequence::validate() const {
  if (frames.size() < 3) throw RangeError("sequence '" + id + "' needs at least 3 frames");
  for (const auto& f : frames) {
    f.validate();
    if (!f.same_metadata(frames.front())) throw ConfigError("sequence '" + id + "' mixes frame metadata");
  }
}

BlurPair average_frames(const FrameSequence& seq, int start, int m) {
  if (m < 3 || m > 5) throw RangeError("number of averaged frames must be in [3, 5], got " + std::to_string(m));
  if (start < 0 || static_cast<std::size_t>(start) + m > seq.frames.size())
    throw RangeError("window [" + std::to_string(start) + ", " + std::to_string(start + m) + ") exceeds sequence of " +
                     std::to_string(seq.frames.size()) + " frames");
  const int center = start + m / 2;
  const raw::BayerFrame& sharp = seq.frames[static_cast<std::size_t>(center)];
  for (int i = start; i < start + m; ++i)
    if (!seq.frames[static_cast<std::size_t>(i)].same_metadata(sharp))
      throw ConfigError("frames in the averaging window do not share metadata");

  BlurPair pair;
  pair.sharp = sharp;
  pair.blurred = sharp;
  pair.source_id = seq.id;
  pair.center_index = center;
  pair.num_averaged = m;
  const auto denom = static_cast<std::uint32_t>(2 * m);
  for (std::size_t k = 0; k < sharp.samples.size(); ++k) {
    std::uint32_t total = 0;
    for (int i = start; i < start + m; ++i) total += seq.frames[static_cast<std::size_t>(i)].samples[k];
    // round(total / m) with halves rounded up
    pair.blurred.samples[k] = static_cast<std::uint16_t>((2 * total + static_cast<std::uint32_t>(m)) / denom);
  }
  return pair;
}

Scene::Scene(int width, int height) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw DimensionError("scene extent must be positive");
  rgb_.assign(static_cast<std::size_t>(width) * height * 3, 0.0);
}

double Scene::sample(int channel, double x, double y) const {
  if (!(x >= 0.0 && y >= 0.0 && x <= width_ - 1 && y <= height_ - 1))
    throw RangeError("scene sample (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                     std::to_string(width_) + "x" + std::to_string(height_) + " raster");
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  if (ax == 0.0 && ay == 0.0) return at(channel, x0, y0);
  const int x1 = std::min(x0 + 1, width_ - 1), y1 = std::min(y0 + 1, height_ - 1);
  const double top = (1.0 - ax) * at(channel, x0, y0) + ax * at(channel, x1, y0);
  const double bottom = (1.0 - ax) * at(channel, x0, y1) + ax * at(channel, x1, y1);
  return (1.0 - ay) * top + ay * bottom;
}

Scene make_procedural_scene(int width, int height, std::uint64_t seed) {
  Scene scene(width, height);
  Rng rng(seed);
  std::array<double, 3> base{}, gx{}, gy{};
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.15, 0.45);
    gx[c] = rng.uniform(-0.15, 0.15);
    gy[c] = rng.uniform(-0.15, 0.15);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        scene.at(c, x, y) = base[c] + gx[c] * x / width + gy[c] * y / height;

  const int shapes = 10 + static_cast<int>(rng.uniform_int(0, 6));
  const double scale = std::min(width, height);
  for (int s = 0; s < shapes; ++s) {
    const int kind = static_cast<int>(rng.uniform_int(0, 2));
    std::array<double, 3> color{};
    for (auto& v : color) v = rng.uniform(0.03, 0.92);
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
    const double rx = rng.uniform(0.05, 0.22) * scale, ry = rng.uniform(0.05, 0.22) * scale;
    const double period = rng.uniform(3.0, 9.0), phase = rng.uniform(0, 6.283185307179586);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        bool inside = false;
        double mod = 1.0;
        switch (kind) {
          case 0: inside = std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0; break;
          case 1: inside = dx * dx + dy * dy <= 1.0; break;
          default:
            inside = std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
            mod = 0.6 + 0.4 * std::sin(6.283185307179586 * (x + 0.5 * y) / period + phase);
            break;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) scene.at(c, x, y) = color[c] * mod;
      }
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) scene.at(c, x, y) = std::clamp(scene.at(c, x, y), 0.03, 0.92);
  return scene;
}

namespace {

std::uint16_t quantize(double v, const SensorSpec& s) {
  const double range = s.white_level - s.black_level;
  return static_cast<std::uint16_t>(std::floor(std::clamp(v, 0.0, 1.0) * range + s.black_level + 0.5));
}

int channel_of(raw::Color c) { return static_cast<int>(c); }

}  // namespace

FrameSequence synth_sequence(const Scene& scene, const MotionSpec& motion, const SensorSpec& sensor, int n_frames,
                             std::string id) {
  if (n_frames < 3) throw RangeError("a sequence needs at least 3 frames, got " + std::to_string(n_frames));
  if (std::hypot(motion.vx, motion.vy) > MotionSpec::kMaxSpeed)
    throw RangeError("motion faster than 4 px/frame is rejected");
  {
    raw::BayerFrame probe;
    probe.width = sensor.width;
    probe.height = sensor.height;
    probe.cfa = sensor.cfa;
    probe.bit_depth = sensor.bit_depth;
    probe.black_level = sensor.black_level;
    probe.white_level = sensor.white_level;
    probe.samples.assign(static_cast<std::size_t>(sensor.width) * sensor.height, 0);
    probe.validate();
  }

  FrameSequence seq;
  seq.id = std::move(id);
  const int last = n_frames - 1;
  const auto coverage_error = [&] {
    return RangeError("scene " + std::to_string(scene.width()) + "x" + std::to_string(scene.height()) +
                      " too small for " + std::to_string(n_frames) + " frames of " + std::to_string(sensor.width) +
                      "x" + std::to_string(sensor.height) + " under the requested motion");
  };

  double ox = 0.0, oy = 0.0, vx = motion.vx, vy = motion.vy;
  std::optional<Scene> object;
  Rect region{};
  if (motion.kind == MotionKind::GlobalTranslate) {
    ox = std::ceil(std::max(0.0, -last * vx));
    oy = std::ceil(std::max(0.0, -last * vy));
    if (ox + sensor.width - 1 + std::max(0.0, last * vx) > scene.width() - 1 ||
        oy + sensor.height - 1 + std::max(0.0, last * vy) > scene.height() - 1)
      throw coverage_error();
  } else {
    if (!motion.object_region) throw ConfigError("object-translate motion needs an object region");
    region = *motion.object_region;
    if (region.w < 2 || region.h < 2) throw ConfigError("object region must be at least 2x2");
    if (scene.width() < sensor.width || scene.height() < sensor.height) throw coverage_error();
    object.emplace(make_procedural_scene(region.w + 1, region.h + 1, derive_seed(motion.seed, 1)));
  }

  for (int i = 0; i < n_frames; ++i) {
    raw::BayerFrame f;
    f.width = sensor.width;
    f.height = sensor.height;
    f.cfa = sensor.cfa;
    f.bit_depth = sensor.bit_depth;
    f.black_level = sensor.black_level;
    f.white_level = sensor.white_level;
    f.samples.resize(static_cast<std::size_t>(f.width) * f.height);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const int ch = channel_of(f.cfa.at(y, x));
        double v;
        if (motion.kind == MotionKind::GlobalTranslate) {
          v = scene.sample(ch, ox + x + i * vx, oy + y + i * vy);
        } else {
          const double u = x - region.x - i * vx, w = y - region.y - i * vy;
          if (u >= 0.0 && w >= 0.0 && u <= region.w - 1 && w <= region.h - 1)
            v = object->sample(ch, u, w);
          else
            v = scene.sample(ch, x, y);
        }
        f.at(x, y) = quantize(v, sensor);
      }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw FormatError("unknown split '" + text + "'");
}

std::vector<ManifestEntry> Manifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : entries)
    out << e.blur_path << '\t' << e.sharp_path << '\t' << e.num_averaged << '\t' << e.center_index << '\t'
        << to_string(e.split) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 5) throw FormatError(where + ": expected 5 tab-separated fields");
    ManifestEntry e;
    e.blur_path = fields[0];
    e.sharp_path = fields[1];
    try {
      std::size_t used = 0;
      e.num_averaged = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("M");
      e.center_index = std::stoi(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("center");
    } catch (const std::logic_error&) {
      throw FormatError(where + ": malformed integer field");
    }
    try {
      e.split = parse_split(fields[4]);
    } catch (const FormatError& err) {
      throw FormatError(where + ": " + err.what());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest build_dataset(const std::vector<FrameSequence>& sequences, const DatasetOptions& options,
                       const std::filesystem::path& out_dir) {
  if (options.window_stride < 1) throw ConfigError("window stride must be positive");
  if (options.m_cycle.empty()) throw ConfigError("m_cycle must not be empty");
  for (int m : options.m_cycle)
    if (m < 3 || m > 5) throw RangeError("averaged frame counts must lie in [3, 5]");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "pairs", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "pairs").string() + ": " + ec.message());

  Manifest manifest;
  manifest.base_dir = out_dir;
  std::size_t window = 0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    seq.validate();
    const Split split = s < options.splits.size() ? options.splits[s] : Split::Train;
    int produced = 0;
    for (int start = 0;; start += options.window_stride) {
      const int m = options.m_cycle[window % options.m_cycle.size()];
      if (static_cast<std::size_t>(start) + m > seq.frames.size()) break;
      const BlurPair pair = average_frames(seq, start, m);
      const std::string stem = "pairs/" + seq.id + "_w" + std::to_string(start);
      ManifestEntry e{stem + "_blur.rawb", stem + "_sharp.rawb", m, pair.center_index, split};
      raw::write_rawb(out_dir / e.blur_path, pair.blurred);
      raw::write_rawb(out_dir / e.sharp_path, pair.sharp);
      manifest.entries.push_back(std::move(e));
      ++window;
      ++produced;
    }
    if (produced == 0) throw RangeError("sequence '" + seq.id + "' is too short for a single window");
  }
  write_manifest(out_dir / "manifest.tsv", manifest.entries);
  return manifest;
}

Manifest synthesize(const SynthOptions& options, const std::filesystem::path& out_dir) {
  if (options.scenes < 1) throw RangeError("at least one scene is required");
  if (options.frames < 3) throw RangeError("a sequence needs at least 3 frames, got " + std::to_string(options.frames));
  if (options.val_scenes < 0 || options.test_scenes < 0 || options.val_scenes + options.test_scenes > options.scenes)
    throw RangeError("val and test scenes must fit within the scene count");
  if (!(options.max_speed >= 0.0) || options.max_speed > MotionSpec::kMaxSpeed)
    throw RangeError("max_speed must lie in [0, " + std::to_string(MotionSpec::kMaxSpeed) + "]");

  const SensorSpec& sensor = options.sensor;
  // Enough margin for the whole travel in either direction plus the bilinear footprint.
  const int margin = static_cast<int>(std::ceil(options.max_speed * (options.frames - 1))) + 2;
  std::vector<FrameSequence> sequences;
  DatasetOptions dataset;
  dataset.m_cycle = options.m_cycle;
  const int n_train = options.scenes - options.val_scenes - options.test_scenes;
  for (int i = 0; i < options.scenes; ++i) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
    const double speed = rng.uniform(0.0, options.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    MotionSpec motion;
    motion.kind = options.motion;
    motion.vx = speed * std::cos(angle);
    motion.vy = speed * std::sin(angle);
    motion.seed = rng.next();
    if (motion.kind == MotionKind::ObjectTranslate) {
      const int w = std::max(2, sensor.width / 3), h = std::max(2, sensor.height / 3);
      motion.object_region = Rect{static_cast<int>(rng.uniform_int(0, sensor.width - w)),
                                  static_cast<int>(rng.uniform_int(0, sensor.height - h)), w, h};
    }
    const Scene scene = make_procedural_scene(sensor.width + 2 * margin, sensor.height + 2 * margin, rng.next());
    char id[32];
    std::snprintf(id, sizeof id, "scene%03d", i);
    sequences.push_back(synth_sequence(scene, motion, sensor, options.frames, id));
    dataset.splits.push_back(i < n_train ? Split::Train : i < n_train + options.val_scenes ? Split::Val : Split::Test);
  }
  return build_dataset(sequences, dataset, out_dir);
}

}  // namespace rawdeblur::synth
