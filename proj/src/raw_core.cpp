#include "rawdeblur/raw_core.hpp"

#include <algorithm>
#include <cmath>

#include "rawdeblur/bytes.hpp"
#include "rawdeblur/errors.hpp"

namespace rawdeblur::raw {

CfaPattern::CfaPattern(std::array<Color, 4> cells) : cells_(cells) {
  int r = -1, b = -1;
  for (int i = 0; i < 4; ++i) {
    if (cells_[i] == Color::R) r = i;
    if (cells_[i] == Color::B) b = i;
  }
  // R and B sit on one diagonal, the greens on the other.
  const auto pos = [](int i) { return Offset{i >> 1, i & 1}; };
  const Offset ro = pos(r), bo = pos(b);
  offsets_[static_cast<int>(PlaneRole::R)] = ro;
  offsets_[static_cast<int>(PlaneRole::B)] = bo;
  offsets_[static_cast<int>(PlaneRole::G0)] = Offset{ro.row, 1 - ro.col};
  offsets_[static_cast<int>(PlaneRole::G1)] = Offset{bo.row, 1 - bo.col};
}

CfaPattern CfaPattern::parse(std::string_view name) {
  if (name.size() != 4) throw ConfigError("CFA pattern must have 4 letters: '" + std::string(name) + "'");
  std::array<Color, 4> cells{};
  int nr = 0, ng = 0, nb = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    switch (name[i]) {
      case 'R': cells[i] = Color::R; ++nr; break;
      case 'G': cells[i] = Color::G; ++ng; break;
      case 'B': cells[i] = Color::B; ++nb; break;
      default: throw ConfigError("invalid CFA letter in '" + std::string(name) + "'");
    }
  }
  if (nr != 1 || nb != 1 || ng != 2) throw ConfigError("CFA needs one R, one B and two G: '" + std::string(name) + "'");
  // Greens must be diagonal: positions {0,3} or {1,2}.
  const bool diag = (cells[0] == Color::G && cells[3] == Color::G) || (cells[1] == Color::G && cells[2] == Color::G);
  if (!diag) throw ConfigError("CFA greens must be diagonal: '" + std::string(name) + "'");
  return CfaPattern(cells);
}

std::string CfaPattern::name() const {
  std::string s;
  for (Color c : cells_) s.push_back(c == Color::R ? 'R' : c == Color::G ? 'G' : 'B');
  return s;
}

void BayerFrame::validate() const {
  if (width <= 0 || height <= 0 || width % 2 != 0 || height % 2 != 0)
    throw DimensionError("Bayer frame extent must be positive and even, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  if (bit_depth < 10 || bit_depth > 16) throw ConfigError("bit depth must be in [10, 16]");
  const int max_value = (1 << bit_depth) - 1;
  if (black_level < 0 || black_level >= white_level || white_level > max_value)
    throw ConfigError("levels must satisfy 0 <= black < white <= 2^bits - 1");
  if (samples.size() != static_cast<std::size_t>(width) * height)
    throw DimensionError("sample count does not match frame extent");
  for (std::uint16_t s : samples)
    if (s > max_value) throw ConfigError("sample exceeds bit depth");
}

bool BayerFrame::same_metadata(const BayerFrame& o) const {
  return width == o.width && height == o.height && cfa == o.cfa && bit_depth == o.bit_depth &&
         black_level == o.black_level && white_level == o.white_level;
}

NormalizedFrame normalize(const BayerFrame& frame) {
  NormalizedFrame nf(frame.width, frame.height, frame.cfa);
  const double black = frame.black_level;
  const double range = static_cast<double>(frame.white_level - frame.black_level);
  for (std::size_t i = 0; i < frame.samples.size(); ++i)
    nf.values[i] = std::clamp((static_cast<double>(frame.samples[i]) - black) / range, 0.0, 1.0);
  return nf;
}

BayerFrame denormalize(const NormalizedFrame& nf, int black_level, int white_level, int bit_depth) {
  BayerFrame f;
  f.width = nf.width;
  f.height = nf.height;
  f.cfa = nf.cfa;
  f.bit_depth = bit_depth;
  f.black_level = black_level;
  f.white_level = white_level;
  f.samples.resize(nf.values.size());
  const double range = static_cast<double>(white_level - black_level);
  for (std::size_t i = 0; i < nf.values.size(); ++i) {
    const double v = std::clamp(nf.values[i], 0.0, 1.0);
    f.samples[i] = static_cast<std::uint16_t>(std::floor(v * range + black_level + 0.5));
  }
  f.validate();
  return f;
}

PackedPlanes pack(const NormalizedFrame& nf) {
  if (nf.width % 2 != 0 || nf.height % 2 != 0)
    throw DimensionError("cannot pack a frame with odd extent " + std::to_string(nf.width) + "x" +
                         std::to_string(nf.height));
  PackedPlanes pp;
  pp.width = nf.width / 2;
  pp.height = nf.height / 2;
  pp.values.resize(nf.values.size());
  for (int role = 0; role < 4; ++role) {
    const auto off = nf.cfa.offset(static_cast<PlaneRole>(role));
    for (int y = 0; y < pp.height; ++y)
      for (int x = 0; x < pp.width; ++x)
        pp.at(static_cast<PlaneRole>(role), x, y) = nf.at(2 * x + off.col, 2 * y + off.row);
  }
  return pp;
}

NormalizedFrame unpack(const PackedPlanes& pp, const CfaPattern& cfa) {
  NormalizedFrame nf(pp.width * 2, pp.height * 2, cfa);
  for (int role = 0; role < 4; ++role) {
    const auto off = cfa.offset(static_cast<PlaneRole>(role));
    for (int y = 0; y < pp.height; ++y)
      for (int x = 0; x < pp.width; ++x)
        nf.at(2 * x + off.col, 2 * y + off.row) = pp.at(static_cast<PlaneRole>(role), x, y);
  }
  return nf;
}

namespace {

void check_crop(int fw, int fh, int x, int y, int w, int h) {
  if ((x | y | w | h) & 1) throw AlignmentError("crop offset and extent must be even");
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > fw || y + h > fh)
    throw AlignmentError("crop (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) + "," +
                         std::to_string(h) + ") does not fit a " + std::to_string(fw) + "x" + std::to_string(fh) +
                         " frame");
}

}  // namespace

NormalizedFrame crop_aligned(const NormalizedFrame& nf, int x, int y, int w, int h) {
  check_crop(nf.width, nf.height, x, y, w, h);
  NormalizedFrame out(w, h, nf.cfa);
  for (int r = 0; r < h; ++r)
    std::copy_n(nf.values.begin() + static_cast<std::ptrdiff_t>(y + r) * nf.width + x, w,
                out.values.begin() + static_cast<std::ptrdiff_t>(r) * w);
  return out;
}

BayerFrame crop_aligned(const BayerFrame& frame, int x, int y, int w, int h) {
  check_crop(frame.width, frame.height, x, y, w, h);
  BayerFrame out = frame;
  out.width = w;
  out.height = h;
  out.samples.assign(static_cast<std::size_t>(w) * h, 0);
  for (int r = 0; r < h; ++r)
    std::copy_n(frame.samples.begin() + static_cast<std::ptrdiff_t>(y + r) * frame.width + x, w,
                out.samples.begin() + static_cast<std::ptrdiff_t>(r) * w);
  return out;
}

std::vector<std::uint8_t> encode_rawb(const BayerFrame& frame) {
  frame.validate();
  bytes::Writer w;
  w.raw("RAWB");
  w.u16(kRawbVersion);
  w.u32(static_cast<std::uint32_t>(frame.width));
  w.u32(static_cast<std::uint32_t>(frame.height));
  w.raw(frame.cfa.name());
  w.u16(static_cast<std::uint16_t>(frame.bit_depth));
  w.u16(static_cast<std::uint16_t>(frame.black_level));
  w.u16(static_cast<std::uint16_t>(frame.white_level));
  for (std::uint16_t s : frame.samples) w.u16(s);
  return w.take();
}

BayerFrame decode_rawb(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (r.str(4) != "RAWB") throw FormatError("not a RAWB file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kRawbVersion) throw FormatError("unsupported RAWB version " + std::to_string(version));
  BayerFrame f;
  const std::uint32_t w = r.u32(), h = r.u32();
  if (w > (1u << 16) || h > (1u << 16)) throw FormatError("RAWB extent too large");
  f.width = static_cast<int>(w);
  f.height = static_cast<int>(h);
  try {
    f.cfa = CfaPattern::parse(r.str(4));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("RAWB header: ") + e.what());
  }
  f.bit_depth = r.u16();
  f.black_level = r.u16();
  f.white_level = r.u16();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (r.remaining() != n * 2) throw FormatError("RAWB payload size does not match header");
  f.samples.resize(n);
  for (auto& s : f.samples) s = r.u16();
  try {
    f.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("RAWB content: ") + e.what());
  }
  return f;
}

void write_rawb(const std::filesystem::path& path, const BayerFrame& frame) {
  bytes::write_file(path, encode_rawb(frame));
}

BayerFrame read_rawb(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  try {
    return decode_rawb(data);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace rawdeblur::raw
