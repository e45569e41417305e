#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rawdeblur::raw {

enum class Color : std::uint8_t { R = 0, G = 1, B = 2 };

/// Canonical packed-plane order. G0 shares a row with R, G1 shares a row with B.
enum class PlaneRole : int { R = 0, G0 = 1, B = 2, G1 = 3 };

/// 2x2 Bayer tile, stored row-major: cells[0] is (row 0, col 0), cells[3] is (row 1, col 1).
class CfaPattern {
 public:
  /// Parses "RGGB", "BGGR", "GRBG" or "GBRG" (case-sensitive). Throws ConfigError otherwise.
  static CfaPattern parse(std::string_view name);
  static CfaPattern rggb() { return parse("RGGB"); }

  Color at(int row, int col) const { return cells_[static_cast<std::size_t>(((row & 1) << 1) | (col & 1))]; }
  std::string name() const;

  /// Row/column offset within the 2x2 tile holding the cell of the given role.
  struct Offset {
    int row;
    int col;
  };
  Offset offset(PlaneRole role) const { return offsets_[static_cast<std::size_t>(role)]; }

  friend bool operator==(const CfaPattern& a, const CfaPattern& b) { return a.cells_ == b.cells_; }

 private:
  explicit CfaPattern(std::array<Color, 4> cells);

  std::array<Color, 4> cells_{};
  std::array<Offset, 4> offsets_{};
};

/// Integer sensor mosaic.
struct BayerFrame {
  int width = 0;
  int height = 0;
  CfaPattern cfa = CfaPattern::rggb();
  int bit_depth = 14;
  int black_level = 0;
  int white_level = 0;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t& at(int x, int y) { return samples[static_cast<std::size_t>(y) * width + x]; }

  /// Throws DimensionError or ConfigError when an invariant is broken.
  void validate() const;
  bool same_metadata(const BayerFrame& other) const;
};

/// Mosaic values in [0, 1].
struct NormalizedFrame {
  int width = 0;
  int height = 0;
  CfaPattern cfa = CfaPattern::rggb();
  std::vector<double> values;

  NormalizedFrame() = default;
  NormalizedFrame(int w, int h, CfaPattern pattern, double fill = 0.0)
      : width(w), height(h), cfa(pattern), values(static_cast<std::size_t>(w) * h, fill) {}

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Four half-resolution planes in (R, G0, B, G1) order, plane-major.
struct PackedPlanes {
  int width = 0;   ///< plane width (half the mosaic width)
  int height = 0;  ///< plane height (half the mosaic height)
  std::vector<double> values;

  double at(PlaneRole role, int x, int y) const {
    return values[(static_cast<std::size_t>(role) * height + y) * width + x];
  }
  double& at(PlaneRole role, int x, int y) {
    return values[(static_cast<std::size_t>(role) * height + y) * width + x];
  }
  std::span<const double> plane(PlaneRole role) const {
    const std::size_t n = static_cast<std::size_t>(width) * height;
    return {values.data() + static_cast<std::size_t>(role) * n, n};
  }
};

NormalizedFrame normalize(const BayerFrame& frame);

/// Inverse of normalize up to rounding. Values are clamped to [0, 1] before scaling.
BayerFrame denormalize(const NormalizedFrame& nf, int black_level, int white_level, int bit_depth);

PackedPlanes pack(const NormalizedFrame& nf);
NormalizedFrame unpack(const PackedPlanes& pp, const CfaPattern& cfa);

/// Sub-rectangle with even offset and extent, so the CFA phase is unchanged.
NormalizedFrame crop_aligned(const NormalizedFrame& nf, int x, int y, int w, int h);
/// Integer-domain counterpart of crop_aligned.
BayerFrame crop_aligned(const BayerFrame& frame, int x, int y, int w, int h);

// RAWB container: "RAWB", u16 version, u32 width, u32 height, 4 CFA chars,
// u16 bit_depth, u16 black, u16 white, then u16 samples row-major. All little-endian.
inline constexpr std::uint16_t kRawbVersion = 1;

std::vector<std::uint8_t> encode_rawb(const BayerFrame& frame);
BayerFrame decode_rawb(std::span<const std::uint8_t> bytes);
void write_rawb(const std::filesystem::path& path, const BayerFrame& frame);
BayerFrame read_rawb(const std::filesystem::path& path);

}  // namespace rawdeblur::raw
