#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rawdeblur/raw_core.hpp"

// A small deterministic camera pipeline: white balance, demosaic, color
// conversion, gamma, 8-bit quantization.
namespace rawdeblur::isp {

struct WbGains {
  double r = 2.0;
  double g = 1.0;
  double b = 1.5;

  static WbGains daylight() { return {}; }
  static WbGains unit() { return {1.0, 1.0, 1.0}; }
  /// Throws ConfigError unless every gain is positive and finite.
  void validate() const;
};

/// Row-major 3x3 matrix from white-balanced camera RGB to linear sRGB primaries.
struct ColorMatrix {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static ColorMatrix identity() { return {}; }
  /// Each row must sum to 1 within 1e-6 so neutral colors stay neutral.
  void validate() const;
};

struct LinearRgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;  ///< three planes (R, G, B), row-major each

  LinearRgbImage() = default;
  LinearRgbImage(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  double& at(int c, int x, int y) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int x, int y) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

struct SrgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  ///< interleaved R, G, B

  std::uint8_t at(int c, int x, int y) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

raw::NormalizedFrame white_balance(const raw::NormalizedFrame& nf, const WbGains& gains);

/// Averages the same-color cells of each 3x3 neighbourhood. Needs at least 4x4.
LinearRgbImage demosaic_bilinear(const raw::NormalizedFrame& nf);

/// Directional (horizontal / vertical) interpolation, choosing per pixel the
/// candidate whose 3x3 neighbourhood varies least in luminance and chroma.
/// Pixels within 2 of the border use the bilinear result. Needs at least 6x6.
LinearRgbImage demosaic_ahd(const raw::NormalizedFrame& nf);

/// Per-pixel matrix product; negative results clamp to 0.
LinearRgbImage color_convert(const LinearRgbImage& img, const ColorMatrix& m);

/// Piecewise transfer: linear with `slope` below the breakpoint, offset power
/// curve with exponent 1/`power` above. Breakpoint and offset are solved so the
/// two pieces meet with equal value and equal derivative.
class GammaCurve {
 public:
  static GammaCurve solve(double power, double slope);
  /// power 2.222, slope 4.5
  static const GammaCurve& standard();

  double encode(double x) const;
  double power() const { return power_; }
  double slope() const { return slope_; }
  double breakpoint() const { return breakpoint_; }
  double offset() const { return offset_; }
  /// |linear(breakpoint) - power_piece(breakpoint)|
  double continuity_residual() const;
  /// |slope - derivative of the power piece at the breakpoint|
  double tangency_residual() const;

 private:
  double power_ = 0, slope_ = 0, breakpoint_ = 0, offset_ = 0;
};

/// Clamps to [0, 1], then applies GammaCurve::standard().
LinearRgbImage gamma_encode(const LinearRgbImage& img);

enum class DemosaicMethod { Bilinear, Ahd };
DemosaicMethod parse_demosaic(const std::string& name);
std::string to_string(DemosaicMethod method);

struct IspConfig {
  WbGains gains = WbGains::daylight();
  ColorMatrix matrix = ColorMatrix::identity();
  DemosaicMethod demosaic = DemosaicMethod::Bilinear;
};

/// normalize -> white balance -> demosaic -> color conversion -> gamma -> 8-bit (round half up).
SrgbImage render(const raw::BayerFrame& frame, const IspConfig& config = {});
SrgbImage render_normalized(const raw::NormalizedFrame& nf, const IspConfig& config = {});

/// Min-max scaled 8-bit preview of a mosaic.
GrayImage mosaic_preview(const raw::NormalizedFrame& nf);

void write_ppm(const std::filesystem::path& path, const SrgbImage& img);
SrgbImage read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace rawdeblur::isp
