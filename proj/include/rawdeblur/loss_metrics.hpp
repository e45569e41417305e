#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rawdeblur/autodiff.hpp"
#include "rawdeblur/isp.hpp"
#include "rawdeblur/raw_core.hpp"

namespace rawdeblur::metrics {

/// Gaussian-window SSIM statistics. The 2-D window is the outer product of taps().
struct SsimParams {
  double dynamic_range = 1.0;
  int window = 11;
  double sigma = 1.5;

  static SsimParams raw() { return {}; }
  static SsimParams srgb() { return {255.0}; }

  /// Normalized 1-D Gaussian of length `window`.
  std::vector<double> taps() const;
  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

template <typename T>
ad::Tensor<T> mse_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt);

/// Per-pixel SSIM, same shape as the inputs, computed per channel with reflect
/// padding. Throws ShapeError when the spatial extent is below the window.
template <typename T>
ad::Tensor<T> ssim_map(const ad::Tensor<T>& x, const ad::Tensor<T>& y, const SsimParams& params = {});

/// mean(1 - ssim_map)
template <typename T>
ad::Tensor<T> ssim_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt, const SsimParams& params = {});

/// mse + lambda * ssim_loss. Throws ConfigError for negative lambda.
template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt, double lambda,
                         const SsimParams& params = {});

/// 10 log10(L^2 / MSE); +infinity when the inputs are identical.
double psnr(std::span<const double> a, std::span<const double> b, double dynamic_range);
double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double dynamic_range = 255.0);

/// PSNR / mean SSIM of two mosaics, L = 1.
double raw_psnr(const raw::NormalizedFrame& a, const raw::NormalizedFrame& b);
double raw_ssim(const raw::NormalizedFrame& a, const raw::NormalizedFrame& b);
/// PSNR over all channels / SSIM averaged over channels, L = 255.
double srgb_psnr(const isp::SrgbImage& a, const isp::SrgbImage& b);
double srgb_ssim(const isp::SrgbImage& a, const isp::SrgbImage& b);

/// Formats a metric, printing infinity as "inf".
std::string format_metric(double value);

struct EvalRow {
  std::string image_id;
  double raw_psnr = 0.0;
  double raw_ssim = 0.0;
  double srgb_psnr = 0.0;
  double srgb_ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  std::size_t count() const { return rows.size(); }
  /// Arithmetic mean of every column; image_id is "mean".
  EvalRow aggregate() const;

  /// Header line, one tab-separated line per image, final "mean" line.
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static EvalReport parse(std::istream& in);
};

}  // namespace rawdeblur::metrics
