#include "rawdeblur/loss_metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rawdeblur/errors.hpp"

namespace rawdeblur::metrics {

std::vector<double> SsimParams::taps() const {
  if (window < 1 || window % 2 == 0 || !(sigma > 0.0)) throw ConfigError("SSIM window must be odd with sigma > 0");
  std::vector<double> t(static_cast<std::size_t>(window));
  const int r = window / 2;
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += t[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : t) v /= total;
  return t;
}

template <typename T>
ad::Tensor<T> mse_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt) {
  const auto d = ad::sub(pred, gt);
  return ad::mean(ad::mul(d, d));
}

template <typename T>
ad::Tensor<T> ssim_map(const ad::Tensor<T>& x, const ad::Tensor<T>& y, const SsimParams& params) {
  if (x.shape() != y.shape()) throw ShapeError("ssim_map: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  if (x.shape().rank != 4 || x.shape().h() < params.window || x.shape().w() < params.window)
    throw ShapeError("ssim_map: image " + x.shape().str() + " is smaller than the " +
                     std::to_string(params.window) + "x" + std::to_string(params.window) + " window");
  const std::vector<double> taps = params.taps();
  const auto blur = [&](const ad::Tensor<T>& t) { return ad::separable_filter(t, std::span<const double>(taps)); };
  const T c1 = static_cast<T>(params.c1()), c2 = static_cast<T>(params.c2());

  const auto mx = blur(x), my = blur(y);
  const auto mxy = ad::mul(mx, my);
  const auto sxx = ad::sub(blur(ad::mul(x, x)), ad::mul(mx, mx));
  const auto syy = ad::sub(blur(ad::mul(y, y)), ad::mul(my, my));
  const auto sxy = ad::sub(blur(ad::mul(x, y)), mxy);

  const auto num = ad::mul(ad::add_scalar(ad::scale(mxy, T(2)), c1), ad::add_scalar(ad::scale(sxy, T(2)), c2));
  const auto den = ad::mul(ad::add_scalar(ad::add(ad::mul(mx, mx), ad::mul(my, my)), c1),
                           ad::add_scalar(ad::add(sxx, syy), c2));
  return ad::div(num, den);
}

template <typename T>
ad::Tensor<T> ssim_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt, const SsimParams& params) {
  return ad::add_scalar(ad::scale(ad::mean(ssim_map(pred, gt, params)), T(-1)), T(1));
}

template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt, double lambda, const SsimParams& params) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss weight lambda must be finite and >= 0");
  auto mse = mse_loss(pred, gt);
  if (lambda == 0.0) return mse;
  return ad::add(mse, ad::scale(ssim_loss(pred, gt, params), static_cast<T>(lambda)));
}

#define RAWDEBLUR_INSTANTIATE(T)                                                                        \
  template ad::Tensor<T> mse_loss(const ad::Tensor<T>&, const ad::Tensor<T>&);                          \
  template ad::Tensor<T> ssim_map(const ad::Tensor<T>&, const ad::Tensor<T>&, const SsimParams&);       \
  template ad::Tensor<T> ssim_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, const SsimParams&);      \
  template ad::Tensor<T> total_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, double, const SsimParams&);
RAWDEBLUR_INSTANTIATE(float)
RAWDEBLUR_INSTANTIATE(double)
#undef RAWDEBLUR_INSTANTIATE

namespace {

template <typename A>
double psnr_impl(std::span<const A> a, std::span<const A> b, double dynamic_range) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("psnr: inputs must be non-empty and equally sized");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  if (acc == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(dynamic_range * dynamic_range / (acc / static_cast<double>(a.size())));
}

double mean_ssim(ad::Tensor<double> x, ad::Tensor<double> y, const SsimParams& params) {
  ad::NoGradGuard no_grad;
  return ad::mean(ssim_map(x, y, params)).item();
}

void require_same_extent(int aw, int ah, int bw, int bh) {
  if (aw != bw || ah != bh)
    throw ShapeError("image extents differ: " + std::to_string(aw) + "x" + std::to_string(ah) + " vs " +
                     std::to_string(bw) + "x" + std::to_string(bh));
}

ad::Tensor<double> planar(const isp::SrgbImage& img) {
  std::vector<double> v(img.rgb.size());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * n + p] = img.rgb[p * 3 + c];
  return ad::Tensor<double>::from(ad::Shape::nchw(1, 3, img.height, img.width), std::move(v));
}

}  // namespace

double psnr(std::span<const double> a, std::span<const double> b, double dynamic_range) {
  return psnr_impl(a, b, dynamic_range);
}

double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double dynamic_range) {
  return psnr_impl(a, b, dynamic_range);
}

double raw_psnr(const raw::NormalizedFrame& a, const raw::NormalizedFrame& b) {
  require_same_extent(a.width, a.height, b.width, b.height);
  return psnr(std::span<const double>(a.values), std::span<const double>(b.values), 1.0);
}

double raw_ssim(const raw::NormalizedFrame& a, const raw::NormalizedFrame& b) {
  require_same_extent(a.width, a.height, b.width, b.height);
  const auto shape = ad::Shape::nchw(1, 1, a.height, a.width);
  return mean_ssim(ad::Tensor<double>::from(shape, a.values), ad::Tensor<double>::from(shape, b.values),
                   SsimParams::raw());
}

double srgb_psnr(const isp::SrgbImage& a, const isp::SrgbImage& b) {
  require_same_extent(a.width, a.height, b.width, b.height);
  return psnr(std::span<const std::uint8_t>(a.rgb), std::span<const std::uint8_t>(b.rgb), 255.0);
}

double srgb_ssim(const isp::SrgbImage& a, const isp::SrgbImage& b) {
  require_same_extent(a.width, a.height, b.width, b.height);
  // Equal pixel counts per channel: the mean over all channels is the mean of channel means.
  return mean_ssim(planar(a), planar(b), SsimParams::srgb());
}

std::string format_metric(double value) {
  if (std::isinf(value) && value > 0) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

EvalRow EvalReport::aggregate() const {
  EvalRow m{"mean"};
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.raw_psnr += r.raw_psnr;
    m.raw_ssim += r.raw_ssim;
    m.srgb_psnr += r.srgb_psnr;
    m.srgb_ssim += r.srgb_ssim;
  }
  const double n = static_cast<double>(rows.size());
  m.raw_psnr /= n;
  m.raw_ssim /= n;
  m.srgb_psnr /= n;
  m.srgb_ssim /= n;
  return m;
}

namespace {

void write_row(std::ostream& out, const EvalRow& r) {
  out << r.image_id << '\t' << format_metric(r.raw_psnr) << '\t' << format_metric(r.raw_ssim) << '\t'
      << format_metric(r.srgb_psnr) << '\t' << format_metric(r.srgb_ssim) << '\n';
}

constexpr const char* kHeader = "image_id\traw_psnr\traw_ssim\tsrgb_psnr\tsrgb_ssim";

double parse_metric(const std::string& text, int line) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("eval report line " + std::to_string(line) + ": bad number '" + text + "'");
}

}  // namespace

void EvalReport::write(std::ostream& out) const {
  out << kHeader << '\n';
  for (const auto& r : rows) write_row(out, r);
  write_row(out, aggregate());
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write(out);
  if (!out) throw IoError("failed writing " + path.string());
}

EvalReport EvalReport::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("eval report: missing header");
  EvalReport report;
  bool saw_mean = false;
  for (int no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    if (saw_mean) throw FormatError("eval report line " + std::to_string(no) + ": data after aggregate line");
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, '\t');) f.push_back(field);
    if (f.size() != 5) throw FormatError("eval report line " + std::to_string(no) + ": expected 5 fields");
    EvalRow r{f[0], parse_metric(f[1], no), parse_metric(f[2], no), parse_metric(f[3], no), parse_metric(f[4], no)};
    if (r.image_id == "mean")
      saw_mean = true;
    else
      report.rows.push_back(r);
  }
  if (!saw_mean) throw FormatError("eval report: missing aggregate line");
  return report;
}

}  // namespace rawdeblur::metrics
