#include "rawdeblur/isp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "rawdeblur/bytes.hpp"
#include "rawdeblur/errors.hpp"

namespace rawdeblur::isp {

using raw::Color;
using raw::NormalizedFrame;

void WbGains::validate() const {
  for (double v : {r, g, b})
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("white balance gains must be positive");
}

void ColorMatrix::validate() const {
  for (int row = 0; row < 3; ++row) {
    const double s = m[row * 3] + m[row * 3 + 1] + m[row * 3 + 2];
    if (!std::isfinite(s) || std::abs(s - 1.0) > 1e-6)
      throw ConfigError("color matrix row " + std::to_string(row) + " sums to " + std::to_string(s) + ", not 1");
  }
}

NormalizedFrame white_balance(const NormalizedFrame& nf, const WbGains& gains) {
  gains.validate();
  NormalizedFrame out = nf;
  const std::array<double, 3> g{gains.r, gains.g, gains.b};
  for (int y = 0; y < nf.height; ++y)
    for (int x = 0; x < nf.width; ++x)
      out.at(x, y) = std::clamp(nf.at(x, y) * g[static_cast<int>(nf.cfa.at(y, x))], 0.0, 1.0);
  return out;
}

namespace {

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

Color color_at(const NormalizedFrame& nf, int x, int y) { return nf.cfa.at(y, x); }

/// Mean of `value(q)` over the 3x3 neighbours q of (x, y) whose CFA color is `c`.
template <typename F>
double neighbour_mean(const NormalizedFrame& nf, int x, int y, Color c, F&& value) {
  double acc = 0.0;
  int count = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      if (color_at(nf, x + dx, y + dy) != c) continue;  // CFA period 2, reflection keeps parity
      acc += value(reflect(x + dx, nf.width), reflect(y + dy, nf.height));
      ++count;
    }
  return acc / count;
}

void require_extent(const NormalizedFrame& nf, int min_extent, const char* what) {
  if (nf.width < min_extent || nf.height < min_extent || nf.width % 2 || nf.height % 2)
    throw DimensionError(std::string(what) + " needs even extents of at least " + std::to_string(min_extent) +
                         ", got " + std::to_string(nf.width) + "x" + std::to_string(nf.height));
}

}  // namespace

LinearRgbImage demosaic_bilinear(const NormalizedFrame& nf) {
  require_extent(nf, 4, "bilinear demosaic");
  LinearRgbImage out(nf.width, nf.height);
  const auto sample = [&](int x, int y) { return nf.at(x, y); };
  for (int y = 0; y < nf.height; ++y)
    for (int x = 0; x < nf.width; ++x) {
      const Color own = color_at(nf, x, y);
      for (int c = 0; c < 3; ++c) {
        const Color want = static_cast<Color>(c);
        out.at(c, x, y) = want == own ? nf.at(x, y) : neighbour_mean(nf, x, y, want, sample);
      }
    }
  return out;
}

LinearRgbImage demosaic_ahd(const NormalizedFrame& nf) {
  require_extent(nf, 6, "AHD demosaic");
  const int w = nf.width, h = nf.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };

  // candidate[d] for d = 0 (horizontal), 1 (vertical)
  std::array<LinearRgbImage, 2> cand{LinearRgbImage(w, h), LinearRgbImage(w, h)};
  for (int d = 0; d < 2; ++d) {
    std::vector<double> green(n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (color_at(nf, x, y) == Color::G) {
          green[idx(x, y)] = nf.at(x, y);
        } else if (d == 0) {
          green[idx(x, y)] = 0.5 * (nf.at(reflect(x - 1, w), y) + nf.at(reflect(x + 1, w), y));
        } else {
          green[idx(x, y)] = 0.5 * (nf.at(x, reflect(y - 1, h)) + nf.at(x, reflect(y + 1, h)));
        }
      }
    // Red and blue by interpolating color differences against this direction's green.
    const auto diff = [&](int qx, int qy) { return nf.at(qx, qy) - green[idx(qx, qy)]; };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Color own = color_at(nf, x, y);
        const double g = green[idx(x, y)];
        cand[d].at(1, x, y) = g;
        for (Color c : {Color::R, Color::B}) {
          const int ch = static_cast<int>(c);
          cand[d].at(ch, x, y) = own == c ? nf.at(x, y) : g + neighbour_mean(nf, x, y, c, diff);
        }
      }
  }

  // Homogeneity: summed absolute luminance / chroma deviation over the 3x3 ball.
  std::array<std::vector<double>, 2> score;
  for (int d = 0; d < 2; ++d) {
    std::vector<double> lum(n), c1(n), c2(n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double r = cand[d].at(0, x, y), g = cand[d].at(1, x, y), b = cand[d].at(2, x, y);
        lum[idx(x, y)] = 0.25 * (r + 2.0 * g + b);
        c1[idx(x, y)] = r - g;
        c2[idx(x, y)] = b - g;
      }
    score[d].assign(n, 0.0);
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) {
        double s = 0.0;
        const std::size_t p = idx(x, y);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t q = idx(x + dx, y + dy);
            s += std::abs(lum[p] - lum[q]) + std::abs(c1[p] - c1[q]) + std::abs(c2[p] - c2[q]);
          }
        score[d][p] = s;
      }
  }

  LinearRgbImage out = demosaic_bilinear(nf);
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) {
      const std::size_t p = idx(x, y);
      for (int c = 0; c < 3; ++c) {
        const double hv = cand[0].at(c, x, y), vv = cand[1].at(c, x, y);
        if (score[0][p] < score[1][p])
          out.at(c, x, y) = hv;
        else if (score[1][p] < score[0][p])
          out.at(c, x, y) = vv;
        else
          out.at(c, x, y) = 0.5 * (hv + vv);
      }
    }
  return out;
}

LinearRgbImage color_convert(const LinearRgbImage& img, const ColorMatrix& m) {
  m.validate();
  LinearRgbImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double in[3] = {img.at(0, x, y), img.at(1, x, y), img.at(2, x, y)};
      for (int r = 0; r < 3; ++r) {
        const double v = m.m[r * 3] * in[0] + m.m[r * 3 + 1] * in[1] + m.m[r * 3 + 2] * in[2];
        out.at(r, x, y) = std::max(v, 0.0);
      }
    }
  return out;
}

GammaCurve GammaCurve::solve(double power, double slope) {
  if (!(power > 1.0) || !(slope > 0.0)) throw ConfigError("gamma power must exceed 1 and slope must be positive");
  const double p = 1.0 / power;
  // Tangency gives (1 + c) = slope * b^(1-p) / p; continuity then gives
  // c = slope * b * (1/p - 1). f(b) below is strictly decreasing on (0, 1).
  const auto f = [&](double b) { return 1.0 + slope * b * (1.0 / p - 1.0) - slope * std::pow(b, 1.0 - p) / p; };
  double lo = 1e-12, hi = 1.0 - 1e-12;
  if (!(f(lo) > 0.0 && f(hi) < 0.0)) throw ConfigError("gamma curve has no tangent breakpoint for these constants");
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  GammaCurve g;
  g.power_ = power;
  g.slope_ = slope;
  g.breakpoint_ = 0.5 * (lo + hi);
  g.offset_ = slope * g.breakpoint_ * (1.0 / p - 1.0);
  return g;
}

const GammaCurve& GammaCurve::standard() {
  static const GammaCurve curve = solve(2.222, 4.5);
  return curve;
}

double GammaCurve::encode(double x) const {
  if (x < breakpoint_) return slope_ * x;
  // (1 + c) x^p - c, arranged so x = 1 maps to exactly 1
  const double xp = std::pow(x, 1.0 / power_);
  return xp + offset_ * (xp - 1.0);
}

double GammaCurve::continuity_residual() const {
  const double b = breakpoint_;
  return std::abs(slope_ * b - ((1.0 + offset_) * std::pow(b, 1.0 / power_) - offset_));
}

double GammaCurve::tangency_residual() const {
  const double p = 1.0 / power_;
  return std::abs(slope_ - (1.0 + offset_) * p * std::pow(breakpoint_, p - 1.0));
}

LinearRgbImage gamma_encode(const LinearRgbImage& img) {
  const GammaCurve& curve = GammaCurve::standard();
  LinearRgbImage out = img;
  for (auto& v : out.values) v = curve.encode(std::clamp(v, 0.0, 1.0));
  return out;
}

DemosaicMethod parse_demosaic(const std::string& name) {
  if (name == "bilinear") return DemosaicMethod::Bilinear;
  if (name == "ahd") return DemosaicMethod::Ahd;
  throw ConfigError("unknown demosaic method '" + name + "' (expected bilinear or ahd)");
}

std::string to_string(DemosaicMethod method) { return method == DemosaicMethod::Ahd ? "ahd" : "bilinear"; }

SrgbImage render_normalized(const NormalizedFrame& nf, const IspConfig& config) {
  const NormalizedFrame balanced = white_balance(nf, config.gains);
  const LinearRgbImage rgb =
      config.demosaic == DemosaicMethod::Ahd ? demosaic_ahd(balanced) : demosaic_bilinear(balanced);
  const LinearRgbImage encoded = gamma_encode(color_convert(rgb, config.matrix));
  SrgbImage out;
  out.width = nf.width;
  out.height = nf.height;
  out.rgb.resize(static_cast<std::size_t>(nf.width) * nf.height * 3);
  for (int y = 0; y < nf.height; ++y)
    for (int x = 0; x < nf.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.rgb[(static_cast<std::size_t>(y) * nf.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::floor(encoded.at(c, x, y) * 255.0 + 0.5));
  return out;
}

SrgbImage render(const raw::BayerFrame& frame, const IspConfig& config) {
  frame.validate();
  return render_normalized(raw::normalize(frame), config);
}

GrayImage mosaic_preview(const NormalizedFrame& nf) {
  GrayImage g{nf.width, nf.height, std::vector<std::uint8_t>(nf.values.size(), 0)};
  if (nf.values.empty()) return g;
  const auto [lo, hi] = std::minmax_element(nf.values.begin(), nf.values.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < nf.values.size(); ++i)
    g.pixels[i] = span > 0.0 ? static_cast<std::uint8_t>(std::floor((nf.values[i] - *lo) / span * 255.0 + 0.5)) : 0;
  return g;
}

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic, int w, int h,
               const std::vector<std::uint8_t>& data) {
  bytes::Writer out;
  out.raw(std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n");
  for (auto b : data) out.u8(b);
  bytes::write_file(path, out.data());
}

struct Pnm {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;
};

Pnm read_pnm(const std::filesystem::path& path, const char* magic, int channels) {
  const auto buf = bytes::read_file(path);
  std::size_t pos = 0;
  const auto token = [&]() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < buf.size() && !std::isspace(buf[pos])) t.push_back(static_cast<char>(buf[pos++]));
    return t;
  };
  const auto number = [&](const char* what) {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), ::isdigit))
      throw FormatError(path.string() + ": bad " + what + " in header");
    return std::stoi(t);
  };
  if (token() != magic) throw FormatError(path.string() + ": expected " + magic + " header");
  Pnm p;
  p.width = number("width");
  p.height = number("height");
  if (number("maxval") != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(p.width) * p.height * channels;
  if (pos > buf.size() || buf.size() - pos != n) throw FormatError(path.string() + ": raster size mismatch");
  p.data.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  return p;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const SrgbImage& img) {
  write_pnm(path, "P6", img.width, img.height, img.rgb);
}

SrgbImage read_ppm(const std::filesystem::path& path) {
  auto p = read_pnm(path, "P6", 3);
  return {p.width, p.height, std::move(p.data)};
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_pnm(path, "P5", img.width, img.height, img.pixels);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  auto p = read_pnm(path, "P5", 1);
  return {p.width, p.height, std::move(p.data)};
}

}  // namespace rawdeblur::isp
