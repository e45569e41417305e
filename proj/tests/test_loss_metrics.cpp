#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rawdeblur/errors.hpp"
#include "rawdeblur/loss_metrics.hpp"
#include "support/grad_check.hpp"
#include "support/temp_dir.hpp"

namespace ad = rawdeblur::ad;
using namespace rawdeblur::metrics;
using ad::Shape;
using ad::Tensor;
using rawdeblur::testing::check_gradient;
using rawdeblur::testing::random_tensor;

namespace {

/// Direct 2-D evaluation of SSIM at one pixel: explicit 11x11 Gaussian weights,
/// reflect indexing, two-pass variance. Shares no code with the library.
double brute_ssim(const std::vector<double>& x, const std::vector<double>& y, int w, int h, int px, int py,
                  double L) {
  const auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  double weights[11][11], total = 0.0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) total += weights[dy + 5][dx + 5] = std::exp(-(dx * dx + dy * dy) / (2 * 2.25));
  double mx = 0, my = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const std::size_t q = static_cast<std::size_t>(reflect(py + dy, h)) * w + reflect(px + dx, w);
      const double k = weights[dy + 5][dx + 5] / total;
      mx += k * x[q];
      my += k * y[q];
    }
  double vx = 0, vy = 0, cxy = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const std::size_t q = static_cast<std::size_t>(reflect(py + dy, h)) * w + reflect(px + dx, w);
      const double k = weights[dy + 5][dx + 5] / total;
      vx += k * (x[q] - mx) * (x[q] - mx);
      vy += k * (y[q] - my) * (y[q] - my);
      cxy += k * (x[q] - mx) * (y[q] - my);
    }
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

Tensor<double> image(std::mt19937_64& rng, int h, int w, bool grad = false) {
  return random_tensor(Shape::nchw(1, 1, h, w), rng, 0.0, 1.0, grad);
}

}  // namespace

TEST(SsimParams, WindowIsNormalizedGaussian) {
  const auto taps = SsimParams{}.taps();
  ASSERT_EQ(taps.size(), 11u);
  double total = 0.0;
  for (double a : taps)
    for (double b : taps) {
      EXPECT_GT(a * b, 0.0);
      total += a * b;
    }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(taps[4] / taps[5], std::exp(-1.0 / (2 * 2.25)), 1e-15);
  EXPECT_DOUBLE_EQ(SsimParams::srgb().c1(), 6.5025);
  EXPECT_DOUBLE_EQ(SsimParams::srgb().c2(), 58.5225);
}

TEST(MseLoss, KnownValues) {
  std::mt19937_64 rng(1);
  auto gt = image(rng, 8, 8);
  EXPECT_EQ(mse_loss(gt, gt).item(), 0.0);
  auto pred = ad::add_scalar(gt, 0.1);
  EXPECT_NEAR(mse_loss(pred, gt).item(), 0.01, 1e-15);
}

TEST(MseLoss, GradientIsTwiceResidualOverN) {
  std::mt19937_64 rng(2);
  auto pred = image(rng, 4, 5, true);
  auto gt = image(rng, 4, 5);
  ad::backward(mse_loss(pred, gt));
  for (std::size_t i = 0; i < pred.numel(); ++i)
    EXPECT_NEAR(pred.grad()[i], 2.0 * (pred.data()[i] - gt.data()[i]) / 20.0, 1e-15);
  auto r = check_gradient(pred, [&] { return mse_loss(pred, gt); }, 20, 1);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(MseLoss, RejectsShapeMismatch) {
  EXPECT_THROW(mse_loss(Tensor<double>::zeros(Shape::nchw(1, 1, 4, 4)), Tensor<double>::zeros(Shape::nchw(1, 1, 4, 6))),
               rawdeblur::ShapeError);
}

TEST(SsimMap, MatchesDirectEvaluation) {
  std::mt19937_64 rng(3);
  auto x = image(rng, 14, 17), y = image(rng, 14, 17);
  const auto map = ssim_map(x, y);
  const std::vector<double> xv(x.data().begin(), x.data().end()), yv(y.data().begin(), y.data().end());
  for (int py = 0; py < 14; ++py)
    for (int px = 0; px < 17; ++px)
      EXPECT_NEAR(map.data()[static_cast<std::size_t>(py) * 17 + px], brute_ssim(xv, yv, 17, 14, px, py, 1.0), 1e-9)
          << px << "," << py;
}

TEST(SsimMap, IdentitySymmetryAndRange) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = image(rng, 16, 16), y = image(rng, 16, 16);
    const auto self = ssim_map(x, x);
    for (double v : self.data()) ASSERT_NEAR(v, 1.0, 1e-9);
    const auto xy = ssim_map(x, y), yx = ssim_map(y, x);
    for (std::size_t i = 0; i < xy.numel(); ++i) {
      ASSERT_EQ(xy.data()[i], yx.data()[i]);
      ASSERT_GE(xy.data()[i], -1.0);
      ASSERT_LE(xy.data()[i], 1.0);
    }
    ASSERT_NEAR(ssim_loss(x, x).item(), 0.0, 1e-9);
  }
}

TEST(SsimMap, InvertedImageScoresBelowOne) {
  std::mt19937_64 rng(5);
  auto x = image(rng, 16, 16);
  auto inv = ad::add_scalar(ad::scale(x, -1.0), 1.0);
  const auto map = ssim_map(x, inv);
  for (double v : map.data()) EXPECT_LT(v, 1.0);
  EXPECT_GT(ssim_loss(x, inv).item(), 0.0);
}

TEST(SsimMap, MultiChannelIsPerChannel) {
  std::mt19937_64 rng(6);
  auto x = random_tensor(Shape::nchw(2, 3, 12, 12), rng, 0, 1, false);
  auto y = random_tensor(Shape::nchw(2, 3, 12, 12), rng, 0, 1, false);
  const auto map = ssim_map(x, y);
  const std::size_t plane = 144;
  for (std::size_t p = 0; p < 6; ++p) {
    const std::vector<double> xv(x.data().begin() + p * plane, x.data().begin() + (p + 1) * plane);
    const std::vector<double> yv(y.data().begin() + p * plane, y.data().begin() + (p + 1) * plane);
    EXPECT_NEAR(map.data()[p * plane + 13], brute_ssim(xv, yv, 12, 12, 1, 1, 1.0), 1e-9);
  }
}

TEST(SsimMap, RejectsImagesSmallerThanWindow) {
  auto x = Tensor<double>::zeros(Shape::nchw(1, 1, 10, 32));
  EXPECT_THROW(ssim_map(x, x), rawdeblur::ShapeError);
}

TEST(SsimLoss, NonNegativeAndGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = image(rng, 12, 12), y = image(rng, 12, 12);
    EXPECT_GE(ssim_loss(x, y).item(), 0.0);
  }
  auto pred = image(rng, 16, 16, true);
  auto gt = image(rng, 16, 16);
  auto r = check_gradient(pred, [&] { return ssim_loss(pred, gt); }, 60, 2);
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_EQ(r.coordinates, 60);
}

TEST(TotalLoss, CombinesComponents) {
  std::mt19937_64 rng(8);
  auto pred = image(rng, 16, 16), gt = image(rng, 16, 16);
  const double a = mse_loss(pred, gt).item(), b = ssim_loss(pred, gt).item();
  EXPECT_EQ(total_loss(pred, gt, 0.0).item(), a);
  EXPECT_NEAR(total_loss(pred, gt, 1.0).item(), a + b, 1e-15);
  EXPECT_NEAR(total_loss(pred, gt, 2.5).item(), a + 2.5 * b, 1e-14);
  for (double lambda : {0.0, 1.0, 7.0}) EXPECT_NEAR(total_loss(gt, gt, lambda).item(), 0.0, 1e-9);
  EXPECT_THROW(total_loss(pred, gt, -0.1), rawdeblur::ConfigError);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto pred = image(rng, 16, 16, true);
  auto gt = image(rng, 16, 16);
  EXPECT_LT(check_gradient(pred, [&] { return total_loss(pred, gt, 1.0); }, 60, 3).max_rel_error, 1e-4);
}

TEST(Psnr, KnownValues) {
  std::vector<double> a(100, 0.5), b(100, 0.6);
  EXPECT_TRUE(std::isinf(psnr(a, a, 1.0)));
  EXPECT_GT(psnr(a, a, 1.0), 0.0);
  EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-9);
  std::vector<double> c(100, 0.7);  // error doubled, MSE quadrupled
  EXPECT_NEAR(psnr(a, b, 1.0) - psnr(a, c, 1.0), 10.0 * std::log10(4.0), 1e-9);
  EXPECT_NEAR(10.0 * std::log10(4.0), 6.0206, 1e-4);
  std::vector<std::uint8_t> u(10, 100), v(10, 110);
  EXPECT_NEAR(psnr(std::span<const std::uint8_t>(u), std::span<const std::uint8_t>(v)),
              10.0 * std::log10(255.0 * 255.0 / 100.0), 1e-12);
  EXPECT_EQ(format_metric(psnr(a, a, 1.0)), "inf");
}

TEST(ImageMetrics, SrgbSsimAveragesChannels) {
  std::mt19937_64 rng(10);
  rawdeblur::isp::SrgbImage a{12, 12, std::vector<std::uint8_t>(432)}, b = a;
  for (auto& v : a.rgb) v = static_cast<std::uint8_t>(rng());
  for (auto& v : b.rgb) v = static_cast<std::uint8_t>(rng());
  double expected = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> xa(144), xb(144);
    for (int p = 0; p < 144; ++p) {
      xa[p] = a.rgb[p * 3 + c];
      xb[p] = b.rgb[p * 3 + c];
    }
    double s = 0.0;
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) s += brute_ssim(xa, xb, 12, 12, x, y, 255.0);
    expected += s / 144.0 / 3.0;
  }
  EXPECT_NEAR(srgb_ssim(a, b), expected, 1e-9);
  EXPECT_NEAR(srgb_ssim(a, a), 1.0, 1e-9);
  EXPECT_TRUE(std::isinf(srgb_psnr(a, a)));
}

TEST(ImageMetrics, RawMetricsOnFrames) {
  rawdeblur::raw::NormalizedFrame a(16, 16, rawdeblur::raw::CfaPattern::rggb(), 0.5), b = a;
  for (auto& v : b.values) v = 0.6;
  EXPECT_NEAR(raw_psnr(a, b), 20.0, 1e-9);
  EXPECT_NEAR(raw_ssim(a, a), 1.0, 1e-12);
  EXPECT_LT(raw_ssim(a, b), 1.0);
  rawdeblur::raw::NormalizedFrame c(16, 18, a.cfa);
  EXPECT_THROW(raw_psnr(a, c), rawdeblur::ShapeError);
}

TEST(EvalReport, AggregateIsColumnMeanAndTextRoundTrips) {
  EvalReport report;
  report.rows = {{"a", 30.0, 0.9, 25.0, 0.8}, {"b", 34.0, 0.95, 27.5, 0.85}, {"c", 31.25, 0.5, 20.0, 0.1}};
  const auto m = report.aggregate();
  EXPECT_NEAR(m.raw_psnr, (30.0 + 34.0 + 31.25) / 3, 1e-12);
  EXPECT_NEAR(m.srgb_ssim, (0.8 + 0.85 + 0.1) / 3, 1e-12);
  std::stringstream ss;
  report.write(ss);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "image_id\traw_psnr\traw_ssim\tsrgb_psnr\tsrgb_ssim");
  ss.seekg(0);
  const auto back = EvalReport::parse(ss);
  ASSERT_EQ(back.count(), 3u);
  EXPECT_EQ(back.rows[1].image_id, "b");
  EXPECT_DOUBLE_EQ(back.rows[2].raw_psnr, 31.25);
}

TEST(EvalReport, InfinityPrintsAsInf) {
  EvalReport report;
  report.rows = {{"self", std::numeric_limits<double>::infinity(), 1.0, std::numeric_limits<double>::infinity(), 1.0}};
  std::stringstream ss;
  report.write(ss);
  const std::string text = ss.str();
  EXPECT_NE(text.find("self\tinf\t1.000000\tinf\t1.000000\n"), std::string::npos);
  EXPECT_NE(text.find("mean\tinf\t1.000000\tinf\t1.000000\n"), std::string::npos);
  ss.seekg(0);
  EXPECT_TRUE(std::isinf(EvalReport::parse(ss).rows[0].raw_psnr));
}

TEST(EvalReport, ParseRejectsMalformedText) {
  std::stringstream no_header("a\t1\t1\t1\t1\n");
  EXPECT_THROW(EvalReport::parse(no_header), rawdeblur::FormatError);
  std::stringstream bad("image_id\traw_psnr\traw_ssim\tsrgb_psnr\tsrgb_ssim\na\tx\t1\t1\t1\nmean\t1\t1\t1\t1\n");
  EXPECT_THROW(EvalReport::parse(bad), rawdeblur::FormatError);
  std::stringstream no_mean("image_id\traw_psnr\traw_ssim\tsrgb_psnr\tsrgb_ssim\na\t1\t1\t1\t1\n");
  EXPECT_THROW(EvalReport::parse(no_mean), rawdeblur::FormatError);
}
