#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "rawdeblur/errors.hpp"
#include "rawdeblur/raw_core.hpp"

using namespace rawdeblur::raw;

namespace {

const char* kPatterns[] = {"RGGB", "BGGR", "GRBG", "GBRG"};

BayerFrame make_frame(int w, int h, const char* cfa, int black, int white, int bits) {
  BayerFrame f;
  f.width = w;
  f.height = h;
  f.cfa = CfaPattern::parse(cfa);
  f.bit_depth = bits;
  f.black_level = black;
  f.white_level = white;
  f.samples.assign(static_cast<std::size_t>(w) * h, static_cast<std::uint16_t>(black));
  return f;
}

NormalizedFrame random_normalized(std::mt19937_64& rng, int w, int h, const char* cfa) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NormalizedFrame nf(w, h, CfaPattern::parse(cfa));
  for (auto& v : nf.values) v = u(rng);
  return nf;
}

NormalizedFrame tile(const char* cfa, double a, double b, double c, double d) {
  NormalizedFrame nf(2, 2, CfaPattern::parse(cfa));
  nf.values = {a, b, c, d};
  return nf;
}

}  // namespace

TEST(CfaPattern, AcceptsTheFourBayerLayouts) {
  for (const char* p : kPatterns) EXPECT_EQ(CfaPattern::parse(p).name(), p);
}

TEST(CfaPattern, RejectsInvalidLayouts) {
  EXPECT_THROW(CfaPattern::parse("RRGB"), rawdeblur::ConfigError);
  EXPECT_THROW(CfaPattern::parse("GGRB"), rawdeblur::ConfigError);  // greens not diagonal
  EXPECT_THROW(CfaPattern::parse("RGB"), rawdeblur::ConfigError);
  EXPECT_THROW(CfaPattern::parse("RGGX"), rawdeblur::ConfigError);
}

TEST(CfaPattern, GreenRolesShareRowsWithRedAndBlue) {
  for (const char* p : kPatterns) {
    const auto cfa = CfaPattern::parse(p);
    const auto r = cfa.offset(PlaneRole::R), g0 = cfa.offset(PlaneRole::G0);
    const auto b = cfa.offset(PlaneRole::B), g1 = cfa.offset(PlaneRole::G1);
    EXPECT_EQ(cfa.at(r.row, r.col), Color::R);
    EXPECT_EQ(cfa.at(b.row, b.col), Color::B);
    EXPECT_EQ(cfa.at(g0.row, g0.col), Color::G);
    EXPECT_EQ(cfa.at(g1.row, g1.col), Color::G);
    EXPECT_EQ(g0.row, r.row);
    EXPECT_EQ(g1.row, b.row);
  }
}

TEST(Normalize, LevelsMapToUnitInterval) {
  auto f = make_frame(2, 2, "RGGB", 512, 15871, 14);
  f.samples = {512, 15871, 8191, 100};
  const auto nf = normalize(f);
  EXPECT_EQ(nf.values[0], 0.0);
  EXPECT_EQ(nf.values[1], 1.0);
  EXPECT_NEAR(nf.values[2], (8191.0 - 512.0) / 15359.0, 1e-15);
  EXPECT_NEAR(nf.values[2], 0.49997, 1e-5);
  EXPECT_EQ(nf.values[3], 0.0);  // below black clamps
}

TEST(Normalize, AlwaysWithinUnitIntervalForCorruptSamples) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> any(0, 16383);
  auto f = make_frame(16, 16, "GRBG", 1024, 15000, 14);
  for (auto& s : f.samples) s = static_cast<std::uint16_t>(any(rng));
  for (double v : normalize(f).values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Denormalize, EndpointsMapToLevels) {
  NormalizedFrame nf(2, 2, CfaPattern::rggb());
  nf.values = {0.0, 1.0, 0.0, 1.0};
  const auto f = denormalize(nf, 64, 1023, 10);
  EXPECT_EQ(f.samples[0], 64);
  EXPECT_EQ(f.samples[1], 1023);
}

TEST(Denormalize, RoundTripWithinOneCount) {
  std::mt19937_64 rng(2);
  int worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int bits = 10 + trial % 7;
    const int max_value = (1 << bits) - 1;
    std::uniform_int_distribution<int> black_d(0, max_value / 4);
    const int black = black_d(rng);
    std::uniform_int_distribution<int> white_d(black + 1, max_value);
    const int white = white_d(rng);
    auto f = make_frame(4, 4, kPatterns[trial % 4], black, white, bits);
    std::uniform_int_distribution<int> sample(black, white);
    for (auto& s : f.samples) s = static_cast<std::uint16_t>(sample(rng));
    const auto back = denormalize(normalize(f), black, white, bits);
    for (std::size_t i = 0; i < f.samples.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<int>(back.samples[i]) - static_cast<int>(f.samples[i])));
  }
  EXPECT_LE(worst, 1);
}

TEST(Pack, SingleTileRggb) {
  const auto pp = pack(tile("RGGB", 1, 2, 3, 4));
  ASSERT_EQ(pp.width, 1);
  ASSERT_EQ(pp.height, 1);
  EXPECT_EQ(pp.at(PlaneRole::R, 0, 0), 1);
  EXPECT_EQ(pp.at(PlaneRole::G0, 0, 0), 2);
  EXPECT_EQ(pp.at(PlaneRole::B, 0, 0), 4);
  EXPECT_EQ(pp.at(PlaneRole::G1, 0, 0), 3);
}

TEST(Pack, SingleTileBggr) {
  const auto pp = pack(tile("BGGR", 1, 2, 3, 4));
  EXPECT_EQ(pp.at(PlaneRole::R, 0, 0), 4);
  EXPECT_EQ(pp.at(PlaneRole::G0, 0, 0), 3);
  EXPECT_EQ(pp.at(PlaneRole::B, 0, 0), 1);
  EXPECT_EQ(pp.at(PlaneRole::G1, 0, 0), 2);
}

TEST(Pack, ConstantFrameGivesConstantPlanes) {
  NormalizedFrame nf(8, 6, CfaPattern::parse("GBRG"), 0.3);
  const auto pp = pack(nf);
  EXPECT_EQ(pp.width, 4);
  EXPECT_EQ(pp.height, 3);
  for (double v : pp.values) EXPECT_EQ(v, 0.3);
}

TEST(Pack, OddExtentRejected) {
  NormalizedFrame nf(3, 4, CfaPattern::rggb());
  EXPECT_THROW(pack(nf), rawdeblur::DimensionError);
}

TEST(Unpack, InvertsPackExample) {
  PackedPlanes pp;
  pp.width = pp.height = 1;
  pp.values = {1, 2, 4, 3};
  const auto nf = unpack(pp, CfaPattern::rggb());
  EXPECT_EQ(nf.values, (std::vector<double>{1, 2, 3, 4}));
}

TEST(Unpack, ConstantPlanesGiveConstantFrame) {
  PackedPlanes pp;
  pp.width = 3;
  pp.height = 2;
  pp.values.assign(24, 0.75);
  const auto nf = unpack(pp, CfaPattern::parse("GRBG"));
  EXPECT_EQ(nf.width, 6);
  for (double v : nf.values) EXPECT_EQ(v, 0.75);
}

TEST(PackProperty, RoundTripIsExactForRandomFrames) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> half(1, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const char* cfa = kPatterns[trial % 4];
    const auto nf = random_normalized(rng, 2 * half(rng), 2 * half(rng), cfa);
    const auto back = unpack(pack(nf), nf.cfa);
    ASSERT_EQ(back.width, nf.width);
    ASSERT_EQ(back.values, nf.values);
    ASSERT_EQ(back.cfa, nf.cfa);
  }
}

TEST(PackProperty, PlanesHoldExactlyTheirColorCells) {
  std::mt19937_64 rng(4);
  for (const char* name : kPatterns) {
    const auto nf = random_normalized(rng, 12, 10, name);
    const auto pp = pack(nf);
    for (int role = 0; role < 4; ++role) {
      const auto off = nf.cfa.offset(static_cast<PlaneRole>(role));
      std::vector<double> expected;
      for (int y = off.row; y < nf.height; y += 2)
        for (int x = off.col; x < nf.width; x += 2) expected.push_back(nf.at(x, y));
      auto plane = pp.plane(static_cast<PlaneRole>(role));
      std::vector<double> got(plane.begin(), plane.end());
      std::sort(expected.begin(), expected.end());
      std::sort(got.begin(), got.end());
      EXPECT_EQ(got, expected) << name << " role " << role;
    }
  }
}

TEST(CropAligned, FullExtentIsIdentity) {
  std::mt19937_64 rng(5);
  const auto nf = random_normalized(rng, 10, 8, "RGGB");
  const auto c = crop_aligned(nf, 0, 0, 10, 8);
  EXPECT_EQ(c.values, nf.values);
}

TEST(CropAligned, EvenShiftKeepsPattern) {
  std::mt19937_64 rng(6);
  const auto nf = random_normalized(rng, 10, 8, "RGGB");
  const auto c = crop_aligned(nf, 2, 2, 4, 4);
  EXPECT_EQ(c.cfa.name(), "RGGB");
  EXPECT_EQ(c.at(0, 0), nf.at(2, 2));
  EXPECT_EQ(c.at(3, 3), nf.at(5, 5));
}

TEST(CropAligned, RejectsOddOrOutOfBounds) {
  NormalizedFrame nf(8, 8, CfaPattern::rggb());
  EXPECT_THROW(crop_aligned(nf, 1, 0, 4, 4), rawdeblur::AlignmentError);
  EXPECT_THROW(crop_aligned(nf, 0, 0, 3, 4), rawdeblur::AlignmentError);
  EXPECT_THROW(crop_aligned(nf, 6, 0, 4, 4), rawdeblur::AlignmentError);
  EXPECT_THROW(crop_aligned(nf, -2, 0, 4, 4), rawdeblur::AlignmentError);
}

TEST(CropAligned, ComposesByAddingOffsets) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> e(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto nf = random_normalized(rng, 24, 20, kPatterns[trial % 4]);
    const int x1 = 2 * e(rng), y1 = 2 * e(rng), x2 = 2 * e(rng), y2 = 2 * e(rng);
    const int w = 8, h = 6;
    const auto twice = crop_aligned(crop_aligned(nf, x1, y1, w + 6, h + 6), x2, y2, w, h);
    const auto once = crop_aligned(nf, x1 + x2, y1 + y2, w, h);
    ASSERT_EQ(twice.values, once.values);
  }
}

TEST(Rawb, HeaderLayoutIsBitExact) {
  auto f = make_frame(2, 2, "GRBG", 0x0102, 0x0fff, 12);
  f.samples = {0x0a0b, 1, 2, 3};
  const auto bytes = encode_rawb(f);
  const std::vector<std::uint8_t> header{'R', 'A', 'W', 'B', 1, 0, 2, 0, 0, 0, 2, 0, 0, 0, 'G', 'R', 'B', 'G',
                                         12, 0, 0x02, 0x01, 0xff, 0x0f};
  ASSERT_EQ(bytes.size(), header.size() + 8);
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  EXPECT_EQ(bytes[24], 0x0b);
  EXPECT_EQ(bytes[25], 0x0a);
}

TEST(Rawb, DecodeInvertsEncode) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> s(0, 16383);
  auto f = make_frame(6, 4, "BGGR", 200, 16000, 14);
  for (auto& v : f.samples) v = static_cast<std::uint16_t>(s(rng));
  const auto g = decode_rawb(encode_rawb(f));
  EXPECT_TRUE(g.same_metadata(f));
  EXPECT_EQ(g.samples, f.samples);
}

TEST(Rawb, MalformedInputsRejected) {
  auto f = make_frame(2, 2, "RGGB", 0, 1023, 10);
  auto bytes = encode_rawb(f);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_rawb(truncated), rawdeblur::FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_rawb(bad_magic), rawdeblur::FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_rawb(bad_version), rawdeblur::FormatError);
  auto bad_cfa = bytes;
  bad_cfa[14] = 'X';
  EXPECT_THROW(decode_rawb(bad_cfa), rawdeblur::FormatError);
  auto over_depth = bytes;
  over_depth[24] = 0xff;
  over_depth[25] = 0xff;
  EXPECT_THROW(decode_rawb(over_depth), rawdeblur::FormatError);
}

TEST(BayerFrame, ValidateRejectsBadLevels) {
  auto f = make_frame(2, 2, "RGGB", 100, 100, 10);
  EXPECT_THROW(f.validate(), rawdeblur::ConfigError);
  f.white_level = 1024;
  EXPECT_THROW(f.validate(), rawdeblur::ConfigError);
  f.white_level = 1023;
  f.width = 3;
  EXPECT_THROW(f.validate(), rawdeblur::DimensionError);
}
