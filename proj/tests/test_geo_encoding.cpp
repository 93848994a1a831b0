#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "geomt/geo_encoding.hpp"

using namespace geomt;

namespace {

// Scalar reference written straight from the definition.
double reference_component(double lon, double lat, int k, int dim, double f) {
  const int half = dim / 2;
  const double c = k < half ? lon : lat;
  const int j = k % half;  // position inside the axis block
  const int i = j / 2 + 1;
  const double w = 1.0 / std::pow(f, 2.0 * i / dim);
  return j % 2 == 0 ? std::sin(c * w) : std::cos(c * w);
}

EncodingConfig small_config(int dim = 8) {
  EncodingConfig cfg;
  cfg.dim = dim;
  return cfg;
}

}  // namespace

TEST(Centering, OriginMapsToZero) {
  const EncodingConfig cfg;
  const auto c = center({489353.59, 6587552.20}, cfg);
  EXPECT_EQ(c.lon_m, 0.0);
  EXPECT_EQ(c.lat_m, 0.0);
}

TEST(Centering, SubtractsOrigin) {
  EncodingConfig cfg;
  cfg.origin_lon_m = 100.0;
  cfg.origin_lat_m = -50.0;
  const auto c = center({150.5, 25.0}, cfg);
  EXPECT_DOUBLE_EQ(c.lon_m, 50.5);
  EXPECT_DOUBLE_EQ(c.lat_m, 75.0);
}

TEST(Noise, ZeroRadiusIsIdentityAndDrawsNothing) {
  Rng a(7), b(7);
  const RawCoordinate c{123.0, -456.0};
  EXPECT_EQ(inject_noise(c, 0.0, a), c);
  EXPECT_EQ(a.uniform(0, 1), b.uniform(0, 1));
}

TEST(Noise, StaysWithinRadiusPerAxis) {
  Rng rng(3);
  const RawCoordinate c{1000.0, 2000.0};
  double max_dx = 0.0, max_dy = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const auto n = inject_noise(c, 30000.0, rng);
    max_dx = std::max(max_dx, std::abs(n.lon_m - c.lon_m));
    max_dy = std::max(max_dy, std::abs(n.lat_m - c.lat_m));
    ASSERT_LE(std::abs(n.lon_m - c.lon_m), 30000.0);
    ASSERT_LE(std::abs(n.lat_m - c.lat_m), 30000.0);
  }
  // Uniform on the full interval: the extremes get close to the radius.
  EXPECT_GT(max_dx, 29000.0);
  EXPECT_GT(max_dy, 29000.0);
}

TEST(Noise, AxesDrawnIndependently) {
  Rng rng(11);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const auto n = inject_noise({0.0, 0.0}, 1.0, rng);
    sxy += n.lon_m * n.lat_m;
    sxx += n.lon_m * n.lon_m;
    syy += n.lat_m * n.lat_m;
  }
  EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.03);
}

TEST(Noise, NegativeRadiusRejected) {
  Rng rng(0);
  EXPECT_THROW(inject_noise({0, 0}, -1.0, rng), ConfigError);
}

TEST(PositionalEncode, ZeroCoordinateGivesSinZeroCosOne) {
  const auto e = positional_encode({0.0, 0.0}, EncodingConfig{});
  ASSERT_EQ(e.values.size(), 256u);
  for (std::size_t k = 0; k < e.values.size(); k += 2) {
    EXPECT_EQ(e.values[k], 0.0);
    EXPECT_EQ(e.values[k + 1], 1.0);
  }
}

TEST(PositionalEncode, HandComputedDim4) {
  // D=4, f=1 -> single frequency omega_1 = 1.
  EncodingConfig cfg = small_config(4);
  cfg.base_frequency = 1.0;
  const auto e = positional_encode({0.5, 2.0}, cfg);
  EXPECT_NEAR(e.values[0], std::sin(0.5), 1e-15);
  EXPECT_NEAR(e.values[1], std::cos(0.5), 1e-15);
  EXPECT_NEAR(e.values[2], std::sin(2.0), 1e-15);
  EXPECT_NEAR(e.values[3], std::cos(2.0), 1e-15);
}

TEST(PositionalEncode, FrequencyDecreasesWithIndex) {
  for (int i = 1; i < 64; ++i) {
    EXPECT_GT(encoding_frequency(i, 256, 20000.0), encoding_frequency(i + 1, 256, 20000.0));
  }
  EXPECT_NEAR(encoding_frequency(64, 256, 20000.0), 1.0 / std::sqrt(20000.0), 1e-15);
}

TEST(PositionalEncode, MatchesScalarReference) {
  Rng rng(42);
  for (int dim : {4, 8, 64, 256}) {
    for (double f : {10000.0, 20000.0}) {
      EncodingConfig cfg = small_config(dim);
      cfg.base_frequency = f;
      for (int t = 0; t < 50; ++t) {
        const double lon = rng.uniform(-1e5, 1e5), lat = rng.uniform(-1e5, 1e5);
        const auto e = positional_encode({lon, lat}, cfg);
        for (int k = 0; k < dim; ++k) {
          ASSERT_NEAR(e.values[static_cast<std::size_t>(k)], reference_component(lon, lat, k, dim, f), 1e-9);
        }
      }
    }
  }
}

TEST(PositionalEncode, PairsHaveUnitNorm) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto e = positional_encode({rng.uniform(-2e5, 2e5), rng.uniform(-2e5, 2e5)}, EncodingConfig{});
    for (std::size_t k = 0; k < e.values.size(); k += 2) {
      ASSERT_NEAR(e.values[k] * e.values[k] + e.values[k + 1] * e.values[k + 1], 1.0, 1e-9);
    }
  }
}

TEST(PositionalEncode, LonOnlyAffectsFirstHalf) {
  const EncodingConfig cfg;
  const auto a = positional_encode({100.0, 7.0}, cfg);
  const auto b = positional_encode({9999.0, 7.0}, cfg);
  for (std::size_t k = 128; k < 256; ++k) EXPECT_EQ(a.values[k], b.values[k]);
}

TEST(PositionalEncode, RejectsDimNotMultipleOfFour) {
  for (int dim : {0, -4, 6, 10}) {
    EXPECT_THROW(positional_encode({0, 0}, small_config(dim)), ConfigError) << dim;
  }
}

TEST(EncodeSupervision, NoiseFreeEqualsDirectEncoding) {
  EncodingConfig cfg;
  cfg.noise_radius_m = 0.0;
  Rng rng(1);
  const RawCoordinate raw{500000.0, 6600000.0};
  EXPECT_EQ(encode_supervision(raw, cfg, rng).values, positional_encode(center(raw, cfg), cfg).values);
}

TEST(EncodeSupervision, FreshNoisePerCall) {
  const EncodingConfig cfg;
  Rng rng(1);
  const RawCoordinate raw{500000.0, 6600000.0};
  EXPECT_NE(encode_supervision(raw, cfg, rng).values, encode_supervision(raw, cfg, rng).values);
}

TEST(TimeEncoding, MonthOneAtAngleZero) {
  Rng rng(0);
  const auto e = circle_encode_time({1, 0}, true, false, false, rng);
  ASSERT_EQ(e.values.size(), 2u);
  EXPECT_NEAR(e.values[0], 0.0, 1e-12);
  EXPECT_NEAR(e.values[1], 1.0, 1e-12);
}

TEST(TimeEncoding, MonthsEquallySpaced) {
  Rng rng(0);
  for (int m = 1; m <= 12; ++m) {
    const auto e = circle_encode_time({m, 0}, true, false, false, rng);
    const double angle = 2.0 * std::numbers::pi * (m - 1) / 12.0;
    EXPECT_NEAR(e.values[0], std::sin(angle), 1e-12);
    EXPECT_NEAR(e.values[1], std::cos(angle), 1e-12);
  }
}

TEST(TimeEncoding, DecemberAdjacentToJanuary) {
  Rng rng(0);
  const auto dec = circle_encode_time({12, 0}, true, false, false, rng);
  const auto jan = circle_encode_time({1, 0}, true, false, false, rng);
  const auto jun = circle_encode_time({6, 0}, true, false, false, rng);
  auto dist = [](const EncodedTime& a, const EncodedTime& b) {
    return std::hypot(a.values[0] - b.values[0], a.values[1] - b.values[1]);
  };
  EXPECT_NEAR(dist(dec, jan), 2.0 * std::sin(std::numbers::pi / 12.0), 1e-12);
  EXPECT_GT(dist(jun, jan), dist(dec, jan));
}

TEST(TimeEncoding, MonthAndHourLayout) {
  Rng rng(0);
  const auto e = circle_encode_time({4, 6}, true, true, false, rng);
  ASSERT_EQ(e.values.size(), 4u);
  EXPECT_NEAR(e.values[2], 1.0, 1e-12);  // 6h -> pi/2
  EXPECT_NEAR(e.values[3], 0.0, 1e-12);
}

TEST(TimeEncoding, NoiseShiftsByAtMostOneStepWithWrap) {
  Rng rng(9);
  std::set<int> seen;
  for (int t = 0; t < 300; ++t) {
    const auto e = circle_encode_time({1, 0}, true, false, true, rng);
    double angle = std::atan2(e.values[0], e.values[1]);
    if (angle < -1e-9) angle += 2.0 * std::numbers::pi;
    seen.insert(static_cast<int>(std::lround(angle / (2.0 * std::numbers::pi / 12.0))) + 1);
  }
  EXPECT_EQ(seen, (std::set<int>{1, 2, 12}));
}

TEST(TimeEncoding, WrapCyclic) {
  EXPECT_EQ(wrap_cyclic(0, 1, 12), 12);
  EXPECT_EQ(wrap_cyclic(13, 1, 12), 1);
  EXPECT_EQ(wrap_cyclic(-1, 0, 24), 23);
  EXPECT_EQ(wrap_cyclic(24, 0, 24), 0);
}

TEST(TimeEncoding, RejectsBadInputs) {
  Rng rng(0);
  EXPECT_THROW(circle_encode_time({1, 0}, false, false, false, rng), ConfigError);
  EXPECT_THROW(circle_encode_time({13, 0}, true, false, false, rng), DataError);
  EXPECT_THROW(circle_encode_time({0, 0}, true, false, false, rng), DataError);
  EXPECT_THROW(circle_encode_time({5, 24}, false, true, false, rng), DataError);
}
