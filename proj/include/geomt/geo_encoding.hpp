#pragma once

// Coordinate and timestamp encodings used as supervision targets for the
// auxiliary heads. All coordinates are Lambert-93 meters.

#include <cmath>
#include <numbers>
#include <vector>

#include "geomt/error.hpp"
#include "geomt/rng.hpp"

namespace geomt {

struct RawCoordinate {
  double lon_m = 0.0;  // easting
  double lat_m = 0.0;  // northing

  friend bool operator==(const RawCoordinate&, const RawCoordinate&) = default;
};

inline constexpr double kDefaultOriginLon = 489353.59;
inline constexpr double kDefaultOriginLat = 6587552.20;

struct EncodingConfig {
  int dim = 256;
  double base_frequency = 20000.0;
  double noise_radius_m = 30000.0;
  double origin_lon_m = kDefaultOriginLon;
  double origin_lat_m = kDefaultOriginLat;

  void validate() const {
    if (dim <= 0 || dim % 4 != 0) {
      throw ConfigError("encoding dim must be a positive multiple of 4, got " +
                        std::to_string(dim));
    }
    if (!(base_frequency > 0.0)) throw ConfigError("encoding base_frequency must be > 0");
    if (!(noise_radius_m >= 0.0)) throw ConfigError("encoding noise_radius_m must be >= 0");
  }

  friend bool operator==(const EncodingConfig&, const EncodingConfig&) = default;
};

struct EncodedLocation {
  std::vector<double> values;
};

struct TimeStamp {
  int month = 1;  // 1..12
  int hour = 0;   // 0..23
};

struct EncodedTime {
  std::vector<double> values;
};

inline RawCoordinate center(const RawCoordinate& raw, const EncodingConfig& cfg) {
  return {raw.lon_m - cfg.origin_lon_m, raw.lat_m - cfg.origin_lat_m};
}

/// Independent uniform perturbation of each axis in [-radius, +radius].
inline RawCoordinate inject_noise(const RawCoordinate& centered, double noise_radius_m,
                                  Rng& rng) {
  if (!(noise_radius_m >= 0.0)) throw ConfigError("noise radius must be >= 0");
  if (noise_radius_m == 0.0) return centered;
  RawCoordinate out = centered;
  out.lon_m += rng.uniform(-noise_radius_m, noise_radius_m);
  out.lat_m += rng.uniform(-noise_radius_m, noise_radius_m);
  return out;
}

/// Angular frequency for index i in [1, dim/4].
inline double encoding_frequency(int i, int dim, double base_frequency) {
  return std::pow(base_frequency, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
}

/// Layout: lon block then lat block, each [sin(c w_1), cos(c w_1), ..., sin(c w_q), cos(c w_q)]
/// with q = dim/4.
inline EncodedLocation positional_encode(const RawCoordinate& centered,
                                         const EncodingConfig& cfg) {
  cfg.validate();
  const int quarter = cfg.dim / 4;
  EncodedLocation out;
  out.values.resize(static_cast<std::size_t>(cfg.dim));
  const double axes[2] = {centered.lon_m, centered.lat_m};
  for (int a = 0; a < 2; ++a) {
    const std::size_t block = static_cast<std::size_t>(a) * static_cast<std::size_t>(cfg.dim / 2);
    for (int i = 1; i <= quarter; ++i) {
      const double phase = axes[a] * encoding_frequency(i, cfg.dim, cfg.base_frequency);
      const std::size_t k = block + 2 * static_cast<std::size_t>(i - 1);
      out.values[k] = std::sin(phase);
      out.values[k + 1] = std::cos(phase);
    }
  }
  return out;
}

/// center -> noise -> encode. Noise is drawn fresh on every call.
inline EncodedLocation encode_supervision(const RawCoordinate& raw, const EncodingConfig& cfg,
                                          Rng& rng) {
  cfg.validate();
  return positional_encode(inject_noise(center(raw, cfg), cfg.noise_radius_m, rng), cfg);
}

struct TimeEncodingOptions {
  bool use_month = false;
  bool use_hour = false;
  bool noise = false;

  int width() const { return 2 * (static_cast<int>(use_month) + static_cast<int>(use_hour)); }
};

inline int wrap_cyclic(int value, int lo, int period) {
  return lo + ((value - lo) % period + period) % period;
}

/// Month m sits at angle 2pi(m-1)/12, hour h at 2pi h/24. With noise, an
/// integer offset in {-1, 0, +1} is added to each field before wrapping.
inline EncodedTime circle_encode_time(const TimeStamp& ts, const TimeEncodingOptions& opts,
                                      Rng& rng) {
  if (!opts.use_month && !opts.use_hour) {
    throw ConfigError("time encoding needs at least one of month/hour");
  }
  if (ts.month < 1 || ts.month > 12) throw DataError("month out of range: " + std::to_string(ts.month));
  if (ts.hour < 0 || ts.hour > 23) throw DataError("hour out of range: " + std::to_string(ts.hour));
  EncodedTime out;
  auto push = [&](double angle) {
    out.values.push_back(std::sin(angle));
    out.values.push_back(std::cos(angle));
  };
  if (opts.use_month) {
    int month = ts.month;
    if (opts.noise) month = wrap_cyclic(month + static_cast<int>(rng.uniform_int(-1, 1)), 1, 12);
    push(2.0 * std::numbers::pi * (month - 1) / 12.0);
  }
  if (opts.use_hour) {
    int hour = ts.hour;
    if (opts.noise) hour = wrap_cyclic(hour + static_cast<int>(rng.uniform_int(-1, 1)), 0, 24);
    push(2.0 * std::numbers::pi * hour / 24.0);
  }
  return out;
}

inline EncodedTime circle_encode_time(const TimeStamp& ts, bool use_month, bool use_hour,
                                      bool noise, Rng& rng) {
  return circle_encode_time(ts, TimeEncodingOptions{use_month, use_hour, noise}, rng);
}

}  // namespace geomt
