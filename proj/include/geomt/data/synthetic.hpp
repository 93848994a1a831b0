#pragma once

// Synthetic geo-tagged segmentation data. Classes are level-set regions of a
// field built from stripes, discs and rectangles; each class has a fixed
// spectral signature, and every domain applies its own per-band gain/offset
// (the radiometric shift). With geo_informative set, stripe orientation,
// stripe period and shape counts follow the patch location, so the layout
// carries information about where a patch was taken.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "geomt/data/dataset.hpp"
#include "geomt/data/patch.hpp"
#include "geomt/error.hpp"
#include "geomt/rng.hpp"

namespace geomt {

struct SyntheticConfig {
  int num_domains_source = 3;
  int num_domains_target = 1;
  int patches_per_domain = 24;
  int image_size = 64;
  int num_classes = 5;                 // evaluable classes; label num_classes is "other"
  std::vector<double> class_fractions;  // length num_classes; empty: decreasing default
  double other_fraction = 0.02;
  double shift = 0.3;                  // radiometric shift magnitude
  double pixel_noise = 0.04;
  double domain_box_m = 20000.0;       // side of each domain's coordinate box
  double domain_spacing_m = 150000.0;  // distance of domain boxes from the origin
  bool geo_informative = true;
  double gsd_m = kDefaultGsd;
  std::uint64_t seed = 0;

  int num_domains() const { return num_domains_source + num_domains_target; }

  void validate() const {
    if (num_domains_source <= 0 || num_domains_target < 0) throw ConfigError("synthetic: need at least one source domain");
    if (patches_per_domain <= 0) throw ConfigError("synthetic: patches_per_domain must be positive");
    if (image_size <= 0 || image_size % 2 != 0) throw ConfigError("synthetic: image_size must be positive and even");
    if (num_classes <= 0 || num_classes > 254) throw ConfigError("synthetic: num_classes must be in [1, 254]");
    if (!class_fractions.empty() && class_fractions.size() != static_cast<std::size_t>(num_classes)) {
      throw ConfigError("synthetic: class_fractions must have num_classes entries");
    }
    for (double f : class_fractions) {
      if (!(f >= 0.0)) throw ConfigError("synthetic: class fractions must be non-negative");
    }
    if (!(other_fraction >= 0.0 && other_fraction < 1.0)) throw ConfigError("synthetic: other_fraction must be in [0, 1)");
    if (!(shift >= 0.0) || !(pixel_noise >= 0.0)) throw ConfigError("synthetic: shift and noise must be >= 0");
    if (!(domain_box_m > 0.0) || !(gsd_m > 0.0)) throw ConfigError("synthetic: box size and gsd must be > 0");
  }

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

inline std::string domain_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "D%02d", index + 1);
  return buf;
}

/// Fractions for labels 0..C (the last entry is "other"), summing to 1.
inline std::vector<double> resolved_fractions(const SyntheticConfig& cfg) {
  std::vector<double> f = cfg.class_fractions;
  if (f.empty()) {
    for (int k = 0; k < cfg.num_classes; ++k) f.push_back(1.0 / (k + 1.5));
  }
  const double sum = std::accumulate(f.begin(), f.end(), 0.0);
  if (!(sum > 0.0)) throw ConfigError("synthetic: class fractions sum to zero");
  for (double& v : f) v *= (1.0 - cfg.other_fraction) / sum;
  f.push_back(cfg.other_fraction);
  return f;
}

struct SyntheticDomain {
  std::string name;
  bool is_source = true;
  double center_lon_m = 0.0, center_lat_m = 0.0;
  std::vector<double> gain, offset;  // per spectral band
  int month = 6;
  std::string zone;
  std::string camera;
  double base_altitude_m = 0.0;
  double surface_phase = 0.0;
};

namespace detail {

inline constexpr int kSpectralBands = 4;  // blue, green, red, near-infrared; band 4 is elevation

struct World {
  std::vector<std::vector<double>> signature;  // [label][band]
  std::vector<double> height;                  // per label
};

inline World make_world(const SyntheticConfig& cfg, Rng rng) {
  const int labels = cfg.num_classes + 1;
  World w;
  w.signature.assign(static_cast<std::size_t>(labels), std::vector<double>(kSpectralBands));
  // Per band, classes take evenly spaced levels in shuffled order so any two
  // classes differ by at least 0.8 / C in every band.
  for (int b = 0; b < kSpectralBands; ++b) {
    std::vector<int> order(static_cast<std::size_t>(cfg.num_classes));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int k = 0; k < cfg.num_classes; ++k) {
      w.signature[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])][static_cast<std::size_t>(b)] =
          0.1 + 0.8 * (k + 0.5) / cfg.num_classes;
    }
    w.signature[static_cast<std::size_t>(cfg.num_classes)][static_cast<std::size_t>(b)] = rng.uniform(0.3, 0.7);
  }
  for (int k = 0; k < labels; ++k) w.height.push_back(rng.uniform(0.0, 1.0));
  return w;
}

inline SyntheticDomain make_domain(const SyntheticConfig& cfg, int index, Rng rng) {
  static constexpr char kZoneLetters[] = {'U', 'N', 'A', 'F'};
  SyntheticDomain d;
  d.name = domain_name(index);
  d.is_source = index < cfg.num_domains_source;
  const double angle = 2.0 * std::numbers::pi * index / cfg.num_domains() + rng.uniform(-0.2, 0.2);
  d.center_lon_m = kDefaultOriginLon + cfg.domain_spacing_m * std::cos(angle);
  d.center_lat_m = kDefaultOriginLat + cfg.domain_spacing_m * std::sin(angle);
  for (int b = 0; b < kSpectralBands; ++b) {
    d.gain.push_back(1.0 + 0.5 * cfg.shift * rng.uniform(-1.0, 1.0));
    d.offset.push_back(cfg.shift * rng.uniform(-1.0, 1.0));
  }
  d.month = static_cast<int>(rng.uniform_int(1, 12));
  d.zone = {kZoneLetters[rng.uniform_int(0, 3)], kZoneLetters[rng.uniform_int(0, 3)]};
  d.camera = "SYN-CAM-" + std::to_string(rng.uniform_int(1, 4));
  d.base_altitude_m = rng.uniform(0.0, 800.0);
  d.surface_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return d;
}

// Scalar field whose quantiles become the class regions.
inline std::vector<double> layout_field(const SyntheticConfig& cfg, double lon, double lat, Rng& rng) {
  const int n = cfg.image_size;
  const double u = (lon - kDefaultOriginLon) / cfg.domain_spacing_m;
  const double v = (lat - kDefaultOriginLat) / cfg.domain_spacing_m;
  double theta, period;
  int discs, rects;
  if (cfg.geo_informative) {
    theta = 0.5 * std::numbers::pi * (u + 1.0) + rng.uniform(-0.15, 0.15);
    period = n * (0.35 + 0.15 * std::tanh(v)) + rng.uniform(-1.0, 1.0);
    discs = 1 + static_cast<int>(std::lround(1.5 * (1.0 + std::sin(2.0 * u + v))));
    rects = 1 + static_cast<int>(std::lround(1.5 * (1.0 + std::cos(u - 2.0 * v))));
  } else {
    theta = rng.uniform(0.0, std::numbers::pi);
    period = n * rng.uniform(0.2, 0.5);
    discs = static_cast<int>(rng.uniform_int(1, 4));
    rects = static_cast<int>(rng.uniform_int(1, 4));
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> field(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double t = c * std::cos(theta) + r * std::sin(theta);
      field[static_cast<std::size_t>(r * n + c)] = std::sin(2.0 * std::numbers::pi * t / period + phase);
    }
  }
  for (int i = 0; i < discs; ++i) {
    const double cr = rng.uniform(0, n), cc = rng.uniform(0, n);
    const double rad = n * rng.uniform(0.08, 0.2);
    const double amp = rng.uniform(-1.5, 1.5);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        field[static_cast<std::size_t>(r * n + c)] += amp * std::exp(-d2 / (2.0 * rad * rad));
      }
    }
  }
  for (int i = 0; i < rects; ++i) {
    const int r0 = static_cast<int>(rng.uniform_int(0, n - 1)), c0 = static_cast<int>(rng.uniform_int(0, n - 1));
    const int h = static_cast<int>(rng.uniform_int(n / 8, n / 3)), w = static_cast<int>(rng.uniform_int(n / 8, n / 3));
    const double amp = rng.uniform(-1.2, 1.2);
    for (int r = r0; r < std::min(n, r0 + h); ++r) {
      for (int c = c0; c < std::min(n, c0 + w); ++c) field[static_cast<std::size_t>(r * n + c)] += amp;
    }
  }
  for (auto& f : field) f += 0.01 * rng.normal();
  return field;
}

// Exact per-patch class counts: label k takes the k-th quantile band.
inline LabelMap quantile_labels(const std::vector<double>& field, int n, const std::vector<double>& fractions) {
  std::vector<std::size_t> order(field.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  LabelMap label(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
  const auto total = static_cast<double>(field.size());
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k];
    const std::size_t end = k + 1 == fractions.size() ? field.size()
                                                       : std::min(field.size(), static_cast<std::size_t>(std::llround(cum * total)));
    for (std::size_t i = begin; i < end; ++i) label.entries[order[i]] = static_cast<std::int32_t>(k);
    begin = std::max(begin, end);
  }
  return label;
}

}  // namespace detail

/// Builds every domain description for a config (deterministic in the seed).
inline std::vector<SyntheticDomain> synthetic_domains(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  std::vector<SyntheticDomain> out;
  for (int d = 0; d < cfg.num_domains(); ++d) out.push_back(detail::make_domain(cfg, d, root.split(1000 + static_cast<std::uint64_t>(d))));
  return out;
}

/// Generates one patch with its label (deterministic in seed, domain, index).
inline Patch synthetic_patch(const SyntheticConfig& cfg, const SyntheticDomain& domain, int domain_index, int index) {
  Rng root(cfg.seed);
  const detail::World world = detail::make_world(cfg, root.split(1));
  Rng rng = root.split(1000 + static_cast<std::uint64_t>(domain_index)).split(static_cast<std::uint64_t>(index) + 1);
  const int n = cfg.image_size;
  Patch p;
  char id[32];
  std::snprintf(id, sizeof id, "%s-%04d", domain.name.c_str(), index);
  p.meta.patch_id = id;
  p.meta.domain_id = domain.name;
  p.meta.zone = domain.zone;
  p.meta.month = domain.month;
  p.meta.hour = static_cast<int>(rng.uniform_int(8, 16));
  p.meta.camera = domain.camera;
  p.meta.centroid_lon_m = domain.center_lon_m + rng.uniform(-0.5, 0.5) * cfg.domain_box_m;
  p.meta.centroid_lat_m = domain.center_lat_m + rng.uniform(-0.5, 0.5) * cfg.domain_box_m;

  const auto field = detail::layout_field(cfg, p.meta.centroid_lon_m, p.meta.centroid_lat_m, rng);
  LabelMap label = detail::quantile_labels(field, n, resolved_fractions(cfg));

  p.image = Image(static_cast<std::size_t>(n), static_cast<std::size_t>(n), detail::kSpectralBands + 1);
  double elevation_sum = 0.0;
  const double half = 0.5 * n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const auto k = static_cast<std::size_t>(label(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
      const bool other = k == static_cast<std::size_t>(cfg.num_classes);
      for (int b = 0; b < detail::kSpectralBands; ++b) {
        const double noise = cfg.pixel_noise * (other ? 3.0 : 1.0) * rng.normal();
        const double v = domain.gain[static_cast<std::size_t>(b)] * (world.signature[k][static_cast<std::size_t>(b)] + noise) +
                         domain.offset[static_cast<std::size_t>(b)];
        p.image(static_cast<std::size_t>(r), static_cast<std::size_t>(c), static_cast<std::size_t>(b)) = static_cast<float>(v);
      }
      const double east = p.meta.centroid_lon_m + (c + 0.5 - half) * cfg.gsd_m;
      const double north = p.meta.centroid_lat_m - (r + 0.5 - half) * cfg.gsd_m;
      const double surface = 0.1 * std::sin(east / 3000.0 + domain.surface_phase) * std::cos(north / 2500.0);
      const double elevation = world.height[k] + surface + 0.5 * cfg.pixel_noise * rng.normal();
      elevation_sum += elevation;
      p.image(static_cast<std::size_t>(r), static_cast<std::size_t>(c), detail::kSpectralBands) = static_cast<float>(elevation);
    }
  }
  p.meta.altitude_m = domain.base_altitude_m + 10.0 * elevation_sum / (n * n);
  p.label = std::move(label);
  return p;
}

/// Writes a full dataset under root. Target-domain labels go to
/// eval_labels/ only.
inline DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  const auto domains = synthetic_domains(cfg);
  DatasetManifest manifest;
  manifest.num_classes = cfg.num_classes;
  manifest.bands = detail::kSpectralBands + 1;
  manifest.image_size = cfg.image_size;
  manifest.gsd_m = cfg.gsd_m;
  for (int d = 0; d < cfg.num_domains(); ++d) {
    const auto& domain = domains[static_cast<std::size_t>(d)];
    (domain.is_source ? manifest.source_domains : manifest.target_domains).push_back(domain.name);
    for (int i = 0; i < cfg.patches_per_domain; ++i) {
      const Patch p = synthetic_patch(cfg, domain, d, i);
      const fs::path dir = root / domain.name;
      write_image(dir / "img" / (p.meta.patch_id + ".bin"), p.image);
      write_meta(dir / "meta" / (p.meta.patch_id + ".txt"), p.meta);
      if (domain.is_source) {
        write_mask(dir / "msk" / (p.meta.patch_id + ".bin"), *p.label);
      } else {
        write_mask(root / kEvalLabelsDir / (p.meta.patch_id + ".bin"), *p.label);
      }
    }
  }
  write_manifest(root, manifest);
  return manifest;
}

}  // namespace geomt
