#pragma once

// Run configuration file: INI-like sections with "key = value" lines and
// '#' comments. Every key has a default; unknown keys are errors. The echo
// written next to each run re-parses to the same configuration.
//
//   [run]        seed
//   [data]       root, source_domains, target_domains
//   [synthetic]  generator fields
//   [model]      in_bands, encoder_channels, input_size
//   [encoding]   dim, base_frequency, noise_radius_m, origin_lon_m, origin_lat_m
//   [geo_head]   pool_output, hidden_widths, feature_source
//   [time_head]  use_month, use_hour, noise, pool_output, hidden_width, feature_source
//   [dcs]        temperature, decay
//   [train]      batch_size, max_epochs, learning_rate, patience, val_fraction,
//                augment, target_bn_update, geo_mt, dcs, time_mt

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "geomt/data/synthetic.hpp"
#include "geomt/data/text.hpp"
#include "geomt/error.hpp"
#include "geomt/train_config.hpp"

namespace geomt {

struct DataConfig {
  std::string root;
  std::vector<std::string> source_domains;  // empty: from the dataset manifest
  std::vector<std::string> target_domains;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  DataConfig data;
  SyntheticConfig synthetic;
  TrainConfig train;

  std::uint64_t seed() const { return train.seed; }
  void set_seed(std::uint64_t s) {
    train.seed = s;
    synthetic.seed = s;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::string on bad value
};

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

inline int to_int(const std::string& v) {
  int out = 0;
  if (!text::parse_int(v, out)) throw std::string("expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  if (!text::parse_int(v, out)) throw std::string("expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& v) {
  double out = 0.0;
  if (!text::parse_double(v, out)) throw std::string("expected a number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& v) {
  bool out = false;
  if (!text::parse_bool(v, out)) throw std::string("expected true/false, got '" + v + "'");
  return out;
}

inline std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& part : text::split(v, ',')) out.push_back(to_int(part));
  return out;
}

inline std::vector<double> to_double_list(const std::string& v) {
  std::vector<double> out;
  for (const auto& part : text::split(v, ',')) out.push_back(to_double(part));
  return out;
}

inline std::string int_list_str(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string double_list_str(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + text::format_double(v[i]);
  return out;
}

inline FeatureSource to_source(const std::string& v) {
  if (v == "encoder") return FeatureSource::Encoder;
  if (v == "decoder") return FeatureSource::Decoder;
  throw std::string("expected encoder or decoder, got '" + v + "'");
}

#define GEOMT_INT(sec, name, expr) \
  Field{sec, name, [](const RunConfig& c) { return std::to_string(c.expr); }, [](RunConfig& c, const std::string& v) { c.expr = to_int(v); }}
#define GEOMT_DOUBLE(sec, name, expr) \
  Field{sec, name, [](const RunConfig& c) { return text::format_double(c.expr); }, [](RunConfig& c, const std::string& v) { c.expr = to_double(v); }}
#define GEOMT_BOOL(sec, name, expr) \
  Field{sec, name, [](const RunConfig& c) { return bool_str(c.expr); }, [](RunConfig& c, const std::string& v) { c.expr = to_bool(v); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"run", "seed", [](const RunConfig& c) { return std::to_string(c.seed()); },
            [](RunConfig& c, const std::string& v) { c.set_seed(to_u64(v)); }},
      Field{"data", "root", [](const RunConfig& c) { return c.data.root; },
            [](RunConfig& c, const std::string& v) { c.data.root = v; }},
      Field{"data", "source_domains", [](const RunConfig& c) { return text::join(c.data.source_domains); },
            [](RunConfig& c, const std::string& v) { c.data.source_domains = text::split(v, ','); }},
      Field{"data", "target_domains", [](const RunConfig& c) { return text::join(c.data.target_domains); },
            [](RunConfig& c, const std::string& v) { c.data.target_domains = text::split(v, ','); }},
      GEOMT_INT("synthetic", "num_domains_source", synthetic.num_domains_source),
      GEOMT_INT("synthetic", "num_domains_target", synthetic.num_domains_target),
      GEOMT_INT("synthetic", "patches_per_domain", synthetic.patches_per_domain),
      GEOMT_INT("synthetic", "image_size", synthetic.image_size),
      GEOMT_INT("synthetic", "num_classes", synthetic.num_classes),
      Field{"synthetic", "class_fractions", [](const RunConfig& c) { return double_list_str(c.synthetic.class_fractions); },
            [](RunConfig& c, const std::string& v) { c.synthetic.class_fractions = to_double_list(v); }},
      GEOMT_DOUBLE("synthetic", "other_fraction", synthetic.other_fraction),
      GEOMT_DOUBLE("synthetic", "shift", synthetic.shift),
      GEOMT_DOUBLE("synthetic", "pixel_noise", synthetic.pixel_noise),
      GEOMT_DOUBLE("synthetic", "domain_box_m", synthetic.domain_box_m),
      GEOMT_DOUBLE("synthetic", "domain_spacing_m", synthetic.domain_spacing_m),
      GEOMT_BOOL("synthetic", "geo_informative", synthetic.geo_informative),
      GEOMT_DOUBLE("synthetic", "gsd_m", synthetic.gsd_m),
      GEOMT_INT("model", "in_bands", train.net.in_bands),
      Field{"model", "encoder_channels", [](const RunConfig& c) { return int_list_str(c.train.net.encoder_channels); },
            [](RunConfig& c, const std::string& v) { c.train.net.encoder_channels = to_int_list(v); }},
      GEOMT_INT("model", "input_size", train.net.input_size),
      GEOMT_INT("encoding", "dim", train.encoding.dim),
      GEOMT_DOUBLE("encoding", "base_frequency", train.encoding.base_frequency),
      GEOMT_DOUBLE("encoding", "noise_radius_m", train.encoding.noise_radius_m),
      GEOMT_DOUBLE("encoding", "origin_lon_m", train.encoding.origin_lon_m),
      GEOMT_DOUBLE("encoding", "origin_lat_m", train.encoding.origin_lat_m),
      GEOMT_INT("geo_head", "pool_output", train.geo_head.pool_output),
      Field{"geo_head", "hidden_widths", [](const RunConfig& c) { return int_list_str(c.train.geo_head.hidden_widths); },
            [](RunConfig& c, const std::string& v) { c.train.geo_head.hidden_widths = to_int_list(v); }},
      Field{"geo_head", "feature_source", [](const RunConfig& c) { return to_string(c.train.geo_head.feature_source); },
            [](RunConfig& c, const std::string& v) { c.train.geo_head.feature_source = to_source(text::trim(v)); }},
      GEOMT_BOOL("time_head", "use_month", train.time_head.use_month),
      GEOMT_BOOL("time_head", "use_hour", train.time_head.use_hour),
      GEOMT_BOOL("time_head", "noise", train.time_head.noise),
      GEOMT_INT("time_head", "pool_output", train.time_head.pool_output),
      GEOMT_INT("time_head", "hidden_width", train.time_head.hidden_width),
      Field{"time_head", "feature_source", [](const RunConfig& c) { return to_string(c.train.time_head.feature_source); },
            [](RunConfig& c, const std::string& v) { c.train.time_head.feature_source = to_source(text::trim(v)); }},
      GEOMT_DOUBLE("dcs", "temperature", train.dcs.temperature),
      GEOMT_DOUBLE("dcs", "decay", train.dcs.decay),
      GEOMT_INT("train", "batch_size", train.batch_size),
      GEOMT_INT("train", "max_epochs", train.max_epochs),
      GEOMT_DOUBLE("train", "learning_rate", train.learning_rate),
      GEOMT_INT("train", "patience", train.patience),
      GEOMT_DOUBLE("train", "val_fraction", train.val_fraction),
      GEOMT_BOOL("train", "augment", train.augment),
      GEOMT_BOOL("train", "target_bn_update", train.target_bn_update),
      GEOMT_BOOL("train", "geo_mt", train.components.geo_mt),
      GEOMT_BOOL("train", "dcs", train.components.dcs),
      GEOMT_BOOL("train", "time_mt", train.components.time_mt),
  };
  return all;
}

#undef GEOMT_INT
#undef GEOMT_DOUBLE
#undef GEOMT_BOOL

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace detail

/// Sets "section.key" to value; used for config lines and ablation deltas.
inline void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value,
                           const std::string& where = "") {
  const auto dot = dotted_key.find('.');
  const std::string prefix = where.empty() ? "" : where + ": ";
  if (dot == std::string::npos) throw ConfigError(prefix + "key '" + dotted_key + "' needs a section");
  const auto* f = detail::find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
  if (!f) throw ConfigError(prefix + "unknown key '" + dotted_key + "'");
  try {
    f->set(cfg, text::trim(value));
  } catch (const std::string& msg) {
    throw ConfigError(prefix + "key '" + dotted_key + "': " + msg);
  }
}

inline RunConfig parse_config_text(const std::string& content, const std::string& source = "<config>") {
  RunConfig cfg;
  std::istringstream in(content);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header '" + t + "'");
      section = text::trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const auto& f : detail::fields()) known = known || section == f.section;
      if (!known) throw ConfigError(where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = text::trim(t.substr(0, eq));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' appears before any section");
    apply_override(cfg, section + "." + key, t.substr(eq + 1), where);
  }
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

/// Fully resolved config, one section per block.
inline std::string echo_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : detail::fields()) {
    if (section != f.section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(std::string(f.section) + "." + f.key);
  return keys;
}

}  // namespace geomt
