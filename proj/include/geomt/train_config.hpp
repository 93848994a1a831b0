#pragma once

#include <cstdint>

#include "geomt/class_balance.hpp"
#include "geomt/error.hpp"
#include "geomt/geo_encoding.hpp"
#include "geomt/network.hpp"

namespace geomt {

struct ComponentFlags {
  bool geo_mt = true;
  bool dcs = true;
  bool time_mt = false;

  friend bool operator==(const ComponentFlags&, const ComponentFlags&) = default;
};

struct TrainConfig {
  int batch_size = 16;
  int max_epochs = 120;
  double learning_rate = 1e-4;
  int patience = 30;
  double val_fraction = 0.1;  // held-out share of source patches for early stopping
  bool augment = true;
  bool target_bn_update = false;  // let the unlabelled target pass move BN running statistics
  std::uint64_t seed = 0;
  DcsConfig dcs;               // num_classes / ignore_index are set from the data
  EncodingConfig encoding;
  SegNetConfig net;            // num_classes is set from the data
  GeoHeadConfig geo_head;      // out_dim follows encoding.dim
  TimeHeadConfig time_head;
  ComponentFlags components;

  /// Evaluable classes C; the network predicts C + 1 (with "other").
  void set_num_classes(int classes) {
    net.num_classes = classes + 1;
    dcs.num_classes = classes;
    dcs.ignore_index = classes;
  }
  int num_classes() const { return dcs.num_classes; }

  ModelConfig model_config() const {
    ModelConfig m;
    m.net = net;
    if (components.geo_mt) {
      m.geo = geo_head;
      m.geo->out_dim = encoding.dim;
    }
    if (components.time_mt) m.time = time_head;
    return m;
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
    if (max_epochs <= 0) throw ConfigError("train.max_epochs must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (patience < 0) throw ConfigError("train.patience must be >= 0");
    if (patience > max_epochs) throw ConfigError("train.patience must not exceed train.max_epochs");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must be in [0, 1)");
    dcs.validate();
    encoding.validate();
    net.validate();
    if (components.geo_mt) geo_head.validate();
    if (components.time_mt) time_head.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace geomt
