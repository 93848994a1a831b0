#pragma once

// Dynamic class sampling: per-image class frequencies, temperature-softmax
// weights, their exponential average, and the weighted cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "geomt/error.hpp"
#include "geomt/label_map.hpp"
#include "geomt/tensor.hpp"

namespace geomt {

inline constexpr double kLogFloor = 1e-12;

struct DcsConfig {
  int num_classes = 12;     // C: evaluable classes
  double temperature = 0.9;
  double decay = 0.7;
  int ignore_index = 12;    // usually C, the "other" class

  friend bool operator==(const DcsConfig&, const DcsConfig&) = default;

  void validate() const {
    if (num_classes <= 0) throw ConfigError("dcs num_classes must be positive");
    if (!(temperature > 0.0)) throw ConfigError("dcs temperature must be > 0");
    if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("dcs decay must lie in [0, 1]");
  }

  bool counted(std::int32_t label) const {
    return label != ignore_index && label >= 0 && label < num_classes;
  }
};

struct ClassFrequency {
  std::vector<double> values;
};

struct DcsState {
  std::vector<double> weights;
  long step = 0;

  static DcsState initial(int num_classes) {
    return {std::vector<double>(static_cast<std::size_t>(num_classes), 1.0), 0};
  }

  friend bool operator==(const DcsState&, const DcsState&) = default;
};

inline void validate_labels(const LabelMap& label, const DcsConfig& cfg) {
  for (std::int32_t v : label.entries) {
    if (v == cfg.ignore_index) continue;
    if (v < 0 || v > cfg.num_classes) {
      throw DataError("label value " + std::to_string(v) + " outside [0, " +
                      std::to_string(cfg.num_classes) + "]");
    }
  }
}

/// Number of pixels that take part in the loss.
inline std::size_t counted_pixels(const LabelMap& label, const DcsConfig& cfg) {
  return static_cast<std::size_t>(std::count_if(
      label.entries.begin(), label.entries.end(), [&](std::int32_t v) { return cfg.counted(v); }));
}

/// Per-class pixel fraction over non-ignored pixels; uniform 1/C when every
/// pixel is ignored.
inline ClassFrequency label_frequency(const LabelMap& label, const DcsConfig& cfg) {
  cfg.validate();
  validate_labels(label, cfg);
  const auto classes = static_cast<std::size_t>(cfg.num_classes);
  std::vector<std::size_t> counts(classes, 0);
  std::size_t total = 0;
  for (std::int32_t v : label.entries) {
    if (!cfg.counted(v)) continue;
    ++counts[static_cast<std::size_t>(v)];
    ++total;
  }
  ClassFrequency freq;
  freq.values.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    freq.values[c] = total == 0 ? 1.0 / static_cast<double>(classes)
                                : static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  return freq;
}

/// w_c = C exp((1 - f_c)/t) / sum_c' exp((1 - f_c')/t). Sums to C.
inline std::vector<double> instantaneous_weights(const ClassFrequency& freq,
                                                 const DcsConfig& cfg) {
  cfg.validate();
  if (freq.values.size() != static_cast<std::size_t>(cfg.num_classes)) {
    throw ShapeError("frequency vector has " + std::to_string(freq.values.size()) +
                     " entries, expected " + std::to_string(cfg.num_classes));
  }
  std::vector<double> logits(freq.values.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    logits[c] = (1.0 - freq.values[c]) / cfg.temperature;
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& l : logits) {
    l = std::exp(l - peak);
    denom += l;
  }
  const double scale = static_cast<double>(cfg.num_classes) / denom;
  for (double& l : logits) l *= scale;
  return logits;
}

/// One exponential-average step: alpha * old + (1 - alpha) * w.
inline DcsState update(const DcsState& state, std::span<const double> w, const DcsConfig& cfg) {
  cfg.validate();
  if (w.size() != state.weights.size()) {
    throw ShapeError("dcs update: weight vector length " + std::to_string(w.size()) +
                     " vs state length " + std::to_string(state.weights.size()));
  }
  DcsState next = state;
  for (std::size_t c = 0; c < w.size(); ++c) {
    next.weights[c] = cfg.decay * state.weights[c] + (1.0 - cfg.decay) * w[c];
  }
  ++next.step;
  return next;
}

/// Feeds one source image into the running state. An all-ignored map leaves
/// the state untouched.
inline DcsState observe_image(const DcsState& state, const LabelMap& label, const DcsConfig& cfg) {
  if (counted_pixels(label, cfg) == 0) return state;
  const auto w = instantaneous_weights(label_frequency(label, cfg), cfg);
  return update(state, w, cfg);
}

namespace detail {

template <typename T>
void check_probs(const Tensor<T>& probs, std::span<const LabelMap> labels, const DcsConfig& cfg) {
  if (probs.rank() != 4) throw ShapeError("probabilities must be NCHW");
  const std::size_t n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  if (labels.size() != n) {
    throw ShapeError("got " + std::to_string(labels.size()) + " label maps for a batch of " +
                     std::to_string(n));
  }
  if (k < static_cast<std::size_t>(cfg.num_classes)) {
    throw ShapeError("probability map has fewer channels than classes");
  }
  for (const auto& label : labels) {
    if (label.height != h || label.width != w) {
      throw ShapeError("label map " + std::to_string(label.height) + "x" +
                       std::to_string(label.width) + " vs probabilities " + std::to_string(h) +
                       "x" + std::to_string(w));
    }
    validate_labels(label, cfg);
  }
  const std::size_t plane = h * w;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += static_cast<double>(probs[(b * k + c) * plane + p]);
      if (std::abs(sum - 1.0) > 1e-6) {
        throw ShapeError("probabilities at pixel " + std::to_string(p) + " of image " +
                         std::to_string(b) + " sum to " + std::to_string(sum));
      }
    }
  }
}

}  // namespace detail

/// Weighted cross-entropy over a batch of softmax outputs (NCHW), averaged
/// over every non-ignored pixel in the batch. Zero when nothing is counted.
template <typename T>
double weighted_seg_loss(const Tensor<T>& probs, std::span<const LabelMap> labels,
                         const DcsState& state, const DcsConfig& cfg) {
  cfg.validate();
  detail::check_probs(probs, labels, cfg);
  if (state.weights.size() != static_cast<std::size_t>(cfg.num_classes)) {
    throw ShapeError("dcs state size does not match num_classes");
  }
  const std::size_t k = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t c = labels[b].entries[p];
      if (!cfg.counted(c)) continue;
      const double prob = static_cast<double>(probs[(b * k + static_cast<std::size_t>(c)) * plane + p]);
      sum -= state.weights[static_cast<std::size_t>(c)] * std::log(std::max(prob, kLogFloor));
      ++counted;
    }
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

template <typename T>
double weighted_seg_loss(const Tensor<T>& probs, const LabelMap& label, const DcsState& state,
                         const DcsConfig& cfg) {
  return weighted_seg_loss(probs, std::span<const LabelMap>(&label, 1), state, cfg);
}

/// Gradient of weighted_seg_loss with respect to the pre-softmax logits:
/// w_c (p - onehot) / counted at counted pixels, exactly zero elsewhere.
template <typename T>
Tensor<T> weighted_seg_loss_grad_logits(const Tensor<T>& probs, std::span<const LabelMap> labels,
                                        const DcsState& state, const DcsConfig& cfg) {
  detail::check_probs(probs, labels, cfg);
  const std::size_t k = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  Tensor<T> grad(probs.shape());
  std::size_t counted = 0;
  for (const auto& label : labels) counted += counted_pixels(label, cfg);
  if (counted == 0) return grad;
  const double inv = 1.0 / static_cast<double>(counted);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t c = labels[b].entries[p];
      if (!cfg.counted(c)) continue;
      const double scale = state.weights[static_cast<std::size_t>(c)] * inv;
      for (std::size_t j = 0; j < k; ++j) {
        const double target = j == static_cast<std::size_t>(c) ? 1.0 : 0.0;
        grad[(b * k + j) * plane + p] =
            static_cast<T>(scale * (static_cast<double>(probs[(b * k + j) * plane + p]) - target));
      }
    }
  }
  return grad;
}

}  // namespace geomt
