#pragma once

// Domain-adaptation training: segmentation loss on labelled source crops,
// coordinate (and optionally time) regression on both source and target
// crops, one Adam step on the sum.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "geomt/checkpoint.hpp"
#include "geomt/class_balance.hpp"
#include "geomt/config.hpp"
#include "geomt/data/patch.hpp"
#include "geomt/data/transforms.hpp"
#include "geomt/geo_encoding.hpp"
#include "geomt/metrics.hpp"
#include "geomt/network.hpp"
#include "geomt/optimizer.hpp"
#include "geomt/train_config.hpp"

namespace geomt {

/// Mean squared error over every sample and component.
template <typename T>
double coord_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "coord_loss");
  if (pred.empty()) throw ShapeError("coord_loss on an empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

template <typename T>
Tensor<T> coord_loss_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "coord_loss_grad");
  Tensor<T> g(pred.shape());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
  }
  return g;
}

struct LossReport {
  double l_seg = 0.0;
  double l_coord_source = 0.0;
  double l_coord_target = 0.0;
  double l_time = 0.0;  // TimeMT term (source + target); zero unless enabled
  double total = 0.0;
};

/// Source crops carry labels; target crops never do.
template <typename T>
struct UdaBatch {
  Tensor<T> source_images;
  std::vector<LabelMap> source_labels;
  Tensor<T> source_coords;
  Tensor<T> source_times;
  Tensor<T> target_images;
  Tensor<T> target_coords;
  Tensor<T> target_times;
};

/// HWC images -> NCHW batch.
template <typename T>
Tensor<T> images_to_batch(std::span<const Patch> patches) {
  if (patches.empty()) throw ShapeError("empty batch");
  const std::size_t h = patches[0].image.height, w = patches[0].image.width, b = patches[0].image.bands;
  Tensor<T> out(Shape{patches.size(), b, h, w});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const Image& img = patches[n].image;
    if (img.height != h || img.width != w || img.bands != b) throw ShapeError("batch images differ in shape");
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t k = 0; k < b; ++k) out.at(n, k, r, c) = static_cast<T>(img(r, c, k));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> coords_to_batch(std::span<const Patch> patches, const EncodingConfig& enc, Rng& rng) {
  Tensor<T> out(Shape{patches.size(), static_cast<std::size_t>(enc.dim)});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const auto e = encode_supervision(patches[n].meta.centroid(), enc, rng);
    for (std::size_t j = 0; j < e.values.size(); ++j) out.at(n, j) = static_cast<T>(e.values[j]);
  }
  return out;
}

template <typename T>
Tensor<T> times_to_batch(std::span<const Patch> patches, const TimeEncodingOptions& opts, Rng& rng) {
  Tensor<T> out(Shape{patches.size(), static_cast<std::size_t>(opts.width())});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const auto e = circle_encode_time(patches[n].meta.timestamp(), opts, rng);
    for (std::size_t j = 0; j < e.values.size(); ++j) out.at(n, j) = static_cast<T>(e.values[j]);
  }
  return out;
}

/// Builds the supervision tensors for already cropped/augmented patches.
/// Coordinate noise is drawn afresh on every call.
template <typename T>
UdaBatch<T> make_batch(std::span<const Patch> source, std::span<const Patch> target, const TrainConfig& cfg, Rng& rng) {
  UdaBatch<T> batch;
  batch.source_images = images_to_batch<T>(source);
  for (const auto& p : source) {
    if (!p.label) throw DataError("source patch " + p.meta.patch_id + " has no label");
    batch.source_labels.push_back(*p.label);
  }
  const bool aux = cfg.components.geo_mt || cfg.components.time_mt;
  if (cfg.components.geo_mt) batch.source_coords = coords_to_batch<T>(source, cfg.encoding, rng);
  if (cfg.components.time_mt) batch.source_times = times_to_batch<T>(source, cfg.time_head.encoding(), rng);
  if (aux && !target.empty()) {
    batch.target_images = images_to_batch<T>(target);
    if (cfg.components.geo_mt) batch.target_coords = coords_to_batch<T>(target, cfg.encoding, rng);
    if (cfg.components.time_mt) batch.target_times = times_to_batch<T>(target, cfg.time_head.encoding(), rng);
  }
  return batch;
}

template <typename T>
struct TrainState {
  SegModel<T> model;
  Adam<T> optimizer;
  DcsState dcs;

  TrainState(const TrainConfig& cfg)
      : model(cfg.model_config(), cfg.seed), optimizer(cfg.learning_rate), dcs(DcsState::initial(cfg.num_classes())) {}
};

namespace detail {

inline void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NonFiniteError(std::string("non-finite loss term ") + term);
}

}  // namespace detail

/// One optimisation step. The DCS state absorbs every source image of the
/// batch, in order, before the batch loss is computed with it.
template <typename T>
LossReport train_step(TrainState<T>& state, const UdaBatch<T>& batch, const TrainConfig& cfg) {
  auto& model = state.model;
  const auto& comp = cfg.components;
  model.set_training(true);
  model.zero_grad();

  DcsState weights = DcsState::initial(cfg.num_classes());
  if (comp.dcs) {
    for (const auto& label : batch.source_labels) state.dcs = observe_image(state.dcs, label, cfg.dcs);
    weights = state.dcs;
  }

  LossReport report;
  PassRequest source_req{true, comp.geo_mt, comp.time_mt};
  auto source = model.forward(batch.source_images, source_req);
  report.l_seg = weighted_seg_loss(source.decoder->probs, std::span<const LabelMap>(batch.source_labels), weights, cfg.dcs);
  detail::require_finite(report.l_seg, "l_seg");
  const Tensor<T> dlogits =
      weighted_seg_loss_grad_logits(source.decoder->probs, std::span<const LabelMap>(batch.source_labels), weights, cfg.dcs);
  Tensor<T> dgeo, dtime;
  if (comp.geo_mt) {
    report.l_coord_source = coord_loss(source.geo->out, batch.source_coords);
    detail::require_finite(report.l_coord_source, "l_coord_source");
    dgeo = coord_loss_grad(source.geo->out, batch.source_coords);
  }
  if (comp.time_mt) {
    report.l_time = coord_loss(source.time->out, batch.source_times);
    dtime = coord_loss_grad(source.time->out, batch.source_times);
  }
  model.backward(source, &dlogits, comp.geo_mt ? &dgeo : nullptr, comp.time_mt ? &dtime : nullptr);

  if ((comp.geo_mt || comp.time_mt) && !batch.target_images.empty()) {
    // The target pass normalises with its own batch statistics; unless asked
    // otherwise the running estimates stay those of the source domain.
    std::vector<Tensor<T>> saved;
    auto buffers = model.registry().buffers;
    if (!cfg.target_bn_update) {
      for (const auto& b : buffers) saved.push_back(*b.buffer);
    }
    auto target = model.forward(batch.target_images, PassRequest{false, comp.geo_mt, comp.time_mt});
    if (!cfg.target_bn_update) {
      for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].buffer = std::move(saved[i]);
    }
    if (comp.geo_mt) {
      report.l_coord_target = coord_loss(target.geo->out, batch.target_coords);
      detail::require_finite(report.l_coord_target, "l_coord_target");
      dgeo = coord_loss_grad(target.geo->out, batch.target_coords);
    }
    if (comp.time_mt) {
      report.l_time += coord_loss(target.time->out, batch.target_times);
      dtime = coord_loss_grad(target.time->out, batch.target_times);
    }
    model.backward(target, nullptr, comp.geo_mt ? &dgeo : nullptr, comp.time_mt ? &dtime : nullptr);
  }
  detail::require_finite(report.l_time, "l_time");
  report.total = report.l_seg + report.l_coord_source + report.l_coord_target + report.l_time;

  auto reg = model.registry();
  for (const auto& p : reg.params) {
    if (!p.param->grad.all_finite()) throw NonFiniteError("non-finite gradient for " + p.name);
  }
  state.optimizer.step(reg, [&](const std::string& name) {
    if (!comp.geo_mt && name.rfind("geo_head.", 0) == 0) return false;
    if (!comp.time_mt && name.rfind("time_head.", 0) == 0) return false;
    return true;
  });
  return report;
}

/// Argmax over channels of one image's probabilities.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& probs, std::size_t n) {
  const std::size_t k = probs.dim(1), h = probs.dim(2), w = probs.dim(3), plane = h * w;
  LabelMap out(h, w);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (probs[(n * k + c) * plane + p] > probs[(n * k + best) * plane + p]) best = c;
    }
    out.entries[p] = static_cast<std::int32_t>(best);
  }
  return out;
}

/// Inference on the four quadrants of a patch, reassembled to full size.
template <typename T>
LabelMap predict_four_crop(SegModel<T>& model, const Patch& patch, double gsd_m = kDefaultGsd) {
  const auto quads = four_crop(patch, gsd_m);
  const bool was_training = model.training();
  model.set_training(false);
  const Tensor<T> probs = model.predict_probs(images_to_batch<T>(std::span<const Patch>(quads.data(), quads.size())));
  model.set_training(was_training);
  return reassemble({argmax_labels(probs, 0), argmax_labels(probs, 1), argmax_labels(probs, 2), argmax_labels(probs, 3)});
}

/// Confusion matrix over (C + 1) labels for patches with reference labels;
/// "other" pixels in the reference are skipped.
template <typename T>
ConfusionMatrix confusion_four_crop(SegModel<T>& model, std::span<const Patch> patches, std::span<const LabelMap> refs,
                                    int num_classes, double gsd_m = kDefaultGsd) {
  if (patches.size() != refs.size()) throw ShapeError("one reference label per patch required");
  ConfusionMatrix cm(static_cast<std::size_t>(num_classes + 1));
  for (std::size_t i = 0; i < patches.size(); ++i) {
    cm = accumulate(std::move(cm), predict_four_crop(model, patches[i], gsd_m), refs[i], num_classes);
  }
  return cm;
}

template <typename T>
IouReport evaluate_patches(SegModel<T>& model, std::span<const Patch> patches, std::span<const LabelMap> refs,
                           int num_classes, double gsd_m = kDefaultGsd) {
  return iou(confusion_four_crop(model, patches, refs, num_classes, gsd_m), num_classes);
}

/// Stops once `patience` consecutive epochs fail to improve on the best
/// score (patience 0: the first non-improving epoch stops).
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(double score) {
    if (score > best_) {
      best_ = score;
      wait_ = 0;
      improved_ = true;
      return false;
    }
    improved_ = false;
    ++wait_;
    return wait_ > patience_ || patience_ == 0;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  int patience_;
  int wait_ = 0;
  bool improved_ = false;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  int epoch = 0;
  LossReport mean;  // mean of each term over the epoch's steps
  double val_miou = 0.0;
  std::vector<double> dcs_weights;
};

template <typename T>
struct FitResult {
  std::vector<EpochRecord> history;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_miou = 0.0;
  Checkpoint<T> best;
};

/// Deterministic split of source indices into (train, validation).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_source(std::size_t n, double val_fraction, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n_val == 0 && n > 2) n_val = 1;
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

struct FitHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const LossReport&)> on_step;
};

/// Trains until max_epochs or early stopping on held-out source mIoU.
/// `cfg` must already carry the dataset's class count (set_num_classes).
template <typename T>
FitResult<T> fit(const RunConfig& run, std::span<const Patch> source, std::span<const Patch> target,
                 double gsd_m = kDefaultGsd, const FitHooks& hooks = {}) {
  const TrainConfig& cfg = run.train;
  cfg.validate();
  if (source.size() < 2) throw DataError("need at least two source patches");
  const Rng root(cfg.seed);
  auto [train_idx, val_idx] = split_source(source.size(), cfg.val_fraction, root.split(11));
  if (train_idx.size() < 2) throw DataError("fewer than two source patches left for training");

  // With no held-out split, validation falls back to the training patches.
  std::vector<Patch> val_patches;
  std::vector<LabelMap> val_refs;
  for (auto i : val_idx.empty() ? train_idx : val_idx) {
    val_patches.push_back(source[i]);
    val_refs.push_back(*source[i].label);
  }

  TrainState<T> state(cfg);
  EarlyStopper stopper(cfg.patience);
  FitResult<T> result;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t eff_bs = std::min(bs, train_idx.size());
  const std::size_t steps = std::max<std::size_t>(1, train_idx.size() / eff_bs);
  const auto crop_size = static_cast<std::size_t>(cfg.net.input_size);
  const bool use_target = (cfg.components.geo_mt || cfg.components.time_mt) && !target.empty();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng = root.split(1000 + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<std::size_t> torder(target.size());
    std::iota(torder.begin(), torder.end(), 0);
    std::shuffle(torder.begin(), torder.end(), rng.engine());

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Patch> src, tgt;
      for (std::size_t j = 0; j < eff_bs; ++j) {
        Patch p = random_crop(source[order[s * eff_bs + j]], crop_size, rng, gsd_m);
        src.push_back(cfg.augment ? augment(p, rng) : std::move(p));
      }
      if (use_target) {
        for (std::size_t j = 0; j < eff_bs; ++j) {
          Patch p = random_crop(target[torder[(s * eff_bs + j) % target.size()]], crop_size, rng, gsd_m);
          tgt.push_back(cfg.augment ? augment(p, rng) : std::move(p));
        }
      }
      const auto batch = make_batch<T>(src, tgt, cfg, rng);
      const LossReport r = train_step(state, batch, cfg);
      if (hooks.on_step) hooks.on_step(r);
      rec.mean.l_seg += r.l_seg;
      rec.mean.l_coord_source += r.l_coord_source;
      rec.mean.l_coord_target += r.l_coord_target;
      rec.mean.l_time += r.l_time;
      rec.mean.total += r.total;
    }
    const auto inv = 1.0 / static_cast<double>(steps);
    rec.mean.l_seg *= inv;
    rec.mean.l_coord_source *= inv;
    rec.mean.l_coord_target *= inv;
    rec.mean.l_time *= inv;
    rec.mean.total *= inv;
    rec.dcs_weights = state.dcs.weights;

    rec.val_miou = evaluate_patches(state.model, std::span<const Patch>(val_patches), std::span<const LabelMap>(val_refs),
                                    cfg.num_classes(), gsd_m).miou;

    const bool stop = stopper.update(rec.val_miou);
    if (stopper.improved()) {
      result.best = capture(state.model, state.optimizer, state.dcs, run);
      result.best_epoch = epoch;
      result.best_val_miou = rec.val_miou;
    }
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) break;
  }
  return result;
}

/// history.csv: one row per epoch, one dcs_w<c> column per class.
inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history, int num_classes) {
  out << "epoch,l_seg,l_coord_source,l_coord_target,l_time,total,val_miou";
  for (int c = 0; c < num_classes; ++c) out << ",dcs_w" << c;
  out << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << ',' << buf;
  };
  for (const auto& r : history) {
    out << r.epoch;
    num(r.mean.l_seg);
    num(r.mean.l_coord_source);
    num(r.mean.l_coord_target);
    num(r.mean.l_time);
    num(r.mean.total);
    num(r.val_miou);
    for (int c = 0; c < num_classes; ++c) {
      num(static_cast<std::size_t>(c) < r.dcs_weights.size() ? r.dcs_weights[static_cast<std::size_t>(c)] : 1.0);
    }
    out << '\n';
  }
}

}  // namespace geomt
