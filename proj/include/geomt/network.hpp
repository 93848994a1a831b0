#pragma once

// U-Net style segmentation network with auxiliary regression heads that read
// either the encoder bottleneck or the last decoder feature map.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geomt/error.hpp"
#include "geomt/geo_encoding.hpp"
#include "geomt/nn/layers.hpp"
#include "geomt/nn/parameter.hpp"
#include "geomt/rng.hpp"
#include "geomt/tensor.hpp"

namespace geomt {

enum class FeatureSource { Encoder, Decoder };

inline std::string to_string(FeatureSource s) { return s == FeatureSource::Encoder ? "encoder" : "decoder"; }

inline FeatureSource feature_source_from_string(const std::string& s) {
  if (s == "encoder") return FeatureSource::Encoder;
  if (s == "decoder") return FeatureSource::Decoder;
  throw ConfigError("feature source must be 'encoder' or 'decoder', got '" + s + "'");
}

struct SegNetConfig {
  int in_bands = 5;
  int num_classes = 13;  // C + 1, the last index being "other"
  std::vector<int> encoder_channels{16, 32, 64, 128};
  int input_size = 64;

  int stages() const { return static_cast<int>(encoder_channels.size()); }

  void validate() const {
    if (in_bands <= 0) throw ConfigError("in_bands must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (encoder_channels.empty()) throw ConfigError("encoder_channels must not be empty");
    for (int w : encoder_channels) {
      if (w <= 0) throw ConfigError("encoder channel widths must be positive");
    }
    if (input_size <= 0 || input_size % (1 << stages()) != 0) {
      throw ConfigError("input_size " + std::to_string(input_size) + " must be divisible by 2^" +
                        std::to_string(stages()));
    }
  }

  friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};

struct GeoHeadConfig {
  int pool_output = 4;
  std::vector<int> hidden_widths{512, 512, 384, 320};
  int out_dim = 256;
  FeatureSource feature_source = FeatureSource::Encoder;

  void validate() const {
    if (pool_output <= 0) throw ConfigError("geo head pool_output must be positive");
    if (hidden_widths.size() != 4) throw ConfigError("geo head needs exactly 4 hidden widths (5 linear layers)");
    for (int w : hidden_widths) {
      if (w <= 0) throw ConfigError("geo head widths must be positive");
    }
    if (out_dim <= 0) throw ConfigError("geo head out_dim must be positive");
  }

  friend bool operator==(const GeoHeadConfig&, const GeoHeadConfig&) = default;
};

struct TimeHeadConfig {
  bool use_month = true;
  bool use_hour = false;
  bool noise = false;
  int pool_output = 4;
  int hidden_width = 128;
  FeatureSource feature_source = FeatureSource::Encoder;

  TimeEncodingOptions encoding() const { return {use_month, use_hour, noise}; }
  int out_dim() const { return encoding().width(); }

  void validate() const {
    if (!use_month && !use_hour) throw ConfigError("time head needs month and/or hour enabled");
    if (pool_output <= 0 || hidden_width <= 0) throw ConfigError("time head sizes must be positive");
  }

  friend bool operator==(const TimeHeadConfig&, const TimeHeadConfig&) = default;
};

struct ModelConfig {
  SegNetConfig net;
  std::optional<GeoHeadConfig> geo;
  std::optional<TimeHeadConfig> time;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace nn {

template <typename T>
struct ConvUnitTrace {
  BatchNormTrace<T> bn;
  Tensor<T> out;
};

/// 3x3 conv -> batch norm -> ReLU.
template <typename T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(std::size_t in, std::size_t out) : conv_(in, out, 3), bn_(out) {}

  void init(Rng& rng) {
    conv_.init(rng);
    bn_.init();
  }
  void collect(const std::string& prefix, Registry<T>& reg) {
    conv_.collect(prefix + ".conv", reg);
    bn_.collect(prefix + ".bn", reg);
  }

  const Tensor<T>& forward(const Tensor<T>& x, bool training, ConvUnitTrace<T>& trace) {
    trace.out = relu(bn_.forward(conv_.forward(x), training, trace.bn));
    return trace.out;
  }

  Tensor<T> backward(const Tensor<T>& x, const ConvUnitTrace<T>& trace, const Tensor<T>& dy,
                     bool want_dx = true) {
    return conv_.backward(x, bn_.backward(trace.bn, relu_backward(trace.out, dy)), want_dx);
  }

 private:
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
};

template <typename T>
struct DoubleConvTrace {
  ConvUnitTrace<T> first, second;
  const Tensor<T>& out() const { return second.out; }
};

template <typename T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(std::size_t in, std::size_t out) : first_(in, out), second_(out, out) {}

  void init(Rng& rng) {
    first_.init(rng);
    second_.init(rng);
  }
  void collect(const std::string& prefix, Registry<T>& reg) {
    first_.collect(prefix + ".0", reg);
    second_.collect(prefix + ".1", reg);
  }

  const Tensor<T>& forward(const Tensor<T>& x, bool training, DoubleConvTrace<T>& trace) {
    first_.forward(x, training, trace.first);
    return second_.forward(trace.first.out, training, trace.second);
  }

  Tensor<T> backward(const Tensor<T>& x, const DoubleConvTrace<T>& trace, const Tensor<T>& dy,
                     bool want_dx = true) {
    return first_.backward(x, trace.first, second_.backward(trace.first.out, trace.second, dy), want_dx);
  }

 private:
  ConvUnit<T> first_, second_;
};

template <typename T>
struct HeadTrace {
  PoolTrace pool;
  std::vector<Tensor<T>> inputs;  // input of each linear layer
  std::vector<BatchNormTrace<T>> bn;
  std::vector<Tensor<T>> hidden;  // ReLU outputs
  Tensor<T> out;
};

/// Adaptive max-pool, flatten, then linear layers; every layer but the last
/// is followed by batch norm and ReLU.
template <typename T>
class PooledMlpHead {
 public:
  PooledMlpHead() = default;
  PooledMlpHead(std::size_t in_channels, std::size_t pool, const std::vector<int>& hidden,
                std::size_t out_dim)
      : pool_(pool) {
    std::size_t width = in_channels * pool * pool;
    for (int h : hidden) {
      linears_.emplace_back(width, static_cast<std::size_t>(h));
      norms_.emplace_back(static_cast<std::size_t>(h));
      width = static_cast<std::size_t>(h);
    }
    linears_.emplace_back(width, out_dim);
  }

  std::size_t pool_output() const { return pool_; }
  std::size_t linear_layers() const { return linears_.size(); }
  std::size_t out_dim() const { return linears_.back().out_features(); }

  void init(Rng& rng) {
    for (auto& l : linears_) l.init(rng);
    for (auto& b : norms_) b.init();
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      linears_[i].collect(prefix + ".fc" + std::to_string(i), reg);
      if (i < norms_.size()) norms_[i].collect(prefix + ".bn" + std::to_string(i), reg);
    }
  }

  const Tensor<T>& forward(const Tensor<T>& features, bool training, HeadTrace<T>& trace) {
    if (features.rank() != 4 || features.dim(2) < pool_ || features.dim(3) < pool_) {
      throw ShapeError("head input " + shape_string(features.shape()) + " is smaller than pool output " +
                       std::to_string(pool_) + "x" + std::to_string(pool_));
    }
    Tensor<T> x = max_pool(features, pool_, pool_, trace.pool);
    x.reshape(Shape{x.dim(0), x.size() / x.dim(0)});
    trace.inputs.clear();
    trace.hidden.clear();
    trace.bn.assign(norms_.size(), {});
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      trace.inputs.push_back(std::move(x));
      Tensor<T> y = linears_[i].forward(trace.inputs.back());
      if (i < norms_.size()) {
        trace.hidden.push_back(relu(norms_[i].forward(y, training, trace.bn[i])));
        x = trace.hidden.back();
      } else {
        trace.out = std::move(y);
      }
    }
    return trace.out;
  }

  Tensor<T> backward(const HeadTrace<T>& trace, const Tensor<T>& dout) {
    Tensor<T> d = dout;
    for (std::size_t i = linears_.size(); i-- > 0;) {
      if (i < norms_.size()) d = norms_[i].backward(trace.bn[i], relu_backward(trace.hidden[i], d));
      d = linears_[i].backward(trace.inputs[i], d);
    }
    const Shape& in = trace.pool.input_shape;
    d.reshape(Shape{in[0], in[1], pool_, pool_});
    return max_pool_backward(trace.pool, d);
  }

 private:
  std::size_t pool_ = 1;
  std::vector<Linear<T>> linears_;
  std::vector<BatchNorm<T>> norms_;
};

}  // namespace nn

template <typename T>
struct EncoderTrace {
  Tensor<T> input;
  std::vector<nn::DoubleConvTrace<T>> blocks;  // block outputs are the skips
  std::vector<nn::PoolTrace> pools;
  std::vector<Tensor<T>> pooled;               // pooled.back() is Z

  const Tensor<T>& z() const { return pooled.back(); }
  const Tensor<T>& skip(std::size_t s) const { return blocks[s].out(); }
};

template <typename T>
struct DecoderTrace {
  std::vector<Tensor<T>> concat;               // indexed by stage
  std::vector<nn::DoubleConvTrace<T>> blocks;  // indexed by stage
  Tensor<T> logits;
  Tensor<T> probs;

  const Tensor<T>& features() const { return blocks.front().out(); }
};

/// Traces of one forward pass through the network and any heads.
template <typename T>
struct ForwardPass {
  EncoderTrace<T> encoder;
  std::optional<DecoderTrace<T>> decoder;
  std::optional<nn::HeadTrace<T>> geo;
  std::optional<nn::HeadTrace<T>> time;
};

struct PassRequest {
  bool segmentation = true;
  bool geo = false;
  bool time = false;
};

template <typename T>
class SegModel {
 public:
  SegModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.net.validate();
    const auto& widths = cfg_.net.encoder_channels;
    const std::size_t stages = widths.size();
    std::size_t in = static_cast<std::size_t>(cfg_.net.in_bands);
    for (std::size_t s = 0; s < stages; ++s) {
      enc_.emplace_back(in, static_cast<std::size_t>(widths[s]));
      in = static_cast<std::size_t>(widths[s]);
    }
    dec_.resize(stages);
    std::size_t prev = in;
    for (std::size_t s = stages; s-- > 0;) {
      const auto w = static_cast<std::size_t>(widths[s]);
      dec_[s] = nn::DoubleConv<T>(prev + w, w);
      prev = w;
    }
    out_ = nn::Conv2d<T>(static_cast<std::size_t>(widths[0]),
                         static_cast<std::size_t>(cfg_.net.num_classes), 1);
    if (cfg_.geo) {
      cfg_.geo->validate();
      geo_.emplace(tap_channels(cfg_.geo->feature_source), static_cast<std::size_t>(cfg_.geo->pool_output),
                   cfg_.geo->hidden_widths, static_cast<std::size_t>(cfg_.geo->out_dim));
    }
    if (cfg_.time) {
      cfg_.time->validate();
      time_.emplace(tap_channels(cfg_.time->feature_source), static_cast<std::size_t>(cfg_.time->pool_output),
                    std::vector<int>{cfg_.time->hidden_width}, static_cast<std::size_t>(cfg_.time->out_dim()));
    }
    Rng rng(seed);
    for (auto& b : enc_) b.init(rng);
    for (auto& b : dec_) b.init(rng);
    out_.init(rng);
    if (geo_) geo_->init(rng);
    if (time_) time_->init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  bool has_geo_head() const { return geo_.has_value(); }
  bool has_time_head() const { return time_.has_value(); }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  /// Parameters and buffers keyed by layer path. Pointers stay valid until
  /// the model is moved or copied.
  nn::Registry<T> registry() {
    nn::Registry<T> reg;
    for (std::size_t s = 0; s < enc_.size(); ++s) enc_[s].collect("encoder." + std::to_string(s), reg);
    for (std::size_t s = 0; s < dec_.size(); ++s) dec_[s].collect("decoder." + std::to_string(s), reg);
    out_.collect("decoder.out", reg);
    if (geo_) geo_->collect("geo_head", reg);
    if (time_) time_->collect("time_head", reg);
    return reg;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : registry().params) n += p.param->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : registry().params) p.param->grad.zero();
  }

  EncoderTrace<T> encode(const Tensor<T>& image) {
    check_image(image);
    EncoderTrace<T> trace;
    trace.input = image;
    trace.blocks.resize(enc_.size());
    trace.pools.resize(enc_.size());
    const Tensor<T>* x = &trace.input;
    for (std::size_t s = 0; s < enc_.size(); ++s) {
      const Tensor<T>& y = enc_[s].forward(*x, training_, trace.blocks[s]);
      trace.pooled.push_back(nn::max_pool(y, y.dim(2) / 2, y.dim(3) / 2, trace.pools[s]));
      x = &trace.pooled.back();
    }
    return trace;
  }

  DecoderTrace<T> decode(const EncoderTrace<T>& enc) {
    DecoderTrace<T> trace;
    trace.concat.resize(dec_.size());
    trace.blocks.resize(dec_.size());
    const Tensor<T>* prev = &enc.z();
    for (std::size_t s = dec_.size(); s-- > 0;) {
      trace.concat[s] = nn::concat_channels(nn::upsample2x(*prev), enc.skip(s));
      prev = &dec_[s].forward(trace.concat[s], training_, trace.blocks[s]);
    }
    trace.logits = out_.forward(*prev);
    trace.probs = nn::softmax_channels(trace.logits);
    return trace;
  }

  ForwardPass<T> forward(const Tensor<T>& image, PassRequest req) {
    if (req.geo && !geo_) throw ConfigError("model has no geo head");
    if (req.time && !time_) throw ConfigError("model has no time head");
    ForwardPass<T> pass;
    pass.encoder = encode(image);
    const bool need_decoder = req.segmentation ||
                              (req.geo && cfg_.geo->feature_source == FeatureSource::Decoder) ||
                              (req.time && cfg_.time->feature_source == FeatureSource::Decoder);
    if (need_decoder) pass.decoder = decode(pass.encoder);
    if (req.geo) {
      pass.geo.emplace();
      geo_->forward(tap(pass, cfg_.geo->feature_source), training_, *pass.geo);
    }
    if (req.time) {
      pass.time.emplace();
      time_->forward(tap(pass, cfg_.time->feature_source), training_, *pass.time);
    }
    return pass;
  }

  /// Accumulates parameter gradients for the given output gradients. Null
  /// pointers mean the corresponding output does not enter the loss.
  void backward(const ForwardPass<T>& pass, const Tensor<T>* dlogits, const Tensor<T>* dgeo,
                const Tensor<T>* dtime) {
    const std::size_t stages = enc_.size();
    const Tensor<T>& z = pass.encoder.z();
    Tensor<T> dz(z.shape());
    Tensor<T> dfeat;
    auto route = [&](const Tensor<T>& dtap, FeatureSource source) {
      if (source == FeatureSource::Encoder) {
        dz += dtap;
      } else if (dfeat.empty()) {
        dfeat = dtap;
      } else {
        dfeat += dtap;
      }
    };
    if (dgeo) {
      if (!pass.geo) throw ShapeError("geo gradient without geo forward");
      route(geo_->backward(*pass.geo, *dgeo), cfg_.geo->feature_source);
    }
    if (dtime) {
      if (!pass.time) throw ShapeError("time gradient without time forward");
      route(time_->backward(*pass.time, *dtime), cfg_.time->feature_source);
    }

    std::vector<Tensor<T>> dskip(stages);
    if (dlogits || !dfeat.empty()) {
      if (!pass.decoder) throw ShapeError("decoder gradient without decoder forward");
      const auto& dec = *pass.decoder;
      Tensor<T> d;
      if (dlogits) {
        d = out_.backward(dec.features(), *dlogits);
        if (!dfeat.empty()) d += dfeat;
      } else {
        d = std::move(dfeat);
      }
      for (std::size_t s = 0; s < stages; ++s) {
        Tensor<T> dcat = dec_[s].backward(dec.concat[s], dec.blocks[s], d);
        const std::size_t up_channels = dcat.dim(1) - pass.encoder.skip(s).dim(1);
        auto [dup, ds] = nn::split_channels(dcat, up_channels);
        dskip[s] = std::move(ds);
        d = nn::upsample2x_backward(dup);
      }
      dz += d;
    }

    Tensor<T> d = std::move(dz);
    for (std::size_t s = stages; s-- > 0;) {
      Tensor<T> dblock = nn::max_pool_backward(pass.encoder.pools[s], d);
      if (!dskip[s].empty()) dblock += dskip[s];
      const Tensor<T>& input = s == 0 ? pass.encoder.input : pass.encoder.pooled[s - 1];
      d = enc_[s].backward(input, pass.encoder.blocks[s], dblock, s != 0);
    }
  }

  /// Softmax output for a batch; no traces are kept beyond the call.
  Tensor<T> predict_probs(const Tensor<T>& image) {
    return decode(encode(image)).probs;
  }

  Tensor<T> geo_head_forward(const Tensor<T>& features) {
    if (!geo_) throw ConfigError("model has no geo head");
    nn::HeadTrace<T> trace;
    return geo_->forward(features, training_, trace);
  }

  Tensor<T> time_head_forward(const Tensor<T>& features) {
    if (!time_) throw ConfigError("model has no time head");
    nn::HeadTrace<T> trace;
    return time_->forward(features, training_, trace);
  }

  std::size_t geo_head_linear_layers() const { return geo_ ? geo_->linear_layers() : 0; }

 private:
  std::size_t tap_channels(FeatureSource source) const {
    return static_cast<std::size_t>(source == FeatureSource::Encoder ? cfg_.net.encoder_channels.back()
                                                                     : cfg_.net.encoder_channels.front());
  }

  static const Tensor<T>& tap(const ForwardPass<T>& pass, FeatureSource source) {
    return source == FeatureSource::Encoder ? pass.encoder.z() : pass.decoder->features();
  }

  void check_image(const Tensor<T>& image) const {
    const auto divisor = static_cast<std::size_t>(1) << enc_.size();
    if (image.rank() != 4 || image.dim(1) != static_cast<std::size_t>(cfg_.net.in_bands) ||
        image.dim(2) % divisor != 0 || image.dim(3) % divisor != 0 || image.dim(2) == 0) {
      throw ShapeError("image batch " + shape_string(image.shape()) + " does not match " +
                       std::to_string(cfg_.net.in_bands) + " bands with sides divisible by " +
                       std::to_string(divisor));
    }
  }

  ModelConfig cfg_;
  std::vector<nn::DoubleConv<T>> enc_;
  std::vector<nn::DoubleConv<T>> dec_;
  nn::Conv2d<T> out_;
  std::optional<nn::PooledMlpHead<T>> geo_;
  std::optional<nn::PooledMlpHead<T>> time_;
  bool training_ = true;
};

}  // namespace geomt
