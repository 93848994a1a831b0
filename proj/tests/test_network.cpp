#include <gtest/gtest.h>

#include <cmath>

#include "geomt/class_balance.hpp"
#include "geomt/network.hpp"

using namespace geomt;

namespace {

ModelConfig tiny(bool geo, bool time, FeatureSource geo_src = FeatureSource::Encoder) {
  ModelConfig m;
  m.net.in_bands = 3;
  m.net.num_classes = 4;
  m.net.encoder_channels = {4, 6};
  m.net.input_size = 8;
  if (geo) {
    GeoHeadConfig g;
    g.pool_output = 2;
    g.hidden_widths = {6, 5, 5, 4};
    g.out_dim = 8;
    g.feature_source = geo_src;
    m.geo = g;
  }
  if (time) {
    TimeHeadConfig t;
    t.pool_output = 2;
    t.hidden_width = 5;
    t.use_hour = true;
    t.feature_source = FeatureSource::Decoder;
    m.time = t;
  }
  return m;
}

Tensor<double> random_image(std::size_t n, std::size_t b, std::size_t s, Rng& rng) {
  Tensor<double> t(Shape{n, b, s, s});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }
std::size_t double_conv_params(std::size_t in, std::size_t out) {
  return conv_params(in, out, 3) + 2 * out + conv_params(out, out, 3) + 2 * out;
}

}  // namespace

TEST(SegModel, OutputShapesAndProbabilities) {
  Rng rng(1);
  SegModel<double> model(tiny(true, true), 3);
  const auto pass = model.forward(random_image(2, 3, 8, rng), PassRequest{true, true, true});
  ASSERT_TRUE(pass.decoder);
  EXPECT_EQ(pass.decoder->probs.shape(), (Shape{2, 4, 8, 8}));
  EXPECT_EQ(pass.encoder.z().shape(), (Shape{2, 6, 2, 2}));
  EXPECT_EQ(pass.geo->out.shape(), (Shape{2, 8}));
  EXPECT_EQ(pass.time->out.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < 2 * 64; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += pass.decoder->probs[(i / 64 * 4 + c) * 64 + i % 64];
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SegModel, DefaultUNetParameterCount) {
  ModelConfig m;
  m.net.num_classes = 6;
  SegModel<float> model(m, 0);
  const std::vector<std::size_t> w{16, 32, 64, 128};
  std::size_t expected = 0, in = 5;
  for (auto c : w) {
    expected += double_conv_params(in, c);
    in = c;
  }
  std::size_t prev = 128;
  for (std::size_t s = 4; s-- > 0;) {
    expected += double_conv_params(prev + w[s], w[s]);
    prev = w[s];
  }
  expected += conv_params(16, 6, 1);
  EXPECT_EQ(model.parameter_count(), expected);
  EXPECT_LT(model.parameter_count(), 2'000'000u);
}

TEST(SegModel, GeoHeadHasFiveLinearLayers) {
  ModelConfig m;
  m.net.num_classes = 6;
  m.geo = GeoHeadConfig{};
  SegModel<float> model(m, 0);
  EXPECT_EQ(model.geo_head_linear_layers(), 5u);
  Rng rng(2);
  Tensor<float> x(Shape{2, 5, 64, 64});
  for (auto& v : x.storage()) v = static_cast<float>(rng.normal());
  const auto pass = model.forward(x, PassRequest{false, true, false});
  EXPECT_EQ(pass.geo->out.shape(), (Shape{2, 256}));
  EXPECT_FALSE(pass.decoder);  // encoder tap needs no decoder
}

TEST(SegModel, HeadRejectsFeaturesSmallerThanPool) {
  ModelConfig m = tiny(true, false);
  m.geo->pool_output = 4;  // Z is 2x2 for 8x8 inputs
  SegModel<double> model(m, 0);
  Rng rng(3);
  EXPECT_THROW(model.forward(random_image(2, 3, 8, rng), PassRequest{false, true, false}), ShapeError);
}

TEST(SegModel, RejectsBadInputs) {
  SegModel<double> model(tiny(false, false), 0);
  Rng rng(4);
  EXPECT_THROW(model.forward(random_image(1, 2, 8, rng), PassRequest{}), ShapeError);
  EXPECT_THROW(model.forward(random_image(1, 3, 6, rng), PassRequest{}), ShapeError);
  EXPECT_THROW(model.forward(random_image(1, 3, 8, rng), PassRequest{true, true, false}), ConfigError);
}

TEST(SegModel, SameSeedSameWeights) {
  SegModel<double> a(tiny(true, false), 9), b(tiny(true, false), 9), c(tiny(true, false), 10);
  auto ra = a.registry(), rb = b.registry(), rc = c.registry();
  bool differs = false;
  for (std::size_t i = 0; i < ra.params.size(); ++i) {
    EXPECT_EQ(ra.params[i].param->value, rb.params[i].param->value);
    differs = differs || !(ra.params[i].param->value == rc.params[i].param->value);
  }
  EXPECT_TRUE(differs);
}

TEST(SegModel, EvalModeIsBatchIndependent) {
  Rng rng(5);
  SegModel<double> model(tiny(false, false), 1);
  model.set_training(false);
  const auto x = random_image(3, 3, 8, rng);
  const auto all = model.predict_probs(x);
  Tensor<double> one(Shape{1, 3, 8, 8});
  std::copy(x.data() + 2 * 192, x.data() + 3 * 192, one.data());
  const auto single = model.predict_probs(one);
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(single[i], all[2 * single.size() + i], 1e-12);
}

// Loss = weighted CE + MSE(geo) + MSE(time) on a small model; every
// parameter coordinate is checked against central differences.
TEST(SegModel, FullGradientMatchesFiniteDifferences) {
  for (auto src : {FeatureSource::Encoder, FeatureSource::Decoder}) {
    Rng rng(6);
    SegModel<double> model(tiny(true, true, src), 7);
    const auto x = random_image(2, 3, 8, rng);
    std::vector<LabelMap> labels(2, LabelMap(8, 8));
    for (auto& l : labels) {
      for (auto& v : l.entries) v = static_cast<std::int32_t>(rng.uniform_int(0, 3));
    }
    DcsConfig dcs;
    dcs.num_classes = 3;
    dcs.ignore_index = 3;
    const DcsState w{{0.8, 1.3, 0.9}, 1};
    Tensor<double> geo_t(Shape{2, 8}), time_t(Shape{2, 4});
    for (auto& v : geo_t.storage()) v = rng.uniform(-1, 1);
    for (auto& v : time_t.storage()) v = rng.uniform(-1, 1);
    const PassRequest req{true, true, true};

    auto loss = [&] {
      const auto p = model.forward(x, req);
      double l = weighted_seg_loss(p.decoder->probs, std::span<const LabelMap>(labels), w, dcs);
      for (std::size_t i = 0; i < geo_t.size(); ++i) l += std::pow(p.geo->out[i] - geo_t[i], 2) / geo_t.size();
      for (std::size_t i = 0; i < time_t.size(); ++i) l += std::pow(p.time->out[i] - time_t[i], 2) / time_t.size();
      return l;
    };

    model.zero_grad();
    const auto pass = model.forward(x, req);
    const auto dlogits = weighted_seg_loss_grad_logits(pass.decoder->probs, std::span<const LabelMap>(labels), w, dcs);
    Tensor<double> dgeo(geo_t.shape()), dtime(time_t.shape());
    for (std::size_t i = 0; i < geo_t.size(); ++i) dgeo[i] = 2.0 * (pass.geo->out[i] - geo_t[i]) / geo_t.size();
    for (std::size_t i = 0; i < time_t.size(); ++i) dtime[i] = 2.0 * (pass.time->out[i] - time_t[i]) / time_t.size();
    model.backward(pass, &dlogits, &dgeo, &dtime);

    const double h = 1e-6;
    std::size_t checked = 0;
    for (auto& np : model.registry().params) {
      auto& p = *np.param;
      for (std::size_t i = 0; i < p.value.size(); i += 1 + p.value.size() / 12) {
        const double keep = p.value[i];
        p.value[i] = keep + h;
        const double up = loss();
        p.value[i] = keep - h;
        const double down = loss();
        p.value[i] = keep;
        const double fd = (up - down) / (2 * h);
        ASSERT_NEAR(p.grad[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << np.name << "[" << i << "]";
        ++checked;
      }
    }
    EXPECT_GT(checked, 100u);
  }
}

TEST(SegModel, ZeroGradClears) {
  Rng rng(8);
  SegModel<double> model(tiny(false, false), 1);
  const auto pass = model.forward(random_image(2, 3, 8, rng), PassRequest{});
  Tensor<double> d(pass.decoder->logits.shape(), 0.1);
  model.backward(pass, &d, nullptr, nullptr);
  model.zero_grad();
  for (auto& p : model.registry().params) {
    for (double g : p.param->grad.storage()) ASSERT_EQ(g, 0.0);
  }
}

TEST(FeatureSourceNames, RoundTrip) {
  EXPECT_EQ(to_string(FeatureSource::Encoder), "encoder");
  EXPECT_EQ(feature_source_from_string("decoder"), FeatureSource::Decoder);
  EXPECT_THROW(feature_source_from_string("middle"), ConfigError);
}
