#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "geomt/nn/parameter.hpp"
#include "geomt/tensor.hpp"

namespace geomt {

/// Adam with bias correction. Moment buffers are keyed by parameter name.
template <typename T>
class Adam {
 public:
  struct Moments {
    Tensor<T> m, v;
  };

  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  long steps() const { return step_; }
  void set_steps(long s) { step_ = s; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  /// Updates every parameter accepted by `active` (all when empty).
  void step(const nn::Registry<T>& reg, const std::function<bool(const std::string&)>& active = {}) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (const auto& np : reg.params) {
      if (active && !active(np.name)) continue;
      auto& p = *np.param;
      auto it = moments_.find(np.name);
      if (it == moments_.end()) {
        it = moments_.emplace(np.name, Moments{Tensor<T>(p.value.shape()), Tensor<T>(p.value.shape())}).first;
      }
      auto& mo = it->second;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double m = beta1_ * static_cast<double>(mo.m[i]) + (1.0 - beta1_) * g;
        const double v = beta2_ * static_cast<double>(mo.v[i]) + (1.0 - beta2_) * g * g;
        mo.m[i] = static_cast<T>(m);
        mo.v[i] = static_cast<T>(v);
        const double delta = lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - delta);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace geomt
