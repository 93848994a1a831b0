#pragma once

// Layers with explicit forward/backward passes. Forward results that the
// backward pass needs are returned in small trace structs owned by the
// caller, so the same layer can run several forwards before one backward.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "geomt/error.hpp"
#include "geomt/nn/parameter.hpp"
#include "geomt/tensor.hpp"

namespace geomt::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

// [C,H,W] -> [C*k*k, H*W], zero padding k/2, stride 1.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            T* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x + c * plane;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols + ((c * k + ky) * k + kx) * plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t r = 0; r < h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + dy;
          T* row = dst + r * w;
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sr) * w;
          const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dx);
          std::fill(row, row + c0, T(0));
          std::copy(srow + c0 + dx, srow + c1 + dx, row + c0);
          std::fill(row + c1, row + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            T* x) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = x + c * plane;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = cols + ((c * k + ky) * k + kx) * plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t r = 0; r < h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + dy;
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) continue;
          T* drow = dst + static_cast<std::size_t>(sr) * w;
          const T* row = src + r * w;
          const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dx);
          for (std::ptrdiff_t cc = c0; cc < c1; ++cc) drow[cc + dx] += row[cc];
        }
      }
    }
  }
}

}  // namespace detail

/// Square-kernel convolution, stride 1, "same" zero padding.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
      : in_(in_channels), out_(out_channels), k_(kernel),
        weight_(Shape{out_channels, in_channels * kernel * kernel}), bias_(Shape{out_channels}) {
    if (kernel % 2 == 0) throw ConfigError("convolution kernel must be odd");
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  void init(Rng& rng) {
    kaiming_init(weight_.value, in_ * k_ * k_, rng);
    bias_.value.zero();
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.add(prefix + ".weight", weight_);
    reg.add(prefix + ".bias", bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    check_input(x);
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
    Tensor<T> y(Shape{n, out_, h, w});
    AlignedVector<T> cols(k_ == 1 ? 0 : in_ * k_ * k_ * plane);
    ConstMatMap<T> wmat(weight_.value.data(), static_cast<Eigen::Index>(out_),
                        static_cast<Eigen::Index>(in_ * k_ * k_));
    for (std::size_t b = 0; b < n; ++b) {
      const T* xb = x.data() + b * in_ * plane;
      const T* colp = xb;
      if (k_ != 1) {
        detail::im2col(xb, in_, h, w, k_, cols.data());
        colp = cols.data();
      }
      ConstMatMap<T> cmat(colp, static_cast<Eigen::Index>(in_ * k_ * k_),
                          static_cast<Eigen::Index>(plane));
      MatMap<T> ymat(y.data() + b * out_ * plane, static_cast<Eigen::Index>(out_),
                     static_cast<Eigen::Index>(plane));
      ymat.noalias() = wmat * cmat;
      for (std::size_t o = 0; o < out_; ++o) ymat.row(static_cast<Eigen::Index>(o)).array() += bias_.value[o];
    }
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx when want_dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool want_dx = true) {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
    const std::size_t kk = in_ * k_ * k_;
    Tensor<T> dx;
    if (want_dx) dx = Tensor<T>(x.shape());
    AlignedVector<T> cols(k_ == 1 ? 0 : kk * plane);
    AlignedVector<T> dcols(k_ == 1 || !want_dx ? 0 : kk * plane);
    ConstMatMap<T> wmat(weight_.value.data(), static_cast<Eigen::Index>(out_),
                        static_cast<Eigen::Index>(kk));
    MatMap<T> dwmat(weight_.grad.data(), static_cast<Eigen::Index>(out_),
                    static_cast<Eigen::Index>(kk));
    for (std::size_t b = 0; b < n; ++b) {
      const T* xb = x.data() + b * in_ * plane;
      const T* colp = xb;
      if (k_ != 1) {
        detail::im2col(xb, in_, h, w, k_, cols.data());
        colp = cols.data();
      }
      ConstMatMap<T> cmat(colp, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
      ConstMatMap<T> dymat(dy.data() + b * out_ * plane, static_cast<Eigen::Index>(out_),
                           static_cast<Eigen::Index>(plane));
      dwmat.noalias() += dymat * cmat.transpose();
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dymat.row(static_cast<Eigen::Index>(o)).sum();
      if (!want_dx) continue;
      if (k_ == 1) {
        MatMap<T> dxmat(dx.data() + b * in_ * plane, static_cast<Eigen::Index>(in_),
                        static_cast<Eigen::Index>(plane));
        dxmat.noalias() = wmat.transpose() * dymat;
      } else {
        MatMap<T> dcmat(dcols.data(), static_cast<Eigen::Index>(kk),
                        static_cast<Eigen::Index>(plane));
        dcmat.noalias() = wmat.transpose() * dymat;
        detail::col2im(dcols.data(), in_, h, w, k_, dx.data() + b * in_ * plane);
      }
    }
    return dx;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_) {
      throw ShapeError("conv expects [N," + std::to_string(in_) + ",H,W], got " +
                       shape_string(x.shape()));
    }
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1;
  Parameter<T> weight_, bias_;
};

template <typename T>
struct BatchNormTrace {
  Tensor<T> normalized;        // x_hat
  std::vector<double> inv_std;
  bool training = false;
};

/// Batch normalisation over every axis except the channel axis (dim 1).
/// Works for [N,C] and [N,C,H,W].
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps),
        gamma_(Shape{channels}), beta_(Shape{channels}),
        running_mean_(Shape{channels}), running_var_(Shape{channels}, T(1)) {
    gamma_.value.fill(T(1));
  }

  void init() {
    gamma_.value.fill(T(1));
    beta_.value.zero();
    running_mean_.zero();
    running_var_.fill(T(1));
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.add(prefix + ".gamma", gamma_);
    reg.add(prefix + ".beta", beta_);
    reg.add_buffer(prefix + ".running_mean", running_mean_);
    reg.add_buffer(prefix + ".running_var", running_var_);
  }

  /// In training mode normalises with batch statistics and updates the
  /// running estimates; otherwise uses the running estimates.
  Tensor<T> forward(const Tensor<T>& x, bool training, BatchNormTrace<T>& trace) {
    if (x.rank() < 2 || x.dim(1) != channels_) {
      throw ShapeError("batch norm expects channel axis of " + std::to_string(channels_) +
                       ", got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0);
    const std::size_t spatial = x.size() / (n * channels_);
    const std::size_t count = n * spatial;
    if (training && count < 2) throw ShapeError("batch norm in training mode needs > 1 value per channel");
    trace.training = training;
    trace.normalized = Tensor<T>(x.shape());
    trace.inv_std.assign(channels_, 0.0);
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      double mean, var;
      if (training) {
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * channels_ + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += static_cast<double>(p[i]);
        }
        mean = s / static_cast<double>(count);
        double v = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * channels_ + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            const double d = static_cast<double>(p[i]) - mean;
            v += d * d;
          }
        }
        var = v / static_cast<double>(count);
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_mean_[c]) +
                                          momentum_ * mean);
        const double unbiased = v / static_cast<double>(count - 1);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_var_[c]) +
                                         momentum_ * unbiased);
      } else {
        mean = static_cast<double>(running_mean_[c]);
        var = static_cast<double>(running_var_[c]);
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      trace.inv_std[c] = inv;
      const T g = gamma_.value[c], bt = beta_.value[c];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const T xh = static_cast<T>((static_cast<double>(x[off + i]) - mean) * inv);
          trace.normalized[off + i] = xh;
          y[off + i] = g * xh + bt;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const BatchNormTrace<T>& trace, const Tensor<T>& dy) {
    const std::size_t n = dy.dim(0);
    const std::size_t spatial = dy.size() / (n * channels_);
    const double count = static_cast<double>(n * spatial);
    Tensor<T> dx(dy.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          sum_dy += static_cast<double>(dy[off + i]);
          sum_dy_xh += static_cast<double>(dy[off + i]) * static_cast<double>(trace.normalized[off + i]);
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xh);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const double g = static_cast<double>(gamma_.value[c]);
      const double inv = trace.inv_std[c];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = static_cast<double>(dy[off + i]);
          if (trace.training) {
            const double xh = static_cast<double>(trace.normalized[off + i]);
            dx[off + i] = static_cast<T>(g * inv * (d - sum_dy / count - xh * sum_dy_xh / count));
          } else {
            dx[off + i] = static_cast<T>(g * inv * d);
          }
        }
      }
    }
    return dx;
  }

 private:
  std::size_t channels_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

/// dy masked by the forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

struct PoolTrace {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat index within the input plane
};

/// Adaptive max pooling of [N,C,H,W] to [N,C,out_h,out_w]. Window i spans
/// [floor(i H / out_h), ceil((i+1) H / out_h)).
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, std::size_t out_h, std::size_t out_w, PoolTrace& trace) {
  if (x.rank() != 4) throw ShapeError("max pool expects NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) {
    throw ShapeError("cannot max-pool " + shape_string(x.shape()) + " to " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Tensor<T> y(Shape{n, c, out_h, out_w});
  trace.input_shape = x.shape();
  trace.argmax.assign(y.size(), 0);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t r0 = i * h / out_h, r1 = ((i + 1) * h + out_h - 1) / out_h;
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t c0 = j * w / out_w, c1 = ((j + 1) * w + out_w - 1) / out_w;
        std::size_t best = r0 * w + c0;
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t cc = c0; cc < c1; ++cc) {
            if (src[r * w + cc] > src[best]) best = r * w + cc;
          }
        }
        const std::size_t o = (p * out_h + i) * out_w + j;
        y[o] = src[best];
        trace.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> max_pool_backward(const PoolTrace& trace, const Tensor<T>& dy) {
  Tensor<T> dx(trace.input_shape);
  const std::size_t plane_in = trace.input_shape[2] * trace.input_shape[3];
  const std::size_t plane_out = dy.dim(2) * dy.dim(3);
  const std::size_t planes = dy.dim(0) * dy.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t o = 0; o < plane_out; ++o) {
      dx[p * plane_in + trace.argmax[p * plane_out + o]] += dy[p * plane_out + o];
    }
  }
  return dx;
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t cc = 0; cc < 2 * w; ++cc) dst[r * 2 * w + cc] = src[(r / 2) * w + cc / 2];
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  const std::size_t n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor<T> dx(Shape{n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = dy.data() + p * 4 * h * w;
    T* dst = dx.data() + p * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t cc = 0; cc < 2 * w; ++cc) dst[(r / 2) * w + cc / 2] += src[r * 2 * w + cc];
    }
  }
  return dx;
}

/// Channel concatenation of two NCHW tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<T> y(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.data() + s * ca * plane, ca * plane, y.data() + s * (ca + cb) * plane);
    std::copy_n(b.data() + s * cb * plane, cb * plane, y.data() + (s * (ca + cb) + ca) * plane);
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, std::size_t first) {
  const std::size_t n = dy.dim(0), total = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  const std::size_t second = total - first;
  Tensor<T> a(Shape{n, first, dy.dim(2), dy.dim(3)});
  Tensor<T> b(Shape{n, second, dy.dim(2), dy.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(dy.data() + s * total * plane, first * plane, a.data() + s * first * plane);
    std::copy_n(dy.data() + (s * total + first) * plane, second * plane, b.data() + s * second * plane);
  }
  return {std::move(a), std::move(b)};
}

/// Softmax over the channel axis of NCHW logits.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  Tensor<T> probs(logits.shape());
  std::vector<double> e(k);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) peak = std::max(peak, static_cast<double>(logits[(b * k + c) * plane + p]));
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        e[c] = std::exp(static_cast<double>(logits[(b * k + c) * plane + p]) - peak);
        sum += e[c];
      }
      for (std::size_t c = 0; c < k; ++c) probs[(b * k + c) * plane + p] = static_cast<T>(e[c] / sum);
    }
  }
  return probs;
}

/// Fully connected layer on [N, in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : in_(in), out_(out), weight_(Shape{out, in}), bias_(Shape{out}) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  void init(Rng& rng) {
    kaiming_init(weight_.value, in_, rng);
    bias_.value.zero();
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.add(prefix + ".weight", weight_);
    reg.add(prefix + ".bias", bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_) {
      throw ShapeError("linear expects [N," + std::to_string(in_) + "], got " + shape_string(x.shape()));
    }
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    Tensor<T> y(Shape{x.dim(0), out_});
    ConstMatMap<T> xm(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMatMap<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap<T> ym(y.data(), n, static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias_.value.data(), static_cast<Eigen::Index>(out_));
    ym.rowwise() += bm;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    ConstMatMap<T> xm(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMatMap<T> dym(dy.data(), n, static_cast<Eigen::Index>(out_));
    ConstMatMap<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap<T> dwm(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dwm.noalias() += dym.transpose() * xm;
    for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dym.col(static_cast<Eigen::Index>(o)).sum();
    Tensor<T> dx(x.shape());
    MatMap<T> dxm(dx.data(), n, static_cast<Eigen::Index>(in_));
    dxm.noalias() = dym * wm;
    return dx;
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter<T> weight_, bias_;
};

}  // namespace geomt::nn
