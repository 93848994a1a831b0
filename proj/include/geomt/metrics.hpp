#pragma once

#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "geomt/error.hpp"
#include "geomt/label_map.hpp"

namespace geomt {

/// counts[ref][pred], rows are reference classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {}
  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts)
      : n_(classes), counts_(std::move(counts)) {
    if (counts_.size() != n_ * n_) throw ShapeError("confusion matrix needs n*n counts");
  }

  std::size_t classes() const { return n_; }
  std::uint64_t operator()(std::size_t ref, std::size_t pred) const { return counts_[ref * n_ + pred]; }
  std::uint64_t& operator()(std::size_t ref, std::size_t pred) { return counts_[ref * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ShapeError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Skips pixels whose reference equals ignore_index.
inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& ref,
                                  std::optional<int> ignore_index) {
  require_same_shape(pred, ref, "accumulate");
  const auto n = static_cast<std::int32_t>(cm.classes());
  for (std::size_t i = 0; i < ref.entries.size(); ++i) {
    const std::int32_t r = ref.entries[i];
    if (ignore_index && r == *ignore_index) continue;
    const std::int32_t p = pred.entries[i];
    if (r < 0 || r >= n || p < 0 || p >= n) {
      throw DataError("class index out of range in accumulate: ref " + std::to_string(r) + ", pred " +
                      std::to_string(p));
    }
    ++cm(static_cast<std::size_t>(r), static_cast<std::size_t>(p));
  }
  return cm;
}

struct IouReport {
  std::vector<int> classes;       // class index of each entry below
  std::vector<double> per_class;  // NaN when undefined
  std::vector<bool> defined;      // false when TP + FP + FN == 0
  double miou = 0.0;
  bool empty = true;              // no class had a defined IoU
};

/// IoU_c = TP / (TP + FP + FN) for each class except ignore_index. Classes
/// with a zero denominator are flagged and left out of the mean.
inline IouReport iou(const ConfusionMatrix& cm, std::optional<int> ignore_index = std::nullopt) {
  IouReport report;
  const std::size_t n = cm.classes();
  double sum = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (ignore_index && static_cast<int>(c) == *ignore_index) continue;
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == c) continue;
      fp += cm(k, c);
      fn += cm(c, k);
    }
    const std::uint64_t tp = cm(c, c);
    const std::uint64_t denom = tp + fp + fn;
    report.classes.push_back(static_cast<int>(c));
    report.defined.push_back(denom > 0);
    if (denom > 0) {
      const double v = static_cast<double>(tp) / static_cast<double>(denom);
      report.per_class.push_back(v);
      sum += v;
      ++used;
    } else {
      report.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  report.empty = used == 0;
  report.miou = used == 0 ? 0.0 : sum / used;
  return report;
}

/// CSV with one row per class plus a trailing miou row. Undefined classes
/// are written as "nan".
inline void write_iou_csv(std::ostream& out, const IouReport& report,
                          const std::vector<std::string>& names = {}) {
  out << "class,iou\n";
  char buf[64];
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    const int c = report.classes[i];
    const std::string name = static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
                                                                         : "class_" + std::to_string(c);
    out << name << ',';
    if (report.defined[i]) {
      std::snprintf(buf, sizeof buf, "%.6f", report.per_class[i]);
      out << buf << '\n';
    } else {
      out << "nan\n";
    }
  }
  std::snprintf(buf, sizeof buf, "%.6f", report.miou);
  out << "miou," << buf << '\n';
}

}  // namespace geomt
