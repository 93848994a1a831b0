#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "geomt/error.hpp"

namespace geomt {

/// Row-major H x W grid of class indices.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> entries;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
      : height(h), width(w), entries(h * w, fill) {}

  std::size_t size() const { return entries.size(); }
  std::int32_t& operator()(std::size_t r, std::size_t c) { return entries[r * width + c]; }
  std::int32_t operator()(std::size_t r, std::size_t c) const { return entries[r * width + c]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline void require_same_shape(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.entries.size() != b.entries.size()) {
    throw ShapeError(std::string(what) + ": label maps differ in shape (" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

}  // namespace geomt
