#pragma once

// Crops and geometric augmentation. Pixel/ground convention: column index
// grows with easting, row index grows as northing decreases. A patch's
// centroid sits at the geometric centre of its pixel grid.

#include <array>
#include <cstddef>

#include "geomt/data/patch.hpp"
#include "geomt/error.hpp"
#include "geomt/rng.hpp"

namespace geomt {

/// Rectangular crop; the centroid moves by the offset between the crop
/// centre and the patch centre.
inline Patch crop(const Patch& patch, std::size_t row, std::size_t col, std::size_t height,
                  std::size_t width, double gsd_m = kDefaultGsd) {
  const Image& src = patch.image;
  if (height == 0 || width == 0 || row + height > src.height || col + width > src.width) {
    throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                     std::to_string(row) + "," + std::to_string(col) + ") exceeds patch " +
                     std::to_string(src.height) + "x" + std::to_string(src.width));
  }
  Patch out;
  out.meta = patch.meta;
  out.image = Image(height, width, src.bands);
  for (std::size_t r = 0; r < height; ++r) {
    const float* from = &src.values[((row + r) * src.width + col) * src.bands];
    std::copy_n(from, width * src.bands, &out.image.values[r * width * src.bands]);
  }
  if (patch.label) {
    LabelMap label(height, width);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) label(r, c) = (*patch.label)(row + r, col + c);
    }
    out.label = std::move(label);
  }
  const double dcol = static_cast<double>(col) + 0.5 * static_cast<double>(width) - 0.5 * static_cast<double>(src.width);
  const double drow = static_cast<double>(row) + 0.5 * static_cast<double>(height) - 0.5 * static_cast<double>(src.height);
  out.meta.centroid_lon_m = patch.meta.centroid_lon_m + dcol * gsd_m;
  out.meta.centroid_lat_m = patch.meta.centroid_lat_m - drow * gsd_m;
  return out;
}

inline Patch random_crop(const Patch& patch, std::size_t size, Rng& rng, double gsd_m = kDefaultGsd) {
  if (size == 0 || size > patch.image.height || size > patch.image.width) {
    throw ShapeError("crop size " + std::to_string(size) + " larger than patch " +
                     std::to_string(patch.image.height) + "x" + std::to_string(patch.image.width));
  }
  const auto row = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(patch.image.height - size)));
  const auto col = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(patch.image.width - size)));
  return crop(patch, row, col, size, size, gsd_m);
}

/// Quadrants in order top-left, top-right, bottom-left, bottom-right.
inline std::array<Patch, 4> four_crop(const Patch& patch, double gsd_m = kDefaultGsd) {
  const std::size_t h = patch.image.height, w = patch.image.width;
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw ShapeError("four_crop needs even sides, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t qh = h / 2, qw = w / 2;
  return {crop(patch, 0, 0, qh, qw, gsd_m), crop(patch, 0, qw, qh, qw, gsd_m),
          crop(patch, qh, 0, qh, qw, gsd_m), crop(patch, qh, qw, qh, qw, gsd_m)};
}

/// Inverse of four_crop for label maps.
inline LabelMap reassemble(const std::array<LabelMap, 4>& quads) {
  const std::size_t qh = quads[0].height, qw = quads[0].width;
  for (const auto& q : quads) {
    if (q.height != qh || q.width != qw) throw ShapeError("quadrants differ in shape");
  }
  LabelMap full(2 * qh, 2 * qw);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t r0 = (k / 2) * qh, c0 = (k % 2) * qw;
    for (std::size_t r = 0; r < qh; ++r) {
      for (std::size_t c = 0; c < qw; ++c) full(r0 + r, c0 + c) = quads[k](r, c);
    }
  }
  return full;
}

struct GeometricTransform {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3

  bool identity() const { return !flip_horizontal && !flip_vertical && quarter_turns % 4 == 0; }
};

namespace detail {

// Source pixel for destination (r, c) after flips then rotation on an n x n grid.
inline std::pair<std::size_t, std::size_t> source_pixel(const GeometricTransform& t, std::size_t r,
                                                        std::size_t c, std::size_t h, std::size_t w) {
  // undo rotation (counter-clockwise turn: dst(r,c) = src(c, n-1-r))
  for (int k = 0; k < ((t.quarter_turns % 4) + 4) % 4; ++k) {
    const std::size_t nr = c, nc = w - 1 - r;
    r = nr;
    c = nc;
  }
  if (t.flip_vertical) r = h - 1 - r;
  if (t.flip_horizontal) c = w - 1 - c;
  return {r, c};
}

}  // namespace detail

/// Applies the same flips/rotation to image and label; metadata is kept.
inline Patch apply_transform(const Patch& patch, const GeometricTransform& t) {
  if (t.identity()) return patch;
  const std::size_t h = patch.image.height, w = patch.image.width, b = patch.image.bands;
  if (t.quarter_turns % 4 != 0 && h != w) throw ShapeError("rotation needs a square patch");
  Patch out;
  out.meta = patch.meta;
  out.image = Image(h, w, b);
  if (patch.label) out.label = LabelMap(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const auto [sr, sc] = detail::source_pixel(t, r, c, h, w);
      std::copy_n(&patch.image.values[(sr * w + sc) * b], b, &out.image.values[(r * w + c) * b]);
      if (patch.label) (*out.label)(r, c) = (*patch.label)(sr, sc);
    }
  }
  return out;
}

inline GeometricTransform draw_transform(Rng& rng, bool allow_rotation = true) {
  GeometricTransform t;
  t.flip_horizontal = rng.coin();
  t.flip_vertical = rng.coin();
  t.quarter_turns = allow_rotation ? static_cast<int>(rng.uniform_int(0, 3)) : 0;
  return t;
}

/// Random flips and quarter turns (rotation only for square patches).
inline Patch augment(const Patch& patch, Rng& rng) {
  return apply_transform(patch, draw_transform(rng, patch.image.height == patch.image.width));
}

}  // namespace geomt
