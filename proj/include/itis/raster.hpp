// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary raster primitives: masks, IoU, connected components, the exact
// Euclidean distance transform, boundary extraction and a run-length text
// form for masks.

#ifndef ITIS_RASTER_HPP
#define ITIS_RASTER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "itis/errors.hpp"

namespace itis {

/// Row-major 2D grid. A default-constructed grid is 0x0 and counts as unset;
/// every grid built with explicit dimensions is at least 1x1.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(int width, int height, T fill = T{})
      : width_(checked_dim(width)), height_(checked_dim(height)),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  Grid(int width, int height, std::vector<T> values)
      : width_(checked_dim(width)), height_(checked_dim(height)), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
      throw DimensionMismatch("grid value count does not match " + std::to_string(width_) + "x" +
                              std::to_string(height_));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_unset() const noexcept { return data_.empty(); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static int checked_dim(int d) {
    if (d < 1) throw DimensionMismatch("grid dimensions must be at least 1x1");
    return d;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                            "x" + std::to_string(b.height()));
  }
}

/// Binary raster. Stored one byte per pixel; any nonzero byte is foreground.
class Bitmask : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;

  Bitmask(int width, int height) : Grid(width, height, std::uint8_t{0}) {}

  bool test(int x, int y) const noexcept { return (*this)(x, y) != 0; }
  void set(int x, int y, bool on = true) noexcept { (*this)(x, y) = on ? 1 : 0; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(values().begin(), values().end(), [](std::uint8_t v) { return v != 0; }));
  }
  bool any() const noexcept {
    return std::any_of(values().begin(), values().end(), [](std::uint8_t v) { return v != 0; });
  }
  bool none() const noexcept { return !any(); }

  friend bool operator==(const Bitmask& a, const Bitmask& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if ((a[i] != 0) != (b[i] != 0)) return false;
    }
    return true;
  }
};

using DistanceField = Grid<double>;

enum class Connectivity { four, eight };

enum class DistanceTo { foreground, background };

struct LabelMap {
  Grid<std::int32_t> labels;
  /// sizes[k] is the pixel count of component k; sizes[0] counts background.
  std::vector<std::size_t> sizes;

  int width() const noexcept { return labels.width(); }
  int height() const noexcept { return labels.height(); }
  int component_count() const noexcept { return static_cast<int>(sizes.size()) - 1; }
  std::int32_t operator()(int x, int y) const noexcept { return labels(x, y); }
};

// ---------------------------------------------------------------------------
// Set operations

inline Bitmask mask_xor(const Bitmask& a, const Bitmask& b) {
  require_same_shape(a, b, "mask_xor");
  Bitmask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ((a[i] != 0) != (b[i] != 0)) ? 1 : 0;
  return out;
}

inline Bitmask mask_invert(const Bitmask& a) {
  Bitmask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] != 0 ? 0 : 1;
  return out;
}

inline std::size_t intersection_count(const Bitmask& a, const Bitmask& b) {
  require_same_shape(a, b, "intersection_count");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0 && b[i] != 0) ? 1 : 0;
  return n;
}

/// Intersection over union. Two empty masks score 1.0.
inline double iou(const Bitmask& a, const Bitmask& b) {
  require_same_shape(a, b, "iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a[i] != 0;
    const bool fb = b[i] != 0;
    inter += (fa && fb) ? 1 : 0;
    uni += (fa || fb) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Connected components

namespace detail {

class DisjointSet {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }

  std::int32_t find(std::int32_t n) {
    while (parent_[n] != n) {
      parent_[n] = parent_[parent_[n]];
      n = parent_[n];
    }
    return n;
  }

  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::int32_t> parent_;
};

}  // namespace detail

/// Two-pass union-find labelling. Labels are 1..K in the raster order in which
/// each component's first pixel is met; 0 is background.
inline LabelMap connected_components(const Bitmask& m,
                                     Connectivity connectivity = Connectivity::four) {
  const int w = m.width();
  const int h = m.height();
  Grid<std::int32_t> provisional(w, h, 0);
  detail::DisjointSet sets;
  sets.make();  // slot 0 is background

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m.test(x, y)) continue;
      std::int32_t label = 0;
      auto join = [&](int nx, int ny) {
        if (!m.contains(nx, ny)) return;
        const std::int32_t n = provisional(nx, ny);
        if (n == 0) return;
        if (label == 0) {
          label = n;
        } else if (label != n) {
          sets.unite(label, n);
        }
      };
      join(x - 1, y);
      join(x, y - 1);
      if (connectivity == Connectivity::eight) {
        join(x - 1, y - 1);
        join(x + 1, y - 1);
      }
      provisional(x, y) = label != 0 ? label : sets.make();
    }
  }

  LabelMap out{Grid<std::int32_t>(w, h, 0), {0}};
  std::vector<std::int32_t> remap;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    const std::int32_t p = provisional[i];
    if (p == 0) {
      ++out.sizes[0];
      continue;
    }
    const std::int32_t root = sets.find(p);
    if (static_cast<std::size_t>(root) >= remap.size()) remap.resize(root + 1, 0);
    if (remap[root] == 0) {
      remap[root] = static_cast<std::int32_t>(out.sizes.size());
      out.sizes.push_back(0);
    }
    out.labels[i] = remap[root];
    ++out.sizes[remap[root]];
  }
  return out;
}

/// Pixels carrying a given component label.
inline Bitmask component_mask(const LabelMap& labels, std::int32_t label) {
  Bitmask out(labels.width(), labels.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels.labels[i] == label ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform

namespace detail {

// Lower envelope of the parabolas (q - v)^2 + f[v] over the finite entries of
// f, evaluated at every integer q. Entries < 0 mark "no site".
inline void edt_1d(std::span<const std::int64_t> f, std::span<std::int64_t> d,
                   std::vector<int>& sites, std::vector<double>& bounds) {
  const int n = static_cast<int>(f.size());
  sites.clear();
  bounds.clear();
  auto meet = [&](int a, int b) {
    const double fa = static_cast<double>(f[a]) + static_cast<double>(a) * a;
    const double fb = static_cast<double>(f[b]) + static_cast<double>(b) * b;
    return (fb - fa) / (2.0 * (b - a));
  };
  for (int q = 0; q < n; ++q) {
    if (f[q] < 0) continue;
    while (!sites.empty()) {
      const double s = meet(sites.back(), q);
      if (!bounds.empty() && s <= bounds.back()) {
        sites.pop_back();
        bounds.pop_back();
        continue;
      }
      bounds.push_back(s);
      break;
    }
    sites.push_back(q);
  }
  if (sites.empty()) {
    std::fill(d.begin(), d.end(), -1);
    return;
  }
  // bounds[k] separates sites[k] and sites[k + 1].
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    while (k < bounds.size() && bounds[k] < q) ++k;
    const std::int64_t dq = q - sites[k];
    d[q] = dq * dq + f[sites[k]];
  }
}

}  // namespace detail

/// Squared distances (exact integers) from every pixel centre to the nearest
/// target pixel. Returns -1 everywhere when the target set is empty.
inline Grid<std::int64_t> squared_distance_to(const Bitmask& target) {
  const int w = target.width();
  const int h = target.height();
  Grid<std::int64_t> cols(w, h, -1);
  std::vector<int> sites;
  std::vector<double> bounds;

  std::vector<std::int64_t> f(static_cast<std::size_t>(std::max(w, h)));
  std::vector<std::int64_t> d(f.size());
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = target.test(x, y) ? 0 : -1;
    detail::edt_1d(std::span(f).first(h), std::span(d).first(h), sites, bounds);
    for (int y = 0; y < h; ++y) cols(x, y) = d[y];
  }
  Grid<std::int64_t> out(w, h, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = cols(x, y);
    detail::edt_1d(std::span(f).first(w), std::span(d).first(w), sites, bounds);
    for (int x = 0; x < w; ++x) out(x, y) = d[x];
  }
  return out;
}

/// Squared distance to the background where the ring of pixels just outside
/// the image also counts as background. Always finite.
inline Grid<std::int64_t> squared_distance_to_background_bordered(const Bitmask& m) {
  const int w = m.width();
  const int h = m.height();
  Bitmask padded(w + 2, h + 2);
  for (int y = 0; y < h + 2; ++y) {
    for (int x = 0; x < w + 2; ++x) {
      const bool inside = x >= 1 && y >= 1 && x <= w && y <= h;
      padded.set(x, y, !inside || !m.test(x - 1, y - 1));
    }
  }
  const auto full = squared_distance_to(padded);
  Grid<std::int64_t> out(w, h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out(x, y) = full(x + 1, y + 1);
  }
  return out;
}

/// Exact Euclidean distance transform between pixel centres.
///
/// With `to == foreground` each pixel gets the distance to the nearest
/// foreground pixel, with `to == background` the distance to the nearest
/// background pixel. When `border_is_background` is set, the pixels just
/// outside the image count as background (only meaningful for
/// `to == background`). Throws EmptyTargetError if no target pixel exists.
inline DistanceField distance_transform(const Bitmask& m, DistanceTo to,
                                        bool border_is_background = false) {
  Grid<std::int64_t> sq;
  if (to == DistanceTo::background && border_is_background) {
    sq = squared_distance_to_background_bordered(m);
  } else {
    const Bitmask target = to == DistanceTo::foreground ? m : mask_invert(m);
    if (target.none()) {
      throw EmptyTargetError(to == DistanceTo::foreground
                                 ? "distance transform: mask has no foreground"
                                 : "distance transform: mask has no background");
    }
    sq = squared_distance_to(target);
  }
  DistanceField out(m.width(), m.height(), 0.0);
  for (std::size_t i = 0; i < sq.size(); ++i) out[i] = std::sqrt(static_cast<double>(sq[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Boundary

/// Foreground pixels with at least one background 4-neighbour; outside the
/// image counts as background.
inline Bitmask boundary(const Bitmask& m) {
  const int w = m.width();
  const int h = m.height();
  Bitmask out(w, h);
  auto bg = [&](int x, int y) { return !m.contains(x, y) || !m.test(x, y); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m.test(x, y)) continue;
      if (bg(x - 1, y) || bg(x + 1, y) || bg(x, y - 1) || bg(x, y + 1)) out.set(x, y);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run-length text form: "RLE v1: <width> <height>; <value> <run> <value> <run> ..."
// Runs cover the mask in row-major order, values are 0 or 1 and alternate.

inline std::string to_rle(const Bitmask& m) {
  std::ostringstream os;
  os << "RLE v1: " << m.width() << ' ' << m.height() << ';';
  std::size_t i = 0;
  while (i < m.size()) {
    const bool v = m[i] != 0;
    std::size_t j = i;
    while (j < m.size() && (m[j] != 0) == v) ++j;
    os << ' ' << (v ? 1 : 0) << ' ' << (j - i);
    i = j;
  }
  return os.str();
}

inline Bitmask parse_rle(std::string_view text) {
  constexpr std::string_view prefix = "RLE v1:";
  if (text.substr(0, prefix.size()) != prefix) throw FormatError("RLE: missing 'RLE v1:' prefix");
  const auto semi = text.find(';');
  if (semi == std::string_view::npos) throw FormatError("RLE: missing ';' after dimensions");
  std::istringstream dims{std::string(text.substr(prefix.size(), semi - prefix.size()))};
  long long w = 0;
  long long h = 0;
  if (!(dims >> w >> h) || w < 1 || h < 1 || w > (1 << 16) || h > (1 << 16)) {
    throw FormatError("RLE: bad dimensions");
  }
  std::string rest_dims;
  if (dims >> rest_dims) throw FormatError("RLE: trailing data after dimensions");
  Bitmask m(static_cast<int>(w), static_cast<int>(h));
  std::istringstream runs{std::string(text.substr(semi + 1))};
  std::size_t pos = 0;
  int value = 0;
  long long run = 0;
  while (runs >> value) {
    if (!(runs >> run) || run < 0 || (value != 0 && value != 1)) {
      throw FormatError("RLE: malformed run pair");
    }
    if (pos + static_cast<std::size_t>(run) > m.size()) throw FormatError("RLE: runs overflow mask");
    std::fill_n(m.values().begin() + static_cast<std::ptrdiff_t>(pos), run,
                static_cast<std::uint8_t>(value));
    pos += static_cast<std::size_t>(run);
  }
  if (!runs.eof()) throw FormatError("RLE: malformed run list");
  if (pos != m.size()) throw FormatError("RLE: runs do not cover the mask");
  return m;
}

}  // namespace itis

#endif  // ITIS_RASTER_HPP
