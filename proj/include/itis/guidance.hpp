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

// Click and mask encodings that make up the predictor input: three colour
// channels, a positive-click channel, a negative-click channel and an
// optional mask channel.

#ifndef ITIS_GUIDANCE_HPP
#define ITIS_GUIDANCE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "itis/errors.hpp"
#include "itis/image.hpp"
#include "itis/raster.hpp"

namespace itis {

enum class Polarity { positive, negative };

inline std::string_view to_string(Polarity p) {
  return p == Polarity::positive ? "positive" : "negative";
}

inline Polarity parse_polarity(std::string_view s) {
  if (s == "positive" || s == "pos" || s == "+") return Polarity::positive;
  if (s == "negative" || s == "neg" || s == "-") return Polarity::negative;
  throw std::invalid_argument("unknown polarity '" + std::string(s) + "'");
}

struct Click {
  int x = 0;
  int y = 0;
  Polarity polarity = Polarity::positive;
  int round = 0;  // insertion index

  friend bool operator==(const Click&, const Click&) = default;
};

/// Ordered clicks. Rounds strictly increase and no (x, y, polarity) repeats.
class ClickSet {
 public:
  ClickSet() = default;

  /// Appends a click at the next round.
  const Click& add(int x, int y, Polarity polarity) {
    return push(Click{x, y, polarity, next_round()});
  }

  const Click& push(const Click& c) {
    if (!clicks_.empty() && c.round <= clicks_.back().round) {
      throw std::invalid_argument("click rounds must be strictly increasing");
    }
    if (contains(c.x, c.y, c.polarity)) {
      throw std::invalid_argument("duplicate click at (" + std::to_string(c.x) + ", " +
                                  std::to_string(c.y) + ")");
    }
    clicks_.push_back(c);
    return clicks_.back();
  }

  void pop_back() {
    if (clicks_.empty()) throw std::out_of_range("pop_back on empty click set");
    clicks_.pop_back();
  }

  bool contains(int x, int y, Polarity polarity) const noexcept {
    return std::any_of(clicks_.begin(), clicks_.end(), [&](const Click& c) {
      return c.x == x && c.y == y && c.polarity == polarity;
    });
  }

  bool occupies(int x, int y) const noexcept {
    return std::any_of(clicks_.begin(), clicks_.end(),
                       [&](const Click& c) { return c.x == x && c.y == y; });
  }

  int next_round() const noexcept { return clicks_.empty() ? 0 : clicks_.back().round + 1; }

  std::vector<Click> with_polarity(Polarity p) const {
    std::vector<Click> out;
    std::copy_if(clicks_.begin(), clicks_.end(), std::back_inserter(out),
                 [p](const Click& c) { return c.polarity == p; });
    return out;
  }
  std::vector<Click> positives() const { return with_polarity(Polarity::positive); }
  std::vector<Click> negatives() const { return with_polarity(Polarity::negative); }

  bool all_inside(int width, int height) const noexcept {
    return std::all_of(clicks_.begin(), clicks_.end(), [&](const Click& c) {
      return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
    });
  }

  std::size_t size() const noexcept { return clicks_.size(); }
  bool empty() const noexcept { return clicks_.empty(); }
  const Click& operator[](std::size_t i) const { return clicks_[i]; }
  const Click& back() const { return clicks_.back(); }
  auto begin() const noexcept { return clicks_.begin(); }
  auto end() const noexcept { return clicks_.end(); }
  std::span<const Click> view() const noexcept { return clicks_; }

  friend bool operator==(const ClickSet&, const ClickSet&) = default;

 private:
  std::vector<Click> clicks_;
};

using Channel = Grid<float>;

struct GaussianParams {
  double sigma = 10.0;        // pixels
  double clip_radius = 20.0;  // pixels; zero beyond
};

enum class ClickEncoding { gaussian, distance };
enum class MaskEncoding { distance_transform, raw };

inline std::string_view to_string(ClickEncoding e) {
  return e == ClickEncoding::gaussian ? "gaussian" : "distance";
}

inline ClickEncoding parse_click_encoding(std::string_view s) {
  if (s == "gaussian") return ClickEncoding::gaussian;
  if (s == "distance") return ClickEncoding::distance;
  throw std::invalid_argument("unknown click encoding '" + std::string(s) + "'");
}

namespace detail {

inline void require_inside(std::span<const Click> clicks, int width, int height) {
  for (const Click& c : clicks) {
    if (c.x < 0 || c.y < 0 || c.x >= width || c.y >= height) {
      throw std::out_of_range("click (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                              ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
  }
}

}  // namespace detail

/// Per pixel: max over clicks of exp(-d^2 / (2 sigma^2)), zero where d is
/// beyond the clip radius. No clicks gives an all-zero channel.
inline Channel encode_gaussian(std::span<const Click> clicks, int width, int height,
                               const GaussianParams& params = {}) {
  detail::require_inside(clicks, width, height);
  Channel out(width, height, 0.0f);
  const double r2max = params.clip_radius * params.clip_radius;
  const double denom = 2.0 * params.sigma * params.sigma;
  const int reach = static_cast<int>(std::floor(params.clip_radius));
  for (const Click& c : clicks) {
    const int x0 = std::max(0, c.x - reach);
    const int x1 = std::min(width - 1, c.x + reach);
    const int y0 = std::max(0, c.y - reach);
    const int y1 = std::min(height - 1, c.y + reach);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x;
        const double dy = y - c.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r2max) continue;
        const float v = static_cast<float>(std::exp(-d2 / denom));
        out(x, y) = std::max(out(x, y), v);
      }
    }
  }
  return out;
}

/// Per pixel: distance to the nearest click, truncated and scaled into
/// [0, 1]. No clicks gives an all-ones channel.
inline Channel encode_click_distance(std::span<const Click> clicks, int width, int height,
                                     double truncation = 255.0) {
  detail::require_inside(clicks, width, height);
  Channel out(width, height, 1.0f);
  if (clicks.empty()) return out;
  Bitmask sites(width, height);
  for (const Click& c : clicks) sites.set(c.x, c.y);
  const auto sq = squared_distance_to(sites);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = std::sqrt(static_cast<double>(sq[i]));
    out[i] = static_cast<float>(std::min(d, truncation) / truncation);
  }
  return out;
}

/// Previous mask as a truncated signed distance centred on 0.5: foreground
/// rises from 0.5 towards 1 with distance to the background, background falls
/// towards 0 with distance to the foreground. An empty mask is all zeros.
inline Channel encode_mask_channel(const Bitmask& prev, double truncation = 20.0,
                                   MaskEncoding encoding = MaskEncoding::distance_transform) {
  Channel out(prev.width(), prev.height(), 0.0f);
  if (encoding == MaskEncoding::raw) {
    for (std::size_t i = 0; i < prev.size(); ++i) out[i] = prev[i] != 0 ? 1.0f : 0.0f;
    return out;
  }
  if (prev.none()) return out;
  const auto to_fg = squared_distance_to(prev);
  const auto to_bg = squared_distance_to(mask_invert(prev));  // -1 when the mask fills the frame
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (prev[i] != 0) {
      const double d = to_bg[i] < 0 ? truncation : std::sqrt(static_cast<double>(to_bg[i]));
      out[i] = static_cast<float>(0.5 + 0.5 * std::min(d, truncation) / truncation);
    } else {
      const double d = std::sqrt(static_cast<double>(to_fg[i]));
      out[i] = static_cast<float>(0.5 - 0.5 * std::min(d, truncation) / truncation);
    }
  }
  return out;
}

struct GuidanceOptions {
  ClickEncoding encoding = ClickEncoding::gaussian;
  GaussianParams gaussian{};
  double click_truncation = 255.0;
  MaskEncoding mask_encoding = MaskEncoding::distance_transform;
  double mask_truncation = 20.0;
};

/// Channel-major float planes in the fixed order R, G, B, pos, neg[, mask].
class GuidanceStack {
 public:
  static constexpr int kRed = 0;
  static constexpr int kGreen = 1;
  static constexpr int kBlue = 2;
  static constexpr int kPositive = 3;
  static constexpr int kNegative = 4;
  static constexpr int kMask = 5;

  GuidanceStack(int width, int height, int channels)
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, 0.0f) {
    if (width < 1 || height < 1) throw DimensionMismatch("guidance stack must be at least 1x1");
    if (channels != 5 && channels != 6) {
      throw DimensionMismatch("guidance stack needs 5 or 6 channels, got " + std::to_string(channels));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool has_mask() const noexcept { return channels_ == 6; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  std::span<float> plane(int c) { return std::span(data_).subspan(c * plane_size(), plane_size()); }
  std::span<const float> plane(int c) const {
    return std::span(data_).subspan(c * plane_size(), plane_size());
  }

  Channel channel(int c) const {
    const auto p = plane(c);
    return Channel(width_, height_, std::vector<float>(p.begin(), p.end()));
  }

  void set_plane(int c, const Channel& values) {
    if (values.width() != width_ || values.height() != height_) {
      throw DimensionMismatch("guidance plane size mismatch");
    }
    std::copy(values.values().begin(), values.values().end(), plane(c).begin());
  }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  friend bool operator==(const GuidanceStack&, const GuidanceStack&) = default;

 private:
  int width_;
  int height_;
  int channels_;
  std::vector<float> data_;
};

inline GuidanceStack assemble_stack(const RgbImage& image, const ClickSet& clicks,
                                    const Bitmask* prev_mask, const GuidanceOptions& options = {}) {
  const int w = image.width();
  const int h = image.height();
  if (prev_mask != nullptr) require_same_shape(image, *prev_mask, "assemble_stack mask");
  if (!clicks.all_inside(w, h)) throw std::out_of_range("assemble_stack: click outside image");

  GuidanceStack stack(w, h, prev_mask != nullptr ? 6 : 5);
  auto r = stack.plane(GuidanceStack::kRed);
  auto g = stack.plane(GuidanceStack::kGreen);
  auto b = stack.plane(GuidanceStack::kBlue);
  for (std::size_t i = 0; i < image.size(); ++i) {
    r[i] = std::clamp(image[i].r, 0.0f, 1.0f);
    g[i] = std::clamp(image[i].g, 0.0f, 1.0f);
    b[i] = std::clamp(image[i].b, 0.0f, 1.0f);
  }
  const auto pos = clicks.positives();
  const auto neg = clicks.negatives();
  if (options.encoding == ClickEncoding::gaussian) {
    stack.set_plane(GuidanceStack::kPositive, encode_gaussian(pos, w, h, options.gaussian));
    stack.set_plane(GuidanceStack::kNegative, encode_gaussian(neg, w, h, options.gaussian));
  } else {
    stack.set_plane(GuidanceStack::kPositive, encode_click_distance(pos, w, h, options.click_truncation));
    stack.set_plane(GuidanceStack::kNegative, encode_click_distance(neg, w, h, options.click_truncation));
  }
  if (prev_mask != nullptr) {
    stack.set_plane(GuidanceStack::kMask,
                    encode_mask_channel(*prev_mask, options.mask_truncation, options.mask_encoding));
  }
  return stack;
}

inline GuidanceStack assemble_stack(const RgbImage& image, const ClickSet& clicks,
                                    const std::optional<Bitmask>& prev_mask,
                                    const GuidanceOptions& options = {}) {
  return assemble_stack(image, clicks, prev_mask ? &*prev_mask : nullptr, options);
}

// ---------------------------------------------------------------------------
// GSTK1 tensor block: "GSTK1", u32 width, u32 height, u32 channels (little
// endian), then float32 samples, channel-major and row-major within a plane.

inline constexpr std::string_view kGstkMagic = "GSTK1";
inline constexpr std::size_t kGstkHeaderSize = 5 + 3 * 4;

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_gstk(const GuidanceStack& stack) {
  std::vector<std::uint8_t> out;
  out.reserve(kGstkHeaderSize + stack.data().size() * 4);
  out.insert(out.end(), kGstkMagic.begin(), kGstkMagic.end());
  detail::put_u32le(out, static_cast<std::uint32_t>(stack.width()));
  detail::put_u32le(out, static_cast<std::uint32_t>(stack.height()));
  detail::put_u32le(out, static_cast<std::uint32_t>(stack.channels()));
  for (float f : stack.data()) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_u32le(out, bits);
  }
  return out;
}

struct GstkHeader {
  int width = 0;
  int height = 0;
  int channels = 0;

  std::size_t payload_bytes() const {
    return static_cast<std::size_t>(width) * height * channels * 4;
  }
};

inline GstkHeader parse_gstk_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kGstkHeaderSize ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), 5) != kGstkMagic) {
    throw FormatError("not a GSTK1 block");
  }
  const std::uint32_t w = detail::get_u32le(bytes.data() + 5);
  const std::uint32_t h = detail::get_u32le(bytes.data() + 9);
  const std::uint32_t c = detail::get_u32le(bytes.data() + 13);
  if (w == 0 || h == 0 || w > (1u << 15) || h > (1u << 15) || (c != 5 && c != 6)) {
    throw FormatError("GSTK1 header out of range");
  }
  return {static_cast<int>(w), static_cast<int>(h), static_cast<int>(c)};
}

inline GuidanceStack decode_gstk(std::span<const std::uint8_t> bytes) {
  const GstkHeader head = parse_gstk_header(bytes);
  if (bytes.size() != kGstkHeaderSize + head.payload_bytes()) {
    throw FormatError("GSTK1 payload size mismatch");
  }
  GuidanceStack stack(head.width, head.height, head.channels);
  auto data = stack.data();
  const std::uint8_t* p = bytes.data() + kGstkHeaderSize;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t bits = detail::get_u32le(p + 4 * i);
    std::memcpy(&data[i], &bits, sizeof bits);
  }
  return stack;
}

}  // namespace itis

#endif  // ITIS_GUIDANCE_HPP
