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

// PNG reading and writing on top of libpng. Decoding keeps samples raw
// (palette indices stay indices) and conversion to masks or colour images
// happens here in C++.

#ifndef ITIS_PNG_IO_HPP
#define ITIS_PNG_IO_HPP

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itis/errors.hpp"
#include "itis/image.hpp"
#include "itis/raster.hpp"

namespace itis {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

enum class PngColor { gray, gray_alpha, rgb, rgba, palette };

struct PngRaster {
  int width = 0;
  int height = 0;
  PngColor color = PngColor::gray;
  int bit_depth = 8;  // as stored in the file
  int channels = 1;
  std::vector<std::uint16_t> samples;  // row-major, interleaved, unscaled
  std::vector<Rgb> palette;
};

namespace detail {

struct PngReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

struct PngErrorSlot {
  std::array<char, 256> message{};
};

inline void png_on_error(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<PngErrorSlot*>(png_get_error_ptr(png));
  if (slot != nullptr) std::snprintf(slot->message.data(), slot->message.size(), "%s", msg);
  png_longjmp(png, 1);
}

inline void png_on_warning(png_structp, png_const_charp) {}

inline void png_read_bytes(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->data.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cur->data.data() + cur->pos, n);
  cur->pos += n;
}

inline void png_write_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

inline void png_flush_noop(png_structp) {}

inline int png_color_type(PngColor c) {
  switch (c) {
    case PngColor::gray: return PNG_COLOR_TYPE_GRAY;
    case PngColor::gray_alpha: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case PngColor::rgb: return PNG_COLOR_TYPE_RGB;
    case PngColor::rgba: return PNG_COLOR_TYPE_RGB_ALPHA;
    case PngColor::palette: return PNG_COLOR_TYPE_PALETTE;
  }
  return PNG_COLOR_TYPE_GRAY;
}

}  // namespace detail

inline PngRaster decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ImageIoError("not a PNG stream");
  }
  detail::PngErrorSlot errors;
  detail::PngReadCursor cursor{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &errors, detail::png_on_error,
                                           detail::png_on_warning);
  if (png == nullptr) throw ImageIoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError("libpng: cannot create info struct");
  }

  PngRaster out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(std::string("PNG decode failed: ") + errors.message.data());
  }

  png_set_read_fn(png, &cursor, detail::png_read_bytes);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int ctype = png_get_color_type(png, info);
  if (w == 0 || h == 0 || w > (1u << 15) || h > (1u << 15)) png_error(png, "unsupported dimensions");

  switch (ctype) {
    case PNG_COLOR_TYPE_GRAY: out.color = PngColor::gray; out.channels = 1; break;
    case PNG_COLOR_TYPE_GRAY_ALPHA: out.color = PngColor::gray_alpha; out.channels = 2; break;
    case PNG_COLOR_TYPE_RGB: out.color = PngColor::rgb; out.channels = 3; break;
    case PNG_COLOR_TYPE_RGB_ALPHA: out.color = PngColor::rgba; out.channels = 4; break;
    case PNG_COLOR_TYPE_PALETTE: out.color = PngColor::palette; out.channels = 1; break;
    default: png_error(png, "unknown colour type");
  }
  if (ctype == PNG_COLOR_TYPE_PALETTE) {
    png_colorp plte = nullptr;
    int count = 0;
    if (png_get_PLTE(png, info, &plte, &count) != 0) {
      for (int i = 0; i < count; ++i) {
        out.palette.push_back({plte[i].red / 255.0f, plte[i].green / 255.0f, plte[i].blue / 255.0f});
      }
    }
  }
  if (depth < 8) png_set_packing(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t per_row = static_cast<std::size_t>(w) * out.channels;
  out.samples.resize(per_row * h);
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_byte* row = buffer.data() + y * rowbytes;
    for (std::size_t i = 0; i < per_row; ++i) {
      out.samples[y * per_row + i] =
          depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  return out;
}

/// Encodes gray (1 channel), gray+alpha, rgb, rgba or palette rasters at
/// 8 or 16 bits per sample.
inline Bytes encode_png(const PngRaster& raster) {
  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_on_error,
                                            detail::png_on_warning);
  if (png == nullptr) throw ImageIoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng: cannot create info struct");
  }
  detail::PngErrorSlot errors;
  png_set_error_fn(png, &errors, detail::png_on_error, detail::png_on_warning);

  const int depth = raster.bit_depth;
  const std::size_t per_row = static_cast<std::size_t>(raster.width) * raster.channels;
  std::vector<png_byte> buffer(per_row * raster.height * (depth == 16 ? 2 : 1));
  for (std::size_t i = 0; i < per_row * raster.height; ++i) {
    const std::uint16_t v = raster.samples[i];
    if (depth == 16) {
      buffer[2 * i] = static_cast<png_byte>(v >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(v & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(v);
    }
  }
  std::vector<png_color> plte;
  for (const Rgb& c : raster.palette) {
    plte.push_back({static_cast<png_byte>(std::lround(c.r * 255.0f)),
                    static_cast<png_byte>(std::lround(c.g * 255.0f)),
                    static_cast<png_byte>(std::lround(c.b * 255.0f))});
  }
  std::vector<png_bytep> rows(raster.height);
  const std::size_t rowbytes = per_row * (depth == 16 ? 2 : 1);
  for (int y = 0; y < raster.height; ++y) rows[y] = buffer.data() + y * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(std::string("PNG encode failed: ") + errors.message.data());
  }
  png_set_write_fn(png, &out, detail::png_write_bytes, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width),
               static_cast<png_uint_32>(raster.height), depth, detail::png_color_type(raster.color), PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (raster.color == PngColor::palette) {
    png_set_PLTE(png, info, plte.data(), static_cast<int>(plte.size()));
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---------------------------------------------------------------------------
// Masks

/// Raw single-channel values of an 8-bit gray or paletted PNG (palette
/// indices are returned as-is).
inline Grid<std::uint8_t> decode_label_png(std::span<const std::uint8_t> bytes) {
  PngRaster r = decode_png(bytes);
  const bool gray8 = r.color == PngColor::gray && r.bit_depth == 8;
  const bool paletted = r.color == PngColor::palette;
  if (!gray8 && !paletted) {
    throw ImageIoError("mask PNG must be 8-bit gray or paletted (got " +
                       std::to_string(r.channels) + " channel(s) at " +
                       std::to_string(r.bit_depth) + " bits)");
  }
  std::vector<std::uint8_t> values(r.samples.begin(), r.samples.end());
  return Grid<std::uint8_t>(r.width, r.height, std::move(values));
}

inline Grid<std::uint8_t> load_label_png(const std::filesystem::path& path) {
  return decode_label_png(read_file_bytes(path));
}

/// Nonzero pixels become foreground, or only those equal to `instance_id`
/// when one is given.
inline Bitmask mask_from_labels(const Grid<std::uint8_t>& labels,
                                std::optional<int> instance_id = std::nullopt) {
  Bitmask m(labels.width(), labels.height());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m[i] = instance_id ? (labels[i] == *instance_id ? 1 : 0) : (labels[i] != 0 ? 1 : 0);
  }
  return m;
}

inline Bitmask decode_mask_png(std::span<const std::uint8_t> bytes,
                               std::optional<int> instance_id = std::nullopt) {
  return mask_from_labels(decode_label_png(bytes), instance_id);
}

inline Bitmask load_mask(const std::filesystem::path& path,
                         std::optional<int> instance_id = std::nullopt) {
  return decode_mask_png(read_file_bytes(path), instance_id);
}

/// 8-bit gray, foreground 255.
inline Bytes encode_mask_png(const Bitmask& m) {
  PngRaster r{m.width(), m.height(), PngColor::gray, 8, 1, {}, {}};
  r.samples.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) r.samples[i] = m[i] != 0 ? 255 : 0;
  return encode_png(r);
}

inline void save_mask(const Bitmask& m, const std::filesystem::path& path) {
  write_file_bytes(path, encode_mask_png(m));
}

/// Paletted label image; `palette` must cover every value used.
inline Bytes encode_label_png(const Grid<std::uint8_t>& labels, const std::vector<Rgb>& palette) {
  PngRaster r{labels.width(), labels.height(), PngColor::palette, 8, 1, {}, palette};
  r.samples.assign(labels.values().begin(), labels.values().end());
  return encode_png(r);
}

inline Bytes encode_gray8_png(const Grid<std::uint8_t>& g) {
  PngRaster r{g.width(), g.height(), PngColor::gray, 8, 1, {}, {}};
  r.samples.assign(g.values().begin(), g.values().end());
  return encode_png(r);
}

inline Bytes encode_gray16_png(const Grid<std::uint16_t>& g) {
  PngRaster r{g.width(), g.height(), PngColor::gray, 16, 1, {}, {}};
  r.samples.assign(g.values().begin(), g.values().end());
  return encode_png(r);
}

/// Strict: only 16-bit single-channel gray is accepted.
inline Grid<std::uint16_t> decode_gray16_png(std::span<const std::uint8_t> bytes) {
  PngRaster r = decode_png(bytes);
  if (r.color != PngColor::gray || r.bit_depth != 16) {
    throw ImageIoError("expected a 16-bit grayscale PNG");
  }
  return Grid<std::uint16_t>(r.width, r.height, std::move(r.samples));
}

// ---------------------------------------------------------------------------
// Colour images

inline RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes) {
  const PngRaster r = decode_png(bytes);
  const float scale = r.color == PngColor::palette ? 1.0f
                                                   : 1.0f / static_cast<float>((1u << r.bit_depth) - 1u);
  RgbImage img(r.width, r.height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint16_t* s = r.samples.data() + i * r.channels;
    switch (r.color) {
      case PngColor::gray:
      case PngColor::gray_alpha: {
        const float v = s[0] * scale;
        img[i] = {v, v, v};
        break;
      }
      case PngColor::rgb:
      case PngColor::rgba:
        img[i] = {s[0] * scale, s[1] * scale, s[2] * scale};
        break;
      case PngColor::palette:
        if (s[0] >= r.palette.size()) throw ImageIoError("palette index out of range");
        img[i] = r.palette[s[0]];
        break;
    }
  }
  return img;
}

inline RgbImage load_rgb_image(const std::filesystem::path& path) {
  return decode_rgb_png(read_file_bytes(path));
}

inline Bytes encode_rgb_png(const RgbImage& img) {
  PngRaster r{img.width(), img.height(), PngColor::rgb, 8, 3, {}, {}};
  r.samples.resize(img.size() * 3);
  auto q = [](float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (std::size_t i = 0; i < img.size(); ++i) {
    r.samples[3 * i] = q(img[i].r);
    r.samples[3 * i + 1] = q(img[i].g);
    r.samples[3 * i + 2] = q(img[i].b);
  }
  return encode_png(r);
}

inline void save_rgb_image(const RgbImage& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_rgb_png(img));
}

/// Width and height from the IHDR chunk without decoding pixel data.
inline std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  std::array<unsigned char, 24> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  if (in.gcount() != static_cast<std::streamsize>(head.size()) || png_sig_cmp(head.data(), 0, 8) != 0 ||
      std::memcmp(head.data() + 12, "IHDR", 4) != 0) {
    throw ImageIoError("not a PNG file: " + path.string());
  }
  auto be32 = [&](int at) {
    return static_cast<int>((static_cast<std::uint32_t>(head[at]) << 24) | (head[at + 1] << 16) |
                            (head[at + 2] << 8) | head[at + 3]);
  };
  return {be32(16), be32(20)};
}

}  // namespace itis

#endif  // ITIS_PNG_IO_HPP
