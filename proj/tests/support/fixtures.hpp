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

// Shared fixtures for the test suites: scratch directories, random masks and
// the synthetic shape corpus.

#ifndef ITIS_TESTS_FIXTURES_HPP
#define ITIS_TESTS_FIXTURES_HPP

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "itis/image.hpp"
#include "itis/png_io.hpp"
#include "itis/raster.hpp"
#include "itis/rng.hpp"

namespace itis::testing {

/// Directory removed with everything in it on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("itis-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Bitmask random_mask(Rng& rng, int w, int h, double density) {
  Bitmask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(density) ? 1 : 0;
  return m;
}

inline Bitmask mask_from_rows(const std::vector<std::string>& rows) {
  Bitmask m(static_cast<int>(rows.front().size()), static_cast<int>(rows.size()));
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) m(x, y) = rows[y][x] == '#' ? 1 : 0;
  }
  return m;
}

inline void fill_rect(Bitmask& m, int x0, int y0, int x1, int y1) {
  for (int y = std::max(0, y0); y <= std::min(m.height() - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(m.width() - 1, x1); ++x) m(x, y) = 1;
  }
}

inline void fill_disk(Bitmask& m, int cx, int cy, int r) {
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m(x, y) = 1;
    }
  }
}

inline Bitmask centered_square(int size, int side) {
  Bitmask m(size, size);
  const int x0 = (size - side) / 2;
  fill_rect(m, x0, x0, x0 + side - 1, x0 + side - 1);
  return m;
}

struct Shape {
  std::string name;
  Bitmask gt;
};

/// 50 deterministic shapes on 101x101 frames: disks, rectangles, L-shapes and
/// two-component shapes in turn.
inline std::vector<Shape> shape_corpus(int count = 50, int size = 101) {
  Rng rng(20180903);
  std::vector<Shape> out;
  for (int i = 0; i < count; ++i) {
    Bitmask m(size, size);
    std::string kind;
    switch (i % 4) {
      case 0: {
        kind = "disk";
        const int r = static_cast<int>(rng.uniform_int(10, 35));
        fill_disk(m, static_cast<int>(rng.uniform_int(r + 2, size - r - 3)),
                  static_cast<int>(rng.uniform_int(r + 2, size - r - 3)), r);
        break;
      }
      case 1: {
        kind = "rect";
        const int w = static_cast<int>(rng.uniform_int(15, 70));
        const int h = static_cast<int>(rng.uniform_int(15, 70));
        const int x0 = static_cast<int>(rng.uniform_int(3, size - w - 3));
        const int y0 = static_cast<int>(rng.uniform_int(3, size - h - 3));
        fill_rect(m, x0, y0, x0 + w - 1, y0 + h - 1);
        break;
      }
      case 2: {
        kind = "lshape";
        const int len = static_cast<int>(rng.uniform_int(40, 75));
        const int thick = static_cast<int>(rng.uniform_int(12, 25));
        const int x0 = static_cast<int>(rng.uniform_int(3, size - len - 3));
        const int y0 = static_cast<int>(rng.uniform_int(3, size - len - 3));
        fill_rect(m, x0, y0, x0 + thick - 1, y0 + len - 1);
        fill_rect(m, x0, y0 + len - thick, x0 + len - 1, y0 + len - 1);
        break;
      }
      default: {
        kind = "pair";
        const int r1 = static_cast<int>(rng.uniform_int(10, 18));
        const int r2 = static_cast<int>(rng.uniform_int(10, 18));
        const int cy1 = static_cast<int>(rng.uniform_int(25, 75));
        const int cy2 = static_cast<int>(rng.uniform_int(25, 75));
        fill_disk(m, 25, cy1, r1);
        const int side = static_cast<int>(rng.uniform_int(2 * r2 - 4, 2 * r2));
        fill_rect(m, 70 - side / 2, cy2 - side / 2, 70 + side / 2, cy2 + side / 2);
        break;
      }
    }
    out.push_back({kind + "-" + std::to_string(i), std::move(m)});
  }
  return out;
}

/// Gray image with the object brighter than the background.
inline RgbImage shape_image(const Bitmask& gt) {
  RgbImage img(gt.width(), gt.height());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const float v = gt[i] != 0 ? 0.8f : 0.2f;
    img[i] = Rgb{v, v, v};
  }
  return img;
}

/// Writes shapes as a folder-pairs dataset under `root`.
inline void write_folder_pairs(const std::filesystem::path& root, const std::vector<Shape>& shapes) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (const Shape& s : shapes) {
    save_rgb_image(shape_image(s.gt), root / "images" / (s.name + ".png"));
    save_mask(s.gt, root / "masks" / (s.name + ".png"));
  }
}

}  // namespace itis::testing

#endif  // ITIS_TESTS_FIXTURES_HPP
