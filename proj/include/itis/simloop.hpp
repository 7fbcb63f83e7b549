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

// Iterative training orchestration: per-object click state that gains one
// correction click per epoch from the previous epoch's prediction and is
// re-initialised with a fixed reset probability. Also the training-side pure
// functions (bootstrapped cross-entropy, constrained crops, gamma).

#ifndef ITIS_SIMLOOP_HPP
#define ITIS_SIMLOOP_HPP

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "itis/guidance.hpp"
#include "itis/image.hpp"
#include "itis/predictor.hpp"
#include "itis/raster.hpp"
#include "itis/rng.hpp"
#include "itis/sampling.hpp"

namespace itis {

struct LoopConfig {
  double reset_probability = 0.3;
  double bootstrap_fraction = 0.25;
  int crop_size = 350;
  int max_epochs = 20;
  bool use_mask_channel = false;
  InitialSamplingParams sampling{};
  Connectivity connectivity = Connectivity::four;
  GuidanceOptions guidance{};

  void validate() const {
    if (!(reset_probability >= 0.0 && reset_probability <= 1.0)) {
      throw std::invalid_argument("reset probability must be in [0, 1]");
    }
    if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0)) {
      throw std::invalid_argument("bootstrap fraction must be in (0, 1]");
    }
    if (crop_size < 1 || max_epochs < 0) throw std::invalid_argument("bad crop size or epoch count");
    sampling.validate();
  }
};

struct ObjectTrainState {
  std::string instance_id;
  ClickSet clicks;
  Bitmask prev_mask;  // prediction of the previous epoch; empty after a reset
  bool mask_channel_enabled = false;
  int epoch = 0;
};

/// Fresh state: initial clicks and an empty previous mask.
inline ObjectTrainState make_train_state(std::string instance_id, const InstanceTruth& truth, Rng& rng,
                                         const LoopConfig& config) {
  ObjectTrainState s;
  s.instance_id = std::move(instance_id);
  s.clicks = sample_initial_clicks(truth, config.sampling, rng);
  s.prev_mask = Bitmask(truth.gt.width(), truth.gt.height());
  s.mask_channel_enabled = config.use_mask_channel;
  return s;
}

struct EpochUpdate {
  ObjectTrainState state;
  bool reset = false;
};

/// Start-of-epoch update. With probability p_r the clicks are resampled and
/// the previous mask emptied; otherwise one correction click is added from
/// the previous mask (nothing changes if that mask is already perfect).
inline EpochUpdate epoch_update(const ObjectTrainState& state, const InstanceTruth& truth, Rng& rng,
                                const LoopConfig& config) {
  EpochUpdate out{state, false};
  if (rng.bernoulli(config.reset_probability)) {
    out.reset = true;
    out.state.clicks = sample_initial_clicks(truth, config.sampling, rng);
    out.state.prev_mask = Bitmask(truth.gt.width(), truth.gt.height());
  } else if (auto click =
                 next_correction_click(state.prev_mask, truth.gt, state.clicks, rng, config.connectivity)) {
    out.state.clicks.push(*click);
  }
  ++out.state.epoch;
  return out;
}

/// Mean of the ceil(k * N) largest per-pixel cross-entropies, with
/// probabilities clamped to [eps, 1 - eps].
inline double bootstrapped_ce(const ProbabilityMap& p, const Bitmask& gt, double k = 0.25,
                              double eps = 1e-7) {
  require_same_shape(p, gt, "bootstrapped_ce");
  if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("bootstrap fraction must be in (0, 1]");
  std::vector<double> losses(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    losses[i] = gt[i] != 0 ? -std::log(q) : -std::log(1.0 - q);
  }
  const double n = static_cast<double>(losses.size());
  // The small slack keeps k * N that should be an integer from rounding up.
  auto m = static_cast<std::size_t>(std::ceil(k * n - 1e-9));
  m = std::clamp<std::size_t>(m, 1, losses.size());
  std::partial_sort(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(m), losses.end(),
                    std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += losses[i];
  return sum / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Crops and augmentation

inline RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
  RgbImage out(width, height);
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const float ty = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const float tx = static_cast<float>(fx - x0);
      auto mix = [&](float Rgb::*ch) {
        const float top = img(x0, y0).*ch * (1 - tx) + img(x1, y0).*ch * tx;
        const float bot = img(x0, y1).*ch * (1 - tx) + img(x1, y1).*ch * tx;
        return top * (1 - ty) + bot * ty;
      };
      out(x, y) = {mix(&Rgb::r), mix(&Rgb::g), mix(&Rgb::b)};
    }
  }
  return out;
}

/// Nearest-neighbour; never loses objects when upscaling.
inline Bitmask resize_nearest(const Bitmask& m, int width, int height) {
  Bitmask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height() - 1, static_cast<int>((y + 0.5) * m.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width() - 1, static_cast<int>((x + 0.5) * m.width() / width));
      out(x, y) = m(sx, sy);
    }
  }
  return out;
}

struct TrainingCrop {
  RgbImage image;
  Bitmask gt;
  int offset_x = 0;  // in the (possibly upscaled) frame
  int offset_y = 0;
  double scale = 1.0;
};

/// Upscales so the smaller side reaches `crop` (bilinear for the image,
/// nearest for the mask), then draws a uniform crop that overlaps the object.
/// After `max_draws` misses the crop is centred on a random object pixel.
inline TrainingCrop sample_training_crop(const RgbImage& image, const Bitmask& gt, Rng& rng,
                                         int crop = 350, int max_draws = 100) {
  require_same_shape(image, gt, "sample_training_crop");
  if (gt.none()) throw std::invalid_argument("training crop: ground truth is empty");
  TrainingCrop out;
  const int min_side = std::min(image.width(), image.height());
  RgbImage scaled_img = image;
  Bitmask scaled_gt = gt;
  if (min_side < crop) {
    out.scale = static_cast<double>(crop) / min_side;
    const int w = image.width() == min_side ? crop : static_cast<int>(std::lround(image.width() * out.scale));
    const int h = image.height() == min_side ? crop : static_cast<int>(std::lround(image.height() * out.scale));
    scaled_img = resize_bilinear(image, w, h);
    scaled_gt = resize_nearest(gt, w, h);
  }
  const int w = scaled_gt.width();
  const int h = scaled_gt.height();

  // Summed-area table for O(1) overlap tests.
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  auto at = [&](int x, int y) -> std::int64_t& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      at(x + 1, y + 1) = (scaled_gt.test(x, y) ? 1 : 0) + at(x, y + 1) + at(x + 1, y) - at(x, y);
    }
  }
  auto overlap = [&](int ox, int oy) {
    return at(ox + crop, oy + crop) - at(ox, oy + crop) - at(ox + crop, oy) + at(ox, oy) > 0;
  };

  int ox = 0;
  int oy = 0;
  bool found = false;
  for (int draw = 0; draw < max_draws && !found; ++draw) {
    ox = static_cast<int>(rng.uniform_int(0, w - crop));
    oy = static_cast<int>(rng.uniform_int(0, h - crop));
    found = overlap(ox, oy);
  }
  if (!found) {
    const auto pixels = detail::pixel_indices(scaled_gt);
    const std::size_t idx = pixels[rng.uniform_index(pixels.size())];
    ox = std::clamp(static_cast<int>(idx % w) - crop / 2, 0, w - crop);
    oy = std::clamp(static_cast<int>(idx / w) - crop / 2, 0, h - crop);
  }
  out.offset_x = ox;
  out.offset_y = oy;
  out.image = RgbImage(crop, crop);
  out.gt = Bitmask(crop, crop);
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      out.image(x, y) = scaled_img(ox + x, oy + y);
      out.gt(x, y) = scaled_gt(ox + x, oy + y);
    }
  }
  return out;
}

inline RgbImage apply_gamma(const RgbImage& image, double gamma) {
  RgbImage out = image;
  const auto g = static_cast<float>(gamma);
  for (Rgb& px : out.values()) {
    px.r = std::pow(std::clamp(px.r, 0.0f, 1.0f), g);
    px.g = std::pow(std::clamp(px.g, 0.0f, 1.0f), g);
    px.b = std::pow(std::clamp(px.b, 0.0f, 1.0f), g);
  }
  return out;
}

/// Log-uniform gamma in [lo, hi].
inline double draw_gamma(Rng& rng, double lo = 0.7, double hi = 1.5) {
  return std::exp(rng.uniform_real(std::log(lo), std::log(hi)));
}

inline RgbImage gamma_augment(const RgbImage& image, Rng& rng, double lo = 0.7, double hi = 1.5) {
  return apply_gamma(image, draw_gamma(rng, lo, hi));
}

// ---------------------------------------------------------------------------
// Loop driver

struct TrainObject {
  std::string instance_id;
  InstanceTruth truth;
  RgbImage image;
};

using LossFn = std::function<double(const ProbabilityMap&, const Bitmask&)>;

/// Learner slot: receives the epoch's input, target and loss; returns the
/// loss it observed, if any.
using TrainStep =
    std::function<std::optional<double>(const GuidanceStack&, const Bitmask& gt, const LossFn& loss)>;

struct LoopRecord {
  int epoch = 0;
  std::string instance_id;
  bool reset = false;
  std::size_t click_count = 0;
  std::optional<double> loss;
  double prev_iou = 0.0;  // IoU of the mask carried into this epoch
};

inline nlohmann::json to_json(const LoopRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"instance", r.instance_id},
                   {"reset", r.reset},
                   {"clicks", r.click_count},
                   {"prev_iou", r.prev_iou}};
  if (r.loss) j["loss"] = *r.loss;
  return j;
}

/// Runs `config.max_epochs` epochs over all objects. Each object owns a
/// generator seeded from the master seed and its id, so results do not depend
/// on `jobs`. Records are returned (and logged as JSON lines) in epoch-major,
/// object order.
inline std::vector<LoopRecord> run_training_loop(const std::vector<TrainObject>& objects,
                                                 Predictor& predictor, const LoopConfig& config,
                                                 std::uint64_t master_seed, int jobs = 1,
                                                 const TrainStep& train_step = {},
                                                 std::ostream* log = nullptr) {
  config.validate();
  const std::size_t n = objects.size();
  if (!predictor.descriptor().concurrency_safe) jobs = 1;
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));

  std::vector<Rng> rngs;
  std::vector<ObjectTrainState> states;
  rngs.reserve(n);
  states.reserve(n);
  for (const TrainObject& o : objects) {
    rngs.emplace_back(derive_seed(master_seed, o.instance_id));
    states.push_back(make_train_state(o.instance_id, o.truth, rngs.back(), config));
  }
  const LossFn loss = [k = config.bootstrap_fraction](const ProbabilityMap& p, const Bitmask& gt) {
    return bootstrapped_ce(p, gt, k);
  };

  std::vector<LoopRecord> all;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<LoopRecord> records(n);
    auto step = [&](std::size_t i) {
      const TrainObject& o = objects[i];
      bool reset = false;
      if (epoch > 0) {
        EpochUpdate u = epoch_update(states[i], o.truth, rngs[i], config);
        states[i] = std::move(u.state);
        reset = u.reset;
      }
      ObjectTrainState& s = states[i];
      LoopRecord& r = records[i];
      r.epoch = epoch;
      r.instance_id = o.instance_id;
      r.reset = reset;
      r.click_count = s.clicks.size();
      r.prev_iou = iou(s.prev_mask, o.truth.gt);
      const GuidanceStack stack =
          assemble_stack(o.image, s.clicks, s.mask_channel_enabled ? &s.prev_mask : nullptr, config.guidance);
      if (train_step) r.loss = train_step(stack, o.truth.gt, loss);
      s.prev_mask = threshold(predictor.predict(stack, s.clicks));
    };
    if (jobs == 1) {
      for (std::size_t i = 0; i < n; ++i) step(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      std::exception_ptr failure;
      std::mutex failure_mutex;
      for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < n; i = next++) {
            try {
              step(i);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
      for (auto& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    }
    for (LoopRecord& r : records) {
      if (log != nullptr) *log << to_json(r).dump() << '\n';
      all.push_back(std::move(r));
    }
  }
  return all;
}

}  // namespace itis

#endif  // ITIS_SIMLOOP_HPP
