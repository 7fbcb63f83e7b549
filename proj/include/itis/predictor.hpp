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

#ifndef ITIS_PREDICTOR_HPP
#define ITIS_PREDICTOR_HPP

#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include "itis/errors.hpp"
#include "itis/guidance.hpp"
#include "itis/raster.hpp"

namespace itis {

/// Foreground posterior per pixel, in [0, 1].
using ProbabilityMap = Grid<double>;

/// Foreground iff p > t.
inline Bitmask threshold(const ProbabilityMap& p, double t = 0.5) {
  Bitmask out(p.width(), p.height());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > t ? 1 : 0;
  return out;
}

inline void validate_probability_map(const ProbabilityMap& p) {
  for (double v : p.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error("probability map value outside [0, 1]");
    }
  }
}

/// Voronoi classifier over the clicks: a pixel is foreground iff its nearest
/// click is positive. Equidistant positive/negative clicks resolve to
/// background; no clicks at all gives an all-background map.
inline ProbabilityMap builtin_nearest_click_predict(const ClickSet& clicks, int width, int height) {
  ProbabilityMap out(width, height, 0.0);
  if (!clicks.all_inside(width, height)) throw std::out_of_range("click outside image");
  Bitmask pos(width, height);
  Bitmask neg(width, height);
  for (const Click& c : clicks) (c.polarity == Polarity::positive ? pos : neg).set(c.x, c.y);
  if (pos.none()) return out;
  if (neg.none()) {
    std::fill(out.values().begin(), out.values().end(), 1.0);
    return out;
  }
  // Squared distances are exact integers, so the tie rule is exact too.
  const auto dp = squared_distance_to(pos);
  const auto dn = squared_distance_to(neg);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dp[i] < dn[i] ? 1.0 : 0.0;
  return out;
}

enum class PredictorKind { builtin_nearest_click, external_bridge };

struct PredictorDescriptor {
  PredictorKind kind = PredictorKind::builtin_nearest_click;
  bool uses_mask_channel = false;
  bool concurrency_safe = true;
  std::string endpoint;  // required for external bridges

  std::string name() const {
    return kind == PredictorKind::builtin_nearest_click ? "builtin" : "bridge:" + endpoint;
  }

  void validate() const {
    if (kind == PredictorKind::external_bridge && endpoint.empty()) {
      throw std::invalid_argument("external bridge predictor needs an endpoint");
    }
  }
};

/// Segmentation model boundary. Implementations see the guidance stack and,
/// for predictors that work on click geometry directly, the clicks it encodes.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual PredictorDescriptor descriptor() const = 0;

  /// Returns a map of the stack's dimensions with values in [0, 1].
  ProbabilityMap predict(const GuidanceStack& stack, const ClickSet& clicks) {
    ProbabilityMap p = do_predict(stack, clicks);
    if (p.width() != stack.width() || p.height() != stack.height()) {
      throw DimensionMismatch("predictor returned " + std::to_string(p.width()) + "x" +
                              std::to_string(p.height()) + " for a " + std::to_string(stack.width()) +
                              "x" + std::to_string(stack.height()) + " input");
    }
    validate_probability_map(p);
    return p;
  }

 private:
  virtual ProbabilityMap do_predict(const GuidanceStack& stack, const ClickSet& clicks) = 0;
};

class NearestClickPredictor final : public Predictor {
 public:
  PredictorDescriptor descriptor() const override {
    return {PredictorKind::builtin_nearest_click, false, true, {}};
  }

 private:
  ProbabilityMap do_predict(const GuidanceStack& stack, const ClickSet& clicks) override {
    return builtin_nearest_click_predict(clicks, stack.width(), stack.height());
  }
};

/// Serialises every call into a predictor that is not safe to call
/// concurrently.
class SerializedPredictor final : public Predictor {
 public:
  explicit SerializedPredictor(Predictor& inner) : inner_(inner) {}

  PredictorDescriptor descriptor() const override {
    PredictorDescriptor d = inner_.descriptor();
    d.concurrency_safe = true;
    return d;
  }

 private:
  ProbabilityMap do_predict(const GuidanceStack& stack, const ClickSet& clicks) override {
    std::lock_guard lock(mutex_);
    return inner_.predict(stack, clicks);
  }

  Predictor& inner_;
  std::mutex mutex_;
};

}  // namespace itis

#endif  // ITIS_PREDICTOR_HPP
