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

// Click generation: initial clicks from the ground truth (positive clicks
// plus one of three negative strategies) and correction clicks placed on
// the errors of a predicted mask.

#ifndef ITIS_SAMPLING_HPP
#define ITIS_SAMPLING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "itis/errors.hpp"
#include "itis/guidance.hpp"
#include "itis/raster.hpp"
#include "itis/rng.hpp"

namespace itis {

struct InitialSamplingParams {
  int max_positive = 5;       // n_pos is drawn from [1, max_positive]
  double margin = 5.0;        // min distance from the object boundary
  double spacing = 40.0;      // min distance between clicks
  double outer = 40.0;        // max distance of s1/s3 negatives from the object
  int max_strategy1 = 10;
  int max_strategy2 = 5;      // per negative object
  int strategy3_count = 10;
  int max_attempts = 1000;    // rejection draws per click
  int relaxation_steps = 4;   // halvings before the single-click fallback

  void validate() const {
    if (max_positive < 1 || margin <= 0 || spacing <= 0 || outer <= 0 || max_strategy1 < 1 ||
        max_strategy2 < 1 || strategy3_count < 1 || max_attempts < 1 || relaxation_steps < 0) {
      throw std::invalid_argument("initial sampling parameters must be positive");
    }
    if (margin >= outer) throw std::invalid_argument("margin must be smaller than outer distance");
  }
};

struct InstanceTruth {
  Bitmask gt;
  std::vector<Bitmask> negative_objects;
};

enum class NegativeStrategy { near_boundary = 1, on_negative_objects = 2, boundary_cover = 3 };

inline std::string_view to_string(NegativeStrategy s) {
  switch (s) {
    case NegativeStrategy::near_boundary: return "s1";
    case NegativeStrategy::on_negative_objects: return "s2";
    case NegativeStrategy::boundary_cover: return "s3";
  }
  return "?";
}

struct PositiveSample {
  std::vector<Click> clicks;
  /// 0 when the configured constraints held; k in 1..relaxation_steps when
  /// distances were halved k times; relaxation_steps + 1 for the centre fallback.
  int relaxation_level = 0;
};

struct InitialSample {
  ClickSet clicks;
  NegativeStrategy strategy = NegativeStrategy::near_boundary;
  int relaxation_level = 0;
};

namespace detail {

inline double squared_pixel_distance(int x0, int y0, int x1, int y1) {
  const double dx = x0 - x1;
  const double dy = y0 - y1;
  return dx * dx + dy * dy;
}

inline std::vector<std::size_t> pixel_indices(const Bitmask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0) out.push_back(i);
  }
  return out;
}

// Draws up to `count` candidates, each at least `spacing` from every click in
// `placed` (which grows as clicks are accepted). A click that cannot be placed
// within the attempt budget ends the draw.
inline std::vector<Click> rejection_sample(const std::vector<std::size_t>& candidates, int width,
                                           int count, double spacing, Polarity polarity,
                                           int max_attempts, std::vector<Click>& placed, Rng& rng) {
  std::vector<Click> out;
  if (candidates.empty()) return out;
  const double min_sq = spacing * spacing;
  for (int n = 0; n < count; ++n) {
    bool accepted = false;
    for (int attempt = 0; attempt < max_attempts && !accepted; ++attempt) {
      const std::size_t idx = candidates[rng.uniform_index(candidates.size())];
      const int x = static_cast<int>(idx % width);
      const int y = static_cast<int>(idx / width);
      const bool far = std::all_of(placed.begin(), placed.end(), [&](const Click& c) {
        return squared_pixel_distance(x, y, c.x, c.y) >= min_sq;
      });
      if (!far) continue;
      Click c{x, y, polarity, static_cast<int>(placed.size())};
      placed.push_back(c);
      out.push_back(c);
      accepted = true;
    }
    if (!accepted) break;
  }
  return out;
}

// Uniform pick among the maxima of `score` over `candidates`.
template <typename Score>
std::optional<std::size_t> argmax_random_tie(const std::vector<std::size_t>& candidates,
                                             Score&& score, Rng& rng) {
  if (candidates.empty()) return std::nullopt;
  std::int64_t best = std::numeric_limits<std::int64_t>::min();
  std::vector<std::size_t> ties;
  for (std::size_t idx : candidates) {
    const std::int64_t s = score(idx);
    if (s > best) {
      best = s;
      ties.clear();
    }
    if (s == best) ties.push_back(idx);
  }
  return ties[ties.size() == 1 ? 0 : rng.uniform_index(ties.size())];
}

}  // namespace detail

/// Squared distance of every pixel to the boundary pixel set of `gt`.
inline Grid<std::int64_t> squared_distance_to_boundary(const Bitmask& gt) {
  return squared_distance_to(boundary(gt));
}

/// Positive initial clicks: n_pos ~ U[1, max_positive] object pixels at least
/// `margin` from the object boundary and `spacing` from each other. When no
/// object pixel is `margin` away from the boundary both distances are halved
/// (up to relaxation_steps times) and a single click is returned; failing that,
/// the object's distance-transform maximum is used.
inline PositiveSample sample_positive_initial_detailed(const InstanceTruth& truth,
                                                       const InitialSamplingParams& params,
                                                       Rng& rng) {
  params.validate();
  const Bitmask& gt = truth.gt;
  if (gt.none()) throw std::invalid_argument("positive sampling: ground truth is empty");
  const int w = gt.width();
  const auto to_boundary = squared_distance_to_boundary(gt);

  auto candidates_at = [&](double margin) {
    std::vector<std::size_t> out;
    const double msq = margin * margin;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] != 0 && static_cast<double>(to_boundary[i]) >= msq) out.push_back(i);
    }
    return out;
  };

  const int n_pos = static_cast<int>(rng.uniform_int(1, params.max_positive));
  PositiveSample result;
  {
    const auto candidates = candidates_at(params.margin);
    if (!candidates.empty()) {
      std::vector<Click> placed;
      result.clicks = detail::rejection_sample(candidates, w, n_pos, params.spacing, Polarity::positive,
                                               params.max_attempts, placed, rng);
      return result;
    }
  }
  double margin = params.margin;
  for (int level = 1; level <= params.relaxation_steps; ++level) {
    margin *= 0.5;
    const auto candidates = candidates_at(margin);
    if (candidates.empty()) continue;
    const std::size_t idx = candidates[rng.uniform_index(candidates.size())];
    result.clicks = {Click{static_cast<int>(idx % w), static_cast<int>(idx / w), Polarity::positive, 0}};
    result.relaxation_level = level;
    return result;
  }
  const auto interior = squared_distance_to_background_bordered(gt);
  const auto pixels = detail::pixel_indices(gt);
  const std::size_t idx =
      *detail::argmax_random_tie(pixels, [&](std::size_t i) { return interior[i]; }, rng);
  result.clicks = {Click{static_cast<int>(idx % w), static_cast<int>(idx / w), Polarity::positive, 0}};
  result.relaxation_level = params.relaxation_steps + 1;
  return result;
}

inline std::vector<Click> sample_positive_initial(const InstanceTruth& truth,
                                                  const InitialSamplingParams& params, Rng& rng) {
  return sample_positive_initial_detailed(truth, params, rng).clicks;
}

/// Background pixels whose distance to the object lies in [margin, outer].
inline Bitmask negative_band(const Bitmask& gt, double margin, double outer) {
  Bitmask band(gt.width(), gt.height());
  if (gt.none()) return band;
  const auto to_gt = squared_distance_to(gt);
  const double lo = margin * margin;
  const double hi = outer * outer;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(to_gt[i]);
    band[i] = (gt[i] == 0 && d >= lo && d <= hi) ? 1 : 0;
  }
  return band;
}

/// Negative initial clicks for one strategy:
///   s1  n1 ~ U[0, max_strategy1] background clicks in the margin..outer band,
///       at least `spacing` apart;
///   s2  n2 ~ U[0, max_strategy2] clicks on each negative object (n2 drawn once
///       per call), at least `margin` from the object and `spacing` apart;
///   s3  strategy3_count clicks picked by greedy farthest-point selection from
///       the band, covering the ring around the object.
/// An empty candidate set yields no clicks.
inline std::vector<Click> sample_negative_initial(const InstanceTruth& truth, NegativeStrategy strategy,
                                                  const InitialSamplingParams& params, Rng& rng) {
  params.validate();
  const Bitmask& gt = truth.gt;
  const int w = gt.width();
  std::vector<Click> placed;

  switch (strategy) {
    case NegativeStrategy::near_boundary: {
      const int n1 = static_cast<int>(rng.uniform_int(0, params.max_strategy1));
      const auto candidates = detail::pixel_indices(negative_band(gt, params.margin, params.outer));
      return detail::rejection_sample(candidates, w, n1, params.spacing, Polarity::negative,
                                      params.max_attempts, placed, rng);
    }
    case NegativeStrategy::on_negative_objects: {
      if (truth.negative_objects.empty()) return {};
      const int n2 = static_cast<int>(rng.uniform_int(0, params.max_strategy2));
      const auto to_gt = squared_distance_to(gt);
      const double msq = params.margin * params.margin;
      std::vector<Click> out;
      for (const Bitmask& object : truth.negative_objects) {
        require_same_shape(gt, object, "negative object");
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < object.size(); ++i) {
          if (object[i] != 0 && gt[i] == 0 && (to_gt[i] < 0 || static_cast<double>(to_gt[i]) >= msq)) {
            candidates.push_back(i);
          }
        }
        auto got = detail::rejection_sample(candidates, w, n2, params.spacing, Polarity::negative,
                                            params.max_attempts, placed, rng);
        out.insert(out.end(), got.begin(), got.end());
      }
      return out;
    }
    case NegativeStrategy::boundary_cover: {
      const auto band = detail::pixel_indices(negative_band(gt, params.margin, params.outer));
      if (band.empty()) return {};
      std::vector<std::int64_t> nearest(band.size(), std::numeric_limits<std::int64_t>::max());
      std::vector<Click> out;
      std::vector<std::size_t> order(band.size());
      for (std::size_t i = 0; i < band.size(); ++i) order[i] = i;
      std::size_t pick = rng.uniform_index(band.size());
      for (int n = 0; n < params.strategy3_count; ++n) {
        const int x = static_cast<int>(band[pick] % w);
        const int y = static_cast<int>(band[pick] / w);
        out.push_back(Click{x, y, Polarity::negative, n});
        for (std::size_t i = 0; i < band.size(); ++i) {
          const auto d = static_cast<std::int64_t>(detail::squared_pixel_distance(
              static_cast<int>(band[i] % w), static_cast<int>(band[i] / w), x, y));
          nearest[i] = std::min(nearest[i], d);
        }
        if (n + 1 == params.strategy3_count) break;
        const std::size_t next =
            *detail::argmax_random_tie(order, [&](std::size_t i) { return nearest[i]; }, rng);
        if (nearest[next] == 0) break;  // band exhausted
        pick = next;
      }
      return out;
    }
  }
  return {};
}

/// Positive clicks plus negatives from one strategy drawn uniformly from
/// {s1, s2, s3}. Rounds follow the insertion order, positives first.
inline InitialSample sample_initial_clicks_detailed(const InstanceTruth& truth,
                                                    const InitialSamplingParams& params, Rng& rng) {
  InitialSample out;
  const PositiveSample pos = sample_positive_initial_detailed(truth, params, rng);
  out.relaxation_level = pos.relaxation_level;
  out.strategy = static_cast<NegativeStrategy>(rng.uniform_int(1, 3));
  const auto neg = sample_negative_initial(truth, out.strategy, params, rng);
  for (const Click& c : pos.clicks) out.clicks.add(c.x, c.y, Polarity::positive);
  for (const Click& c : neg) {
    if (!out.clicks.contains(c.x, c.y, Polarity::negative)) out.clicks.add(c.x, c.y, Polarity::negative);
  }
  return out;
}

inline ClickSet sample_initial_clicks(const InstanceTruth& truth, const InitialSamplingParams& params,
                                      Rng& rng) {
  return sample_initial_clicks_detailed(truth, params, rng).clicks;
}

// ---------------------------------------------------------------------------
// Correction clicks

enum class SamplerKind { iterative_largest, cluster, random };

inline std::string_view to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::iterative_largest: return "iterative-largest";
    case SamplerKind::cluster: return "cluster";
    case SamplerKind::random: return "random";
  }
  return "?";
}

inline SamplerKind parse_sampler(std::string_view name) {
  if (name == "iterative-largest") return SamplerKind::iterative_largest;
  if (name == "cluster") return SamplerKind::cluster;
  if (name == "random") return SamplerKind::random;
  throw std::invalid_argument("unknown sampler '" + std::string(name) + "'");
}

/// Every misclassified pixel already carries a click, so no new click can be
/// placed. Distinct from the no-error case, which is signalled by nullopt.
class SamplingExhausted : public Error {
 public:
  using Error::Error;
};

namespace detail {

struct ErrorClusters {
  LabelMap labels;
  std::vector<std::vector<std::size_t>> free_pixels;  // per label, pixels without a click
};

inline ErrorClusters error_clusters(const Bitmask& pred, const Bitmask& gt, const ClickSet& existing,
                                    Connectivity connectivity) {
  require_same_shape(pred, gt, "correction sampling");
  ErrorClusters out{connected_components(mask_xor(pred, gt), connectivity), {}};
  out.free_pixels.resize(out.labels.sizes.size());
  Bitmask occupied(gt.width(), gt.height());
  for (const Click& c : existing) {
    if (occupied.contains(c.x, c.y)) occupied.set(c.x, c.y);
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t k = out.labels.labels[i];
    if (k != 0 && occupied[i] == 0) out.free_pixels[k].push_back(i);
  }
  return out;
}

inline Click make_click(std::size_t idx, const Bitmask& gt, const ClickSet& existing) {
  const int x = static_cast<int>(idx % gt.width());
  const int y = static_cast<int>(idx / gt.width());
  return Click{x, y, gt.test(x, y) ? Polarity::positive : Polarity::negative, existing.next_round()};
}

}  // namespace detail

/// Iterative click addition. The error mask pred XOR gt is split into
/// connected components and the largest one (by pixel count, lowest label on
/// ties) is selected. The click goes to the pixel maximising
///   min(distance to the cluster complement, distance to the nearest earlier
///       click lying inside the cluster)
/// with uniform tie-breaking; pixels outside the image count as complement.
/// Polarity is positive iff the ground truth is foreground there.
/// Returns nullopt when pred equals gt.
inline std::optional<Click> next_correction_click(const Bitmask& pred, const Bitmask& gt,
                                                  const ClickSet& existing, Rng& rng,
                                                  Connectivity connectivity = Connectivity::four) {
  auto clusters = detail::error_clusters(pred, gt, existing, connectivity);
  const int count = clusters.labels.component_count();
  if (count == 0) return std::nullopt;

  std::vector<std::int32_t> order(count);
  for (int k = 0; k < count; ++k) order[k] = k + 1;
  std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    return clusters.labels.sizes[a] > clusters.labels.sizes[b];
  });

  for (const std::int32_t label : order) {
    const auto& candidates = clusters.free_pixels[label];
    if (candidates.empty()) continue;
    const Bitmask cluster = component_mask(clusters.labels, label);
    const auto to_edge = squared_distance_to_background_bordered(cluster);
    std::vector<Click> inside;
    for (const Click& c : existing) {
      if (cluster.contains(c.x, c.y) && cluster.test(c.x, c.y)) inside.push_back(c);
    }
    const int w = gt.width();
    auto score = [&](std::size_t idx) {
      std::int64_t s = to_edge[idx];
      const int x = static_cast<int>(idx % w);
      const int y = static_cast<int>(idx / w);
      for (const Click& c : inside) {
        const std::int64_t dx = x - c.x;
        const std::int64_t dy = y - c.y;
        s = std::min(s, dx * dx + dy * dy);
      }
      return s;
    };
    const std::size_t idx = *detail::argmax_random_tie(candidates, score, rng);
    return detail::make_click(idx, gt, existing);
  }
  throw SamplingExhausted("every misclassified pixel already holds a click");
}

/// Cluster sampling: a cluster is drawn with probability proportional to its
/// size and the click goes to its distance-transform maximum (ties random).
inline std::optional<Click> next_click_cluster_sampling(const Bitmask& pred, const Bitmask& gt,
                                                        const ClickSet& existing, Rng& rng,
                                                        Connectivity connectivity = Connectivity::four) {
  auto clusters = detail::error_clusters(pred, gt, existing, connectivity);
  const int count = clusters.labels.component_count();
  if (count == 0) return std::nullopt;

  std::int64_t total = 0;
  for (int k = 1; k <= count; ++k) {
    if (!clusters.free_pixels[k].empty()) total += static_cast<std::int64_t>(clusters.labels.sizes[k]);
  }
  if (total == 0) throw SamplingExhausted("every misclassified pixel already holds a click");
  std::int64_t r = rng.uniform_int(0, total - 1);
  std::int32_t label = 0;
  for (int k = 1; k <= count; ++k) {
    if (clusters.free_pixels[k].empty()) continue;
    const auto size = static_cast<std::int64_t>(clusters.labels.sizes[k]);
    if (r < size) {
      label = k;
      break;
    }
    r -= size;
  }
  const auto to_edge = squared_distance_to_background_bordered(component_mask(clusters.labels, label));
  const std::size_t idx = *detail::argmax_random_tie(
      clusters.free_pixels[label], [&](std::size_t i) { return to_edge[i]; }, rng);
  return detail::make_click(idx, gt, existing);
}

/// Random sampling: a uniform pixel of the whole misclassified region.
inline std::optional<Click> next_click_random(const Bitmask& pred, const Bitmask& gt,
                                              const ClickSet& existing, Rng& rng) {
  require_same_shape(pred, gt, "random sampling");
  std::vector<std::size_t> errors;
  bool any_error = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if ((pred[i] != 0) == (gt[i] != 0)) continue;
    any_error = true;
    const int x = static_cast<int>(i % gt.width());
    const int y = static_cast<int>(i / gt.width());
    if (!existing.occupies(x, y)) errors.push_back(i);
  }
  if (!any_error) return std::nullopt;
  if (errors.empty()) throw SamplingExhausted("every misclassified pixel already holds a click");
  return detail::make_click(errors[rng.uniform_index(errors.size())], gt, existing);
}

inline std::optional<Click> next_click(SamplerKind kind, const Bitmask& pred, const Bitmask& gt,
                                       const ClickSet& existing, Rng& rng,
                                       Connectivity connectivity = Connectivity::four) {
  switch (kind) {
    case SamplerKind::iterative_largest:
      return next_correction_click(pred, gt, existing, rng, connectivity);
    case SamplerKind::cluster:
      return next_click_cluster_sampling(pred, gt, existing, rng, connectivity);
    case SamplerKind::random:
      return next_click_random(pred, gt, existing, rng);
  }
  return std::nullopt;
}

}  // namespace itis

#endif  // ITIS_SAMPLING_HPP
