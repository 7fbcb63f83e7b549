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

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "itis/rng.hpp"
#include "itis/sampling.hpp"
#include "oracles.hpp"

namespace itis {
namespace {

using testing::brute_maximin_ties;
using testing::fill_disk;
using testing::fill_rect;

InstanceTruth disk_truth(int size, int r) {
  Bitmask gt(size, size);
  fill_disk(gt, size / 2, size / 2, r);
  return {gt, {}};
}

// --- constraint checkers and oracles ----------------------------------------

TEST(PositiveInitial, DiskClicksSatisfySpacingAndMargin) {
  const InstanceTruth truth = disk_truth(200, 40);
  const auto to_boundary = testing::brute_squared_distance(boundary(truth.gt));
  const InitialSamplingParams params;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const PositiveSample s = sample_positive_initial_detailed(truth, params, rng);
    ASSERT_EQ(s.relaxation_level, 0);
    ASSERT_GE(s.clicks.size(), 1u);
    ASSERT_LE(s.clicks.size(), 5u);
    for (std::size_t i = 0; i < s.clicks.size(); ++i) {
      const Click& a = s.clicks[i];
      ASSERT_TRUE(truth.gt.test(a.x, a.y));
      ASSERT_EQ(a.polarity, Polarity::positive);
      ASSERT_GE(to_boundary(a.x, a.y), 25);
      for (std::size_t j = i + 1; j < s.clicks.size(); ++j) {
        ASSERT_GE(std::hypot(a.x - s.clicks[j].x, a.y - s.clicks[j].y), 40.0);
      }
    }
  }
}

TEST(NegativeInitial, NearBoundaryClicksStayInTheBand) {
  const InstanceTruth truth = disk_truth(150, 25);
  const auto to_gt = testing::brute_squared_distance(truth.gt);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto clicks = sample_negative_initial(truth, NegativeStrategy::near_boundary, {}, rng);
    ASSERT_LE(clicks.size(), 10u);
    for (std::size_t i = 0; i < clicks.size(); ++i) {
      const Click& c = clicks[i];
      ASSERT_FALSE(truth.gt.test(c.x, c.y));
      ASSERT_GE(to_gt(c.x, c.y), 25);
      ASSERT_LE(to_gt(c.x, c.y), 1600);
      for (std::size_t j = i + 1; j < clicks.size(); ++j) {
        ASSERT_GE(std::hypot(c.x - clicks[j].x, c.y - clicks[j].y), 40.0);
      }
    }
  }
}

TEST(NegativeInitial, BoundaryCoverSurroundsACentredDisk) {
  const InstanceTruth truth = disk_truth(201, 30);
  const auto to_gt = testing::brute_squared_distance(truth.gt);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto clicks = sample_negative_initial(truth, NegativeStrategy::boundary_cover, {}, rng);
    ASSERT_EQ(clicks.size(), 10u);
    for (const Click& c : clicks) {
      ASSERT_GE(to_gt(c.x, c.y), 25);
      ASSERT_LE(to_gt(c.x, c.y), 1600);
    }
    EXPECT_LE(testing::max_angular_gap(clicks, 100, 100), 72.0) << "seed " << seed;
  }
}

TEST(NegativeInitial, NegativeObjectClicksLandOnThoseObjects) {
  Bitmask gt(100, 100);
  fill_rect(gt, 40, 40, 59, 59);
  Bitmask a(100, 100);
  fill_rect(a, 0, 0, 20, 99);
  Bitmask b(100, 100);
  fill_rect(b, 80, 10, 99, 30);
  const InstanceTruth truth{gt, {a, b}};
  std::size_t total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto clicks = sample_negative_initial(truth, NegativeStrategy::on_negative_objects, {}, rng);
    total += clicks.size();
    for (const Click& c : clicks) ASSERT_TRUE(a.test(c.x, c.y) || b.test(c.x, c.y));
  }
  EXPECT_GT(total, 0u);
  Rng rng(0);
  EXPECT_TRUE(sample_negative_initial({gt, {}}, NegativeStrategy::on_negative_objects, {}, rng).empty());
}

TEST(CorrectionClick, MatchesBruteForceMaximinOnRandomPairs) {
  Rng gen(31);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int w = static_cast<int>(gen.uniform_int(2, 30));
    const int h = static_cast<int>(gen.uniform_int(2, 30));
    const Bitmask gt = testing::random_mask(gen, w, h, 0.5);
    const Bitmask pred = testing::random_mask(gen, w, h, 0.5);
    ClickSet existing;
    const int prior = static_cast<int>(gen.uniform_int(0, 3));
    for (int k = 0; k < prior; ++k) {
      const int x = static_cast<int>(gen.uniform_int(0, w - 1));
      const int y = static_cast<int>(gen.uniform_int(0, h - 1));
      if (!existing.occupies(x, y)) existing.add(x, y, gt.test(x, y) ? Polarity::positive : Polarity::negative);
    }
    const Connectivity conn = trial % 2 == 0 ? Connectivity::four : Connectivity::eight;
    const auto ties = brute_maximin_ties(pred, gt, existing, conn);
    Rng rng(trial);
    std::optional<Click> got;
    try {
      got = next_correction_click(pred, gt, existing, rng, conn);
    } catch (const SamplingExhausted&) {
      ASSERT_TRUE(ties.empty());
      continue;
    }
    if (pred == gt) {
      ASSERT_FALSE(got.has_value());
      continue;
    }
    ASSERT_TRUE(got.has_value());
    ASSERT_TRUE(ties.count({got->x, got->y})) << "trial " << trial;
    ASSERT_EQ(got->polarity == Polarity::positive, gt.test(got->x, got->y));
    ASSERT_EQ(got->round, existing.next_round());
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(CorrectionClick, EmptyPredictionOnCentredSquareClicksTheCentre) {
  const Bitmask gt = testing::centered_square(101, 21);
  Rng rng(1);
  const auto c = next_correction_click(Bitmask(101, 101), gt, {}, rng);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->x, 50);
  EXPECT_EQ(c->y, 50);
  EXPECT_EQ(c->polarity, Polarity::positive);
}

TEST(CorrectionClick, PicksTheLargestCluster) {
  Bitmask gt(40, 40);
  fill_rect(gt, 2, 2, 11, 6);     // 50 pixels
  fill_rect(gt, 30, 30, 36, 30);  // 7 pixels
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto c = next_correction_click(Bitmask(40, 40), gt, {}, rng);
    ASSERT_TRUE(c.has_value());
    EXPECT_TRUE(c->x >= 2 && c->x <= 11 && c->y >= 2 && c->y <= 6);
  }
}

TEST(CorrectionClick, NoErrorAndExhaustedAreDistinct) {
  Bitmask gt(5, 5);
  gt.set(2, 2);
  Rng rng(0);
  EXPECT_FALSE(next_correction_click(gt, gt, {}, rng).has_value());
  ClickSet on_it;
  on_it.add(2, 2, Polarity::positive);
  EXPECT_THROW(next_correction_click(Bitmask(5, 5), gt, on_it, rng), SamplingExhausted);
  EXPECT_THROW(next_click_random(Bitmask(5, 5), gt, on_it, rng), SamplingExhausted);
  EXPECT_THROW(next_click_cluster_sampling(Bitmask(5, 5), gt, on_it, rng), SamplingExhausted);
}

TEST(CorrectionClick, DeterministicForAFixedSeed) {
  Rng gen(5);
  const Bitmask gt = testing::random_mask(gen, 30, 30, 0.5);
  const Bitmask pred(30, 30);
  for (SamplerKind k : {SamplerKind::iterative_largest, SamplerKind::cluster, SamplerKind::random}) {
    Rng a(99);
    Rng b(99);
    EXPECT_EQ(next_click(k, pred, gt, {}, a), next_click(k, pred, gt, {}, b));
  }
}

// --- relaxation and strategy draw -------------------------------------------

TEST(PositiveInitial, TinyObjectGetsExactlyOneRelaxedClick) {
  Bitmask gt(20, 20);
  fill_rect(gt, 8, 8, 10, 10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PositiveSample s = sample_positive_initial_detailed({gt, {}}, {}, rng);
    ASSERT_EQ(s.clicks.size(), 1u);
    EXPECT_GT(s.relaxation_level, 0);
    EXPECT_TRUE(gt.test(s.clicks[0].x, s.clicks[0].y));
  }
  Bitmask dot(9, 9);
  dot.set(4, 4);
  Rng rng(3);
  const PositiveSample s = sample_positive_initial_detailed({dot, {}}, {}, rng);
  EXPECT_EQ(s.clicks, (std::vector<Click>{{4, 4, Polarity::positive, 0}}));
}

TEST(PositiveInitial, EmptyGroundTruthThrowsAndSeedIsDeterministic) {
  Rng rng(0);
  EXPECT_THROW(sample_positive_initial({Bitmask(5, 5), {}}, {}, rng), std::invalid_argument);
  const InstanceTruth truth = disk_truth(120, 30);
  Rng a(77);
  Rng b(77);
  EXPECT_EQ(sample_positive_initial(truth, {}, a), sample_positive_initial(truth, {}, b));
}

TEST(InitialClicks, StrategiesAreDrawnUniformly) {
  const InstanceTruth truth = disk_truth(60, 12);
  std::map<NegativeStrategy, int> counts;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    Rng rng(seed);
    const InitialSample s = sample_initial_clicks_detailed(truth, {}, rng);
    ++counts[s.strategy];
    ASSERT_FALSE(s.clicks.positives().empty());
    for (const Click& c : s.clicks.negatives()) ASSERT_FALSE(truth.gt.test(c.x, c.y));
  }
  for (auto [strategy, n] : counts) EXPECT_NEAR(n / 3000.0, 1.0 / 3.0, 0.05) << to_string(strategy);
}

TEST(NegativeInitial, FrameFillingObjectYieldsNoClicks) {
  Bitmask full(10, 10);
  std::fill(full.values().begin(), full.values().end(), 1);
  Rng rng(0);
  EXPECT_TRUE(sample_negative_initial({full, {}}, NegativeStrategy::near_boundary, {}, rng).empty());
  EXPECT_TRUE(sample_negative_initial({full, {}}, NegativeStrategy::boundary_cover, {}, rng).empty());
}

// --- generalisation samplers ------------------------------------------------

TEST(ClusterSampling, SelectionFrequencyIsSizeProportional) {
  Bitmask gt(60, 30);
  fill_rect(gt, 0, 0, 8, 9);     // 90 pixels
  fill_rect(gt, 40, 20, 49, 20); // 10 pixels
  int in_big = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    Rng rng(seed);
    const auto c = next_click_cluster_sampling(Bitmask(60, 30), gt, {}, rng);
    if (c->x <= 8) ++in_big;
  }
  EXPECT_NEAR(in_big / 2000.0, 0.9, 0.03);
}

TEST(ClusterSampling, SingleClusterMatchesCorrectionClickTieSet) {
  Bitmask gt(30, 30);
  fill_disk(gt, 14, 15, 9);
  const auto ties = brute_maximin_ties(Bitmask(30, 30), gt, {}, Connectivity::four);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto c = next_click_cluster_sampling(Bitmask(30, 30), gt, {}, rng);
    EXPECT_TRUE(ties.count({c->x, c->y}));
  }
  Rng rng(0);
  EXPECT_FALSE(next_click_cluster_sampling(gt, gt, {}, rng).has_value());
}

TEST(RandomSampling, UniformOverTheErrorRegion) {
  Bitmask gt(10, 10);
  fill_rect(gt, 0, 0, 5, 4);  // 30 pixels
  std::map<std::pair<int, int>, int> counts;
  Rng rng(41);
  for (int i = 0; i < 10000; ++i) {
    const auto c = next_click_random(Bitmask(10, 10), gt, {}, rng);
    ASSERT_TRUE(gt.test(c->x, c->y));
    ++counts[{c->x, c->y}];
  }
  ASSERT_EQ(counts.size(), 30u);
  double chi2 = 0.0;
  const double expected = 10000.0 / 30.0;
  for (const auto& [_, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, 58.3);  // 29 degrees of freedom, p = 0.001

  Bitmask one(4, 4);
  one.set(1, 2);
  EXPECT_EQ(next_click_random(Bitmask(4, 4), one, {}, rng)->x, 1);
  EXPECT_FALSE(next_click_random(one, one, {}, rng).has_value());
}

TEST(Samplers, NamesRoundTrip) {
  for (SamplerKind k : {SamplerKind::iterative_largest, SamplerKind::cluster, SamplerKind::random}) {
    EXPECT_EQ(parse_sampler(to_string(k)), k);
  }
  EXPECT_THROW(parse_sampler("largest"), std::invalid_argument);
}

}  // namespace
}  // namespace itis
