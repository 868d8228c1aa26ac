#include "detkit/assign.hpp"

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace detkit {
namespace {

Detection det(BBox b, double score, int64_t cls = 0, int64_t image = 0) { return {b, score, cls, image}; }

std::vector<Detection> random_dets(std::mt19937_64& rng, int n, int classes) {
  std::uniform_real_distribution<double> pos(0.0, 40.0);
  std::uniform_real_distribution<double> size(5.0, 25.0);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    out.push_back(det({x, y, x + size(rng), y + size(rng)}, score(rng), cls(rng)));
  }
  return out;
}

TEST(NmsTest, Examples) {
  EXPECT_TRUE(nms({}, 0.5).empty());
  const Detection a = det({0, 0, 10, 10}, 0.9);
  EXPECT_EQ(nms(std::vector{a}, 0.5), std::vector{a});

  // (0,0,10,10) vs (0,0,10,6): IoU = 60 / 100.
  const Detection b = det({0, 0, 10, 6}, 0.8);
  ASSERT_DOUBLE_EQ(iou(a.box, b.box), 0.6);
  EXPECT_EQ(nms(std::vector{b, a}, 0.5), std::vector{a});

  Detection c = b;
  c.class_id = 1;
  EXPECT_EQ(nms(std::vector{c, a}, 0.5, true), (std::vector{a, c}));
  EXPECT_EQ(nms(std::vector{c, a}, 0.5, false), std::vector{a});
  EXPECT_THROW(nms(std::vector{a}, 1.0), std::invalid_argument);
  EXPECT_THROW(nms(std::vector{a}, 0.0), std::invalid_argument);
}

TEST(NmsTest, DifferentImagesNeverSuppress) {
  const Detection a = det({0, 0, 10, 10}, 0.9, 0, 1);
  const Detection b = det({0, 0, 10, 10}, 0.8, 0, 2);
  EXPECT_EQ(nms(std::vector{a, b}, 0.5, false).size(), 2u);
}

TEST(NmsTest, TiesBreakDeterministically) {
  const Detection a = det({1, 0, 11, 10}, 0.5, 0, 0);
  const Detection b = det({0, 0, 10, 10}, 0.5, 0, 0);
  // Equal scores: lexicographically smaller box ranks first.
  EXPECT_EQ(nms(std::vector{a, b}, 0.5), std::vector{b});
  EXPECT_EQ(nms(std::vector{b, a}, 0.5), std::vector{b});
}

TEST(NmsTest, MatchesExhaustiveReference) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 10;
    auto dets = random_dets(rng, n, 2);
    for (bool aware : {true, false}) {
      for (double thr : {0.3, 0.5, 0.7}) {
        auto ranked = dets;
        std::sort(ranked.begin(), ranked.end(), ranks_before);
        std::vector<Detection> expected;
        for (std::size_t i : oracle::exhaustive_nms(ranked, thr, aware)) expected.push_back(ranked[i]);
        ASSERT_EQ(nms(dets, thr, aware), expected) << "trial " << trial;
      }
    }
  }
}

TEST(NmsTest, PropertiesOnRandomInputs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const auto dets = random_dets(rng, 15, 3);
    const auto kept = nms(dets, 0.5);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_NE(std::find(dets.begin(), dets.end(), kept[i]), dets.end());
      if (i > 0) EXPECT_TRUE(ranks_before(kept[i - 1], kept[i]));
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (kept[i].class_id == kept[j].class_id) EXPECT_LE(iou(kept[i].box, kept[j].box), 0.5);
      }
    }
    EXPECT_EQ(nms(kept, 0.5), kept);
    EXPECT_LE(nms(dets, 0.3).size(), nms(dets, 0.6).size());
  }
}

TEST(NmsTest, RaisingThresholdCanDropSurvivors) {
  // A suppresses B at 0.7; at 0.8 B survives and suppresses C1 and C2.
  const std::vector<Detection> dets{det({0, 1.5, 10, 11.5}, 0.9), det({0, 0, 10, 10}, 0.8),
                                    det({-1, 0, 9, 10}, 0.7), det({1, 0, 11, 10}, 0.6)};
  ASSERT_NEAR(iou(dets[0].box, dets[1].box), 8.5 / 11.5, 1e-12);
  ASSERT_NEAR(iou(dets[1].box, dets[2].box), 9.0 / 11.0, 1e-12);
  EXPECT_EQ(nms(dets, 0.7), (std::vector{dets[0], dets[2], dets[3]}));
  EXPECT_EQ(nms(dets, 0.8), (std::vector{dets[0], dets[1]}));
}

TEST(CascadeTest, ConfigValidation) {
  EXPECT_EQ(CascadeConfig().stage_thresholds(), (std::vector<double>{0.5, 0.6, 0.7}));
  EXPECT_THROW(CascadeConfig(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(CascadeConfig({0.6, 0.5}), std::invalid_argument);
  EXPECT_THROW(CascadeConfig({0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(CascadeConfig({0.5, 1.0}), std::invalid_argument);
}

TEST(CascadeTest, AssignStageExamples) {
  const std::vector<GroundTruth> gts{GroundTruth::from_box({0, 0, 100, 100}, 1, 0)};
  const std::vector<BBox> same{{0, 0, 100, 100}};
  const auto a = assign_stage(same, gts, 0.7);
  ASSERT_TRUE(a.labels[0].has_value());
  EXPECT_EQ(*a.labels[0], 0u);
  EXPECT_EQ(a.matched_iou[0], 1.0);

  const std::vector<GroundTruth> small{GroundTruth::from_box({0, 0, 2, 2}, 1, 0)};
  const std::vector<BBox> weak{{1, 1, 3, 3}};
  for (double t : {0.5, 0.6, 0.7}) EXPECT_FALSE(assign_stage(weak, small, t).labels[0].has_value());

  const auto none = assign_stage(same, {}, 0.5);
  EXPECT_FALSE(none.labels[0].has_value());
  EXPECT_EQ(none.matched_iou[0], 0.0);
}

TEST(CascadeTest, ProgressiveTightening) {
  const std::vector<GroundTruth> gts{GroundTruth::from_box({0, 0, 100, 100}, 1, 0)};
  const std::vector<BBox> proposals{{0, 0, 100, 65}};
  // Cross-check the 0.65 overlap on the pixel grid.
  ASSERT_NEAR(oracle::raster_iou(proposals[0], gts[0].box, 100), 0.65, 1e-12);
  const auto stages = cascade_assign(proposals, gts, CascadeConfig{});
  ASSERT_EQ(stages.size(), 3u);
  EXPECT_EQ(stages[0].num_positive(), 1u);
  EXPECT_EQ(stages[1].num_positive(), 1u);
  EXPECT_EQ(stages[2].num_positive(), 0u);
  EXPECT_NEAR(stages[2].matched_iou[0], 0.65, 1e-12);

  const auto empty = cascade_assign({}, gts, CascadeConfig{});
  ASSERT_EQ(empty.size(), 3u);
  for (const auto& s : empty) EXPECT_TRUE(s.labels.empty());

  std::vector<BBox> exact;
  for (const auto& g : gts) exact.push_back(g.box);
  for (const auto& s : cascade_assign(exact, gts, CascadeConfig{})) EXPECT_EQ(s.num_positive(), exact.size());
}

TEST(CascadeTest, MaxIouMatchAndInvariants) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pos(0.0, 60.0), size(5.0, 40.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GroundTruth> gts;
    std::vector<BBox> props;
    for (int i = 0; i < 4; ++i) {
      const double x = pos(rng), y = pos(rng);
      gts.push_back(GroundTruth::from_box({x, y, x + size(rng), y + size(rng)}, 0, 0));
    }
    for (int i = 0; i < 12; ++i) {
      const double x = pos(rng), y = pos(rng);
      props.push_back({x, y, x + size(rng), y + size(rng)});
    }
    const auto stages = cascade_assign(props, gts, CascadeConfig{});
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t p = 0; p < props.size(); ++p) {
        double best = 0.0;
        for (const auto& g : gts) best = std::max(best, iou(props[p], g.box));
        EXPECT_EQ(stages[s].matched_iou[p], best);
        EXPECT_EQ(stages[s].labels[p].has_value(), best >= stages[s].threshold);
        if (stages[s].labels[p]) EXPECT_EQ(iou(props[p], gts[*stages[s].labels[p]].box), best);
      }
      if (s > 0) EXPECT_LE(stages[s].num_positive(), stages[s - 1].num_positive());
    }
  }
}

}  // namespace
}  // namespace detkit
