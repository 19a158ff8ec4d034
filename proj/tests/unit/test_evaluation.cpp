#include <gtest/gtest.h>

#include <random>

#include "stvod/evaluation.hpp"

using namespace stvod;

namespace {

const BoxCS kGt{0.5, 0.5, 0.2, 0.2};
const BoxCS kHit{0.51, 0.5, 0.2, 0.2};   // IoU ~0.9 with kGt
const BoxCS kMiss{0.1, 0.1, 0.1, 0.1};   // disjoint from kGt

ScoredBox det(std::size_t cls, double score, BoxCS box) { return ScoredBox{cls, score, box}; }

}  // namespace

TEST(AveragePrecision, HandWalks) {
  EXPECT_DOUBLE_EQ(average_precision({true}, 1), 1.0);
  // FP then TP: precision 1/2 at recall 1.
  EXPECT_DOUBLE_EQ(average_precision({false, true}, 1), 0.5);
  // TP then FP: the tail FP does not lower the interpolated precision.
  EXPECT_DOUBLE_EQ(average_precision({true, false}, 1), 1.0);
  // Two gts, one found first: recall 0.5 at precision 1.
  EXPECT_DOUBLE_EQ(average_precision({true}, 2), 0.5);
  // TP, FP, TP over two gts: 0.5 * 1 + 0.5 * 2/3.
  EXPECT_NEAR(average_precision({true, false, true}, 2), 0.5 + 1.0 / 3.0, 1e-15);
  // FP, TP, TP: interpolated precision 2/3 over the whole recall range.
  EXPECT_NEAR(average_precision({false, true, true}, 2), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(average_precision({}, 1), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({false, false}, 1), 0.0);
  EXPECT_THROW(average_precision({true}, 0), std::invalid_argument);
}

TEST(EvaluateMap, OneMatchingDetection) {
  auto r = evaluate_map({{det(0, 0.9, kHit)}}, {{{0, kGt}}}, 2);
  ASSERT_TRUE(r.map);
  EXPECT_DOUBLE_EQ(*r.map, 1.0);
  EXPECT_DOUBLE_EQ(*r.ap[0], 1.0);
  EXPECT_FALSE(r.ap[1]);
  EXPECT_EQ(r.true_positives, 1u);
  EXPECT_EQ(r.false_positives, 0u);
}

TEST(EvaluateMap, HigherScoredFalsePositiveGivesOneHalf) {
  auto r = evaluate_map({{det(0, 0.9, kMiss), det(0, 0.6, kHit)}}, {{{0, kGt}}}, 1);
  EXPECT_DOUBLE_EQ(*r.map, 0.5);
  EXPECT_EQ(r.true_positives, 1u);
  EXPECT_EQ(r.false_positives, 1u);
}

TEST(EvaluateMap, DuplicateDetectionIsFalsePositive) {
  auto r = evaluate_map({{det(0, 0.9, kHit), det(0, 0.8, kGt)}}, {{{0, kGt}}}, 1);
  EXPECT_EQ(r.true_positives, 1u);
  EXPECT_EQ(r.false_positives, 1u);
  EXPECT_DOUBLE_EQ(*r.map, 1.0);
}

TEST(EvaluateMap, WrongClassDoesNotMatch) {
  auto r = evaluate_map({{det(1, 0.9, kGt)}}, {{{0, kGt}}}, 2);
  EXPECT_DOUBLE_EQ(*r.ap[0], 0.0);
  EXPECT_FALSE(r.ap[1]);
  EXPECT_DOUBLE_EQ(*r.map, 0.0);
  EXPECT_EQ(r.false_negatives, 1u);
}

TEST(EvaluateMap, MatchesOnlyWithinFrame) {
  auto r = evaluate_map({{det(0, 0.9, kGt)}, {}}, {{}, {{0, kGt}}}, 1);
  EXPECT_DOUBLE_EQ(*r.map, 0.0);
}

TEST(EvaluateMap, ThresholdIsInclusive) {
  // Corner boxes with IoU exactly 0.5.
  BoxCS a = box_corners_to_cs({0.0, 0.0, 0.5, 0.5});
  BoxCS b = box_corners_to_cs({0.0, 0.0, 0.5, 0.25});
  EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
  EXPECT_DOUBLE_EQ(*evaluate_map({{det(0, 0.5, b)}}, {{{0, a}}}, 1).map, 1.0);
}

TEST(EvaluateMap, GreedyPrefersHighestIou) {
  BoxCS g1{0.30, 0.5, 0.2, 0.2}, g2{0.36, 0.5, 0.2, 0.2};
  // d1 clears the threshold on both but overlaps g2 more; d2 only clears it
  // on g1, so taking the first eligible gt for d1 would lose a match.
  BoxCS d1{0.34, 0.5, 0.2, 0.2}, d2{0.27, 0.5, 0.2, 0.2};
  ASSERT_GE(iou(d1, g1), 0.5);
  ASSERT_LT(iou(d2, g2), 0.5);
  auto r = evaluate_map({{det(0, 0.9, d1), det(0, 0.8, d2)}}, {{{0, g1}, {0, g2}}}, 1);
  EXPECT_EQ(r.true_positives, 2u);
  EXPECT_DOUBLE_EQ(*r.map, 1.0);
}

TEST(EvaluateMap, MeanOverPresentClassesOnly) {
  auto r = evaluate_map({{det(0, 0.9, kHit)}, {det(2, 0.9, kMiss)}},
                        {{{0, kGt}}, {{2, kGt}}}, 4);
  EXPECT_DOUBLE_EQ(*r.map, 0.5);
  EXPECT_FALSE(r.ap[1]);
  EXPECT_FALSE(r.ap[3]);
}

TEST(EvaluateMap, NoGroundTruthIsUndefined) {
  auto r = evaluate_map({{det(0, 0.9, kHit)}}, {{}}, 2);
  EXPECT_FALSE(r.map.has_value());
  EXPECT_EQ(r.false_positives, 1u);
}

TEST(EvaluateMap, RejectsMismatchedFramesAndClasses) {
  EXPECT_THROW(evaluate_map({{}, {}}, {{}}, 1), std::invalid_argument);
  EXPECT_THROW(evaluate_map({{det(3, 0.5, kGt)}}, {{}}, 2), std::invalid_argument);
}

TEST(EvaluateMap, ApWithinUnitInterval) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.15, 0.85);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<ScoredBox>> dets(3);
    std::vector<std::vector<GroundTruthBox>> gts(3);
    for (std::size_t f = 0; f < 3; ++f) {
      for (int i = 0; i < 3; ++i) dets[f].push_back(det(rng() % 2, u(rng), {u(rng), u(rng), 0.2, 0.2}));
      for (int i = 0; i < 2; ++i) gts[f].push_back({rng() % 2, {u(rng), u(rng), 0.2, 0.2}});
    }
    auto r = evaluate_map(dets, gts, 2);
    for (const auto& ap : r.ap) {
      if (!ap) continue;
      EXPECT_GE(*ap, 0.0);
      EXPECT_LE(*ap, 1.0);
    }
  }
}
