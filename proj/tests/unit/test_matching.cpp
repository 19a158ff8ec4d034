#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "stvod/gradcheck_suite.hpp"
#include "stvod/matching.hpp"
#include "test_util.hpp"

using namespace stvod;
using namespace stvod::testing;

namespace {

BoxCS random_box(std::mt19937_64& rng) {
  const double w = uniform(rng, 0.02, 0.6), h = uniform(rng, 0.02, 0.6);
  return BoxCS{uniform(rng, w / 2, 1 - w / 2), uniform(rng, h / 2, 1 - h / 2), w, h};
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// -log p = softplus(-x) and -log(1 - p) = softplus(x) keep saturated logits exact.
double focal_term(double logit, bool positive, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return positive ? alpha * std::pow(1 - p, gamma) * softplus(-logit)
                  : (1 - alpha) * std::pow(p, gamma) * softplus(logit);
}

double brute_force_min(const Tensor& cost) {
  const std::size_t np = cost.dim(0), ng = cost.dim(1);
  std::vector<std::size_t> preds(np);
  std::iota(preds.begin(), preds.end(), 0);
  double best = 1e300;
  // Every ordered choice of ng distinct predictions.
  std::vector<std::size_t> pick(ng);
  std::vector<bool> used(np, false);
  std::function<void(std::size_t, double)> rec = [&](std::size_t g, double acc) {
    if (g == ng) {
      best = std::min(best, acc);
      return;
    }
    for (std::size_t p = 0; p < np; ++p) {
      if (used[p]) continue;
      used[p] = true;
      rec(g + 1, acc + cost.at(p, g));
      used[p] = false;
    }
  };
  rec(0, 0.0);
  return best;
}

}  // namespace

TEST(Iou, HandCases) {
  BoxCorners a{0, 0, 1, 1}, b{0.5, 0, 1.5, 1};
  EXPECT_NEAR(iou(a, b), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, BoxCorners{2, 2, 3, 3}), 0.0);
}

TEST(Giou, HandCases) {
  BoxCorners a{0, 0, 1, 1}, b{2, 0, 3, 1};
  EXPECT_NEAR(generalized_iou(a, b), -1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(generalized_iou(a, a), 1.0);
}

TEST(Giou, PropertiesOnRandomPairs) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100000; ++i) {
    BoxCS a = random_box(rng), b = random_box(rng);
    const double g = generalized_iou(a, b), u = iou(a, b);
    ASSERT_GT(g, -1.0);
    ASSERT_LE(g, 1.0);
    ASSERT_LE(g, u + 1e-15);
    ASSERT_GE(u, 0.0);
    ASSERT_LE(u, 1.0);
    ASSERT_EQ(g, generalized_iou(b, a));
    ASSERT_EQ(u, iou(b, a));
  }
}

// Enclosing box equals the union here, so any rounding in the penalty shows up
// directly as giou > iou.
TEST(Giou, NestedBoxesNeverExceedIou) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    BoxCorners outer{0.3 * u(rng), 0.3 * u(rng), 0.7 + 0.3 * u(rng), 0.7 + 0.3 * u(rng)};
    BoxCorners inner{outer.x1 + 0.1 * u(rng), outer.y1 + 0.1 * u(rng), outer.x2 - 0.1 * u(rng),
                     outer.y2 - 0.1 * u(rng)};
    ASSERT_LE(generalized_iou(outer, inner), iou(outer, inner));
    ASSERT_LE(generalized_iou(inner, outer), iou(inner, outer));
  }
}

TEST(Giou, DegenerateBoxHasZeroIouTerm) {
  BoxCorners a{0.2, 0.2, 0.2, 0.6}, b{0.1, 0.1, 0.5, 0.5};
  const double g = generalized_iou(a, b);
  EXPECT_TRUE(std::isfinite(g));
  EXPECT_LE(g, 0.0);
}

TEST(Giou, RowsMatchScalarVersion) {
  std::mt19937_64 rng(2);
  std::vector<GroundTruthBox> a, b;
  for (int i = 0; i < 20; ++i) {
    a.push_back({0, random_box(rng)});
    b.push_back({0, random_box(rng)});
  }
  Tensor rows = generalized_iou_rows(Var::constant(boxes_to_tensor(a)), Var::constant(boxes_to_tensor(b))).value();
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(rows[i], generalized_iou(a[i].box, b[i].box), 1e-14);
}

TEST(Focal, ClosedFormAtOneHalf) {
  Var logits = Var::constant(Tensor::matrix(1, 1, {0.0}));
  const double got = sigmoid_focal_loss(logits, Tensor::matrix(1, 1, {1.0}), 0.25, 2.0).value().item();
  EXPECT_NEAR(got, -0.25 * 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(got, 0.04332, 1e-5);
}

TEST(Focal, ConfidentCorrectPredictionVanishes) {
  Var logits = Var::constant(Tensor::matrix(1, 3, {40.0, -40.0, -40.0}));
  const double got = sigmoid_focal_loss(logits, Tensor::matrix(1, 3, {1, 0, 0}), 0.25, 2.0).value().item();
  EXPECT_LT(got, 1e-30);
}

TEST(Focal, GammaZeroAlphaHalfIsHalfCrossEntropy) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 4}, rng, -4, 4);
  Tensor t(Shape{3, 4});
  for (auto& v : t.data()) v = static_cast<double>(rng() % 2);
  double bce = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    bce += t[i] > 0.5 ? -std::log(p) : -std::log(1 - p);
  }
  EXPECT_NEAR(sigmoid_focal_loss(Var::constant(x), t, 0.5, 0.0).value().item(), 0.5 * bce, 1e-12);
}

TEST(Focal, StableForExtremeLogits) {
  Var logits = Var::leaf(Tensor::matrix(1, 2, {800.0, -800.0}));
  Var loss = sigmoid_focal_loss(logits, Tensor::matrix(1, 2, {0, 1}), 0.25, 2.0);
  EXPECT_TRUE(loss.value().all_finite());
  backward(loss);
  EXPECT_TRUE(logits.grad().all_finite());
}

TEST(PairwiseCost, MatchesScalarRecomputation) {
  std::mt19937_64 rng(4);
  LossWeights w;
  Tensor logits = random_tensor({3, 4}, rng, -3, 3);
  std::vector<GroundTruthBox> gts{{1, random_box(rng)}, {3, random_box(rng)}};
  std::vector<GroundTruthBox> preds{{0, random_box(rng)}, {0, random_box(rng)}, {0, random_box(rng)}};
  Tensor cost = pairwise_cost(logits, boxes_to_tensor(preds), gts, w);
  ASSERT_EQ(cost.shape(), (Shape{3, 2}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double l = logits.at(i, gts[j].class_id);
      const BoxCS &p = preds[i].box, &g = gts[j].box;
      const double l1 = std::abs(p.cx - g.cx) + std::abs(p.cy - g.cy) + std::abs(p.w - g.w) +
                        std::abs(p.h - g.h);
      const double want = w.cls * (focal_term(l, true, w.focal_alpha, w.focal_gamma) -
                                   focal_term(l, false, w.focal_alpha, w.focal_gamma)) +
                          w.l1 * l1 + w.giou * (1.0 - generalized_iou(p, g));
      EXPECT_NEAR(cost.at(i, j), want, 1e-12);
    }
  }
}

TEST(PairwiseCost, ExactPredictionHasOnlyClassTerm) {
  LossWeights w;
  BoxCS b{0.4, 0.6, 0.2, 0.3};
  Tensor logits = Tensor::matrix(1, 2, {30.0, -30.0});
  Tensor cost = pairwise_cost(logits, boxes_to_tensor({{0, b}}), {{0, b}}, w);
  const double cls_only = w.cls * (focal_term(30.0, true, w.focal_alpha, w.focal_gamma) -
                                   focal_term(30.0, false, w.focal_alpha, w.focal_gamma));
  EXPECT_NEAR(cost[0], cls_only, 1e-12);
}

TEST(PairwiseCost, ScalingWeightsScalesEntriesAndKeepsAssignment) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor logits = random_tensor({6, 4}, rng, -3, 3);
    std::vector<GroundTruthBox> preds, gts;
    for (int i = 0; i < 6; ++i) preds.push_back({0, random_box(rng)});
    for (int i = 0; i < 3; ++i) gts.push_back({static_cast<std::size_t>(rng() % 4), random_box(rng)});
    LossWeights w, w3;
    w3.cls *= 3.0;
    w3.l1 *= 3.0;
    w3.giou *= 3.0;
    Tensor a = pairwise_cost(logits, boxes_to_tensor(preds), gts, w);
    Tensor b = pairwise_cost(logits, boxes_to_tensor(preds), gts, w3);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-12);
    EXPECT_EQ(hungarian(a).pairs, hungarian(b).pairs);
  }
}

TEST(Hungarian, HandExamples) {
  auto a = hungarian(Tensor::matrix(2, 2, {0, 1, 1, 0}));
  EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  Tensor c = Tensor::matrix(2, 2, {1, 2, 2, 1});
  auto b = hungarian(c);
  EXPECT_EQ(b.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(assignment_cost(c, b), 2.0);
}

TEST(Hungarian, MatchesBruteForceOnSevenByFive) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    Tensor cost = random_tensor({7, 5}, rng, 0.0, 10.0);
    auto a = hungarian(cost);
    ASSERT_EQ(a.pairs.size(), 5u);
    std::set<std::size_t> preds;
    for (std::size_t g = 0; g < 5; ++g) {
      EXPECT_EQ(a.pairs[g].second, g);
      preds.insert(a.pairs[g].first);
    }
    EXPECT_EQ(preds.size(), 5u);
    EXPECT_NEAR(assignment_cost(cost, a), brute_force_min(cost), 1e-9);
  }
}

TEST(Hungarian, MatchesBruteForceOnSmallerShapes) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t ng = rng() % 6, np = ng + rng() % (8 - ng);
    if (np == 0) continue;
    Tensor cost = random_tensor({np, std::max<std::size_t>(ng, 1)}, rng, -5.0, 5.0);
    if (ng == 0) continue;
    EXPECT_NEAR(assignment_cost(cost, hungarian(cost)), brute_force_min(cost), 1e-9);
  }
}

TEST(Hungarian, RejectsTooFewPredictionsAndNonFinite) {
  EXPECT_THROW(hungarian(Tensor(Shape{2, 3}, 1.0)), std::invalid_argument);
  Tensor c = Tensor::matrix(2, 2, {1, NAN, 0, 1});
  EXPECT_THROW(hungarian(c), std::invalid_argument);
}

TEST(DetectionLoss, NoGroundTruthAndNegativeLogitsIsZero) {
  Var logits = Var::constant(Tensor(Shape{5, 4}, -40.0));
  Var boxes = Var::constant(Tensor(Shape{5, 4}, 0.5));
  auto t = detection_loss(logits, boxes, {}, LossWeights{});
  EXPECT_LT(t.total.value().item(), 1e-30);
  EXPECT_EQ(t.l1, 0.0);
  EXPECT_EQ(t.giou, 0.0);
  EXPECT_TRUE(t.assignment.pairs.empty());
}

TEST(DetectionLoss, PerfectMatchHasZeroBoxTerms) {
  BoxCS b{0.3, 0.7, 0.2, 0.1};
  Tensor logits = Tensor::matrix(2, 2, {-40, 40, -40, -40});
  Tensor boxes = boxes_to_tensor({{0, BoxCS{0.6, 0.6, 0.3, 0.3}}, {0, b}});
  logits = Tensor::matrix(2, 2, {-40, -40, -40, 40});
  auto t = detection_loss(Var::constant(logits), Var::constant(boxes), {{1, b}}, LossWeights{});
  ASSERT_EQ(t.assignment.pairs.size(), 1u);
  EXPECT_EQ(t.assignment.pairs[0].first, 1u);
  EXPECT_NEAR(t.l1, 0.0, 1e-15);
  EXPECT_NEAR(t.giou, 0.0, 1e-15);
  EXPECT_LT(t.total.value().item(), 1e-20);
}

TEST(DetectionLoss, TwoPredictionsOneTruthMatchesHandAssembly) {
  LossWeights w;
  BoxCS gt{0.5, 0.5, 0.3, 0.2};
  BoxCS p0{0.2, 0.3, 0.1, 0.1}, p1{0.45, 0.55, 0.25, 0.25};
  Tensor logits = Tensor::matrix(2, 3, {0.3, -1.0, 0.2, -0.5, 1.2, -2.0});
  auto t = detection_loss(Var::constant(logits), Var::constant(boxes_to_tensor({{0, p0}, {0, p1}})),
                          {{1, gt}}, w);
  ASSERT_EQ(t.assignment.pairs.size(), 1u);
  const std::size_t m = t.assignment.pairs[0].first;
  EXPECT_EQ(m, 1u);
  double cls = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      cls += focal_term(logits.at(i, k), i == m && k == 1, w.focal_alpha, w.focal_gamma);
  const double l1 = std::abs(p1.cx - gt.cx) + std::abs(p1.cy - gt.cy) + std::abs(p1.w - gt.w) +
                    std::abs(p1.h - gt.h);
  const double g = 1.0 - generalized_iou(p1, gt);
  EXPECT_NEAR(t.total.value().item(), w.cls * cls + w.l1 * l1 + w.giou * g, 1e-12);
  EXPECT_NEAR(t.l1, l1, 1e-14);
  EXPECT_NEAR(t.giou, g, 1e-14);
}

TEST(DetectionLoss, NonNegativeOnRandomInstances) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng() % 5, ng = rng() % 4;
    std::vector<GroundTruthBox> preds, gts;
    for (std::size_t i = 0; i < n; ++i) preds.push_back({0, random_box(rng)});
    for (std::size_t i = 0; i < ng; ++i) gts.push_back({static_cast<std::size_t>(rng() % 4), random_box(rng)});
    auto t = detection_loss(Var::constant(random_tensor({n, 4}, rng, -5, 5)),
                            Var::constant(boxes_to_tensor(preds)), gts, LossWeights{});
    EXPECT_GE(t.total.value().item(), 0.0);
  }
}

TEST(DetectionLoss, FrozenAssignmentGradientCheck) {
  RunConfig config;
  for (const auto& check : composite_checks(config)) {
    if (check.name != "detection_loss") continue;
    auto r = check.run(GradCheckOptions{});
    EXPECT_TRUE(r.passed) << r.summary();
  }
}

TEST(LossWeightsValidation, RejectsNegativeWeightsAndBadAlpha) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.l1 = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.focal_alpha = 1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}
