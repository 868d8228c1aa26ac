#include "detkit/losses.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "detkit/gradcheck.hpp"

namespace detkit {
namespace {

// Values assembled by hand from the geometry pieces of (0,0,2,2) vs
// (1,1,3,3): intersection 1, union 7, hull (0,0,3,3) with area 9 and
// squared diagonal 18, squared center distance 2.
constexpr double kDiouExample = 1.0 - 1.0 / 7.0 + 2.0 / 18.0;
constexpr double kGiouExample = 1.0 - 1.0 / 7.0 + (9.0 - 7.0) / 9.0;

using BoxLossFn = BoxLossResult (*)(const BBox&, const BBox&);

std::array<double, 4> central_difference(BoxLossFn f, const BBox& pred, const BBox& gt, double h) {
  std::array<double, 4> g{};
  for (int k = 0; k < 4; ++k) {
    std::array<double, 4> hi{pred.x1, pred.y1, pred.x2, pred.y2};
    std::array<double, 4> lo = hi;
    hi[k] += h;
    lo[k] -= h;
    const double fh = f({hi[0], hi[1], hi[2], hi[3]}, gt).value;
    const double fl = f({lo[0], lo[1], lo[2], lo[3]}, gt).value;
    g[k] = (fh - fl) / (2 * h);
  }
  return g;
}

bool near_kink(const BBox& p, const BBox& g, double m) {
  auto c = [m](double a, double b) { return std::abs(a - b) < m; };
  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  return c(p.x1, g.x1) || c(p.y1, g.y1) || c(p.x2, g.x2) || c(p.y2, g.y2) || std::abs(iw) < m || std::abs(ih) < m;
}

struct PairGen {
  std::mt19937_64 rng;
  explicit PairGen(uint64_t seed) : rng(seed) {}
  double u(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::pair<BBox, BBox> next() {
    const double gx = u(0, 50), gy = u(0, 50);
    const BBox gt{gx, gy, gx + u(2, 30), gy + u(2, 30)};
    const double px = gx + u(-20, 20), py = gy + u(-20, 20);
    return {BBox{px, py, px + u(2, 30), py + u(2, 30)}, gt};
  }
};

TEST(BoxLossTest, DiouExamples) {
  const BBox g{0, 0, 2, 2};
  EXPECT_EQ(diou_loss(g, g).value, 0.0);
  EXPECT_NEAR(diou_loss(g, {1, 1, 3, 3}).value, kDiouExample, 1e-12);
  EXPECT_NEAR(diou_loss(g, {1, 1, 3, 3}).value, 0.968254, 1e-6);
  // Centered inclusion: penalty term vanishes.
  const BBox outer{0, 0, 10, 10};
  const BBox inner{3, 3, 7, 7};
  EXPECT_DOUBLE_EQ(diou_loss(inner, outer).value, 1.0 - 16.0 / 100.0);
}

TEST(BoxLossTest, GiouExamples) {
  const BBox g{0, 0, 2, 2};
  EXPECT_EQ(giou_loss(g, g).value, 0.0);
  EXPECT_NEAR(giou_loss(g, {1, 1, 3, 3}).value, kGiouExample, 1e-12);
  EXPECT_NEAR(giou_loss(g, {1, 1, 3, 3}).value, 1.079365, 1e-6);
  double prev = 0.0;
  for (double sep : {5.0, 50.0, 500.0, 5000.0}) {
    const double v = giou_loss({0, 0, 1, 1}, {sep, sep, sep + 1, sep + 1}).value;
    EXPECT_GT(v, prev);
    EXPECT_LT(v, 2.0);
    prev = v;
  }
  EXPECT_NEAR(prev, 2.0, 1e-6);
}

TEST(BoxLossTest, L1Examples) {
  const BBox g{0, 0, 2, 2};
  EXPECT_EQ(l1_box_loss(g, g).value, 0.0);
  EXPECT_EQ(l1_box_loss(g, {1, 1, 3, 3}).value, 4.0);
  EXPECT_EQ(l1_box_loss(g.translated(7, -3), BBox{1, 1, 3, 3}.translated(7, -3)).value, 4.0);
  const auto r = l1_box_loss(g, {1, 1, 3, 3});
  EXPECT_EQ(r.grad_pred, (std::array<double, 4>{-1, -1, -1, -1}));
}

TEST(BoxLossTest, DegenerateEnclosureThrows) {
  const BBox p{1, 1, 1, 1};
  EXPECT_THROW(diou_loss(p, p), DegenerateEnclosureError);
  EXPECT_THROW(giou_loss(p, p), DegenerateEnclosureError);
  // A line hull has zero area but a non-zero diagonal.
  EXPECT_NO_THROW(diou_loss({0, 0, 0, 1}, {0, 2, 0, 3}));
  EXPECT_THROW(giou_loss({0, 0, 0, 1}, {0, 2, 0, 3}), DegenerateEnclosureError);
  EXPECT_THROW(diou_loss({2, 0, 1, 1}, p), InvalidBoxError);
}

TEST(BoxLossTest, SubgradientAtOptimumIsFinite) {
  const BBox g{1, 2, 5, 7};
  for (auto f : {&diou_loss, &giou_loss, &l1_box_loss}) {
    const auto r = f(g, g);
    EXPECT_EQ(r.value, 0.0);
    for (double d : r.grad_pred) EXPECT_TRUE(std::isfinite(d));
  }
}

TEST(BoxLossTest, GradientsMatchFiniteDifferences) {
  PairGen gen(2024);
  int checked = 0;
  while (checked < 500) {
    const auto [pred, gt] = gen.next();
    if (near_kink(pred, gt, 1e-3)) continue;
    for (BoxLossFn f : {&diou_loss, &giou_loss, &l1_box_loss}) {
      const auto analytic = f(pred, gt).grad_pred;
      const auto numeric = central_difference(f, pred, gt, 1e-5);
      for (int k = 0; k < 4; ++k) {
        ASSERT_LE(relative_error(analytic[k], numeric[k]), 1e-4)
            << "component " << k << " pred " << to_string(pred) << " gt " << to_string(gt);
      }
    }
    ++checked;
  }
}

TEST(BoxLossTest, RangeAndZeroAtOptimum) {
  PairGen gen(99);
  for (int i = 0; i < 2000; ++i) {
    const auto [pred, gt] = gen.next();
    const double d = diou_loss(pred, gt).value;
    const double g = giou_loss(pred, gt).value;
    EXPECT_GE(d, 0.0);
    EXPECT_LT(d, 2.0);
    EXPECT_GE(g, 0.0);
    EXPECT_LT(g, 2.0);
    if (!(pred == gt)) {
      EXPECT_GT(d, 0.0);
      EXPECT_GT(g, 0.0);
      EXPECT_GT(l1_box_loss(pred, gt).value, 0.0);
    }
  }
}

TEST(BoxLossTest, TranslationAndScalingInvariance) {
  PairGen gen(5);
  for (int i = 0; i < 500; ++i) {
    const auto [pred, gt] = gen.next();
    const double dx = gen.u(-100, 100), dy = gen.u(-100, 100);
    EXPECT_NEAR(diou_loss(pred.translated(dx, dy), gt.translated(dx, dy)).value, diou_loss(pred, gt).value, 1e-9);
    EXPECT_NEAR(giou_loss(pred.translated(dx, dy), gt.translated(dx, dy)).value, giou_loss(pred, gt).value, 1e-9);
    EXPECT_NEAR(l1_box_loss(pred.translated(dx, dy), gt.translated(dx, dy)).value, l1_box_loss(pred, gt).value,
                1e-9);
    // Uniform scaling about an arbitrary point.
    const double s = gen.u(0.2, 5.0), ox = gen.u(-10, 10), oy = gen.u(-10, 10);
    auto scale = [&](const BBox& b) {
      return BBox{ox + s * (b.x1 - ox), oy + s * (b.y1 - oy), ox + s * (b.x2 - ox), oy + s * (b.y2 - oy)};
    };
    EXPECT_NEAR(diou_loss(scale(pred), scale(gt)).value, diou_loss(pred, gt).value, 1e-9);
    EXPECT_NEAR(giou_loss(scale(pred), scale(gt)).value, giou_loss(pred, gt).value, 1e-9);
  }
}

TEST(BoxLossTest, DiouGrowsWithCenterOffsetUnderInclusion) {
  const BBox gt{0, 0, 20, 20};
  double prev = -1.0;
  for (double off = 0.0; off <= 6.0; off += 0.5) {
    const BBox pred{6 + off, 6 + off * 0.5, 14 + off, 14 + off * 0.5};
    ASSERT_TRUE(gt.contains(pred));
    const double v = diou_loss(pred, gt).value;
    EXPECT_GT(v, prev);
    prev = v;
  }
  // Plain IoU cannot tell these apart.
  EXPECT_DOUBLE_EQ(iou({6, 6, 14, 14}, gt), iou({12, 9, 20, 17}, gt));
}

TEST(BoxLossTest, ReduceMeanAndSum) {
  const std::vector<BoxLossResult> rs{{1.0, {1, 2, 3, 4}}, {3.0, {3, 2, 1, 0}}};
  const auto m = reduce(rs);
  EXPECT_EQ(m.value, 2.0);
  EXPECT_EQ(m.grad_pred, (std::array<double, 4>{2, 2, 2, 2}));
  const auto s = reduce(rs, Reduction::kSum);
  EXPECT_EQ(s.value, 4.0);
  EXPECT_EQ(reduce(std::span<const BoxLossResult>{}).value, 0.0);
}

// Independent scalar evaluation of the GFL formula straight from
// probabilities.
double gfl_scalar(double y, double yl, double yr, double pl, double beta) {
  const double pr = 1.0 - pl;
  const double yhat = yl * pl + yr * pr;
  return -std::pow(std::abs(y - yhat), beta) * ((yr - y) * std::log(pl) + (y - yl) * std::log(pr));
}

TEST(GflTest, HandEvaluatedExample) {
  const GflSample s{0.7, 0.0, 1.0, {0.0, 0.0}, 2.0};
  const auto r = gfl_loss(s);
  EXPECT_NEAR(r.value, 0.04 * std::log(2.0), 1e-15);
  EXPECT_NEAR(r.value, 0.027726, 1e-6);
  EXPECT_NEAR(r.value, gfl_scalar(0.7, 0.0, 1.0, 0.5, 2.0), 1e-15);
  EXPECT_DOUBLE_EQ(r.p_l + r.p_r, 1.0);
}

TEST(GflTest, ZeroWhenPredictionMatchesLabel) {
  // p_r = (y - y_l) / (y_r - y_l) = 0.25, so logit(p_l) - logit(p_r) = log 3.
  const GflSample s{0.35, 0.3, 0.5, {std::log(3.0), 0.0}, 2.0};
  const auto r = gfl_loss(s);
  EXPECT_NEAR(r.prediction, 0.35, 1e-15);
  EXPECT_NEAR(r.value, 0.0, 1e-25);
}

TEST(GflTest, BetaZeroIsPlainCrossEntropy) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double yl = u(rng) * 0.5;
    const double yr = yl + 0.1 + u(rng) * 0.4;
    const double y = yl + (yr - yl) * u(rng);
    const double zl = 4 * (u(rng) - 0.5), zr = 4 * (u(rng) - 0.5);
    const double pl = 1.0 / (1.0 + std::exp(zr - zl));
    const double ce = -((yr - y) * std::log(pl) + (y - yl) * std::log(1.0 - pl));
    EXPECT_NEAR(gfl_loss({y, yl, yr, {zl, zr}, 0.0}).value, ce, 1e-12);
  }
  // Including at the optimum, where the focal weight would otherwise be 0^0.
  const GflSample at_opt{0.35, 0.3, 0.5, {std::log(3.0), 0.0}, 0.0};
  EXPECT_GT(gfl_loss(at_opt).value, 0.0);
}

TEST(GflTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  while (checked < 600) {
    GflSample s;
    s.y_l = u(rng) * 0.6;
    s.y_r = s.y_l + 0.05 + 0.4 * u(rng);
    s.y = s.y_l + (s.y_r - s.y_l) * u(rng);
    s.logits = {8 * (u(rng) - 0.5), 8 * (u(rng) - 0.5)};
    s.beta = std::array<double, 3>{0.5, 1.0, 2.0}[checked % 3];
    const auto r = gfl_loss(s);
    if (std::abs(r.prediction - s.y) < 1e-3) continue;
    for (int k = 0; k < 2; ++k) {
      GflSample hi = s, lo = s;
      hi.logits[k] += 1e-5;
      lo.logits[k] -= 1e-5;
      const double numeric = (gfl_loss(hi).value - gfl_loss(lo).value) / 2e-5;
      ASSERT_LE(relative_error(r.grad_logits[k], numeric), 1e-6) << "beta " << s.beta;
    }
    EXPECT_GE(r.value, 0.0);
    EXPECT_DOUBLE_EQ(r.grad_logits[0], -r.grad_logits[1]);
    ++checked;
  }
}

TEST(GflTest, SaturatedLogitsAndEndpointLabels) {
  // y == y_l: the log p_l term has weight zero and must not produce NaN
  // even when p_l underflows.
  const auto r = gfl_loss({0.2, 0.2, 0.4, {-800.0, 800.0}, 2.0});
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(std::isfinite(r.grad_logits[0]));
  const auto r2 = gfl_loss({0.4, 0.2, 0.4, {-800.0, 800.0}, 2.0});
  EXPECT_EQ(r2.value, 0.0);
  const auto r3 = gfl_loss({0.4, 0.2, 0.4, {40.0, -40.0}, 2.0});
  EXPECT_TRUE(std::isfinite(r3.value));
  EXPECT_GT(r3.value, 0.0);
}

TEST(GflTest, InvalidBracket) {
  EXPECT_THROW(gfl_loss({0.5, 0.6, 0.4, {0, 0}, 2.0}), InvalidBracketError);
  EXPECT_THROW(gfl_loss({0.5, 0.5, 0.5, {0, 0}, 2.0}), InvalidBracketError);
  EXPECT_THROW(gfl_loss({0.9, 0.2, 0.4, {0, 0}, 2.0}), InvalidBracketError);
  EXPECT_THROW(gfl_loss({0.3, 0.2, 0.4, {0, 0}, -1.0}), InvalidBracketError);
}

TEST(GradCheckHarnessTest, PassesAndDetectsPerturbation) {
  for (LossKind k : {LossKind::kDiou, LossKind::kGiou, LossKind::kL1, LossKind::kGfl}) {
    GradCheckOptions o;
    o.loss = k;
    o.trials = 200;
    o.seed = 1;
    const auto r = run_gradcheck(o);
    EXPECT_TRUE(r.passed()) << loss_kind_name(k) << " max rel err " << r.max_rel_error;
    EXPECT_EQ(r.checked, 200u);
    o.perturb = 1e-2;
    EXPECT_FALSE(run_gradcheck(o).passed()) << loss_kind_name(k);
  }
  GradCheckOptions beta0;
  beta0.loss = LossKind::kGfl;
  beta0.beta = 0.0;
  EXPECT_TRUE(run_gradcheck(beta0).passed());
  EXPECT_THROW(parse_loss_kind("ciou"), std::invalid_argument);
}

}  // namespace
}  // namespace detkit
