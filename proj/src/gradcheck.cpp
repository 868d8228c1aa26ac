#include "detkit/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "detkit/losses.hpp"

namespace detkit {
namespace {

constexpr double kKinkMargin = 1e-3;
constexpr double kRelFloor = 1e-6;

class Sampler {
 public:
  explicit Sampler(uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  BBox box() {
    const double x = uniform(0.0, 100.0);
    const double y = uniform(0.0, 100.0);
    return {x, y, x + uniform(1.0, 60.0), y + uniform(1.0, 60.0)};
  }

  // A second box near the first so that overlapping, nested and disjoint
  // configurations all occur.
  BBox nearby(const BBox& b) {
    const double x = b.x1 + uniform(-40.0, 40.0);
    const double y = b.y1 + uniform(-40.0, 40.0);
    return {x, y, x + uniform(1.0, 60.0), y + uniform(1.0, 60.0)};
  }

 private:
  std::mt19937_64 rng_;
};

bool near_box_kink(const BBox& p, const BBox& g) {
  auto close = [](double a, double b) { return std::abs(a - b) < kKinkMargin; };
  if (close(p.x1, g.x1) || close(p.y1, g.y1) || close(p.x2, g.x2) || close(p.y2, g.y2)) return true;
  // Intersection switching between empty and non-empty.
  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  return std::abs(iw) < kKinkMargin || std::abs(ih) < kKinkMargin;
}

BoxLossResult eval_box(LossKind kind, const BBox& p, const BBox& g) {
  switch (kind) {
    case LossKind::kDiou:
      return diou_loss(p, g);
    case LossKind::kGiou:
      return giou_loss(p, g);
    case LossKind::kL1:
      return l1_box_loss(p, g);
    case LossKind::kGfl:
      break;
  }
  throw std::logic_error("not a box loss");
}

double& coord(BBox& b, int k) {
  switch (k) {
    case 0:
      return b.x1;
    case 1:
      return b.y1;
    case 2:
      return b.x2;
    default:
      return b.y2;
  }
}

GradCheckResult check_boxes(const GradCheckOptions& opts, double tol) {
  GradCheckResult res;
  res.tolerance = tol;
  Sampler s(opts.seed);
  while (res.checked < opts.trials) {
    const BBox gt = s.box();
    const BBox pred = s.nearby(gt);
    if (near_box_kink(pred, gt)) {
      ++res.skipped;
      continue;
    }
    const BoxLossResult r = eval_box(opts.loss, pred, gt);
    for (int k = 0; k < 4; ++k) {
      BBox hi = pred;
      BBox lo = pred;
      coord(hi, k) += opts.step;
      coord(lo, k) -= opts.step;
      const double numeric = (eval_box(opts.loss, hi, gt).value - eval_box(opts.loss, lo, gt).value) / (2.0 * opts.step);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(r.grad_pred[k] + opts.perturb, numeric));
    }
    ++res.checked;
  }
  return res;
}

GradCheckResult check_gfl(const GradCheckOptions& opts, double tol) {
  static constexpr std::array<double, 3> kBetas{0.5, 1.0, 2.0};
  GradCheckResult res;
  res.tolerance = tol;
  Sampler s(opts.seed);
  std::size_t draw = 0;
  while (res.checked < opts.trials) {
    GflSample g;
    g.y_l = s.uniform(0.0, 0.8);
    g.y_r = g.y_l + s.uniform(0.05, 0.5);
    g.y = s.uniform(g.y_l, g.y_r);
    g.logits = {s.uniform(-4.0, 4.0), s.uniform(-4.0, 4.0)};
    g.beta = opts.beta.value_or(kBetas[draw++ % kBetas.size()]);
    const GflResult r = gfl_loss(g);
    // |y - y_hat|^beta is not smooth at y_hat = y.
    if (g.beta > 0.0 && std::abs(g.y - r.prediction) < kKinkMargin) {
      ++res.skipped;
      continue;
    }
    for (int k = 0; k < 2; ++k) {
      GflSample hi = g;
      GflSample lo = g;
      hi.logits[k] += opts.step;
      lo.logits[k] -= opts.step;
      const double numeric = (gfl_loss(hi).value - gfl_loss(lo).value) / (2.0 * opts.step);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(r.grad_logits[k] + opts.perturb, numeric));
    }
    ++res.checked;
  }
  return res;
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  if (name == "diou") return LossKind::kDiou;
  if (name == "giou") return LossKind::kGiou;
  if (name == "l1") return LossKind::kL1;
  if (name == "gfl") return LossKind::kGfl;
  throw std::invalid_argument(fmt::format("unknown loss '{}' (expected diou, giou, l1 or gfl)", name));
}

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kDiou:
      return "diou";
    case LossKind::kGiou:
      return "giou";
    case LossKind::kL1:
      return "l1";
    case LossKind::kGfl:
      return "gfl";
  }
  return "unknown";
}

double default_gradcheck_tolerance(LossKind kind) { return kind == LossKind::kGfl ? 1e-6 : 1e-4; }

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult run_gradcheck(const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const double tol = opts.tolerance.value_or(default_gradcheck_tolerance(opts.loss));
  if (opts.loss == LossKind::kGfl) return check_gfl(opts, tol);
  return check_boxes(opts, tol);
}

}  // namespace detkit
