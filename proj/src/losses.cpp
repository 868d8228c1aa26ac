#include "detkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace detkit {
namespace {

// Indices into the (x1, y1, x2, y2) gradient vector.
constexpr int kX1 = 0;
constexpr int kY1 = 1;
constexpr int kX2 = 2;
constexpr int kY2 = 3;

using Grad = std::array<double, 4>;

// Pieces shared by the IoU-family losses, each with its derivative w.r.t.
// the predicted box.
struct OverlapTerms {
  double inter = 0.0;
  double uni = 0.0;
  double iou = 0.0;
  Grad d_inter{};
  Grad d_uni{};
  Grad d_iou{};

  // Enclosing box extents.
  double cw = 0.0;
  double ch = 0.0;
  Grad d_cw{};
  Grad d_ch{};
};

OverlapTerms overlap_terms(const BBox& p, const BBox& g) {
  OverlapTerms t;
  const double wp = p.width();
  const double hp = p.height();
  const Grad d_area_p{-hp, -wp, hp, wp};

  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  if (iw > 0.0 && ih > 0.0) {
    t.inter = iw * ih;
    // Active branches: pred edge is the inner one.
    if (p.x1 >= g.x1) t.d_inter[kX1] = -ih;
    if (p.x2 <= g.x2) t.d_inter[kX2] = ih;
    if (p.y1 >= g.y1) t.d_inter[kY1] = -iw;
    if (p.y2 <= g.y2) t.d_inter[kY2] = iw;
  }
  t.uni = area(p) + area(g) - t.inter;
  for (int k = 0; k < 4; ++k) t.d_uni[k] = d_area_p[k] - t.d_inter[k];
  if (t.uni > 0.0) {
    t.iou = t.inter / t.uni;
    const double u2 = t.uni * t.uni;
    for (int k = 0; k < 4; ++k) t.d_iou[k] = (t.d_inter[k] * t.uni - t.inter * t.d_uni[k]) / u2;
  }

  t.cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  t.ch = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  // Active branches: pred edge is the outer one.
  if (p.x1 <= g.x1) t.d_cw[kX1] = -1.0;
  if (p.x2 >= g.x2) t.d_cw[kX2] = 1.0;
  if (p.y1 <= g.y1) t.d_ch[kY1] = -1.0;
  if (p.y2 >= g.y2) t.d_ch[kY2] = 1.0;
  return t;
}

void require_valid(const BBox& b, const char* which) {
  if (!b.valid()) throw InvalidBoxError(fmt::format("{} box is inverted: {}", which, to_string(b)));
}

double log_sigmoid(double z) {
  // log(1 / (1 + exp(-z))) without overflow on either tail.
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

BoxLossResult diou_loss(const BBox& pred, const BBox& gt) {
  require_valid(pred, "predicted");
  require_valid(gt, "ground-truth");
  const OverlapTerms t = overlap_terms(pred, gt);
  const double c2 = t.cw * t.cw + t.ch * t.ch;
  if (c2 <= 0.0) {
    throw DegenerateEnclosureError("DIoU undefined: both boxes collapse to the point " + to_string(pred));
  }

  const double dx = pred.center_x() - gt.center_x();
  const double dy = pred.center_y() - gt.center_y();
  const double rho2 = dx * dx + dy * dy;
  // d(rho^2)/d(x1) = d(rho^2)/d(x2) = dx since each center moves by half.
  const Grad d_rho2{dx, dy, dx, dy};
  Grad d_c2{};
  for (int k = 0; k < 4; ++k) d_c2[k] = 2.0 * (t.cw * t.d_cw[k] + t.ch * t.d_ch[k]);

  BoxLossResult r;
  r.value = 1.0 - t.iou + rho2 / c2;
  const double c4 = c2 * c2;
  for (int k = 0; k < 4; ++k) {
    r.grad_pred[k] = -t.d_iou[k] + (d_rho2[k] * c2 - rho2 * d_c2[k]) / c4;
  }
  return r;
}

BoxLossResult giou_loss(const BBox& pred, const BBox& gt) {
  require_valid(pred, "predicted");
  require_valid(gt, "ground-truth");
  const OverlapTerms t = overlap_terms(pred, gt);
  const double hull = t.cw * t.ch;
  if (hull <= 0.0) {
    throw DegenerateEnclosureError(
        fmt::format("GIoU undefined: enclosing box of {} and {} has zero area", to_string(pred), to_string(gt)));
  }
  Grad d_hull{};
  for (int k = 0; k < 4; ++k) d_hull[k] = t.d_cw[k] * t.ch + t.cw * t.d_ch[k];

  BoxLossResult r;
  // 1 - IoU + (C - U) / C  ==  2 - IoU - U / C
  r.value = 1.0 - t.iou + (hull - t.uni) / hull;
  const double h2 = hull * hull;
  for (int k = 0; k < 4; ++k) {
    r.grad_pred[k] = -t.d_iou[k] - (t.d_uni[k] * hull - t.uni * d_hull[k]) / h2;
  }
  return r;
}

BoxLossResult l1_box_loss(const BBox& pred, const BBox& gt) {
  const std::array<double, 4> p{pred.x1, pred.y1, pred.x2, pred.y2};
  const std::array<double, 4> g{gt.x1, gt.y1, gt.x2, gt.y2};
  BoxLossResult r;
  for (int k = 0; k < 4; ++k) {
    const double d = p[k] - g[k];
    r.value += std::abs(d);
    r.grad_pred[k] = d < 0.0 ? -1.0 : 1.0;
  }
  return r;
}

BoxLossResult reduce(std::span<const BoxLossResult> per_pair, Reduction reduction) {
  BoxLossResult out;
  if (per_pair.empty()) return out;
  for (const auto& r : per_pair) {
    out.value += r.value;
    for (int k = 0; k < 4; ++k) out.grad_pred[k] += r.grad_pred[k];
  }
  if (reduction == Reduction::kMean) {
    const double n = static_cast<double>(per_pair.size());
    out.value /= n;
    for (auto& g : out.grad_pred) g /= n;
  }
  return out;
}

GflResult gfl_loss(const GflSample& s) {
  if (!(s.y_l < s.y_r)) {
    throw InvalidBracketError(fmt::format("GFL bracket requires y_l < y_r, got [{}, {}]", s.y_l, s.y_r));
  }
  if (!(s.y_l <= s.y && s.y <= s.y_r)) {
    throw InvalidBracketError(fmt::format("GFL label {} outside bracket [{}, {}]", s.y, s.y_l, s.y_r));
  }
  if (!(s.beta >= 0.0)) {
    throw InvalidBracketError(fmt::format("GFL beta must be non-negative, got {}", s.beta));
  }

  // Two-way softmax reduces to a sigmoid of the logit difference.
  const double d = s.logits[0] - s.logits[1];
  const double log_pl = log_sigmoid(d);
  const double log_pr = log_sigmoid(-d);
  const double pl = std::exp(log_pl);
  const double pr = std::exp(log_pr);

  const double wl = s.y_r - s.y;  // linear weight on log p_l
  const double wr = s.y - s.y_l;  // linear weight on log p_r
  // 0 * log 0 := 0, so a zero weight never touches its log term.
  double ce = 0.0;
  if (wl != 0.0) ce -= wl * log_pl;
  if (wr != 0.0) ce -= wr * log_pr;
  // d(ce)/dd with d(log p_l)/dd = p_r and d(log p_r)/dd = -p_l.
  double d_ce = 0.0;
  if (wl != 0.0) d_ce -= wl * pr;
  if (wr != 0.0) d_ce += wr * pl;

  const double pred = s.y_l * pl + s.y_r * pr;
  const double err = s.y - pred;
  const double abs_err = std::abs(err);
  const double d_err = (s.y_r - s.y_l) * pl * pr;  // d(y - pred)/dd

  double weight = 1.0;
  double d_weight = 0.0;
  if (s.beta > 0.0) {
    weight = std::pow(abs_err, s.beta);
    if (abs_err > 0.0) {
      const double sign = err > 0.0 ? 1.0 : -1.0;
      d_weight = s.beta * std::pow(abs_err, s.beta - 1.0) * sign * d_err;
    }
  }

  GflResult r;
  r.value = weight * ce;
  const double dv = d_weight * ce + weight * d_ce;
  r.grad_logits = {dv, -dv};
  r.p_l = pl;
  r.p_r = pr;
  r.prediction = pred;
  return r;
}

}  // namespace detkit
