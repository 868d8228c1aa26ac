#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>

#include "detkit/geometry.hpp"

namespace detkit {

/// Loss value together with d(loss)/d(x1, y1, x2, y2) of the predicted box.
struct BoxLossResult {
  double value = 0.0;
  std::array<double, 4> grad_pred{};
};

/// Raised when the enclosing box of a pair has no extent to normalise by.
class DegenerateEnclosureError : public std::domain_error {
 public:
  explicit DegenerateEnclosureError(const std::string& what) : std::domain_error(what) {}
};

class InvalidBracketError : public std::domain_error {
 public:
  explicit InvalidBracketError(const std::string& what) : std::domain_error(what) {}
};

// Box losses. Gradients are exact on each smooth piece. Where a min/max
// branch is tied (coinciding edges, pred == gt) the predicted box is taken
// as the active side, which yields a one-sided derivative.

/// 1 - IoU + rho^2 / c^2, with rho the center distance and c the enclosing
/// box diagonal.
BoxLossResult diou_loss(const BBox& pred, const BBox& gt);

/// 1 - IoU + |C \ (A u B)| / |C|, with C the enclosing box.
BoxLossResult giou_loss(const BBox& pred, const BBox& gt);

/// Sum of absolute coordinate differences. Tied coordinates get +1.
BoxLossResult l1_box_loss(const BBox& pred, const BBox& gt);

enum class Reduction { kMean, kSum };

/// Reduces a batch of per-pair results; gradients are scaled consistently
/// with the value (mean divides every gradient by the batch size).
BoxLossResult reduce(std::span<const BoxLossResult> per_pair, Reduction reduction = Reduction::kMean);

inline constexpr double kDefaultGflBeta = 2.0;

/// Two-node quality distribution sample. The probabilities of the bracketing
/// nodes come from a two-way softmax over `logits`.
struct GflSample {
  double y = 0.0;
  double y_l = 0.0;
  double y_r = 1.0;
  std::array<double, 2> logits{};
  double beta = kDefaultGflBeta;
};

struct GflResult {
  double value = 0.0;
  std::array<double, 2> grad_logits{};
  double p_l = 0.0;
  double p_r = 0.0;
  /// The expected quality y_l * p_l + y_r * p_r.
  double prediction = 0.0;
};

GflResult gfl_loss(const GflSample& s);

}  // namespace detkit
