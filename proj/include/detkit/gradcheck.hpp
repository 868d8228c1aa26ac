#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

namespace detkit {

enum class LossKind { kDiou, kGiou, kL1, kGfl };

LossKind parse_loss_kind(const std::string& name);
const char* loss_kind_name(LossKind kind);

/// Default relative tolerances: 1e-4 for box losses, 1e-6 for GFL.
double default_gradcheck_tolerance(LossKind kind);

struct GradCheckOptions {
  LossKind loss = LossKind::kDiou;
  std::size_t trials = 1000;
  uint64_t seed = 0;
  /// GFL only. Unset cycles through {0.5, 1, 2}.
  std::optional<double> beta;
  double step = 1e-5;
  std::optional<double> tolerance;
  /// Added to every analytic gradient component; lets tests confirm that
  /// the harness notices a wrong gradient.
  double perturb = 0.0;
};

struct GradCheckResult {
  std::size_t checked = 0;
  /// Samples within the exclusion margin of a non-differentiable point.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Error measure used throughout: |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Compares analytic gradients with central differences on `trials`
/// seeded random samples. Samples that fall within 1e-3 of a branch switch
/// are redrawn and counted as skipped.
GradCheckResult run_gradcheck(const GradCheckOptions& opts);

}  // namespace detkit
