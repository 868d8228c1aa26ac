#include "detkit/schedule.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

namespace detkit {

void ScheduleConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument(fmt::format("base_lr must be positive, got {}", base_lr));
  if (!(min_lr >= 0.0 && min_lr < base_lr)) {
    throw std::invalid_argument(fmt::format("min_lr must lie in [0, base_lr), got {}", min_lr));
  }
  if (warmup_iters < 0) throw std::invalid_argument(fmt::format("warmup_iters must be >= 0, got {}", warmup_iters));
  if (!(total_iters > warmup_iters)) {
    throw std::invalid_argument(
        fmt::format("total_iters ({}) must exceed warmup_iters ({})", total_iters, warmup_iters));
  }
  if (base_batch <= 0) throw std::invalid_argument(fmt::format("base_batch must be positive, got {}", base_batch));
  if (actual_batch <= 0) {
    throw std::invalid_argument(fmt::format("actual_batch must be positive, got {}", actual_batch));
  }
}

double lr_at(const ScheduleConfig& cfg, int64_t iter) {
  cfg.validate();
  if (iter < 0 || iter > cfg.total_iters) {
    throw IterationRangeError(fmt::format("iteration {} outside [0, {}]", iter, cfg.total_iters));
  }
  const double k = cfg.scale_factor();
  if (iter < cfg.warmup_iters) {
    return k * (cfg.base_lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters));
  }
  const double progress =
      static_cast<double>(iter - cfg.warmup_iters) / static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  // min + (k*base - min) * c, grouped so that with min_lr = 0 the result is
  // exactly k times the unscaled rate.
  return k * (cfg.base_lr * c) + cfg.min_lr * (1.0 - c);
}

std::vector<ScheduleRow> schedule_dump(const ScheduleConfig& cfg, int64_t stride) {
  cfg.validate();
  if (stride < 1) throw std::invalid_argument(fmt::format("stride must be >= 1, got {}", stride));
  std::vector<ScheduleRow> rows;
  for (int64_t it = 0; it < cfg.total_iters; it += stride) rows.push_back({it, lr_at(cfg, it)});
  rows.push_back({cfg.total_iters, lr_at(cfg, cfg.total_iters)});
  return rows;
}

void write_schedule_csv(std::ostream& out, const std::vector<ScheduleRow>& rows) {
  out << "iter,lr\n";
  for (const auto& r : rows) out << fmt::format("{},{:.9g}\n", r.iter, r.lr);
}

}  // namespace detkit
