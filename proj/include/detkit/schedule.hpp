#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace detkit {

/// Linear warmup from 0 followed by cosine decay to `min_lr`, with the base
/// rate scaled linearly by actual_batch / base_batch.
struct ScheduleConfig {
  double base_lr = 0.001;
  int64_t warmup_iters = 3000;
  int64_t total_iters = 90000;
  double min_lr = 0.0;
  int64_t base_batch = 16;
  int64_t actual_batch = 16;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  double scale_factor() const { return static_cast<double>(actual_batch) / static_cast<double>(base_batch); }
  double scaled_base_lr() const { return base_lr * scale_factor(); }
};

class IterationRangeError : public std::out_of_range {
 public:
  explicit IterationRangeError(const std::string& what) : std::out_of_range(what) {}
};

double lr_at(const ScheduleConfig& cfg, int64_t iter);

struct ScheduleRow {
  int64_t iter = 0;
  double lr = 0.0;
};

/// Samples iterations 0, stride, 2*stride, ... and always ends with
/// total_iters.
std::vector<ScheduleRow> schedule_dump(const ScheduleConfig& cfg, int64_t stride);

/// "iter,lr" header then one row per sample, lr with 9 significant digits.
void write_schedule_csv(std::ostream& out, const std::vector<ScheduleRow>& rows);

}  // namespace detkit
