#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detkit/detection.hpp"

namespace detkit {

class EvalInputError : public std::invalid_argument {
 public:
  explicit EvalInputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Half-open area interval [lo, hi).
struct AreaRange {
  std::string name;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double a) const { return lo <= a && a < hi; }
};

struct EvalConfig {
  /// 0.50:0.05:0.95, computed the way the reference evaluator does so that
  /// the 0.5 and 0.75 slices are found bit-exactly.
  std::vector<double> iou_thresholds = coco_iou_thresholds();
  /// small [0, 32^2), medium [32^2, 96^2), large [96^2, inf).
  std::vector<AreaRange> area_ranges = coco_area_ranges();
  /// Per image and class, highest scores first.
  std::size_t max_detections = 100;
  std::size_t recall_max_detections = 100;
  unsigned threads = 1;

  static std::vector<double> coco_iou_thresholds();
  static std::vector<AreaRange> coco_area_ranges();
  /// Recall levels 0, 0.01, ..., 1.0 used for interpolated precision.
  static std::vector<double> coco_recall_levels();

  /// Throws EvalInputError when the thresholds or ranges break their
  /// invariants (strictly increasing in (0,1); disjoint, exhaustive ranges).
  void validate() const;
};

/// nullopt marks a stratum without ground truth.
struct EvalReport {
  std::optional<double> ap_all;
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::optional<double> ap_s;
  std::optional<double> ap_m;
  std::optional<double> ap_l;
  std::optional<double> recall_s;
  std::optional<double> recall_m;
  std::optional<double> recall_l;
  std::optional<double> recall_all;

  /// (name, value) pairs in the fixed column order used for output.
  std::vector<std::pair<std::string, std::optional<double>>> metrics() const;
};

/// Ground truth plus the image and category universes it was drawn from.
/// Images without annotations still count: detections on them are false
/// positives.
struct GroundTruthSet {
  std::vector<int64_t> image_ids;
  std::vector<int64_t> category_ids;
  std::vector<GroundTruth> gts;

  /// Universes taken from the ground truth itself.
  static GroundTruthSet from_ground_truth(std::vector<GroundTruth> gts);
};

struct ImageMatch {
  /// Parallel to the input detections.
  std::vector<bool> true_positive;
  /// Index of the matched ground truth, for true positives.
  std::vector<std::optional<std::size_t>> matched_gt;
};

/// Greedy matching for one image and one class: detections in score order
/// take the highest-IoU still unmatched ground truth with IoU >= iou_t.
ImageMatch match_image(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_t);

struct ScoredFlag {
  double score = 0.0;
  bool true_positive = false;
};

/// 101-point interpolated average precision; nullopt when n_gt == 0.
/// Detections are ranked by descending score (stable for equal scores).
std::optional<double> average_precision(std::span<const ScoredFlag> dets, std::size_t n_gt);

EvalReport evaluate(std::span<const Detection> dets, const GroundTruthSet& gt, const EvalConfig& cfg = {});

/// Fixed-width table, one row of column names and one of values.
std::string format_report_table(const EvalReport& r);

}  // namespace detkit
