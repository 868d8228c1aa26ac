#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detkit/detection.hpp"

namespace detkit {

/// Greedy non-maximum suppression.
///
/// Detections are visited in `ranks_before` order; a detection is dropped
/// when its IoU with an already kept detection exceeds `iou_threshold`
/// (strictly). With `class_aware`, only detections of the same class
/// suppress each other. Detections on different images never interact.
/// The result is sorted in `ranks_before` order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, bool class_aware = true);

/// Ordered per-stage IoU thresholds of a cascade head.
class CascadeConfig {
 public:
  /// Default thresholds (0.5, 0.6, 0.7).
  CascadeConfig();
  explicit CascadeConfig(std::vector<double> stage_thresholds);

  const std::vector<double>& stage_thresholds() const { return thresholds_; }
  std::size_t num_stages() const { return thresholds_.size(); }

 private:
  std::vector<double> thresholds_;
};

struct StageAssignment {
  double threshold = 0.0;
  /// Index of the matched ground truth for positives, nullopt for negatives.
  std::vector<std::optional<std::size_t>> labels;
  /// Max IoU over all ground truths per proposal (0 when there are none).
  std::vector<double> matched_iou;

  std::size_t num_positive() const;
};

/// Labels each proposal by its max-IoU ground truth: positive iff that IoU
/// is at least `threshold`. Ties in IoU go to the lower ground-truth index.
StageAssignment assign_stage(std::span<const BBox> proposals, std::span<const GroundTruth> gts, double threshold);

std::vector<StageAssignment> cascade_assign(std::span<const BBox> proposals, std::span<const GroundTruth> gts,
                                            const CascadeConfig& cfg);

}  // namespace detkit
