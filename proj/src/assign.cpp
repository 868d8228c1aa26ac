#include "detkit/assign.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace detkit {
namespace {

void check_open_unit(double t, const char* what) {
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument(fmt::format("{} must lie in (0, 1), got {}", what, t));
  }
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, bool class_aware) {
  check_open_unit(iou_threshold, "NMS IoU threshold");
  std::vector<Detection> order(dets.begin(), dets.end());
  std::sort(order.begin(), order.end(), ranks_before);

  std::vector<Detection> kept;
  kept.reserve(order.size());
  for (const Detection& d : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      if (k.image_id != d.image_id) return false;
      if (class_aware && k.class_id != d.class_id) return false;
      return iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

CascadeConfig::CascadeConfig() : CascadeConfig({0.5, 0.6, 0.7}) {}

CascadeConfig::CascadeConfig(std::vector<double> stage_thresholds) : thresholds_(std::move(stage_thresholds)) {
  if (thresholds_.empty()) throw std::invalid_argument("cascade needs at least one stage threshold");
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    check_open_unit(thresholds_[i], "cascade stage threshold");
    if (i > 0 && !(thresholds_[i] > thresholds_[i - 1])) {
      throw std::invalid_argument(fmt::format("cascade thresholds must be strictly increasing; stage {} has {} after {}",
                                              i, thresholds_[i], thresholds_[i - 1]));
    }
  }
}

std::size_t StageAssignment::num_positive() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }));
}

StageAssignment assign_stage(std::span<const BBox> proposals, std::span<const GroundTruth> gts, double threshold) {
  check_open_unit(threshold, "stage IoU threshold");
  StageAssignment out;
  out.threshold = threshold;
  out.labels.resize(proposals.size());
  out.matched_iou.assign(proposals.size(), 0.0);
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(proposals[p], gts[g].box);
      if (!best_gt || v > best) {
        best = v;
        best_gt = g;
      }
    }
    out.matched_iou[p] = best;
    if (best_gt && best >= threshold) out.labels[p] = best_gt;
  }
  return out;
}

std::vector<StageAssignment> cascade_assign(std::span<const BBox> proposals, std::span<const GroundTruth> gts,
                                            const CascadeConfig& cfg) {
  std::vector<StageAssignment> stages;
  stages.reserve(cfg.num_stages());
  for (double t : cfg.stage_thresholds()) stages.push_back(assign_stage(proposals, gts, t));
  return stages;
}

}  // namespace detkit
