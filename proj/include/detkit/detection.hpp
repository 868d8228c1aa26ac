#pragma once

#include <cstdint>

#include "detkit/geometry.hpp"

namespace detkit {

/// A scored predicted box.
struct Detection {
  BBox box;
  double score = 0.0;
  int64_t class_id = 0;
  int64_t image_id = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// An annotated box. `area` comes from the annotation when present and
/// falls back to the box area otherwise; area-range filtering uses it.
struct GroundTruth {
  BBox box;
  int64_t class_id = 0;
  int64_t image_id = 0;
  double area = 0.0;

  static GroundTruth from_box(const BBox& box, int64_t class_id, int64_t image_id) {
    return {box, class_id, image_id, detkit::area(box)};
  }

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Strict ranking used wherever detections are ordered: higher score first,
/// ties broken by lower image id, lower class id, then lexicographic box
/// coordinates. Gives bit-reproducible orderings.
bool ranks_before(const Detection& a, const Detection& b);

}  // namespace detkit
