#include "detkit/detection.hpp"

#include <tuple>

namespace detkit {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.image_id, a.class_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
         std::tie(b.image_id, b.class_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

}  // namespace detkit
