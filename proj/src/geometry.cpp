#include "detkit/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace detkit {

BBox BBox::make(double x1, double y1, double x2, double y2) {
  BBox b{x1, y1, x2, y2};
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) {
    throw InvalidBoxError("non-finite box coordinate in " + to_string(b));
  }
  if (!b.valid()) {
    throw InvalidBoxError("inverted box corners " + to_string(b));
  }
  return b;
}

BBox BBox::from_xywh(double x, double y, double w, double h) {
  if (w < 0.0 || h < 0.0) {
    throw InvalidBoxError(fmt::format("negative box extent w={} h={}", w, h));
  }
  return make(x, y, x + w, y + h);
}

double area(const BBox& b) { return b.width() * b.height(); }

double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BBox enclosing_box(const BBox& a, const BBox& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

double center_distance_sq(const BBox& a, const BBox& b) {
  const double dx = a.center_x() - b.center_x();
  const double dy = a.center_y() - b.center_y();
  return dx * dx + dy * dy;
}

double diagonal_sq(const BBox& b) {
  const double w = b.width();
  const double h = b.height();
  return w * w + h * h;
}

std::string to_string(const BBox& b) {
  return fmt::format("({}, {}, {}, {})", b.x1, b.y1, b.x2, b.y2);
}

}  // namespace detkit
