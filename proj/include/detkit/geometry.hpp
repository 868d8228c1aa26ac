#pragma once

#include <stdexcept>
#include <string>

namespace detkit {

/// Axis-aligned box in corner form, continuous pixel coordinates.
///
/// Degenerate boxes (x1 == x2 or y1 == y2) are valid. Construction through
/// `make` or `from_xywh` rejects inverted corners; direct aggregate
/// initialisation does not check, use `valid()` when the source is untrusted.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  static BBox make(double x1, double y1, double x2, double y2);
  static BBox from_xywh(double x, double y, double w, double h);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }

  /// True when `other` lies inside this box (boundaries inclusive).
  bool contains(const BBox& other) const {
    return x1 <= other.x1 && y1 <= other.y1 && other.x2 <= x2 && other.y2 <= y2;
  }

  BBox translated(double dx, double dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

class InvalidBoxError : public std::invalid_argument {
 public:
  explicit InvalidBoxError(const std::string& what) : std::invalid_argument(what) {}
};

double area(const BBox& b);
double intersection_area(const BBox& a, const BBox& b);

/// Intersection over union; 0 when the union has zero area.
double iou(const BBox& a, const BBox& b);

BBox enclosing_box(const BBox& a, const BBox& b);

/// Squared Euclidean distance between the two box centers.
double center_distance_sq(const BBox& a, const BBox& b);

/// Squared length of the box diagonal.
double diagonal_sq(const BBox& b);

std::string to_string(const BBox& b);

}  // namespace detkit
