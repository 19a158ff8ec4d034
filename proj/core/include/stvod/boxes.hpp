#pragma once

#include <cstddef>
#include <string>

namespace stvod {

/// Axis-aligned box in corner form (x1, y1, x2, y2).
struct BoxCorners {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const;
};

/// Normalized center-size box; all four fields lie in (0,1) for valid boxes.
struct BoxCS {
  double cx = 0.5, cy = 0.5, w = 0.5, h = 0.5;

  bool valid() const;
  friend bool operator==(const BoxCS&, const BoxCS&) = default;
};

/// Annotated object: class id and its normalized box.
struct GroundTruthBox {
  std::size_t class_id = 0;
  BoxCS box;
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

BoxCorners box_cs_to_corners(const BoxCS& b);
/// Throws std::invalid_argument when x2 <= x1 or y2 <= y1.
BoxCS box_corners_to_cs(const BoxCorners& c);

double iou(const BoxCorners& a, const BoxCorners& b);
double iou(const BoxCS& a, const BoxCS& b);

/// IoU minus the fraction of the smallest enclosing box not covered by the
/// union. Zero-area boxes give an IoU term of 0.
double generalized_iou(const BoxCorners& a, const BoxCorners& b);
double generalized_iou(const BoxCS& a, const BoxCS& b);

std::string to_string(const BoxCS& b);

}  // namespace stvod
