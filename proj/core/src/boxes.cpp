#include "stvod/boxes.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace stvod {

double BoxCorners::area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }

bool BoxCS::valid() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  return in_unit(cx) && in_unit(cy) && in_unit(w) && in_unit(h);
}

BoxCorners box_cs_to_corners(const BoxCS& b) {
  return BoxCorners{b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

BoxCS box_corners_to_cs(const BoxCorners& c) {
  if (!(c.x2 > c.x1) || !(c.y2 > c.y1)) {
    throw std::invalid_argument("corner box has nonpositive extent");
  }
  return BoxCS{0.5 * (c.x1 + c.x2), 0.5 * (c.y1 + c.y2), c.x2 - c.x1, c.y2 - c.y1};
}

namespace {

double intersection(const BoxCorners& a, const BoxCorners& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return std::max(0.0, iw) * std::max(0.0, ih);
}

}  // namespace

double iou(const BoxCorners& a, const BoxCorners& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const BoxCS& a, const BoxCS& b) {
  return iou(box_cs_to_corners(a), box_cs_to_corners(b));
}

double generalized_iou(const BoxCorners& a, const BoxCorners& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double iou_term = uni > 0.0 ? inter / uni : 0.0;
  const BoxCorners hull{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
                        std::max(a.y2, b.y2)};
  const double enclosing = hull.area();
  if (enclosing <= 0.0) return iou_term;
  // Nested boxes give enclosing == union up to rounding; never let the
  // penalty turn into a bonus.
  return iou_term - std::max(0.0, enclosing - uni) / enclosing;
}

double generalized_iou(const BoxCS& a, const BoxCS& b) {
  return generalized_iou(box_cs_to_corners(a), box_cs_to_corners(b));
}

std::string to_string(const BoxCS& b) {
  std::ostringstream out;
  out << "(" << b.cx << ", " << b.cy << ", " << b.w << ", " << b.h << ")";
  return out.str();
}

}  // namespace stvod
