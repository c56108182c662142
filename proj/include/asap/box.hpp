#pragma once

#include <algorithm>
#include <array>

namespace asap {

// Normalized (cx, cy, w, h) box.
using Box = std::array<double, 4>;

struct Corners {
  double x1, y1, x2, y2;
};

inline Corners to_corners(const Box& b) {
  return {b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0,
          b[1] + b[3] / 2.0};
}

inline double box_area(const Box& b) { return b[2] * b[3]; }

inline bool box_is_zero(const Box& b) {
  return b[0] == 0.0 && b[1] == 0.0 && b[2] == 0.0 && b[3] == 0.0;
}

inline double intersection_area(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double w = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double h = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  return std::max(0.0, w) * std::max(0.0, h);
}

inline double iou_boxes(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  if (uni <= 1e-12) return 0.0;
  return inter / uni;
}

}  // namespace asap
