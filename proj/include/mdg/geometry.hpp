#pragma once

// Planar primitives shared by the world generator and the metrics.

#include <array>
#include <vector>

namespace mdg::geo {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool operator==(const Pose&) const = default;
};

struct Box {
  double cx, cy, theta, length, width;
};

std::array<Vec2, 4> corners(const Box& b);

// Separating-axis test on oriented rectangles. Touching edges count as overlap.
bool boxes_overlap(const Box& a, const Box& b);

bool point_in_box(const Box& b, double x, double y);
// Even-odd rule; boundary points may land either side.
bool point_in_polygon(const std::vector<Vec2>& poly, double x, double y);

// Proper or touching intersection of closed segments pq and rs.
bool segments_intersect(Vec2 p, Vec2 q, Vec2 r, Vec2 s);

// Expresses `p` in the frame anchored at `origin`.
Pose to_local(const Pose& origin, const Pose& p);
Pose to_global(const Pose& origin, const Pose& local);

}  // namespace mdg::geo
