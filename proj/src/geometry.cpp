#include "mdg/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "mdg/kinematics.hpp"

namespace mdg::geo {

std::array<Vec2, 4> corners(const Box& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  std::array<Vec2, 4> out;
  const double sx[4] = {1, 1, -1, -1};
  const double sy[4] = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i) {
    const double lx = sx[i] * hl, ly = sy[i] * hw;
    out[i] = {b.cx + c * lx - s * ly, b.cy + s * lx + c * ly};
  }
  return out;
}

namespace {

bool separated_on(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b, Vec2 axis) {
  double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
  for (const Vec2& p : a) {
    const double d = p.x * axis.x + p.y * axis.y;
    amin = std::min(amin, d);
    amax = std::max(amax, d);
  }
  for (const Vec2& p : b) {
    const double d = p.x * axis.x + p.y * axis.y;
    bmin = std::min(bmin, d);
    bmax = std::max(bmax, d);
  }
  return amax < bmin || bmax < amin;
}

}  // namespace

bool boxes_overlap(const Box& a, const Box& b) {
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  const double ra = 0.5 * std::hypot(a.length, a.width), rb = 0.5 * std::hypot(b.length, b.width);
  if (dx * dx + dy * dy > (ra + rb) * (ra + rb)) return false;
  const auto ca = corners(a), cb = corners(b);
  const Vec2 axes[4] = {{std::cos(a.theta), std::sin(a.theta)},
                        {-std::sin(a.theta), std::cos(a.theta)},
                        {std::cos(b.theta), std::sin(b.theta)},
                        {-std::sin(b.theta), std::cos(b.theta)}};
  for (const Vec2& ax : axes) {
    if (separated_on(ca, cb, ax)) return false;
  }
  return true;
}

bool point_in_box(const Box& b, double x, double y) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double dx = x - b.cx, dy = y - b.cy;
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.length && std::abs(ly) <= 0.5 * b.width;
}

bool point_in_polygon(const std::vector<Vec2>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

namespace {

double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Vec2 p, Vec2 q, Vec2 r) {
  return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
         r.y <= std::max(p.y, q.y);
}

int sign(double v) { return (v > 0) - (v < 0); }

}  // namespace

bool segments_intersect(Vec2 p, Vec2 q, Vec2 r, Vec2 s) {
  const int d1 = sign(cross(r, s, p)), d2 = sign(cross(r, s, q));
  const int d3 = sign(cross(p, q, r)), d4 = sign(cross(p, q, s));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(r, s, p)) return true;
  if (d2 == 0 && on_segment(r, s, q)) return true;
  if (d3 == 0 && on_segment(p, q, r)) return true;
  if (d4 == 0 && on_segment(p, q, s)) return true;
  return false;
}

Pose to_local(const Pose& origin, const Pose& p) {
  const double c = std::cos(origin.theta), s = std::sin(origin.theta);
  const double dx = p.x - origin.x, dy = p.y - origin.y;
  return {c * dx + s * dy, -s * dx + c * dy, kin::wrap_angle(p.theta - origin.theta)};
}

Pose to_global(const Pose& origin, const Pose& local) {
  const double c = std::cos(origin.theta), s = std::sin(origin.theta);
  return {origin.x + c * local.x - s * local.y, origin.y + s * local.x + c * local.y,
          kin::wrap_angle(origin.theta + local.theta)};
}

}  // namespace mdg::geo
