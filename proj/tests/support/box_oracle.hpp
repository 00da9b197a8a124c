#pragma once

// Reference rectangle overlap by dense point sampling, plus the fuzz case
// generator shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>

#include "mdg/geometry.hpp"
#include "mdg/rng.hpp"

namespace mdg::oracle {

// Signed distance between projections on the four box axes: positive means
// a separating gap of that size, negative is the penetration depth.
inline double sat_margin(const geo::Box& a, const geo::Box& b) {
  const auto ca = geo::corners(a), cb = geo::corners(b);
  const geo::Vec2 axes[4] = {{std::cos(a.theta), std::sin(a.theta)},
                             {-std::sin(a.theta), std::cos(a.theta)},
                             {std::cos(b.theta), std::sin(b.theta)},
                             {-std::sin(b.theta), std::cos(b.theta)}};
  double margin = -1e300;
  for (const geo::Vec2& ax : axes) {
    double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
    for (int k = 0; k < 4; ++k) {
      const double pa = ca[k].x * ax.x + ca[k].y * ax.y, pb = cb[k].x * ax.x + cb[k].y * ax.y;
      lo_a = std::min(lo_a, pa);
      hi_a = std::max(hi_a, pa);
      lo_b = std::min(lo_b, pb);
      hi_b = std::max(hi_b, pb);
    }
    margin = std::max(margin, std::max(lo_b - hi_a, lo_a - hi_b));
  }
  return margin;
}

// Walks the boundary of each box at spacing h and tests the points against
// the other box. Convex shapes overlapping by more than h are always found.
inline bool sampled_overlap(const geo::Box& a, const geo::Box& b, double h = 0.01) {
  auto walk = [h](const geo::Box& p, const geo::Box& q) {
    const auto c = geo::corners(p);
    for (int k = 0; k < 4; ++k) {
      const geo::Vec2 u = c[k], v = c[(k + 1) % 4];
      const int n = std::max(1, static_cast<int>(std::ceil(std::hypot(v.x - u.x, v.y - u.y) / h)));
      for (int s = 0; s <= n; ++s) {
        const double t = static_cast<double>(s) / n;
        if (geo::point_in_box(q, u.x + t * (v.x - u.x), u.y + t * (v.y - u.y))) return true;
      }
    }
    return geo::point_in_box(q, p.cx, p.cy);
  };
  return walk(a, b) || walk(b, a);
}

struct BoxPair {
  geo::Box a, b;
};

// Random pair around the origin; cases within `min_margin` of touching are
// redrawn because sampling cannot resolve them.
inline BoxPair fuzz_box_pair(Rng& rng, double min_margin = 0.05) {
  const double pi = std::acos(-1.0);
  for (;;) {
    BoxPair p;
    p.a = {0.0, 0.0, rng.uniform(-pi, pi), rng.uniform(0.5, 6.0), rng.uniform(0.5, 3.0)};
    p.b = {rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0), rng.uniform(-pi, pi), rng.uniform(0.5, 6.0),
           rng.uniform(0.5, 3.0)};
    if (std::abs(sat_margin(p.a, p.b)) >= min_margin) return p;
  }
}

}  // namespace mdg::oracle
