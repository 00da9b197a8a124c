#include "mdg/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mdg/binary_io.hpp"
#include "mdg/errors.hpp"

namespace mdg::world {

const char* const kGeneratorVersion = "synthworld-1";

const char* to_string(MapKind k) {
  switch (k) {
    case MapKind::straight: return "straight";
    case MapKind::curve: return "curve";
    case MapKind::intersection: return "intersection";
    case MapKind::merge: return "merge";
  }
  return "?";
}

MapKind parse_map_kind(const std::string& s) {
  for (MapKind k : all_map_kinds()) {
    if (s == to_string(k)) return k;
  }
  throw ContractViolation("unknown map kind '" + s + "' (straight|curve|intersection|merge)");
}

const std::vector<MapKind>& all_map_kinds() {
  static const std::vector<MapKind> kinds = {MapKind::straight, MapKind::curve, MapKind::intersection,
                                             MapKind::merge};
  return kinds;
}

kin::AgentState Agent::current() const {
  require(!history.empty(), "agent has no history");
  const kin::StateRow& r = history.back();
  return {r.x, r.y, r.theta, r.speed(), length, width};
}

std::vector<Polyline> split_polyline(const Polyline& lane) {
  std::vector<Polyline> out;
  const std::size_t n = lane.points.size();
  if (n < 2) return out;
  for (std::size_t start = 0; start + 1 < n; start += kWaypoints - 1) {
    Polyline p;
    for (std::size_t k = 0; k < kWaypoints; ++k) {
      const std::size_t i = start + k;
      if (i < n) {
        p.points.push_back(lane.points[i]);
      } else {
        // Pad short tails by extending along the final heading.
        const geo::Pose& last = p.points.back();
        p.points.push_back({last.x + kWaypointSpacing * std::cos(last.theta),
                            last.y + kWaypointSpacing * std::sin(last.theta), last.theta});
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Polyline> map_polylines(const Scenario& s) {
  std::vector<Polyline> out;
  for (const Polyline& lane : s.lanes) {
    for (Polyline& p : split_polyline(lane)) out.push_back(std::move(p));
  }
  return out;
}

namespace {

// Arc-length view of a lane centerline, extrapolated straight past both ends.
class LanePath {
 public:
  explicit LanePath(const Polyline& p) : pts_(p.points) {
    s_.assign(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      s_[i] = s_[i - 1] + std::hypot(pts_[i].x - pts_[i - 1].x, pts_[i].y - pts_[i - 1].y);
    }
  }

  double length() const { return s_.back(); }

  geo::Pose at(double s) const {
    if (s <= 0.0) return extend(0, s);
    if (s >= length()) return extend(pts_.size() - 1, s - length());
    const std::size_t i = static_cast<std::size_t>(std::upper_bound(s_.begin(), s_.end(), s) - s_.begin()) - 1;
    const double u = (s - s_[i]) / (s_[i + 1] - s_[i]);
    const geo::Pose& a = pts_[i];
    const geo::Pose& b = pts_[i + 1];
    return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), std::atan2(b.y - a.y, b.x - a.x)};
  }

  // Arc length and signed lateral offset (left positive) of the nearest point.
  std::pair<double, double> project(double x, double y) const {
    double best = std::numeric_limits<double>::infinity();
    double best_s = 0.0, best_lat = 0.0;
    const std::size_t n = pts_.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double ax = pts_[i].x, ay = pts_[i].y;
      const double dx = pts_[i + 1].x - ax, dy = pts_[i + 1].y - ay;
      const double len2 = dx * dx + dy * dy;
      double u = ((x - ax) * dx + (y - ay) * dy) / len2;
      const double lo = i == 0 ? -std::numeric_limits<double>::infinity() : 0.0;
      const double hi = i + 2 == n ? std::numeric_limits<double>::infinity() : 1.0;
      u = std::clamp(u, lo, hi);
      const double px = ax + u * dx, py = ay + u * dy;
      const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
      if (d2 < best) {
        best = d2;
        const double len = std::sqrt(len2);
        best_s = s_[i] + u * len;
        best_lat = (dx * (y - ay) - dy * (x - ax)) / len;
      }
    }
    return {best_s, best_lat};
  }

 private:
  geo::Pose extend(std::size_t i, double ds) const {
    const double th = i == 0 ? std::atan2(pts_[1].y - pts_[0].y, pts_[1].x - pts_[0].x)
                             : std::atan2(pts_[i].y - pts_[i - 1].y, pts_[i].x - pts_[i - 1].x);
    return {pts_[i].x + ds * std::cos(th), pts_[i].y + ds * std::sin(th), th};
  }

  std::vector<geo::Pose> pts_;
  std::vector<double> s_;
};

Polyline straight_lane(double x0, double y0, double theta, std::size_t n) {
  Polyline p;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = kWaypointSpacing * static_cast<double>(k);
    p.points.push_back({x0 + s * std::cos(theta), y0 + s * std::sin(theta), theta});
  }
  return p;
}

// Resamples a dense curve at kWaypointSpacing arc length.
Polyline resample(const std::vector<geo::Vec2>& dense) {
  Polyline p;
  double acc = 0.0, next = 0.0;
  for (std::size_t i = 0; i + 1 < dense.size(); ++i) {
    const double dx = dense[i + 1].x - dense[i].x, dy = dense[i + 1].y - dense[i].y;
    const double len = std::hypot(dx, dy);
    while (next <= acc + len) {
      const double u = (next - acc) / len;
      p.points.push_back({dense[i].x + u * dx, dense[i].y + u * dy, std::atan2(dy, dx)});
      next += kWaypointSpacing;
    }
    acc += len;
  }
  return p;
}

constexpr std::size_t kLanePoints = 46;  // 180 m
constexpr double kStopArc = 82.0;        // intersection stop lines, 8 m before the center

}  // namespace

MapLayout generate_map(MapKind kind, Rng& rng) {
  MapLayout m;
  m.kind = kind;
  switch (kind) {
    case MapKind::straight:
      for (double y : {-kLaneWidth, 0.0, kLaneWidth}) m.lanes.push_back(straight_lane(-60.0, y, 0.0, kLanePoints));
      m.vehicle_lanes = {0, 1, 2};
      break;
    case MapKind::curve: {
      const double sign = rng.coin() ? 1.0 : -1.0;  // left or right bend
      const double center_y = 54.0;
      for (double r : {50.0, 54.0, 58.0}) {
        Polyline p;
        const double phi0 = -60.0 / r;
        for (std::size_t k = 0; k < kLanePoints; ++k) {
          const double phi = phi0 + kWaypointSpacing * static_cast<double>(k) / r;
          const double x = r * std::sin(phi);
          const double y = center_y - r * std::cos(phi);
          p.points.push_back({x, sign * y, sign * phi});
        }
        m.lanes.push_back(std::move(p));
      }
      m.vehicle_lanes = {0, 1, 2};
      break;
    }
    case MapKind::intersection: {
      const double h = 0.5 * kLaneWidth;
      m.lanes.push_back(straight_lane(-90.0, -h, 0.0, kLanePoints));
      m.lanes.push_back(straight_lane(90.0, h, std::numbers::pi, kLanePoints));
      m.lanes.push_back(straight_lane(h, -90.0, 0.5 * std::numbers::pi, kLanePoints));
      m.lanes.push_back(straight_lane(-h, 90.0, -0.5 * std::numbers::pi, kLanePoints));
      const bool a_goes = rng.coin();
      const LightPhase go = rng.coin() ? LightPhase::green : LightPhase::yellow;
      for (std::int32_t lane = 0; lane < 4; ++lane) {
        const LanePath path(m.lanes[static_cast<std::size_t>(lane)]);
        const bool road_a = lane < 2;
        m.lights.push_back({road_a == a_goes ? go : LightPhase::red, path.at(kStopArc), lane});
      }
      m.vehicle_lanes = {0, 1, 2, 3};
      break;
    }
    case MapKind::merge: {
      m.lanes.push_back(straight_lane(-60.0, 0.0, 0.0, kLanePoints));
      m.lanes.push_back(straight_lane(-60.0, kLaneWidth, 0.0, kLanePoints));
      const double join = 40.0 + rng.uniform(-10.0, 10.0);
      std::vector<geo::Vec2> dense;
      for (double x = -60.0; x <= 120.0 + 1e-9; x += 0.25) {
        double y = 0.0;
        if (x < join) {
          const double u = (x + 60.0) / (join + 60.0);
          y = -20.0 * (1.0 - u * u * (3.0 - 2.0 * u));
        }
        dense.push_back({x, y});
      }
      m.lanes.push_back(resample(dense));
      m.vehicle_lanes = {0, 1, 2};
      break;
    }
  }
  return m;
}

namespace {

struct Controlled {
  kin::AgentState state;
  const Spawn* spawn;
};

double follow_accel(double v, double v_lead, double gap, double standstill) {
  double a = 0.5 * (gap - (standstill + 1.0 * v)) + 0.8 * (v_lead - v);
  if (v > v_lead) {
    const double room = gap - standstill;
    if (room <= 0.1) return -std::numeric_limits<double>::infinity();
    const double need = (v * v - v_lead * v_lead) / (2.0 * room);
    if (need > 0.5 * kMaxAccel) a = std::min(a, -need);
  }
  return a;
}

}  // namespace

std::vector<std::vector<kin::StateRow>> simulate(const MapLayout& map, const std::vector<Spawn>& spawns,
                                                 std::size_t steps, double dt) {
  require(dt > 0.0, "simulate needs dt > 0");
  std::vector<LanePath> paths;
  for (const Polyline& l : map.lanes) paths.emplace_back(l);
  const std::size_t n = spawns.size();
  std::vector<kin::AgentState> st(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Spawn& sp = spawns[i];
    require(sp.type == AgentType::pedestrian ||
                (sp.lane >= 0 && static_cast<std::size_t>(sp.lane) < map.lanes.size()),
            "vehicle spawn needs a valid lane");
    st[i] = {sp.pose.x, sp.pose.y, sp.pose.theta, sp.speed, sp.length, sp.width};
  }
  std::vector<std::vector<kin::StateRow>> rows(n);
  for (auto& r : rows) r.reserve(steps);
  const double chunk_t = static_cast<double>(kin::kChunk) * dt;

  for (std::size_t step = 0; step < steps; step += kin::kChunk) {
    std::vector<kin::RawAction> act(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
      const Spawn& sp = spawns[i];
      if (sp.type == AgentType::pedestrian) continue;
      const LanePath& path = paths[static_cast<std::size_t>(sp.lane)];
      const kin::AgentState& me = st[i];
      const auto [s_me, lat_me] = path.project(me.x, me.y);
      (void)lat_me;
      double a = 0.6 * (sp.desired_speed - me.v);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const kin::AgentState& o = st[j];
        const double corridor = 0.5 * (me.width + o.width) + 0.5;
        // Current position, plus short constant-velocity look-ahead for crossers.
        bool blocking = false;
        double s_o = 0.0, v_lead = 0.0;
        for (double tau : {0.0, 1.0, 2.0}) {
          const double px = o.x + tau * o.v * std::cos(o.theta);
          const double py = o.y + tau * o.v * std::sin(o.theta);
          const auto [s, lat] = path.project(px, py);
          if (s > s_me && s - s_me < 80.0 && std::abs(lat) < corridor) {
            const geo::Pose here = path.at(s);
            const double along = o.v * std::cos(o.theta - here.theta);
            if (!blocking || s < s_o) {
              s_o = s;
              v_lead = tau == 0.0 ? std::max(0.0, along) : 0.0;
            }
            blocking = true;
            break;
          }
        }
        if (!blocking) continue;
        const double gap = s_o - s_me - 0.5 * (me.length + o.length);
        a = std::min(a, follow_accel(me.v, v_lead, gap, 2.5));
      }
      for (const TrafficLight& light : map.lights) {
        if (light.lane != sp.lane || light.phase != LightPhase::red) continue;
        const double s_stop = path.project(light.stop.x, light.stop.y).first;
        const double gap = s_stop - s_me - 0.5 * me.length;
        if (gap < -0.5) continue;  // already past the line
        a = std::min(a, follow_accel(me.v, 0.0, gap, 0.3));
      }
      a = std::clamp(a, -kMaxAccel, kMaxAccel);
      a = std::max(a, -me.v / chunk_t);
      const double v_mid = std::max(0.0, me.v + 0.5 * a * chunk_t);
      const double look = std::max(4.0, 0.8 * me.v + 2.0);
      const geo::Pose target = path.at(s_me + look);
      const geo::Pose local = geo::to_local({me.x, me.y, me.theta}, target);
      const double alpha = std::atan2(local.y, local.x);
      const double kappa = 2.0 * std::sin(alpha) / look;
      act[i] = {a, std::clamp(v_mid * kappa, -1.0, 1.0)};
    }
    for (std::size_t k = 0; k < kin::kChunk && step + k < steps; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        kin::AgentState& s = st[i];
        s.v += act[i].accel * dt;
        s.theta = kin::wrap_angle(s.theta + act[i].yaw_rate * dt);
        const double vx = s.v * std::cos(s.theta), vy = s.v * std::sin(s.theta);
        s.x += vx * dt;
        s.y += vy * dt;
        rows[i].push_back({s.x, s.y, s.theta, vx, vy});
      }
    }
  }
  return rows;
}

Scenario transform_scenario(const Scenario& s, const geo::Pose& g) {
  const double c = std::cos(g.theta), sn = std::sin(g.theta);
  auto pose = [&](const geo::Pose& p) { return geo::to_global(g, p); };
  auto row = [&](const kin::StateRow& r) {
    const geo::Pose p = pose({r.x, r.y, r.theta});
    return kin::StateRow{p.x, p.y, p.theta, c * r.vx - sn * r.vy, sn * r.vx + c * r.vy};
  };
  Scenario out = s;
  for (Polyline& l : out.lanes) for (geo::Pose& p : l.points) p = pose(p);
  for (Polyline& l : out.route) for (geo::Pose& p : l.points) p = pose(p);
  for (TrafficLight& l : out.lights) l.stop = pose(l.stop);
  for (Agent& a : out.agents) {
    for (kin::StateRow& r : a.history) r = row(r);
    for (kin::StateRow& r : a.future) r = row(r);
  }
  return out;
}

bool has_collision(const Scenario& s) {
  const std::size_t n = s.agents.size();
  const std::size_t h = s.history_steps(), t = s.future_steps();
  for (std::size_t k = 0; k < h + t; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const Agent& a = s.agents[i];
      const kin::StateRow& ra = k < h ? a.history[k] : a.future[k - h];
      for (std::size_t j = i + 1; j < n; ++j) {
        const Agent& b = s.agents[j];
        const kin::StateRow& rb = k < h ? b.history[k] : b.future[k - h];
        if (geo::boxes_overlap({ra.x, ra.y, ra.theta, a.length, a.width},
                               {rb.x, rb.y, rb.theta, b.length, b.width})) {
          return true;
        }
      }
    }
  }
  return false;
}

namespace {

std::vector<Spawn> sample_spawns(const MapLayout& map, std::size_t n, const WorldConfig& cfg, Rng& rng) {
  std::vector<LanePath> paths;
  for (const Polyline& l : map.lanes) paths.emplace_back(l);
  std::vector<Spawn> out;
  std::vector<double> spawn_s;

  auto red_lane = [&](std::int32_t lane) {
    for (const TrafficLight& l : map.lights) {
      if (l.lane == lane && l.phase == LightPhase::red) return true;
    }
    return false;
  };

  const bool peds = n >= 2 && (map.kind == MapKind::straight || map.kind == MapKind::intersection) &&
                    rng.uniform() < cfg.pedestrian_prob;
  const std::size_t vehicles = peds ? n - 1 : n;

  for (std::size_t v = 0; v < vehicles; ++v) {
    bool placed = false;
    for (int tries = 0; tries < 200 && !placed; ++tries) {
      const auto lane = static_cast<std::int32_t>(
          map.vehicle_lanes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(map.vehicle_lanes.size()) - 1))]);
      const bool red = red_lane(lane);
      const double s = v == 0 ? rng.uniform(40.0, red ? 65.0 : 90.0) : rng.uniform(10.0, red ? 65.0 : 110.0);
      double speed = rng.uniform(3.0, 11.0);
      const double desired = rng.uniform(8.0, kMaxSpeed);
      const double length = rng.uniform(4.0, 5.0);
      if (red) {
        const double room = kStopArc - s - 0.5 * length - 1.0;
        speed = std::min(speed, std::sqrt(2.0 * 2.0 * std::max(room, 0.0)));
      }
      const geo::Pose pose = paths[static_cast<std::size_t>(lane)].at(s);
      bool ok = true;
      for (std::size_t k = 0; k < out.size() && ok; ++k) {
        const double d = std::hypot(out[k].pose.x - pose.x, out[k].pose.y - pose.y);
        const auto [s_other, lat] = paths[static_cast<std::size_t>(lane)].project(out[k].pose.x, out[k].pose.y);
        (void)s_other;
        const double need = std::abs(lat) < 3.0 ? 10.0 + 0.8 * std::max(speed, out[k].speed) : 6.0;
        ok = d >= need;
      }
      if (!ok) continue;
      Spawn sp;
      sp.type = AgentType::vehicle;
      sp.lane = lane;
      sp.pose = pose;
      sp.speed = speed;
      sp.desired_speed = desired;
      sp.length = length;
      sp.width = rng.uniform(1.8, 2.2);
      out.push_back(sp);
      placed = true;
    }
    if (!placed) return out;  // over capacity; caller reduces n
  }

  if (peds) {
    Spawn p;
    p.type = AgentType::pedestrian;
    p.length = 0.8;
    p.width = 0.8;
    p.speed = rng.uniform(0.8, 1.5);
    p.desired_speed = p.speed;
    const double side = rng.coin() ? 1.0 : -1.0;
    if (map.kind == MapKind::straight) {
      p.pose = {rng.uniform(0.0, 80.0), side * rng.uniform(7.5, 9.5), -side * 0.5 * std::numbers::pi};
    } else {
      const double along = (rng.coin() ? 1.0 : -1.0) * rng.uniform(12.0, 30.0);
      p.pose = {along, side * rng.uniform(5.5, 7.5), -side * 0.5 * std::numbers::pi};
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace

Scenario simulate_rule_agents(const MapLayout& map, std::size_t n_agents, const WorldConfig& cfg, Rng& rng) {
  require(n_agents >= 1, "scenario needs at least one agent");
  require(cfg.history >= 1 && cfg.future >= 1, "scenario needs history and future steps");
  require(cfg.history % kin::kChunk == 0 && cfg.future % kin::kChunk == 0,
          "history and future must be multiples of the action chunk");
  for (std::size_t n = n_agents; n >= 1; --n) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const std::vector<Spawn> spawns = sample_spawns(map, n, cfg, rng);
      if (spawns.size() < n) continue;
      const auto rows = simulate(map, spawns, cfg.history + cfg.future, cfg.dt);
      Scenario s;
      s.kind = map.kind;
      s.dt = cfg.dt;
      s.lanes = map.lanes;
      s.lights = map.lights;
      s.ego = 0;
      for (std::size_t i = 0; i < n; ++i) {
        Agent a;
        a.type = spawns[i].type;
        a.length = spawns[i].length;
        a.width = spawns[i].width;
        a.history.assign(rows[i].begin(), rows[i].begin() + static_cast<std::ptrdiff_t>(cfg.history));
        a.future.assign(rows[i].begin() + static_cast<std::ptrdiff_t>(cfg.history), rows[i].end());
        s.agents.push_back(std::move(a));
      }
      s.route = split_polyline(map.lanes[static_cast<std::size_t>(spawns[0].lane)]);
      if (!has_collision(s)) return s;
    }
  }
  throw DataError("scenario generation failed for every agent count");
}

Scenario generate_scenario(const WorldConfig& cfg, std::uint64_t seed, std::uint64_t id) {
  require(!cfg.kinds.empty(), "no map kinds selected");
  Rng rng = Rng::stream(seed, {id});
  const MapKind kind =
      cfg.kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg.kinds.size()) - 1))];
  const MapLayout map = generate_map(kind, rng);
  Scenario s = simulate_rule_agents(map, cfg.agents, cfg, rng);
  s.id = id;
  return s;
}

std::vector<Scenario> generate_dataset(const WorldConfig& cfg, std::size_t count, std::uint64_t seed) {
  std::vector<Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scenario(cfg, seed, i));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file
//
//   "MDGDATA1"  u32 version  u64 total bytes
//   manifest: u64 count, u64 seed, str generator version, u64 n_offsets, offsets
//   records:  u64 length + scenario bytes, offsets relative to the first record
//   u64 FNV-1a checksum of everything before it

namespace {

constexpr char kMagic[] = "MDGDATA1";

void put_pose(ByteWriter& w, const geo::Pose& p) {
  w.f64(p.x);
  w.f64(p.y);
  w.f64(p.theta);
}

geo::Pose get_pose(ByteReader& r) {
  geo::Pose p;
  p.x = r.f64();
  p.y = r.f64();
  p.theta = r.f64();
  return p;
}

void put_polylines(ByteWriter& w, const std::vector<Polyline>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const Polyline& p : v) {
    w.u32(static_cast<std::uint32_t>(p.points.size()));
    for (const geo::Pose& q : p.points) put_pose(w, q);
  }
}

std::vector<Polyline> get_polylines(ByteReader& r) {
  std::vector<Polyline> v(r.u32());
  for (Polyline& p : v) {
    p.points.resize(r.u32());
    for (geo::Pose& q : p.points) q = get_pose(r);
  }
  return v;
}

void put_rows(ByteWriter& w, const std::vector<kin::StateRow>& rows) {
  w.u32(static_cast<std::uint32_t>(rows.size()));
  for (const kin::StateRow& s : rows) {
    for (double v : {s.x, s.y, s.theta, s.vx, s.vy}) w.f64(v);
  }
}

std::vector<kin::StateRow> get_rows(ByteReader& r) {
  std::vector<kin::StateRow> rows(r.u32());
  for (kin::StateRow& s : rows) {
    s.x = r.f64();
    s.y = r.f64();
    s.theta = r.f64();
    s.vx = r.f64();
    s.vy = r.f64();
  }
  return rows;
}

void encode_scenario(ByteWriter& w, const Scenario& s) {
  w.u64(s.id);
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.f64(s.dt);
  put_polylines(w, s.lanes);
  w.u32(static_cast<std::uint32_t>(s.lights.size()));
  for (const TrafficLight& l : s.lights) {
    w.u8(static_cast<std::uint8_t>(l.phase));
    put_pose(w, l.stop);
    w.u32(static_cast<std::uint32_t>(l.lane));
  }
  w.u32(static_cast<std::uint32_t>(s.agents.size()));
  for (const Agent& a : s.agents) {
    w.u8(static_cast<std::uint8_t>(a.type));
    w.f64(a.length);
    w.f64(a.width);
    put_rows(w, a.history);
    put_rows(w, a.future);
  }
  w.u32(s.ego);
  put_polylines(w, s.route);
}

Scenario decode_scenario(ByteReader& r) {
  Scenario s;
  s.id = r.u64();
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(MapKind::merge)) throw DataError("scenario: bad map kind");
  s.kind = static_cast<MapKind>(kind);
  s.dt = r.f64();
  s.lanes = get_polylines(r);
  s.lights.resize(r.u32());
  for (TrafficLight& l : s.lights) {
    const std::uint8_t ph = r.u8();
    if (ph > static_cast<std::uint8_t>(LightPhase::unknown)) throw DataError("scenario: bad light phase");
    l.phase = static_cast<LightPhase>(ph);
    l.stop = get_pose(r);
    l.lane = static_cast<std::int32_t>(r.u32());
  }
  s.agents.resize(r.u32());
  for (Agent& a : s.agents) {
    const std::uint8_t t = r.u8();
    if (t > static_cast<std::uint8_t>(AgentType::pedestrian)) throw DataError("scenario: bad agent type");
    a.type = static_cast<AgentType>(t);
    a.length = r.f64();
    a.width = r.f64();
    a.history = get_rows(r);
    a.future = get_rows(r);
  }
  s.ego = r.u32();
  s.route = get_polylines(r);
  if (!s.agents.empty() && s.ego >= s.agents.size()) throw DataError("scenario: ego index out of range");
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const std::vector<Scenario>& scenarios, std::uint64_t seed) {
  ByteWriter records;
  std::vector<std::uint64_t> offsets;
  for (const Scenario& s : scenarios) {
    offsets.push_back(records.size());
    ByteWriter one;
    encode_scenario(one, s);
    records.u64(one.size());
    records.buffer().insert(records.buffer().end(), one.buffer().begin(), one.buffer().end());
  }
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 8));
  w.u32(kDatasetVersion);
  const std::size_t total_pos = w.size();
  w.u64(0);
  w.u64(scenarios.size());
  w.u64(seed);
  w.str(kGeneratorVersion);
  w.u64(offsets.size());
  for (std::uint64_t o : offsets) w.u64(o);
  w.buffer().insert(w.buffer().end(), records.buffer().begin(), records.buffer().end());
  const std::uint64_t total = w.size() + 8;
  for (int i = 0; i < 8; ++i) w.buffer()[total_pos + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(total >> (8 * i));
  w.u64(fnv1a64(w.buffer().data(), w.size()));
  return w.buffer();
}

std::vector<Scenario> decode_dataset(const std::vector<std::uint8_t>& bytes, DatasetManifest* manifest) {
  ByteReader head(bytes.data(), bytes.size(), "dataset");
  if (head.bytes(8) != std::string(kMagic, 8)) throw DataError("dataset: bad magic (not an MDGDATA1 file)");
  const std::uint32_t version = head.u32();
  if (version != kDatasetVersion) {
    throw DataError("dataset: version mismatch (file v" + std::to_string(version) + ", reader v" +
                    std::to_string(kDatasetVersion) + ")");
  }
  const std::uint64_t total = head.u64();
  if (bytes.size() < total) {
    throw DataError("dataset: truncated (header declares " + std::to_string(total) + " bytes, file has " +
                    std::to_string(bytes.size()) + ")");
  }
  if (bytes.size() > total) throw DataError("dataset: " + std::to_string(bytes.size() - total) + " trailing bytes");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)]) << (8 * i);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored) throw DataError("dataset: checksum mismatch");

  ByteReader r(bytes.data(), bytes.size() - 8, "dataset");
  r.bytes(8 + 4 + 8);
  DatasetManifest m;
  m.count = r.u64();
  m.seed = r.u64();
  m.generator_version = r.str();
  const std::uint64_t n_off = r.u64();
  if (n_off > r.remaining() / 8) throw DataError("dataset: offset table larger than file");
  m.offsets.resize(n_off);
  for (auto& o : m.offsets) o = r.u64();
  for (std::size_t i = 1; i < m.offsets.size(); ++i) {
    if (m.offsets[i] <= m.offsets[i - 1]) throw DataError("dataset: manifest offsets not increasing");
  }
  const std::size_t base = r.pos();
  std::vector<Scenario> out;
  while (r.remaining() > 0) {
    if (out.size() < m.offsets.size() && r.pos() - base != m.offsets[out.size()]) {
      throw DataError("dataset: record " + std::to_string(out.size()) + " not at its manifest offset");
    }
    const std::uint64_t len = r.u64();
    const std::string rec = r.bytes(len);
    ByteReader one(reinterpret_cast<const std::uint8_t*>(rec.data()), rec.size(),
                   "dataset record " + std::to_string(out.size()));
    out.push_back(decode_scenario(one));
    if (one.remaining() != 0) throw DataError("dataset: record " + std::to_string(out.size() - 1) + " has trailing bytes");
  }
  if (m.count != out.size() || m.offsets.size() != out.size()) {
    throw DataError("dataset: manifest count mismatch (expected " + std::to_string(m.count) + " scenarios, found " +
                    std::to_string(out.size()) + ")");
  }
  if (manifest) *manifest = m;
  return out;
}

void save_dataset(const std::vector<Scenario>& scenarios, const std::string& path, std::uint64_t seed) {
  write_file_bytes(path, encode_dataset(scenarios, seed));
}

std::vector<Scenario> load_dataset(const std::string& path, DatasetManifest* manifest) {
  return decode_dataset(read_file_bytes(path), manifest);
}

}  // namespace mdg::world
