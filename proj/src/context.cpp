#include "mdg/context.hpp"

#include <cmath>

#include "mdg/errors.hpp"

namespace mdg {

std::vector<kin::AgentState> SceneContext::local_init() const {
  std::vector<kin::AgentState> out(num_agents());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {0.0, 0.0, 0.0, agent_speed[i], agent_length[i], agent_width[i]};
  }
  return out;
}

kin::StateRow to_local_row(const geo::Pose& anchor, const kin::StateRow& r) {
  const geo::Pose p = geo::to_local(anchor, {r.x, r.y, r.theta});
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  return {p.x, p.y, p.theta, c * r.vx + s * r.vy, -s * r.vx + c * r.vy};
}

kin::StateRow to_global_row(const geo::Pose& anchor, const kin::StateRow& r) {
  const geo::Pose p = geo::to_global(anchor, {r.x, r.y, r.theta});
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  return {p.x, p.y, p.theta, c * r.vx - s * r.vy, s * r.vx + c * r.vy};
}

namespace {

void append_polylines(const std::vector<world::Polyline>& pieces, std::vector<double>& pts,
                      std::vector<geo::Pose>& poses) {
  for (const world::Polyline& p : pieces) {
    require(p.points.size() == world::kWaypoints, "polyline piece must have kWaypoints points");
    const geo::Pose anchor = p.points.front();
    poses.push_back(anchor);
    for (const geo::Pose& q : p.points) {
      const geo::Pose l = geo::to_local(anchor, q);
      pts.insert(pts.end(), {l.x, l.y, l.theta});
    }
  }
}

}  // namespace

SceneContext make_context(const world::Scenario& s, bool with_route) {
  require(!s.agents.empty(), "scenario has no agents");
  SceneContext c;
  c.ego = s.ego;
  const std::size_t n = s.agents.size();
  const std::size_t h = s.history_steps();
  std::vector<double> hist;
  hist.reserve(n * h * kAgentFeatures);
  for (const world::Agent& a : s.agents) {
    require(a.history.size() == h, "agents must share the history length");
    const kin::StateRow& cur = a.history.back();
    const geo::Pose anchor{cur.x, cur.y, cur.theta};
    c.agent_pose.push_back(anchor);
    c.agent_speed.push_back(cur.speed());
    c.agent_type.push_back(a.type);
    c.agent_length.push_back(a.length);
    c.agent_width.push_back(a.width);
    c.agent_valid.push_back(1);
    for (const kin::StateRow& r : a.history) {
      const kin::StateRow l = to_local_row(anchor, r);
      hist.insert(hist.end(), {l.x, l.y, l.theta, l.vx, l.vy, a.length, a.width});
    }
  }
  c.agent_history = Tensor({n, h, kAgentFeatures}, std::move(hist));

  std::vector<double> pts;
  append_polylines(world::map_polylines(s), pts, c.map_pose);
  c.map_points = Tensor({c.map_pose.size(), world::kWaypoints, 3}, std::move(pts));

  for (const world::TrafficLight& l : s.lights) {
    c.light_phase.push_back(l.phase);
    c.light_pose.push_back(l.stop);
  }

  std::vector<double> rpts;
  if (with_route) append_polylines(s.route, rpts, c.route_pose);
  c.route_points = Tensor({c.route_pose.size(), world::kWaypoints, 3}, std::move(rpts));
  return c;
}

Sample make_sample(const world::Scenario& s, bool with_route) {
  Sample out;
  out.id = s.id;
  out.ctx = make_context(s, with_route);
  const std::size_t n = s.agents.size();
  const std::size_t t = s.future_steps();
  require(t % kin::kChunk == 0, "future length must be a multiple of the action chunk");
  std::vector<std::vector<kin::StateRow>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(s.agents[i].future.size() == t, "agents must share the future length");
    for (const kin::StateRow& r : s.agents[i].future) rows[i].push_back(to_local_row(out.ctx.agent_pose[i], r));
  }
  out.states = kin::states_tensor(rows);
  out.actions = kin::inverse_dynamics(out.states, out.ctx.local_init(), s.dt);
  out.valid = Mask::all({n, t, 1}, true);
  return out;
}

std::vector<std::vector<kin::StateRow>> to_global_rows(const SceneContext& ctx, const Tensor& local_states) {
  auto rows = kin::state_rows(local_states);
  require(rows.size() == ctx.num_agents(), "state rows do not match the context's agents");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (kin::StateRow& r : rows[i]) r = to_global_row(ctx.agent_pose[i], r);
  }
  return rows;
}

}  // namespace mdg
