#pragma once

// Scenario -> model inputs. Every entity is expressed in its own local frame;
// the global anchor poses are kept only for the relation encoder.

#include <vector>

#include "mdg/geometry.hpp"
#include "mdg/kinematics.hpp"
#include "mdg/synthworld.hpp"
#include "mdg/tensor.hpp"

namespace mdg {

inline constexpr std::size_t kAgentFeatures = 7;  // x, y, theta, vx, vy, length, width

struct SceneContext {
  std::size_t ego = 0;
  // Agents: [N, H, 7] history in the frame of the last observed state.
  Tensor agent_history;
  std::vector<geo::Pose> agent_pose;
  std::vector<double> agent_speed;
  std::vector<world::AgentType> agent_type;
  std::vector<double> agent_length;
  std::vector<double> agent_width;
  std::vector<std::uint8_t> agent_valid;
  // Map polylines: [N_m, N_w, 3] relative to their first waypoint.
  Tensor map_points;
  std::vector<geo::Pose> map_pose;
  std::vector<world::LightPhase> light_phase;
  std::vector<geo::Pose> light_pose;
  // Ego route pieces, same layout as map_points; may be empty.
  Tensor route_points;
  std::vector<geo::Pose> route_pose;

  std::size_t num_agents() const { return agent_pose.size(); }
  std::size_t num_map() const { return map_pose.size(); }
  std::size_t num_lights() const { return light_pose.size(); }
  std::size_t num_route() const { return route_pose.size(); }

  // Current states in each agent's own frame: (0, 0, 0, v).
  std::vector<kin::AgentState> local_init() const;
};

SceneContext make_context(const world::Scenario& s, bool with_route = true);

// Tokenized training target.
struct Sample {
  std::uint64_t id = 0;  // scenario id
  SceneContext ctx;
  Tensor states;   // [N, T, 5] ground-truth future in each agent's local frame
  Tensor actions;  // [N, T_a, 2] normalized, from inverse dynamics
  Mask valid;      // [N, T, 1] cells that enter the losses
};

Sample make_sample(const world::Scenario& s, bool with_route = true);

// [N, T, 5] local rows -> global rows using each agent's anchor.
std::vector<std::vector<kin::StateRow>> to_global_rows(const SceneContext& ctx, const Tensor& local_states);
kin::StateRow to_local_row(const geo::Pose& anchor, const kin::StateRow& r);
kin::StateRow to_global_row(const geo::Pose& anchor, const kin::StateRow& r);

}  // namespace mdg
