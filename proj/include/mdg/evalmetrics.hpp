#pragma once

// Scene-level trajectory metrics: collision, off-road, displacement, goal
// reaching and plan consistency.

#include <optional>
#include <string>
#include <vector>

#include "mdg/geometry.hpp"
#include "mdg/kinematics.hpp"
#include "mdg/synthworld.hpp"

namespace mdg {

struct AgentTrack {
  std::vector<kin::StateRow> rows;  // T rows, global frame
  double length = 4.5;
  double width = 2.0;
};

// Union of buffers of half-width `half_width` around lane centerlines.
struct DrivableArea {
  std::vector<world::Polyline> lanes;
  double half_width = world::kLaneWidth / 2.0;

  bool contains(double x, double y) const;
  // One quad per centerline segment (joints are covered by contains()).
  std::vector<std::vector<geo::Vec2>> polygons() const;
};
DrivableArea drivable_area(const world::Scenario& s);

struct EvalScene {
  std::uint64_t id = 0;
  std::vector<std::vector<AgentTrack>> samples;  // [S][N]
  std::vector<std::vector<kin::StateRow>> gt;    // [N][T], may be empty
  std::vector<bool> modeled;                     // [N]
  std::vector<bool> pedestrian;                  // [N]
  std::vector<std::optional<geo::Vec2>> goals;   // [N]
  DrivableArea drivable;
};
using EvalBatch = std::vector<EvalScene>;

// True iff agent i's rectangle overlaps another agent's at any common step.
bool agent_collides(const std::vector<AgentTrack>& agents, std::size_t i);

double collision_rate(const EvalBatch& batch);
double offroad_rate(const EvalBatch& batch);
double sade(const EvalBatch& batch);
double minsade(const EvalBatch& batch);
// A target reaches its goal when its final position is strictly closer than
// 1 m. Scenes without targets are left out of the average; NaN if none has any.
inline constexpr double kGoalRadius = 1.0;
double goal_reach_rate(const EvalBatch& batch);

// Mean L2 over time-aligned overlapping rows of successive plans. Plan k's
// row j is the state at base step start[k] + 1 + j.
double plan_consistency(const std::vector<std::vector<kin::StateRow>>& plans, const std::vector<std::size_t>& start);

struct MetricRow {
  std::string name;
  double value = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  std::string to_table() const;
  std::string to_csv() const;  // metric,value,count
};

// metrics ⊆ {cr, or, sade, minsade, gr}; empty = all that apply.
MetricReport evaluate(const EvalBatch& batch, const std::vector<std::string>& metrics = {});

// Scene with one sample that equals the recorded future.
EvalScene ground_truth_scene(const world::Scenario& s);

}  // namespace mdg
