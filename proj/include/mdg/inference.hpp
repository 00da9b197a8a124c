#pragma once

// Masked-denoising generation, goal guidance and closed-loop replanning.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mdg/context.hpp"
#include "mdg/noisefield.hpp"
#include "mdg/scene_model.hpp"
#include "mdg/synthworld.hpp"

namespace mdg {

// Goal point in the global frame for one target agent.
struct Goal {
  std::size_t agent = 0;
  double x = 0.0, y = 0.0;
};

inline constexpr double kGoalSanityRadius = 500.0;

struct GenerationRequest {
  noise::InferenceSchedule schedule;
  std::size_t num_samples = 1;
  std::uint64_t seed = 0;
  std::vector<Goal> goals;  // empty = unguided
  bool keep_trace = false;
};

struct TraceStep {
  noise::NoiseMask mask;  // as seen by the denoiser
  Tensor estimate;        // denoiser output [N, T_a, 2]
  bool objective_applied = false;
};

struct GenerationSample {
  Tensor actions;  // [N, T_a, 2] normalized, each agent in its own frame
  Tensor states;   // rollout(actions), [N, T, 5]
  std::size_t denoiser_calls = 0;
  std::size_t objective_calls = 0;
  std::vector<TraceStep> trace;
};

struct GenerationResult {
  std::vector<GenerationSample> samples;
};

// Runs the schedule from z_L ~ N(0, I). With goals, applies the goal objective
// after every denoiser call and re-noises under max(m̄, ḡ).
GenerationResult generate(const SceneModel& model, const SceneContext& ctx, const GenerationRequest& req);
// Same as generate but requires at least one goal.
GenerationResult guided_generate(const SceneModel& model, const SceneContext& ctx, const GenerationRequest& req);

// Goal objective on a clean estimate: ramps the target's trajectory toward
// the goal (zero offset at t = 0, full at T) and re-fits actions.
Tensor apply_goal_objective(const SceneContext& ctx, const Tensor& actions, const std::vector<Goal>& goals, double dt,
                            std::size_t chunk);

// Shifts a previous plan left by `elapsed` chunks, repeating the last action.
Tensor shift_plan(const Tensor& actions, std::size_t elapsed);

struct ClosedLoopConfig {
  std::size_t horizon = 80;       // base steps (8 s)
  std::size_t replan_every = 10;  // base steps (1 Hz)
  bool reuse = false;
  std::uint64_t seed = 0;
};

struct ClosedLoopResult {
  std::vector<std::vector<kin::StateRow>> executed;  // per agent, horizon rows, global
  std::vector<std::vector<std::vector<kin::StateRow>>> plans;  // [replan][agent][T] global
  std::vector<std::size_t> plan_start;  // base step each plan starts after
  std::size_t denoiser_calls = 0;
  double consistency = 0.0;  // ego plan consistency
};

// Ego follows the model's plan; other agents replay their recorded futures.
// `episode` must record at least horizon future steps.
ClosedLoopResult closed_loop(const SceneModel& model, const world::Scenario& episode, const ClosedLoopConfig& cfg);

// Scenario view at base step k of an episode with the ego's executed rows.
world::Scenario episode_view(const world::Scenario& episode, const std::vector<kin::StateRow>& ego_executed,
                             std::size_t k, std::size_t future);

// Plain-text trace: '#' header lines then CSV records.
struct TraceRecord {
  std::string kind;  // gen, goal, plan, exec
  std::uint64_t episode = 0;
  std::size_t step = 0;  // sample index or replan index
  std::size_t agent = 0;
  std::size_t t = 0;
  double x = 0, y = 0, theta = 0, vx = 0, vy = 0;
  double length = 0, width = 0;
  bool operator==(const TraceRecord&) const = default;
};

struct Trace {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<TraceRecord> records;

  std::string header_value(const std::string& key, const std::string& fallback = "") const;
};

inline constexpr const char* kTraceColumns = "kind,episode,step,agent,t,x,y,theta,vx,vy,length,width";
void write_trace(std::ostream& os, const Trace& tr);
Trace read_trace(std::istream& is);
void save_trace(const std::string& path, const Trace& tr);
Trace load_trace(const std::string& path);

void append_rows(Trace& tr, const std::string& kind, std::uint64_t episode, std::size_t step,
                 const world::Scenario& s, const std::vector<std::vector<kin::StateRow>>& rows);

}  // namespace mdg
