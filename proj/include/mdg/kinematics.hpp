#pragma once

// Unicycle dynamics between action tokens and physical states.
//
// Actions: [N, T_a, 2] normalized (acceleration, yaw rate), one token per
// chunk of `kChunk` base steps. States: [N, T, 5] = (x, y, theta, vx, vy).
// One base step, in order:
//   v     += a * dt
//   theta  = wrap(theta + omega * dt)
//   x     += v cos(theta) dt,  y += v sin(theta) dt

#include <array>
#include <span>
#include <vector>

#include "mdg/tensor.hpp"

namespace mdg::kin {

inline constexpr std::size_t kChunk = 2;
inline constexpr std::size_t kStateDim = 5;
inline constexpr std::size_t kActionDim = 2;
inline constexpr std::array<double, 2> kActionMean = {0.0, 0.0};
inline constexpr std::array<double, 2> kActionStd = {1.0, 0.5};

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;  // signed speed along heading
  double length = 4.5;
  double width = 2.0;
  bool operator==(const AgentState&) const = default;
};

struct StateRow {
  double x, y, theta, vx, vy;

  double speed() const;  // signed projection of (vx, vy) on the heading
  bool operator==(const StateRow&) const = default;
};

struct RawAction {
  double accel;
  double yaw_rate;
};

double wrap_angle(double a);

Tensor normalize_actions(const Tensor& raw);
Tensor denormalize_actions(const Tensor& normalized);

// Differentiable w.r.t. `actions` (normalized). Returns [N, T_a * chunk, 5].
Tensor rollout(std::span<const AgentState> init, const Tensor& actions, double dt,
               std::size_t chunk = kChunk);

// Scalar reference path, raw (denormalized) chunk actions.
std::vector<StateRow> rollout_agent(const AgentState& init, std::span<const RawAction> actions,
                                    double dt, std::size_t chunk = kChunk);

// Chunk-averaged finite-difference controls, normalized. `states` is [N, T, 5].
Tensor inverse_dynamics(const Tensor& states, std::span<const AgentState> init, double dt,
                        std::size_t chunk = kChunk);

std::vector<RawAction> inverse_dynamics_agent(std::span<const StateRow> states,
                                              const AgentState& init, double dt,
                                              std::size_t chunk = kChunk);

// Converts [N, T, 5] into per-agent rows.
std::vector<std::vector<StateRow>> state_rows(const Tensor& states);
Tensor states_tensor(const std::vector<std::vector<StateRow>>& rows);

}  // namespace mdg::kin
