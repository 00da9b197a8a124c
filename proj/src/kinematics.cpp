#include "mdg/kinematics.hpp"

#include <cmath>
#include <numbers>

#include "mdg/errors.hpp"

namespace mdg::kin {

double StateRow::speed() const { return vx * std::cos(theta) + vy * std::sin(theta); }

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

namespace {

Tensor channel_affine(const Tensor& t, bool forward) {
  require(t.rank() >= 1 && t.shape().back() == kActionDim, "action tensor needs last dim 2");
  std::vector<double> out(t.data().begin(), t.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % kActionDim;
    out[i] = forward ? (out[i] - kActionMean[c]) / kActionStd[c]
                     : out[i] * kActionStd[c] + kActionMean[c];
  }
  return Tensor(t.shape(), std::move(out));
}

}  // namespace

Tensor normalize_actions(const Tensor& raw) { return channel_affine(raw, true); }
Tensor denormalize_actions(const Tensor& normalized) { return channel_affine(normalized, false); }

Tensor rollout(std::span<const AgentState> init, const Tensor& actions, double dt, std::size_t chunk) {
  require(dt > 0.0, "rollout needs dt > 0");
  require(chunk >= 1, "rollout needs chunk >= 1");
  require(actions.rank() == 3 && actions.dim(2) == kActionDim,
          "rollout actions must be [N, T_a, 2], got " + shape_str(actions.shape()));
  const std::size_t n = actions.dim(0);
  const std::size_t ta = actions.dim(1);
  require(init.size() == n, "rollout: init count does not match action rows");
  for (double v : actions.data()) {
    if (!std::isfinite(v)) throw ContractViolation("rollout: non-finite action");
  }

  std::vector<double> x0(n), y0(n), th0(n), v0(n);
  for (std::size_t i = 0; i < n; ++i) {
    x0[i] = init[i].x;
    y0[i] = init[i].y;
    th0[i] = init[i].theta;
    v0[i] = init[i].v;
  }
  Tensor x({n}, x0), y({n}, y0), th({n}, th0), v({n}, v0);

  // Denormalized per-chunk controls, [N, T_a] each.
  const Tensor accel = add_scalar(
      mul_scalar(reshape(slice(actions, 2, 0, 1), {n, ta}), kActionStd[0]), kActionMean[0]);
  const Tensor yaw = add_scalar(
      mul_scalar(reshape(slice(actions, 2, 1, 1), {n, ta}), kActionStd[1]), kActionMean[1]);

  std::vector<Tensor> steps;
  steps.reserve(ta * chunk);
  for (std::size_t c = 0; c < ta; ++c) {
    const Tensor dv = mul_scalar(reshape(slice(accel, 1, c, 1), {n}), dt);
    const Tensor dth = mul_scalar(reshape(slice(yaw, 1, c, 1), {n}), dt);
    for (std::size_t k = 0; k < chunk; ++k) {
      v = v + dv;
      th = wrap_angle(th + dth);
      const Tensor vx = v * cos(th);
      const Tensor vy = v * sin(th);
      x = x + mul_scalar(vx, dt);
      y = y + mul_scalar(vy, dt);
      steps.push_back(stack({x, y, th, vx, vy}, 1));  // [N, 5]
    }
  }
  return stack(steps, 1);  // [N, T, 5]
}

std::vector<StateRow> rollout_agent(const AgentState& init, std::span<const RawAction> actions,
                                    double dt, std::size_t chunk) {
  require(dt > 0.0, "rollout needs dt > 0");
  std::vector<StateRow> out;
  out.reserve(actions.size() * chunk);
  double x = init.x, y = init.y, th = init.theta, v = init.v;
  for (const RawAction& a : actions) {
    if (!std::isfinite(a.accel) || !std::isfinite(a.yaw_rate)) {
      throw ContractViolation("rollout: non-finite action");
    }
    for (std::size_t k = 0; k < chunk; ++k) {
      v += a.accel * dt;
      th = wrap_angle(th + a.yaw_rate * dt);
      const double vx = v * std::cos(th);
      const double vy = v * std::sin(th);
      x += vx * dt;
      y += vy * dt;
      out.push_back({x, y, th, vx, vy});
    }
  }
  return out;
}

std::vector<RawAction> inverse_dynamics_agent(std::span<const StateRow> states,
                                              const AgentState& init, double dt,
                                              std::size_t chunk) {
  require(dt > 0.0, "inverse_dynamics needs dt > 0");
  require(states.size() % chunk == 0, "inverse_dynamics: T=" + std::to_string(states.size()) +
                                          " is not a multiple of chunk " + std::to_string(chunk));
  std::vector<RawAction> out;
  out.reserve(states.size() / chunk);
  double prev_v = init.v;
  double prev_th = init.theta;
  for (std::size_t c = 0; c < states.size() / chunk; ++c) {
    double acc = 0.0, yaw = 0.0;
    for (std::size_t k = 0; k < chunk; ++k) {
      const StateRow& s = states[c * chunk + k];
      for (double f : {s.x, s.y, s.theta, s.vx, s.vy}) {
        if (!std::isfinite(f)) throw ContractViolation("inverse_dynamics: non-finite state");
      }
      const double v = s.speed();
      acc += (v - prev_v) / dt;
      yaw += wrap_angle(s.theta - prev_th) / dt;
      prev_v = v;
      prev_th = s.theta;
    }
    out.push_back({acc / static_cast<double>(chunk), yaw / static_cast<double>(chunk)});
  }
  return out;
}

std::vector<std::vector<StateRow>> state_rows(const Tensor& states) {
  require(states.rank() == 3 && states.dim(2) == kStateDim, "state tensor must be [N, T, 5]");
  const std::size_t n = states.dim(0), t = states.dim(1);
  const auto d = states.data();
  std::vector<std::vector<StateRow>> rows(n, std::vector<StateRow>(t));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      const double* p = d.data() + (i * t + k) * kStateDim;
      rows[i][k] = {p[0], p[1], p[2], p[3], p[4]};
    }
  }
  return rows;
}

Tensor states_tensor(const std::vector<std::vector<StateRow>>& rows) {
  const std::size_t n = rows.size();
  const std::size_t t = n ? rows[0].size() : 0;
  std::vector<double> out;
  out.reserve(n * t * kStateDim);
  for (const auto& r : rows) {
    require(r.size() == t, "ragged state rows");
    for (const StateRow& s : r) out.insert(out.end(), {s.x, s.y, s.theta, s.vx, s.vy});
  }
  return Tensor({n, t, kStateDim}, std::move(out));
}

Tensor inverse_dynamics(const Tensor& states, std::span<const AgentState> init, double dt,
                        std::size_t chunk) {
  const auto rows = state_rows(states);
  require(init.size() == rows.size(), "inverse_dynamics: init count mismatch");
  const std::size_t n = rows.size();
  const std::size_t t = n ? rows[0].size() : 0;
  require(t % chunk == 0, "inverse_dynamics: odd T=" + std::to_string(t) + " with chunk " +
                              std::to_string(chunk));
  const std::size_t ta = t / chunk;
  std::vector<double> raw;
  raw.reserve(n * ta * kActionDim);
  for (std::size_t i = 0; i < n; ++i) {
    for (const RawAction& a : inverse_dynamics_agent(rows[i], init[i], dt, chunk)) {
      raw.push_back(a.accel);
      raw.push_back(a.yaw_rate);
    }
  }
  return normalize_actions(Tensor({n, ta, kActionDim}, std::move(raw)));
}

}  // namespace mdg::kin
