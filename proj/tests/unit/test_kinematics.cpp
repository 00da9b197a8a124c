#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mdg/errors.hpp"
#include "mdg/gradcheck.hpp"
#include "mdg/kinematics.hpp"

using namespace mdg;
using namespace mdg::kin;

TEST_CASE("zero actions hold the equilibrium") {
  std::vector<AgentState> init(2);
  const Tensor s = rollout(init, Tensor::zeros({2, 5, 2}), 0.1);
  CHECK(s.shape() == Shape{2, 10, 5});
  for (double v : s.data()) CHECK(v == 0.0);
}

TEST_CASE("constant acceleration matches the scalar recurrence") {
  std::vector<AgentState> init(1);
  const Tensor s = rollout(init, Tensor({1, 5, 2}, {1, 0, 1, 0, 1, 0, 1, 0, 1, 0}), 0.1);
  // Standalone recurrence: v_k = 0.1 k, x += v_k * 0.1.
  double x = 0.0, v = 0.0;
  for (int k = 0; k < 10; ++k) {
    v += 1.0 * 0.1;
    x += v * std::cos(0.0) * 0.1;
  }
  CHECK(s.at({0, 9, 3}) == v);
  CHECK(s.at({0, 9, 0}) == x);
  CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("turning at pi rad/s for one second") {
  AgentState a;
  a.v = 1.0;
  std::vector<AgentState> init{a};
  // yaw rate pi normalizes to pi / 0.5.
  std::vector<double> act;
  for (int c = 0; c < 5; ++c) act.insert(act.end(), {0.0, std::numbers::pi / 0.5});
  const Tensor s = rollout(init, Tensor({1, 5, 2}, act), 0.1);
  double x = 0, y = 0, th = 0;
  for (int k = 0; k < 10; ++k) {
    th = wrap_angle(th + std::numbers::pi * 0.1);
    x += std::cos(th) * 0.1;
    y += std::sin(th) * 0.1;
  }
  CHECK(s.at({0, 9, 2}) == th);
  CHECK(std::abs(std::abs(th) - std::numbers::pi) < 1e-12);
  CHECK(s.at({0, 9, 0}) == x);
  CHECK(s.at({0, 9, 1}) == y);
}

TEST_CASE("rollout agrees with the scalar reference path") {
  AgentState a{1.0, -2.0, 0.3, 4.0};
  const Tensor act = random_tensor({1, 6, 2}, 3);
  const Tensor s = rollout(std::vector<AgentState>{a}, act, 0.1);
  std::vector<RawAction> raw;
  const Tensor den = denormalize_actions(act);
  for (int c = 0; c < 6; ++c) raw.push_back({den.at({0, std::size_t(c), 0}), den.at({0, std::size_t(c), 1})});
  const auto rows = rollout_agent(a, raw, 0.1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    CHECK(rows[k].x == s.at({0, k, 0}));
    CHECK(rows[k].theta == s.at({0, k, 2}));
  }
}

TEST_CASE("inverse dynamics round trip") {
  std::vector<AgentState> init{{0, 0, 0.5, 3.0}, {10, 4, -2.9, 6.0}};
  const Tensor act = random_tensor({2, 8, 2}, 4, -2.0, 2.0);
  const Tensor s = rollout(init, act, 0.1);
  const Tensor back = inverse_dynamics(s, init, 0.1);
  for (std::size_t i = 0; i < act.numel(); ++i) CHECK(std::abs(back.data()[i] - act.data()[i]) < 1e-9);

  std::vector<AgentState> cv{{0, 0, 0, 5.0}};
  const Tensor straight = rollout(cv, Tensor::zeros({1, 4, 2}), 0.1);
  const Tensor none = inverse_dynamics(straight, cv, 0.1);
  for (double v : none.data()) CHECK(std::abs(v) < 1e-12);

  CHECK_THROWS_AS(inverse_dynamics(Tensor::zeros({1, 3, 5}), cv, 0.1), ContractViolation);
}

TEST_CASE("action normalization") {
  const Tensor n = normalize_actions(Tensor({1, 2}, {1.0, 0.5}));
  CHECK(n.data()[0] == 1.0);
  CHECK(n.data()[1] == 1.0);
  const Tensor z = normalize_actions(Tensor({1, 2}, {0.0, 0.0}));
  CHECK(z.data()[0] == 0.0);
  const Tensor r = random_tensor({3, 2}, 5);
  const Tensor back = denormalize_actions(normalize_actions(r));
  for (std::size_t i = 0; i < r.numel(); ++i) CHECK(back.data()[i] == doctest::Approx(r.data()[i]).epsilon(1e-15));
}

TEST_CASE("rollout gradient matches finite differences") {
  std::vector<AgentState> init{{0, 0, 0.2, 2.0}, {3, 1, 1.0, 1.0}};
  const Tensor w = random_tensor({2, 8, 5}, 6);
  const double err = gradcheck(
      [&](const std::vector<Tensor>& in) { return sum_all(mul(rollout(init, in[0], 0.1), w)); },
      {random_tensor({2, 4, 2}, 7)});
  CHECK(err < 1e-4);
}

TEST_CASE("rollout commutes with rotation") {
  const double phi = 0.7;
  std::vector<AgentState> init{{2.0, 1.0, 0.4, 3.0}};
  std::vector<AgentState> rot{init[0]};
  rot[0].x = std::cos(phi) * 2.0 - std::sin(phi) * 1.0;
  rot[0].y = std::sin(phi) * 2.0 + std::cos(phi) * 1.0;
  rot[0].theta = 0.4 + phi;
  const Tensor act = random_tensor({1, 5, 2}, 8);
  const Tensor a = rollout(init, act, 0.1), b = rollout(rot, act, 0.1);
  for (std::size_t k = 0; k < 10; ++k) {
    const double x = a.at({0, k, 0}), y = a.at({0, k, 1});
    CHECK(b.at({0, k, 0}) == doctest::Approx(std::cos(phi) * x - std::sin(phi) * y).epsilon(1e-12));
    CHECK(b.at({0, k, 1}) == doctest::Approx(std::sin(phi) * x + std::cos(phi) * y).epsilon(1e-12));
    CHECK(wrap_angle(b.at({0, k, 2}) - a.at({0, k, 2}) - phi) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("non-finite actions are rejected") {
  std::vector<AgentState> init(1);
  CHECK_THROWS_AS(rollout(init, Tensor({1, 1, 2}, {NAN, 0}), 0.1), ContractViolation);
}
