#include <doctest.h>

#include <cmath>

#include "box_oracle.hpp"
#include "mdg/errors.hpp"
#include "mdg/evalmetrics.hpp"

using namespace mdg;

namespace {

std::vector<kin::StateRow> line(double x0, double y0, double dx, double dy, std::size_t t) {
  std::vector<kin::StateRow> rows;
  const double th = std::atan2(dy, dx);
  for (std::size_t k = 0; k < t; ++k) rows.push_back({x0 + dx * k, y0 + dy * k, th, dx * 10.0, dy * 10.0});
  return rows;
}

world::Polyline straight_lane(double y) {
  world::Polyline l;
  for (int k = 0; k <= 10; ++k) l.points.push_back({k * 10.0, y, 0.0});
  return l;
}

// Scene on a two-lane road along x with the given tracks as its only sample.
EvalScene road_scene(std::vector<AgentTrack> tracks) {
  EvalScene s;
  s.drivable.lanes = {straight_lane(0.0), straight_lane(4.0)};
  for (const AgentTrack& a : tracks) {
    s.gt.push_back(a.rows);
    s.modeled.push_back(true);
    s.pedestrian.push_back(false);
    s.goals.emplace_back();
  }
  s.samples.push_back(std::move(tracks));
  return s;
}

std::vector<kin::StateRow> shifted(std::vector<kin::StateRow> rows, double dx, double dy) {
  for (auto& r : rows) {
    r.x += dx;
    r.y += dy;
  }
  return rows;
}

EvalScene transformed(const EvalScene& s, const geo::Pose& g) {
  EvalScene out = s;
  auto tf = [&](kin::StateRow& r) {
    const geo::Pose p = geo::to_global(g, {r.x, r.y, r.theta});
    const double c = std::cos(g.theta), sn = std::sin(g.theta);
    r = {p.x, p.y, p.theta, c * r.vx - sn * r.vy, sn * r.vx + c * r.vy};
  };
  for (auto& sample : out.samples) {
    for (auto& a : sample) std::for_each(a.rows.begin(), a.rows.end(), tf);
  }
  for (auto& rows : out.gt) std::for_each(rows.begin(), rows.end(), tf);
  for (auto& goal : out.goals) {
    if (!goal) continue;
    const geo::Pose p = geo::to_global(g, {goal->x, goal->y, 0.0});
    goal = geo::Vec2{p.x, p.y};
  }
  for (auto& l : out.drivable.lanes) {
    for (auto& p : l.points) p = geo::to_global(g, p);
  }
  return out;
}

EvalScene permuted(const EvalScene& s, const std::vector<std::size_t>& perm) {
  EvalScene out = s;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t k = 0; k < s.samples.size(); ++k) out.samples[k][i] = s.samples[k][perm[i]];
    out.gt[i] = s.gt[perm[i]];
    out.modeled[i] = s.modeled[perm[i]];
    out.pedestrian[i] = s.pedestrian[perm[i]];
    out.goals[i] = s.goals[perm[i]];
  }
  return out;
}

}  // namespace

TEST_CASE("separating-axis overlap agrees with point sampling") {
  Rng rng(2024);
  int overlaps = 0;
  for (int k = 0; k < 1000; ++k) {
    const oracle::BoxPair p = oracle::fuzz_box_pair(rng);
    const bool sat = geo::boxes_overlap(p.a, p.b);
    CHECK(sat == oracle::sampled_overlap(p.a, p.b));
    CHECK(sat == geo::boxes_overlap(p.b, p.a));
    overlaps += sat;
  }
  // the fuzz set exercises both outcomes
  CHECK(overlaps > 100);
  CHECK(overlaps < 900);
}

TEST_CASE("touching rectangles count as colliding") {
  const geo::Box a{0, 0, 0, 4, 2}, b{4, 0, 0, 4, 2}, c{4.001, 0, 0, 4, 2};
  CHECK(geo::boxes_overlap(a, b));
  CHECK_FALSE(geo::boxes_overlap(a, c));
}

TEST_CASE("collision rate on head-on and parallel fixtures") {
  const EvalScene head_on = road_scene({{line(0, 0, 1, 0, 20), 4.5, 2.0}, {line(30, 0, -1, 0, 20), 4.5, 2.0}});
  CHECK(collision_rate({head_on}) == 1.0);
  const EvalScene parallel = road_scene({{line(0, 0, 1, 0, 20), 4.5, 2.0}, {line(0, 4, 1, 0, 20), 4.5, 2.0}});
  CHECK(collision_rate({parallel}) == 0.0);
  CHECK(collision_rate({head_on, parallel}) == 0.5);

  // only modeled agents are scored, but all agents are obstacles
  EvalScene partial = road_scene({{line(0, 0, 1, 0, 20), 4.5, 2.0},
                                  {line(30, 0, -1, 0, 20), 4.5, 2.0},
                                  {line(0, 4, 1, 0, 20), 4.5, 2.0}});
  partial.modeled = {false, true, true};
  CHECK(collision_rate({partial}) == doctest::Approx(0.5));
}

TEST_CASE("off-road rate and its exclusions") {
  const AgentTrack stay{line(0, 0, 1, 0, 20), 4.5, 2.0};
  const AgentTrack leave{line(0, 4, 0.5, 0.3, 20), 4.5, 2.0};  // ends at y = 9.7, beyond the 6 m edge
  const AgentTrack starts_off{line(0, 20, 1, 0, 20), 4.5, 2.0};
  CHECK(offroad_rate({road_scene({stay})}) == 0.0);
  CHECK(offroad_rate({road_scene({stay, leave})}) == 0.5);
  CHECK(offroad_rate({road_scene({stay, leave, starts_off})}) == 0.5);
  EvalScene ped = road_scene({stay, leave});
  ped.pedestrian = {false, true};
  CHECK(offroad_rate({ped}) == 0.0);
  // a scene with nobody eligible drops out of the average
  CHECK(offroad_rate({road_scene({starts_off}), road_scene({stay, leave})}) == 0.5);
  // the buffer edge is inclusive
  auto edge = line(0, 5, 1, 0, 20);
  edge.back().y = 6.0;
  CHECK(offroad_rate({road_scene({{edge, 4.5, 2.0}})}) == 0.0);
  edge.back().y = 6.001;
  CHECK(offroad_rate({road_scene({{edge, 4.5, 2.0}})}) == 1.0);
}

TEST_CASE("SADE and minSADE against hand computations") {
  const auto gt = line(0, 0, 1, 0, 10);
  EvalScene s = road_scene({{gt, 4.5, 2.0}});
  s.samples = {{{shifted(gt, 0, 1), 4.5, 2.0}}};
  CHECK(sade({s}) == doctest::Approx(1.0).epsilon(1e-15));

  // per-sample ADEs 2 and 0.5
  s.samples = {{{shifted(gt, 2, 0), 4.5, 2.0}}, {{shifted(gt, 0, -0.5), 4.5, 2.0}}};
  CHECK(sade({s}) == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(minsade({s}) == doctest::Approx(0.5).epsilon(1e-15));

  // ADE of a growing error 0, 1, ..., 9 is 4.5; averaged with an exact agent
  EvalScene two = road_scene({{gt, 4.5, 2.0}, {line(0, 4, 1, 0, 10), 4.5, 2.0}});
  auto drift = gt;
  for (std::size_t t = 0; t < drift.size(); ++t) drift[t].y += static_cast<double>(t);
  two.samples[0][0].rows = drift;
  CHECK(sade({two}) == doctest::Approx(4.5 / 2.0).epsilon(1e-15));
  two.modeled = {true, false};
  CHECK(sade({two}) == doctest::Approx(4.5).epsilon(1e-15));

  EvalScene bad = s;
  bad.samples[0][0].rows.pop_back();
  CHECK_THROWS_AS(sade({bad}), ContractViolation);
}

TEST_CASE("goal reaching is strict at one meter") {
  const auto rows = line(0, 0, 1, 0, 10);  // ends at (9, 0)
  EvalScene s = road_scene({{rows, 4.5, 2.0}, {line(0, 4, 1, 0, 10), 4.5, 2.0}});
  s.goals[0] = geo::Vec2{10.0, 0.0};
  CHECK(goal_reach_rate({s}) == 0.0);
  s.goals[0] = geo::Vec2{9.0, 0.999999};
  CHECK(goal_reach_rate({s}) == 1.0);
  s.goals[0] = geo::Vec2{9.0, -1.0};
  CHECK(goal_reach_rate({s}) == 0.0);
  s.goals[0] = geo::Vec2{8.0, 0.0};
  CHECK(goal_reach_rate({s}) == 0.0);
  s.goals[1] = geo::Vec2{9.0, 4.0};
  CHECK(goal_reach_rate({s}) == 0.5);
  s.goals[1].reset();
  EvalScene none = road_scene({{rows, 4.5, 2.0}});
  CHECK(std::isnan(goal_reach_rate({none})));
  CHECK(goal_reach_rate({none, s}) == 0.0);
}

TEST_CASE("plan consistency aligns overlapping rows") {
  const auto truth = line(1, 0, 1, 0, 20);  // row j of a plan from step k sits at x = k + 1 + j
  std::vector<std::vector<kin::StateRow>> plans = {truth, line(11, 0, 1, 0, 20), line(21, 0, 1, 0, 20)};
  CHECK(plan_consistency(plans, {0, 10, 20}) == 0.0);
  plans[1] = shifted(plans[1], 0, 1);
  // 10 overlapping rows with plan 0 at 1 m, 10 with plan 2 at 1 m
  CHECK(plan_consistency(plans, {0, 10, 20}) == doctest::Approx(1.0));
  plans[2] = shifted(plans[2], 0, 1);
  CHECK(plan_consistency(plans, {0, 10, 20}) == doctest::Approx(0.5));
  CHECK(plan_consistency({truth}, {0}) == 0.0);
  CHECK_THROWS_AS(plan_consistency(plans, {0, 10}), ContractViolation);
  CHECK_THROWS_AS(plan_consistency(plans, {0, 10, 5}), ContractViolation);
}

TEST_CASE("metrics are invariant to agent order and rigid motion") {
  EvalScene s = road_scene({{line(0, 0, 1, 0, 20), 4.5, 2.0},
                            {line(30, 0, -1, 0, 20), 4.5, 2.0},
                            {line(0, 4, 0.5, 0.3, 20), 4.5, 2.0},
                            {line(5, 4, 1, 0, 20), 0.8, 0.8}});
  s.pedestrian[3] = true;
  s.samples.push_back(s.samples[0]);
  s.samples[1][0].rows = shifted(s.samples[1][0].rows, 0.3, -0.7);
  s.samples[1][2].rows = shifted(s.samples[1][2].rows, -1.0, 0.2);
  s.goals[2] = geo::Vec2{8.0, 9.0};
  const MetricReport base = evaluate({s});
  REQUIRE(base.rows.size() == 5);

  const EvalScene p = permuted(s, {2, 0, 3, 1});
  const EvalScene g = transformed(s, {37.5, -12.25, 2.2});
  for (const MetricReport& r : {evaluate({p}), evaluate({g})}) {
    REQUIRE(r.rows.size() == base.rows.size());
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
      CHECK(r.rows[k].name == base.rows[k].name);
      CHECK(std::abs(r.rows[k].value - base.rows[k].value) < 1e-9);
    }
  }
}

TEST_CASE("ground truth evaluates to zero error on generated data") {
  world::WorldConfig wc;
  wc.future = 20;
  EvalBatch b;
  for (const auto& s : world::generate_dataset(wc, 5, 77)) b.push_back(ground_truth_scene(s));
  const MetricReport r = evaluate(b);
  REQUIRE(r.rows.size() == 4);
  CHECK(r.rows[0].name == "cr");
  CHECK(r.rows[0].value == 0.0);
  CHECK(r.rows[2].value == 0.0);
  CHECK(r.rows[3].value == 0.0);
}

TEST_CASE("metric report selection and formats") {
  const EvalScene s = road_scene({{line(0, 0, 1, 0, 5), 4.5, 2.0}});
  const MetricReport r = evaluate({s}, {"sade", "cr"});
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].name == "cr");
  CHECK(r.to_csv() == "metric,value,count\ncr,0,1\nsade,0,1\n");
  CHECK(r.to_table().find("sade") != std::string::npos);
  CHECK_THROWS_AS(evaluate({s}, {"ade"}), ContractViolation);
}
