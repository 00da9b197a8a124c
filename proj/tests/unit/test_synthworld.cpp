#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mdg/binary_io.hpp"
#include "mdg/errors.hpp"
#include "mdg/synthworld.hpp"

using namespace mdg;
using namespace mdg::world;

namespace {

const std::vector<Scenario>& sample_set() {
  static const std::vector<Scenario> s = [] {
    WorldConfig cfg;
    return generate_dataset(cfg, 100, 7);
  }();
  return s;
}

}  // namespace

TEST_CASE("map geometry") {
  Rng rng(1);
  const MapLayout straight = generate_map(MapKind::straight, rng);
  for (const Polyline& l : straight.lanes) {
    for (const geo::Pose& p : l.points) CHECK(std::abs(p.theta) < 1e-9);
  }

  for (int trial = 0; trial < 2; ++trial) {
    const MapLayout curve = generate_map(MapKind::curve, rng);
    const Polyline& inner = curve.lanes[0];
    for (std::size_t k = 1; k < inner.points.size(); ++k) {
      const double d = kin::wrap_angle(inner.points[k].theta - inner.points[k - 1].theta);
      CHECK(std::abs(std::abs(d) - kWaypointSpacing / 50.0) < 1e-12);
      // Chord of a 4 m arc on R = 50.
      const double chord = std::hypot(inner.points[k].x - inner.points[k - 1].x,
                                      inner.points[k].y - inner.points[k - 1].y);
      CHECK(chord == doctest::Approx(2 * 50.0 * std::sin(2.0 / 50.0)).epsilon(1e-12));
    }
  }

  const MapLayout inter = generate_map(MapKind::intersection, rng);
  int crossing_pairs = 0;
  for (std::size_t a = 0; a < inter.lanes.size(); ++a) {
    for (std::size_t b = a + 1; b < inter.lanes.size(); ++b) {
      bool hit = false;
      const auto& pa = inter.lanes[a].points;
      const auto& pb = inter.lanes[b].points;
      for (std::size_t i = 0; i + 1 < pa.size() && !hit; ++i) {
        for (std::size_t j = 0; j + 1 < pb.size() && !hit; ++j) {
          hit = geo::segments_intersect({pa[i].x, pa[i].y}, {pa[i + 1].x, pa[i + 1].y}, {pb[j].x, pb[j].y},
                                        {pb[j + 1].x, pb[j + 1].y});
        }
      }
      crossing_pairs += hit;
    }
  }
  CHECK(crossing_pairs >= 2);
  CHECK(inter.lights.size() == 4);

  for (MapKind k : all_map_kinds()) {
    const MapLayout m = generate_map(k, rng);
    for (const Polyline& l : m.lanes) {
      for (const Polyline& piece : split_polyline(l)) CHECK(piece.points.size() == kWaypoints);
    }
  }
}

TEST_CASE("single agent on an empty road accelerates monotonically to the cap") {
  Rng rng(2);
  const MapLayout m = generate_map(MapKind::straight, rng);
  Spawn s;
  s.lane = 1;
  s.pose = {-50.0, 0.0, 0.0};
  s.speed = 2.0;
  s.desired_speed = kMaxSpeed;
  const auto rows = simulate(m, {s}, 200, 0.1);
  double prev = 2.0;
  for (const kin::StateRow& r : rows[0]) {
    CHECK(r.speed() >= prev - 1e-12);
    CHECK(r.speed() <= kMaxSpeed + 1e-9);
    prev = r.speed();
  }
  CHECK(prev > 11.5);
}

TEST_CASE("follower stops behind a stopped leader") {
  Rng rng(3);
  const MapLayout m = generate_map(MapKind::straight, rng);
  Spawn leader;
  leader.lane = 1;
  leader.pose = {20.0, 0.0, 0.0};
  leader.speed = 0.0;
  leader.desired_speed = 0.0;
  Spawn follower = leader;
  follower.pose = {20.0 - 8.0 - 4.5, 0.0, 0.0};  // 8 m bumper gap
  follower.speed = 5.0;
  follower.desired_speed = kMaxSpeed;
  const auto rows = simulate(m, {leader, follower}, 80, 0.1);
  for (std::size_t k = 0; k < rows[0].size(); ++k) {
    const auto& a = rows[0][k];
    const auto& b = rows[1][k];
    CHECK_FALSE(geo::boxes_overlap({a.x, a.y, a.theta, 4.5, 2.0}, {b.x, b.y, b.theta, 4.5, 2.0}));
  }
  const double gap = rows[0].back().x - rows[1].back().x - 4.5;
  CHECK(gap >= 2.0);
  CHECK(std::abs(rows[1].back().speed()) < 1e-6);
}

TEST_CASE("red light stops approaching traffic") {
  Rng rng(4);
  MapLayout m = generate_map(MapKind::intersection, rng);
  for (auto& l : m.lights) l.phase = LightPhase::red;
  Spawn s;
  s.lane = 0;
  s.pose = {-60.0, -2.0, 0.0};
  s.speed = 10.0;
  const auto rows = simulate(m, {s}, 150, 0.1);
  const double stop_x = m.lights[0].stop.x;
  for (const kin::StateRow& r : rows[0]) {
    const double front = r.x + 2.25;
    CHECK(front <= stop_x + 1e-9);
    if (front > stop_x - 0.5) CHECK(r.speed() < 0.2);
  }
  CHECK(rows[0].back().speed() < 0.2);
}

TEST_CASE("generated scenarios satisfy the world invariants") {
  for (const Scenario& s : sample_set()) {
    CHECK_FALSE(has_collision(s));
    REQUIRE(!s.agents.empty());
    const kin::AgentState ego = s.agents[s.ego].current();
    for (const Agent& a : s.agents) {
      CHECK(a.history.size() == 10);
      CHECK(a.future.size() == 40);
      const kin::AgentState cur = a.current();
      CHECK(std::hypot(cur.x - ego.x, cur.y - ego.y) < 200.0);

      // Dynamics round trip.
      const auto actions = kin::inverse_dynamics_agent(a.future, cur, s.dt);
      const auto replay = kin::rollout_agent(cur, actions, s.dt);
      const double err = std::hypot(replay.back().x - a.future.back().x, replay.back().y - a.future.back().y);
      CHECK(err < 0.5);

      // Continuity: displacement matches velocity.
      for (std::size_t k = 1; k < a.future.size(); ++k) {
        CHECK(std::abs(a.future[k].x - a.future[k - 1].x - a.future[k].vx * s.dt) < 1e-9);
      }
    }
  }
}

TEST_CASE("generation is a pure function of the seed") {
  WorldConfig cfg;
  const auto a = encode_dataset(generate_dataset(cfg, 5, 11), 11);
  const auto b = encode_dataset(generate_dataset(cfg, 5, 11), 11);
  CHECK(a == b);
  const auto c = encode_dataset(generate_dataset(cfg, 5, 12), 12);
  CHECK(a != c);
}

TEST_CASE("dataset round trip and integrity errors") {
  const auto& set = sample_set();
  const auto bytes = encode_dataset(set, 7);
  DatasetManifest m;
  const auto back = decode_dataset(bytes, &m);
  CHECK(back == set);
  CHECK(m.count == 100);
  CHECK(m.seed == 7);
  CHECK(m.generator_version == kGeneratorVersion);

  auto cut = bytes;
  cut.pop_back();
  try {
    decode_dataset(cut);
    FAIL("truncated file accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  auto tampered = bytes;
  // Manifest count sits right after magic, version and total size.
  tampered[20] = static_cast<std::uint8_t>(tampered[20] + 1);
  const std::uint64_t sum = fnv1a64(tampered.data(), tampered.size() - 8);
  for (int i = 0; i < 8; ++i) tampered[tampered.size() - 8 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(sum >> (8 * i));
  try {
    decode_dataset(tampered);
    FAIL("count mismatch accepted");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 101") != std::string::npos);
    CHECK(msg.find("found 100") != std::string::npos);
  }

  auto flipped = bytes;
  flipped[100] ^= 1;
  CHECK_THROWS_AS(decode_dataset(flipped), DataError);

  auto wrong_version = bytes;
  wrong_version[8] = 9;
  CHECK_THROWS_WITH_AS(decode_dataset(wrong_version), doctest::Contains("version mismatch"), DataError);

  const auto empty = decode_dataset(encode_dataset({}, 0));
  CHECK(empty.empty());
}
