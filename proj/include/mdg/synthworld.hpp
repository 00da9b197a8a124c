#pragma once

// Procedural traffic scenes: lane maps, traffic lights and rule-driven agents
// whose futures are exact unicycle rollouts, plus the dataset file format.

#include <cstdint>
#include <string>
#include <vector>

#include "mdg/geometry.hpp"
#include "mdg/kinematics.hpp"
#include "mdg/rng.hpp"

namespace mdg::world {

inline constexpr std::size_t kWaypoints = 16;
inline constexpr double kWaypointSpacing = 4.0;
inline constexpr double kLaneWidth = 4.0;
inline constexpr double kMaxSpeed = 12.0;
inline constexpr double kMaxAccel = 3.0;

enum class MapKind : std::uint8_t { straight, curve, intersection, merge };
enum class AgentType : std::uint8_t { vehicle, pedestrian };
enum class LightPhase : std::uint8_t { red, yellow, green, unknown };

const char* to_string(MapKind k);
MapKind parse_map_kind(const std::string& s);
const std::vector<MapKind>& all_map_kinds();

struct Polyline {
  std::vector<geo::Pose> points;
  bool operator==(const Polyline&) const = default;
};

struct TrafficLight {
  LightPhase phase = LightPhase::unknown;
  geo::Pose stop;
  std::int32_t lane = -1;  // lane index the light controls
  bool operator==(const TrafficLight&) const = default;
};

struct Agent {
  AgentType type = AgentType::vehicle;
  double length = 4.5;
  double width = 2.0;
  std::vector<kin::StateRow> history;  // H rows; the last one is the current state
  std::vector<kin::StateRow> future;   // T rows
  bool operator==(const Agent&) const = default;

  kin::AgentState current() const;
};

struct Scenario {
  std::uint64_t id = 0;
  MapKind kind = MapKind::straight;
  double dt = 0.1;
  std::vector<Polyline> lanes;  // full lane centerlines, waypoints every kWaypointSpacing
  std::vector<TrafficLight> lights;
  std::vector<Agent> agents;
  std::uint32_t ego = 0;
  std::vector<Polyline> route;  // ego route, already split into kWaypoints pieces
  bool operator==(const Scenario&) const = default;

  std::size_t history_steps() const { return agents.empty() ? 0 : agents[0].history.size(); }
  std::size_t future_steps() const { return agents.empty() ? 0 : agents[0].future.size(); }
};

// Splits a lane into consecutive kWaypoints-long pieces that share endpoints.
std::vector<Polyline> split_polyline(const Polyline& lane);
std::vector<Polyline> map_polylines(const Scenario& s);

struct MapLayout {
  MapKind kind = MapKind::straight;
  std::vector<Polyline> lanes;
  std::vector<TrafficLight> lights;
  std::vector<std::size_t> vehicle_lanes;  // lanes agents may spawn on
};

MapLayout generate_map(MapKind kind, Rng& rng);

// Initial condition of one simulated agent.
struct Spawn {
  AgentType type = AgentType::vehicle;
  std::int32_t lane = -1;  // vehicles follow this lane; pedestrians walk straight
  geo::Pose pose;
  double speed = 0.0;
  double desired_speed = kMaxSpeed;
  double length = 4.5;
  double width = 2.0;
};

// Runs the rule controller for `steps` base steps; row k is the state after
// step k + 1. Actions are held for kin::kChunk steps.
std::vector<std::vector<kin::StateRow>> simulate(const MapLayout& map, const std::vector<Spawn>& spawns,
                                                 std::size_t steps, double dt);

struct WorldConfig {
  std::size_t agents = 8;
  std::size_t history = 10;
  std::size_t future = 40;
  double dt = 0.1;
  std::vector<MapKind> kinds = all_map_kinds();
  double pedestrian_prob = 0.3;
};

// Pure function of (cfg, seed, id). Resamples after any collision, up to 20
// attempts, then drops one agent and retries.
Scenario simulate_rule_agents(const MapLayout& map, std::size_t n_agents, const WorldConfig& cfg, Rng& rng);
Scenario generate_scenario(const WorldConfig& cfg, std::uint64_t seed, std::uint64_t id);
std::vector<Scenario> generate_dataset(const WorldConfig& cfg, std::size_t count, std::uint64_t seed);

// Applies the rigid transform `g` (rotate by g.theta, then translate) to every
// pose and velocity in the scenario.
Scenario transform_scenario(const Scenario& s, const geo::Pose& g);

// Any pair of agents' rectangles overlapping at any history or future step.
bool has_collision(const Scenario& s);

struct DatasetManifest {
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  std::string generator_version;
  std::vector<std::uint64_t> offsets;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
extern const char* const kGeneratorVersion;

std::vector<std::uint8_t> encode_dataset(const std::vector<Scenario>& scenarios, std::uint64_t seed);
std::vector<Scenario> decode_dataset(const std::vector<std::uint8_t>& bytes, DatasetManifest* manifest = nullptr);
void save_dataset(const std::vector<Scenario>& scenarios, const std::string& path, std::uint64_t seed = 0);
std::vector<Scenario> load_dataset(const std::string& path, DatasetManifest* manifest = nullptr);

}  // namespace mdg::world
