#include "mdg/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mdg/errors.hpp"

namespace mdg {

namespace {

double point_segment_distance(double px, double py, const geo::Pose& a, const geo::Pose& b) {
  const double ux = b.x - a.x, uy = b.y - a.y;
  const double len2 = ux * ux + uy * uy;
  double s = len2 > 0.0 ? ((px - a.x) * ux + (py - a.y) * uy) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return std::hypot(px - (a.x + s * ux), py - (a.y + s * uy));
}

geo::Box box_of(const AgentTrack& a, std::size_t t) {
  const kin::StateRow& r = a.rows[t];
  return {r.x, r.y, r.theta, a.length, a.width};
}

double mean_l2(const std::vector<kin::StateRow>& a, const std::vector<kin::StateRow>& b) {
  require(a.size() == b.size(), "trajectory length " + std::to_string(a.size()) + " does not match ground truth " +
                                    std::to_string(b.size()));
  require(!a.empty(), "empty trajectory");
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) s += std::hypot(a[t].x - b[t].x, a[t].y - b[t].y);
  return s / static_cast<double>(a.size());
}

std::size_t modeled_count(const EvalScene& s) {
  return static_cast<std::size_t>(std::count(s.modeled.begin(), s.modeled.end(), true));
}

void check_scene(const EvalScene& s) {
  const std::size_t n = s.modeled.size();
  require(s.pedestrian.size() == n, "pedestrian flags do not match the agent count");
  for (const auto& sample : s.samples) {
    require(sample.size() == n, "sample agent count does not match the scene");
    for (const AgentTrack& a : sample) require(a.length > 0.0 && a.width > 0.0, "agent extents must be positive");
  }
}

// Per-scene ADE of each sample, averaged over modeled agents.
std::vector<double> sample_ades(const EvalScene& s) {
  require(s.gt.size() == s.modeled.size(), "scene " + std::to_string(s.id) + " has no ground truth for SADE");
  const std::size_t na = modeled_count(s);
  std::vector<double> out;
  for (const auto& sample : s.samples) {
    double sum = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (s.modeled[i]) sum += mean_l2(sample[i].rows, s.gt[i]);
    }
    out.push_back(sum / static_cast<double>(na));
  }
  return out;
}

}  // namespace

bool DrivableArea::contains(double x, double y) const {
  for (const world::Polyline& l : lanes) {
    for (std::size_t k = 0; k + 1 < l.points.size(); ++k) {
      if (point_segment_distance(x, y, l.points[k], l.points[k + 1]) <= half_width) return true;
    }
  }
  return false;
}

std::vector<std::vector<geo::Vec2>> DrivableArea::polygons() const {
  std::vector<std::vector<geo::Vec2>> out;
  for (const world::Polyline& l : lanes) {
    for (std::size_t k = 0; k + 1 < l.points.size(); ++k) {
      const geo::Pose& a = l.points[k];
      const geo::Pose& b = l.points[k + 1];
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      if (len == 0.0) continue;
      const double nx = -(b.y - a.y) / len * half_width, ny = (b.x - a.x) / len * half_width;
      out.push_back({{a.x + nx, a.y + ny}, {b.x + nx, b.y + ny}, {b.x - nx, b.y - ny}, {a.x - nx, a.y - ny}});
    }
  }
  return out;
}

DrivableArea drivable_area(const world::Scenario& s) {
  DrivableArea d;
  d.lanes = s.lanes;
  return d;
}

bool agent_collides(const std::vector<AgentTrack>& agents, std::size_t i) {
  const AgentTrack& a = agents.at(i);
  for (std::size_t j = 0; j < agents.size(); ++j) {
    if (j == i) continue;
    const std::size_t steps = std::min(a.rows.size(), agents[j].rows.size());
    for (std::size_t t = 0; t < steps; ++t) {
      if (geo::boxes_overlap(box_of(a, t), box_of(agents[j], t))) return true;
    }
  }
  return false;
}

double collision_rate(const EvalBatch& batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const EvalScene& s : batch) {
    check_scene(s);
    const std::size_t na = modeled_count(s);
    if (na == 0 || s.samples.empty()) continue;
    double hits = 0.0;
    for (const auto& sample : s.samples) {
      for (std::size_t i = 0; i < sample.size(); ++i) {
        if (s.modeled[i] && agent_collides(sample, i)) hits += 1.0;
      }
    }
    total += hits / static_cast<double>(s.samples.size() * na);
  }
  return total / static_cast<double>(batch.size());
}

double offroad_rate(const EvalBatch& batch) {
  double total = 0.0;
  std::size_t scenes = 0;
  for (const EvalScene& s : batch) {
    check_scene(s);
    require(!s.drivable.lanes.empty(), "scene " + std::to_string(s.id) + " has no drivable area");
    double off = 0.0;
    std::size_t counted = 0;
    for (const auto& sample : s.samples) {
      for (std::size_t i = 0; i < sample.size(); ++i) {
        if (!s.modeled[i] || s.pedestrian[i] || sample[i].rows.empty()) continue;
        const kin::StateRow& r0 = sample[i].rows.front();
        if (!s.drivable.contains(r0.x, r0.y)) continue;
        ++counted;
        for (const kin::StateRow& r : sample[i].rows) {
          if (!s.drivable.contains(r.x, r.y)) {
            off += 1.0;
            break;
          }
        }
      }
    }
    if (counted == 0) continue;
    total += off / static_cast<double>(counted);
    ++scenes;
  }
  return scenes == 0 ? 0.0 : total / static_cast<double>(scenes);
}

double sade(const EvalBatch& batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const EvalScene& s : batch) {
    check_scene(s);
    const auto ades = sample_ades(s);
    require(!ades.empty(), "scene without samples");
    double sum = 0.0;
    for (double a : ades) sum += a;
    total += sum / static_cast<double>(ades.size());
  }
  return total / static_cast<double>(batch.size());
}

double minsade(const EvalBatch& batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const EvalScene& s : batch) {
    check_scene(s);
    const auto ades = sample_ades(s);
    require(!ades.empty(), "scene without samples");
    total += *std::min_element(ades.begin(), ades.end());
  }
  return total / static_cast<double>(batch.size());
}

double goal_reach_rate(const EvalBatch& batch) {
  double total = 0.0;
  std::size_t scenes = 0;
  for (const EvalScene& s : batch) {
    check_scene(s);
    double reached = 0.0;
    std::size_t targets = 0;
    for (const auto& sample : s.samples) {
      for (std::size_t i = 0; i < s.goals.size() && i < sample.size(); ++i) {
        if (!s.goals[i] || sample[i].rows.empty()) continue;
        ++targets;
        const kin::StateRow& end = sample[i].rows.back();
        if (std::hypot(end.x - s.goals[i]->x, end.y - s.goals[i]->y) < kGoalRadius) reached += 1.0;
      }
    }
    if (targets == 0) continue;
    total += reached / static_cast<double>(targets);
    ++scenes;
  }
  return scenes == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(scenes);
}

double plan_consistency(const std::vector<std::vector<kin::StateRow>>& plans, const std::vector<std::size_t>& start) {
  require(plans.size() == start.size(), "plan starts do not match plans");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k + 1 < plans.size(); ++k) {
    require(start[k + 1] >= start[k], "plans must be in time order");
    const std::size_t off = start[k + 1] - start[k];
    const auto& p = plans[k];
    const auto& q = plans[k + 1];
    for (std::size_t j = 0; j < q.size() && off + j < p.size(); ++j) {
      sum += std::hypot(p[off + j].x - q[j].x, p[off + j].y - q[j].y);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << "metric     value        count\n";
  for (const MetricRow& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-10s %-12.6f %zu\n", r.name.c_str(), r.value, r.count);
    os << buf;
  }
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "metric,value,count\n";
  for (const MetricRow& r : rows) os << r.name << ',' << r.value << ',' << r.count << '\n';
  return os.str();
}

MetricReport evaluate(const EvalBatch& batch, const std::vector<std::string>& metrics) {
  static const std::vector<std::string> all = {"cr", "or", "sade", "minsade", "gr"};
  for (const std::string& m : metrics) {
    require(std::find(all.begin(), all.end(), m) != all.end(), "unknown metric '" + m + "' (cr, or, sade, minsade, gr)");
  }
  auto wanted = [&](const char* m) {
    return metrics.empty() || std::find(metrics.begin(), metrics.end(), m) != metrics.end();
  };
  bool has_gt = !batch.empty(), has_goals = false;
  for (const EvalScene& s : batch) {
    has_gt = has_gt && s.gt.size() == s.modeled.size();
    for (const auto& g : s.goals) has_goals = has_goals || g.has_value();
  }
  MetricReport rep;
  const std::size_t n = batch.size();
  if (wanted("cr")) rep.rows.push_back({"cr", collision_rate(batch), n});
  if (wanted("or")) rep.rows.push_back({"or", offroad_rate(batch), n});
  if (wanted("sade") && (has_gt || !metrics.empty())) rep.rows.push_back({"sade", sade(batch), n});
  if (wanted("minsade") && (has_gt || !metrics.empty())) rep.rows.push_back({"minsade", minsade(batch), n});
  if (wanted("gr") && (has_goals || !metrics.empty())) rep.rows.push_back({"gr", goal_reach_rate(batch), n});
  return rep;
}

EvalScene ground_truth_scene(const world::Scenario& s) {
  EvalScene e;
  e.id = s.id;
  e.drivable = drivable_area(s);
  std::vector<AgentTrack> sample;
  for (const world::Agent& a : s.agents) {
    sample.push_back({a.future, a.length, a.width});
    e.gt.push_back(a.future);
    e.modeled.push_back(true);
    e.pedestrian.push_back(a.type == world::AgentType::pedestrian);
    e.goals.emplace_back();
  }
  e.samples.push_back(std::move(sample));
  return e;
}

}  // namespace mdg
