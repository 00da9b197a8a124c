#include "mdg/inference.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mdg/errors.hpp"
#include "mdg/evalmetrics.hpp"
#include "mdg/kinematics.hpp"

namespace mdg {

namespace {

Tensor normal_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

void check_goals(const SceneContext& ctx, const std::vector<Goal>& goals) {
  for (const Goal& g : goals) {
    require(g.agent < ctx.num_agents(), "guidance target " + std::to_string(g.agent) + " is not an agent");
    require(ctx.agent_valid[g.agent], "guidance target " + std::to_string(g.agent) + " is not a valid agent");
    require(std::isfinite(g.x) && std::isfinite(g.y), "goal must be finite");
    const geo::Pose& p = ctx.agent_pose[g.agent];
    require(std::hypot(g.x - p.x, g.y - p.y) <= kGoalSanityRadius,
            "goal for agent " + std::to_string(g.agent) + " lies beyond the 500 m sanity radius");
  }
}

// Heading and speed consistent with consecutive positions, starting from the
// local origin facing +x at speed v0.
void refit_kinematics(std::vector<kin::StateRow>& rows, double dt) {
  double px = 0.0, py = 0.0, pth = 0.0;
  for (kin::StateRow& r : rows) {
    const double dx = r.x - px, dy = r.y - py;
    const double dist = std::hypot(dx, dy);
    double th = pth, v = 0.0;
    if (dist > 1e-6) {
      th = std::atan2(dy, dx);
      v = dist / dt;
      if (std::cos(th - pth) < 0.0) {  // reversing
        th = kin::wrap_angle(th + std::acos(-1.0));
        v = -v;
      }
    }
    r.theta = th;
    r.vx = v * std::cos(th);
    r.vy = v * std::sin(th);
    px = r.x;
    py = r.y;
    pth = th;
  }
}

}  // namespace

Tensor apply_goal_objective(const SceneContext& ctx, const Tensor& actions, const std::vector<Goal>& goals, double dt,
                            std::size_t chunk) {
  if (goals.empty()) return actions;
  const std::size_t n = actions.dim(0), ta = actions.dim(1);
  const Tensor raw = kin::denormalize_actions(actions);
  std::vector<double> out(raw.data().begin(), raw.data().end());
  const auto init = ctx.local_init();
  for (const Goal& g : goals) {
    const std::size_t i = g.agent;
    std::vector<kin::RawAction> a(ta);
    for (std::size_t c = 0; c < ta; ++c) a[c] = {out[(i * ta + c) * 2], out[(i * ta + c) * 2 + 1]};
    std::vector<kin::StateRow> rows = kin::rollout_agent(init[i], a, dt, chunk);
    const geo::Pose goal = geo::to_local(ctx.agent_pose[i], {g.x, g.y, 0.0});
    const double ox = goal.x - rows.back().x, oy = goal.y - rows.back().y;
    const double t_len = static_cast<double>(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const double w = static_cast<double>(t + 1) / t_len;
      rows[t].x += w * ox;
      rows[t].y += w * oy;
    }
    refit_kinematics(rows, dt);
    const auto fit = kin::inverse_dynamics_agent(rows, init[i], dt, chunk);
    for (std::size_t c = 0; c < ta; ++c) {
      out[(i * ta + c) * 2] = fit[c].accel;
      out[(i * ta + c) * 2 + 1] = fit[c].yaw_rate;
    }
  }
  return kin::normalize_actions(Tensor({n, ta, kin::kActionDim}, std::move(out)));
}

GenerationResult generate(const SceneModel& model, const SceneContext& ctx, const GenerationRequest& req) {
  NoGradGuard no_grad;
  const ModelConfig& cfg = model.config();
  const std::size_t n = ctx.num_agents(), ta = cfg.action_steps();
  const noise::InferenceSchedule& sch = req.schedule;
  const noise::AlphaSchedule alpha = cfg.alpha_schedule();
  require(sch.steps() >= 1, "schedule has no denoising steps");
  require(sch.max_level == cfg.max_level, "schedule K does not match model.max_level");
  require(sch.masks.front().agents == n && sch.masks.front().steps == ta,
          "schedule is " + std::to_string(sch.masks.front().agents) + "x" + std::to_string(sch.masks.front().steps) +
              ", scene needs " + std::to_string(n) + "x" + std::to_string(ta));
  require(noise::schedule_is_valid(sch, alpha), "schedule violates the monotone / all-zero-end invariants");
  require(req.num_samples >= 1, "num_samples must be >= 1");
  check_goals(ctx, req.goals);

  std::vector<std::size_t> targets;
  for (const Goal& g : req.goals) targets.push_back(g.agent);
  const noise::NoiseMask gbar = noise::guidance_mask(n, ta, targets);
  const bool guided = !req.goals.empty();

  const EncodedScene enc = model.encode(ctx);
  GenerationResult res;
  for (std::size_t s = 0; s < req.num_samples; ++s) {
    Rng rng = Rng::stream(req.seed, {s});
    GenerationSample out;
    Tensor z = normal_tensor({n, ta, kin::kActionDim}, rng);
    noise::NoiseMask m = noise::compose_guidance(sch.masks.front(), gbar, alpha);
    const std::size_t steps = sch.steps();
    for (std::size_t k = 0; k < steps; ++k) {
      Tensor x_hat = model.denoise(enc, ctx, z, m);
      ++out.denoiser_calls;
      TraceStep ts;
      if (req.keep_trace) {
        ts.mask = m;
        ts.estimate = x_hat;
      }
      if (guided) {
        x_hat = apply_goal_objective(ctx, x_hat, req.goals, cfg.dt, cfg.chunk);
        ++out.objective_calls;
        ts.objective_applied = true;
      }
      if (req.keep_trace) out.trace.push_back(std::move(ts));
      for (double v : x_hat.data()) {
        if (!std::isfinite(v)) throw NumericFailure("non-finite denoiser output at step " + std::to_string(k));
      }
      if (k + 1 == steps) {
        out.actions = x_hat;
        break;
      }
      m = noise::compose_guidance(sch.masks[k + 1], gbar, alpha);
      z = noise::renoise(x_hat, m, alpha, rng);
    }
    out.states = kin::rollout(ctx.local_init(), out.actions, cfg.dt, cfg.chunk);
    res.samples.push_back(std::move(out));
  }
  return res;
}

GenerationResult guided_generate(const SceneModel& model, const SceneContext& ctx, const GenerationRequest& req) {
  require(!req.goals.empty(), "guided generation needs at least one goal");
  return generate(model, ctx, req);
}

Tensor shift_plan(const Tensor& actions, std::size_t elapsed) {
  require(actions.rank() == 3, "plan must be [N, T_a, C]");
  const std::size_t n = actions.dim(0), ta = actions.dim(1), c = actions.dim(2);
  require(elapsed < ta, "reuse shift must be shorter than the plan");
  const auto a = actions.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < ta; ++t) {
      const std::size_t src = std::min(t + elapsed, ta - 1);
      for (std::size_t k = 0; k < c; ++k) out[(i * ta + t) * c + k] = a[(i * ta + src) * c + k];
    }
  }
  return Tensor(actions.shape(), std::move(out));
}

world::Scenario episode_view(const world::Scenario& episode, const std::vector<kin::StateRow>& ego_executed,
                             std::size_t k, std::size_t future) {
  world::Scenario v = episode;
  const std::size_t h = episode.history_steps();
  for (std::size_t i = 0; i < episode.agents.size(); ++i) {
    const world::Agent& src = episode.agents[i];
    const bool ego = i == episode.ego;
    auto at = [&](std::size_t idx) -> const kin::StateRow& {
      if (idx < h) return src.history[idx];
      const std::size_t f = idx - h;
      if (ego && f < ego_executed.size()) return ego_executed[f];
      require(f < src.future.size(), "episode is shorter than the requested view");
      return src.future[f];
    };
    world::Agent& dst = v.agents[i];
    dst.history.clear();
    dst.future.clear();
    for (std::size_t j = 0; j < h; ++j) dst.history.push_back(at(k + j));
    for (std::size_t j = 0; j < future; ++j) dst.future.push_back(at(k + h + j));
  }
  return v;
}

ClosedLoopResult closed_loop(const SceneModel& model, const world::Scenario& episode, const ClosedLoopConfig& cfg) {
  NoGradGuard no_grad;
  const ModelConfig& mc = model.config();
  require(cfg.replan_every >= 1 && cfg.replan_every % mc.chunk == 0, "replan period must be a multiple of the chunk");
  require(cfg.horizon % cfg.replan_every == 0, "replan period must divide the horizon");
  require(cfg.replan_every <= mc.future, "replan period exceeds the plan horizon");
  require(!cfg.reuse || cfg.replan_every < mc.future, "plan reuse needs a replan period shorter than the plan");
  require(episode.future_steps() >= cfg.horizon, "episode records fewer future steps than the horizon");
  const std::size_t n = episode.agents.size(), ta = mc.action_steps();
  const std::size_t shift = cfg.replan_every / mc.chunk;
  const noise::AlphaSchedule alpha = mc.alpha_schedule();

  ClosedLoopResult res;
  std::vector<kin::StateRow> ego_exec;
  Tensor prev;
  for (std::size_t r = 0; r * cfg.replan_every < cfg.horizon; ++r) {
    const std::size_t k = r * cfg.replan_every;
    const world::Scenario view = episode_view(episode, ego_exec, k, 0);
    const SceneContext ctx = make_context(view, mc.use_route);
    Tensor actions;
    if (!cfg.reuse || r == 0) {
      GenerationRequest req;
      req.schedule = noise::build_schedule(noise::ScheduleMode::one_step, 1, n, ta, mc.max_level);
      req.seed = derive_seed(cfg.seed, {episode.id, r});
      actions = generate(model, ctx, req).samples.front().actions;
    } else {
      Rng rng = Rng::stream(cfg.seed, {episode.id, r, 1});
      const noise::NoiseMask m = noise::NoiseMask::filled(n, ta, 1);
      const noise::NoisedSample z = noise::apply_noise(shift_plan(prev, shift), m, alpha, rng);
      actions = model.denoise(model.encode(ctx), ctx, z.z, m);
    }
    ++res.denoiser_calls;
    prev = actions;
    const Tensor states = kin::rollout(ctx.local_init(), actions, mc.dt, mc.chunk);
    res.plans.push_back(to_global_rows(ctx, states));
    res.plan_start.push_back(k);

    const Tensor raw = kin::denormalize_actions(actions);
    std::vector<kin::RawAction> a;
    for (std::size_t c = 0; c < shift; ++c) {
      const double* p = raw.data().data() + (view.ego * ta + c) * kin::kActionDim;
      a.push_back({p[0], p[1]});
    }
    const auto seg = kin::rollout_agent(view.agents[view.ego].current(), a, mc.dt, mc.chunk);
    ego_exec.insert(ego_exec.end(), seg.begin(), seg.end());
  }
  res.executed.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == episode.ego) {
      res.executed[i] = ego_exec;
    } else {
      res.executed[i].assign(episode.agents[i].future.begin(), episode.agents[i].future.begin() + cfg.horizon);
    }
  }
  std::vector<std::vector<kin::StateRow>> ego_plans;
  for (const auto& p : res.plans) ego_plans.push_back(p[episode.ego]);
  res.consistency = plan_consistency(ego_plans, res.plan_start);
  return res;
}

std::string Trace::header_value(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return fallback;
}

void write_trace(std::ostream& os, const Trace& tr) {
  for (const auto& [k, v] : tr.header) os << "# " << k << '=' << v << '\n';
  os << kTraceColumns << '\n';
  os.precision(17);
  for (const TraceRecord& r : tr.records) {
    os << r.kind << ',' << r.episode << ',' << r.step << ',' << r.agent << ',' << r.t << ',' << r.x << ',' << r.y
       << ',' << r.theta << ',' << r.vx << ',' << r.vy << ',' << r.length << ',' << r.width << '\n';
  }
}

Trace read_trace(std::istream& is) {
  Trace tr;
  std::string line;
  bool columns = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos || line.size() < 2) continue;
      tr.header.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    if (!columns) {
      if (line != kTraceColumns) throw DataError("trace line " + std::to_string(lineno) + ": unexpected column header");
      columns = true;
      continue;
    }
    std::istringstream ss(line);
    TraceRecord r;
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 12) {
      throw DataError("trace line " + std::to_string(lineno) + ": expected 12 fields, got " +
                      std::to_string(fields.size()));
    }
    try {
      r.kind = fields[0];
      r.episode = std::stoull(fields[1]);
      r.step = std::stoull(fields[2]);
      r.agent = std::stoull(fields[3]);
      r.t = std::stoull(fields[4]);
      r.x = std::stod(fields[5]);
      r.y = std::stod(fields[6]);
      r.theta = std::stod(fields[7]);
      r.vx = std::stod(fields[8]);
      r.vy = std::stod(fields[9]);
      r.length = std::stod(fields[10]);
      r.width = std::stod(fields[11]);
    } catch (const std::exception&) {
      throw DataError("trace line " + std::to_string(lineno) + ": malformed number");
    }
    tr.records.push_back(std::move(r));
  }
  if (!columns) throw DataError("trace has no column header");
  return tr;
}

void save_trace(const std::string& path, const Trace& tr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write trace " + path);
  write_trace(os, tr);
  if (!os) throw DataError("failed writing trace " + path);
}

Trace load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open trace " + path);
  return read_trace(is);
}

void append_rows(Trace& tr, const std::string& kind, std::uint64_t episode, std::size_t step,
                 const world::Scenario& s, const std::vector<std::vector<kin::StateRow>>& rows) {
  require(rows.size() == s.agents.size(), "trace rows do not match the scenario's agents");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t t = 0; t < rows[i].size(); ++t) {
      const kin::StateRow& r = rows[i][t];
      tr.records.push_back(
          {kind, episode, step, i, t, r.x, r.y, r.theta, r.vx, r.vy, s.agents[i].length, s.agents[i].width});
    }
  }
}

}  // namespace mdg
