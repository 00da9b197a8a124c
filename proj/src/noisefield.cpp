#include "mdg/noisefield.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mdg/errors.hpp"

namespace mdg::noise {

AlphaSchedule::AlphaSchedule(int max_level, double guidance_alpha, double alpha_first,
                             double alpha_last)
    : max_level_(max_level), guidance_alpha_(guidance_alpha) {
  require(max_level >= 1 && max_level < kGuidance, "alpha schedule needs 1 <= K < 255");
  require(guidance_alpha > 0.0 && guidance_alpha <= 1.0, "guidance alpha must lie in (0, 1]");
  require(alpha_first < 1.0 && alpha_last > 0.0 && alpha_last < alpha_first,
          "alpha endpoints must satisfy 0 < last < first < 1");
  alpha_.assign(static_cast<std::size_t>(max_level) + 1, 1.0);
  if (max_level == 1) {
    alpha_[1] = alpha_last;
  } else {
    const double step = (alpha_first - alpha_last) / static_cast<double>(max_level - 1);
    for (int l = 1; l <= max_level; ++l) alpha_[static_cast<std::size_t>(l)] = alpha_first - step * (l - 1);
    alpha_[static_cast<std::size_t>(max_level)] = alpha_last;
  }
}

double AlphaSchedule::alpha(Level level) const {
  if (level == kGuidance) return guidance_alpha_;
  require(level <= max_level_, "noise level " + std::to_string(level) + " exceeds K=" +
                                   std::to_string(max_level_));
  return alpha_[level];
}

NoiseMask NoiseMask::filled(std::size_t agents, std::size_t steps, Level level) {
  NoiseMask m;
  m.agents = agents;
  m.steps = steps;
  m.levels.assign(agents * steps, level);
  return m;
}

Tensor mix_noise(const Tensor& x, const Tensor& eps, const NoiseMask& m, const AlphaSchedule& sched) {
  require(x.rank() == 3 && x.dim(0) == m.agents && x.dim(1) == m.steps,
          "noise: tensor " + shape_str(x.shape()) + " does not match mask [" +
              std::to_string(m.agents) + "," + std::to_string(m.steps) + "]");
  require(eps.shape() == x.shape(), "noise: eps shape mismatch");
  const std::size_t c = x.dim(2);
  const auto xv = x.data();
  const auto ev = eps.data();
  std::vector<double> z(xv.size());
  for (std::size_t p = 0; p < m.levels.size(); ++p) {
    const double a = sched.alpha(m.levels[p]);
    const double sa = std::sqrt(a);
    const double sn = std::sqrt(1.0 - a);
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      if (!std::isfinite(xv[i])) throw ContractViolation("noise: non-finite input");
      z[i] = a == 1.0 ? xv[i] : sa * xv[i] + sn * ev[i];
    }
  }
  return Tensor(x.shape(), std::move(z));
}

NoisedSample apply_noise(const Tensor& x, const NoiseMask& m, const AlphaSchedule& sched, Rng& rng) {
  std::vector<double> e(x.numel());
  for (double& v : e) v = rng.normal();
  Tensor eps(x.shape(), std::move(e));
  Tensor z = mix_noise(x, eps, m, sched);
  return {std::move(z), std::move(eps)};
}

Tensor renoise(const Tensor& x_hat, const NoiseMask& m_next, const AlphaSchedule& sched, Rng& rng) {
  return apply_noise(x_hat, m_next, sched, rng).z;
}

namespace {

std::size_t fraction_count(double delta, std::size_t n) {
  require(delta >= 0.0 && delta <= 1.0, "masking rate must lie in [0, 1]");
  const double raw = delta * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

}  // namespace

NoiseMask sample_training_mask(std::size_t agents, std::size_t steps, double delta, MaskAxis axis,
                               int max_level, Rng& rng) {
  const Level k = static_cast<Level>(max_level);
  NoiseMask m = NoiseMask::filled(agents, steps, k);
  if (axis == MaskAxis::temporal) {
    const std::size_t full = fraction_count(delta, steps);
    const std::size_t head = steps - full;
    // Binary masks (K = 1) leave the unmasked head clean or fully noised.
    const int lo = max_level == 1 ? 0 : 1;
    std::vector<Level> row(head);
    for (std::size_t a = 0; a < agents; ++a) {
      for (auto& l : row) l = static_cast<Level>(rng.uniform_int(lo, max_level));
      std::sort(row.begin(), row.end());
      for (std::size_t t = 0; t < head; ++t) m.set(a, t, row[t]);
    }
  } else {
    const std::size_t full = fraction_count(delta, agents);
    std::vector<std::size_t> order(agents);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t r = full; r < agents; ++r) {
      const Level l = max_level == 1 ? 0 : static_cast<Level>(rng.uniform_int(1, max_level - 1));
      for (std::size_t t = 0; t < steps; ++t) m.set(order[r], t, l);
    }
  }
  return m;
}

NoiseMask sample_random_mask(std::size_t agents, std::size_t steps, int max_level, Rng& rng) {
  NoiseMask m = NoiseMask::filled(agents, steps, 0);
  for (auto& l : m.levels) l = static_cast<Level>(rng.uniform_int(1, max_level));
  return m;
}

std::vector<double> batch_mask_rates(std::size_t batch) {
  require(batch >= 1, "batch size must be >= 1");
  if (batch == 1) return {0.5};
  std::vector<double> d(batch);
  for (std::size_t i = 0; i < batch; ++i) d[i] = static_cast<double>(i) / static_cast<double>(batch - 1);
  return d;
}

const char* to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::one_step: return "one_step";
    case ScheduleMode::temporal: return "temporal";
    case ScheduleMode::agent: return "agent";
    case ScheduleMode::custom: return "custom";
  }
  return "?";
}

ScheduleMode parse_schedule_mode(const std::string& s) {
  if (s == "one_step") return ScheduleMode::one_step;
  if (s == "temporal") return ScheduleMode::temporal;
  if (s == "agent") return ScheduleMode::agent;
  if (s == "custom") return ScheduleMode::custom;
  throw ContractViolation("unknown schedule mode '" + s + "' (one_step|temporal|agent|custom)");
}

namespace {

// Level of a position in block `b` (1-based) while `remaining` blocks are
// still noisy: traversed blocks are clean, the rest ramp up towards K.
Level ramp_level(std::size_t b, std::size_t steps, std::size_t remaining, int k) {
  const std::size_t elapsed = steps - remaining;
  if (b <= elapsed) return 0;
  const long upcoming = static_cast<long>(b - elapsed);
  const long level = upcoming + k - static_cast<long>(remaining);
  return static_cast<Level>(std::clamp<long>(level, 1, k));
}

}  // namespace

InferenceSchedule build_schedule(ScheduleMode mode, std::size_t steps, std::size_t agents,
                                 std::size_t timesteps, int max_level) {
  require(steps >= 1, "schedule needs at least one step");
  require(agents >= 1 && timesteps >= 1, "schedule needs non-empty dims");
  require(max_level >= 1, "schedule needs K >= 1");
  require(mode != ScheduleMode::custom, "custom schedules are assembled from explicit masks");
  const Level k = static_cast<Level>(max_level);
  InferenceSchedule s;
  s.mode = mode;
  s.max_level = max_level;
  if (mode == ScheduleMode::one_step) {
    require(steps == 1, "one_step schedule has exactly one step");
  }
  s.masks.push_back(NoiseMask::filled(agents, timesteps, k));
  for (std::size_t remaining = steps - 1; remaining >= 1; --remaining) {
    NoiseMask m = NoiseMask::filled(agents, timesteps, 0);
    for (std::size_t a = 0; a < agents; ++a) {
      for (std::size_t t = 0; t < timesteps; ++t) {
        const std::size_t pos = mode == ScheduleMode::temporal ? t : a;
        const std::size_t len = mode == ScheduleMode::temporal ? timesteps : agents;
        const std::size_t block = pos * steps / len + 1;
        m.set(a, t, ramp_level(block, steps, remaining, max_level));
      }
    }
    s.masks.push_back(std::move(m));
  }
  s.masks.push_back(NoiseMask::filled(agents, timesteps, 0));
  return s;
}

NoiseMask compose_guidance(const NoiseMask& m, const NoiseMask& g, const AlphaSchedule& sched) {
  require(m.agents == g.agents && m.steps == g.steps, "compose_guidance: shape mismatch");
  NoiseMask out = m;
  for (std::size_t i = 0; i < m.levels.size(); ++i) {
    if (sched.alpha(g.levels[i]) < sched.alpha(m.levels[i])) out.levels[i] = g.levels[i];
  }
  return out;
}

NoiseMask guidance_mask(std::size_t agents, std::size_t steps, const std::vector<std::size_t>& targets) {
  NoiseMask g = NoiseMask::filled(agents, steps, 0);
  for (std::size_t a : targets) {
    require(a < agents, "guidance target out of range");
    for (std::size_t t = 0; t < steps; ++t) g.set(a, t, kGuidance);
  }
  return g;
}

bool schedule_is_valid(const InferenceSchedule& s, const AlphaSchedule& sched) {
  if (s.masks.size() < 2) return false;
  const NoiseMask& first = s.masks.front();
  for (const NoiseMask& m : s.masks) {
    if (m.agents != first.agents || m.steps != first.steps) return false;
    for (Level l : m.levels) {
      if (!sched.valid(l)) return false;
    }
  }
  for (Level l : s.masks.back().levels) {
    if (l != 0) return false;
  }
  for (std::size_t i = 1; i < s.masks.size(); ++i) {
    for (std::size_t p = 0; p < first.levels.size(); ++p) {
      if (sched.alpha(s.masks[i].levels[p]) < sched.alpha(s.masks[i - 1].levels[p])) return false;
    }
  }
  return true;
}

std::string dump_schedule(const InferenceSchedule& s) {
  std::ostringstream os;
  const std::size_t agents = s.masks.empty() ? 0 : s.masks[0].agents;
  const std::size_t steps = s.masks.empty() ? 0 : s.masks[0].steps;
  os << "# mdg schedule mode=" << to_string(s.mode) << " steps=" << s.steps() << " agents=" << agents
     << " timesteps=" << steps << " K=" << s.max_level << '\n';
  for (std::size_t i = 0; i < s.masks.size(); ++i) {
    const NoiseMask& m = s.masks[i];
    os << "step " << (s.masks.size() - 1 - i) << '\n';
    for (std::size_t a = 0; a < m.agents; ++a) {
      for (std::size_t t = 0; t < m.steps; ++t) {
        const Level l = m.at(a, t);
        if (t) os << ' ';
        if (l == kGuidance) {
          os << 'g';
        } else {
          os << static_cast<int>(l);
        }
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace mdg::noise
