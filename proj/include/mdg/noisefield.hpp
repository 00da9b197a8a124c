#pragma once

// Noise-level masks over (agent, action step) and everything built on them:
// the alpha schedule, forward noising, re-noising, training-mask sampling,
// inference schedules and guidance composition.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdg/rng.hpp"
#include "mdg/tensor.hpp"

namespace mdg::noise {

using Level = std::uint8_t;
// Distinct level value for the fixed guidance noise; not an index in 0..K.
inline constexpr Level kGuidance = 255;

class AlphaSchedule {
 public:
  // Levels 1..K are linear in alpha from `alpha_first` to `alpha_last`;
  // level 0 is exactly 1. With K = 1 the single level is `alpha_last`.
  explicit AlphaSchedule(int max_level = 5, double guidance_alpha = 0.8,
                         double alpha_first = 0.99, double alpha_last = 0.01);

  int max_level() const { return max_level_; }
  double alpha(Level level) const;
  double guidance_alpha() const { return guidance_alpha_; }
  bool valid(Level level) const { return level == kGuidance || level <= max_level_; }

 private:
  int max_level_;
  double guidance_alpha_;
  std::vector<double> alpha_;
};

struct NoiseMask {
  std::size_t agents = 0;
  std::size_t steps = 0;
  std::vector<Level> levels;  // row-major [agents, steps]

  static NoiseMask filled(std::size_t agents, std::size_t steps, Level level);
  Level at(std::size_t a, std::size_t t) const { return levels[a * steps + t]; }
  void set(std::size_t a, std::size_t t, Level l) { levels[a * steps + t] = l; }
  bool operator==(const NoiseMask&) const = default;
};

struct NoisedSample {
  Tensor z;
  Tensor eps;
};

// z = sqrt(alpha(m)) x + sqrt(1 - alpha(m)) eps over x of shape [N, T_a, C].
// Positions with alpha == 1 return x bitwise.
NoisedSample apply_noise(const Tensor& x, const NoiseMask& m, const AlphaSchedule& sched, Rng& rng);
// Same formula with a caller-supplied eps (no randomness).
Tensor mix_noise(const Tensor& x, const Tensor& eps, const NoiseMask& m, const AlphaSchedule& sched);
Tensor renoise(const Tensor& x_hat, const NoiseMask& m_next, const AlphaSchedule& sched, Rng& rng);

enum class MaskAxis { temporal, agent };

NoiseMask sample_training_mask(std::size_t agents, std::size_t steps, double delta, MaskAxis axis,
                               int max_level, Rng& rng);
// Ablation: independent uniform level in 1..K at every position.
NoiseMask sample_random_mask(std::size_t agents, std::size_t steps, int max_level, Rng& rng);

std::vector<double> batch_mask_rates(std::size_t batch);

enum class ScheduleMode { one_step, temporal, agent, custom };

const char* to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(const std::string& s);

struct InferenceSchedule {
  ScheduleMode mode = ScheduleMode::one_step;
  int max_level = 5;
  // masks.front() is the starting mask, masks.back() the all-zero terminal mask.
  std::vector<NoiseMask> masks;
  std::optional<NoiseMask> guidance;

  std::size_t steps() const { return masks.empty() ? 0 : masks.size() - 1; }
};

InferenceSchedule build_schedule(ScheduleMode mode, std::size_t steps, std::size_t agents,
                                 std::size_t timesteps, int max_level);

// Elementwise noisier-of-two, ordering levels by their alpha.
NoiseMask compose_guidance(const NoiseMask& m, const NoiseMask& g, const AlphaSchedule& sched);

// Guidance mask with kGuidance on every step of the target agents.
NoiseMask guidance_mask(std::size_t agents, std::size_t steps, const std::vector<std::size_t>& targets);

// Per-position alpha never decreases along the schedule and it ends all-zero.
bool schedule_is_valid(const InferenceSchedule& s, const AlphaSchedule& sched);

std::string dump_schedule(const InferenceSchedule& s);

}  // namespace mdg::noise
