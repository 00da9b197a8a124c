#pragma once

// Losses, optimizer, learning-rate schedule and the training loop.

#include <functional>
#include <string>
#include <vector>

#include "mdg/context.hpp"
#include "mdg/scene_model.hpp"
#include "mdg/synthworld.hpp"

namespace mdg {

enum class MaskMode { adaptive, random };
const char* to_string(MaskMode m);
MaskMode parse_mask_mode(const std::string& s);

struct TrainConfig {
  double lambda = 5.0;
  double lr = 2e-4;
  std::size_t warmup = 1000;
  std::size_t decay_every = 2000;
  double decay = 0.98;
  double clip = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t epochs = 5;
  std::size_t batch = 8;
  MaskMode mask_mode = MaskMode::adaptive;
  double perturb = 0.0;  // ego state perturbation magnitude, 0 disables
  std::size_t checkpoint_every = 0;  // epochs, 0 = only at the end
  std::uint64_t seed = 1;

  static TrainConfig from_config(const KeyValueConfig& kv);
  void write_to(KeyValueConfig& kv) const;
  void validate() const;
};

// Linear warmup to cfg.lr over cfg.warmup steps, then stepwise decay.
// `step` counts optimizer updates from 1.
double learning_rate(const TrainConfig& cfg, std::size_t step);

// MSE over valid cells of (x, y, sin, cos, vx, vy). pred and gt are [N, T, 5].
inline constexpr std::size_t kLossChannels = 6;
Tensor denoising_loss(const Tensor& pred, const Tensor& gt, const Mask& valid);
// Winner-take-all smooth-L1 on (x, y, wrapped theta). preds [N, M, T, 3].
Tensor prediction_loss(const Tensor& preds, const Tensor& gt, const Mask& valid, double beta = 1.0);
// Per agent, the modality closest to gt by summed per-step (x, y) distance.
std::vector<std::size_t> best_modalities(const Tensor& preds, const Tensor& gt, const Mask& valid);

struct LossParts {
  Tensor total;
  double denoise = 0.0;
  double prediction = 0.0;
  Tensor states_hat;  // [N, T, 5]
};

// One sample's L_d + lambda L_p for a given mask and noise draw.
LossParts sample_loss(const SceneModel& model, const Sample& s, const noise::NoiseMask& m, const Tensor& eps,
                      double lambda);

struct LossReport {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double denoise = 0.0;
  double prediction = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::vector<double> per_level;  // L_d over cells at each level 0..K, NaN if none
};

// Scales gradients so the global norm is at most max_norm. Returns the norm
// before scaling.
double clip_grad_norm(ParamStore& ps, double max_norm);
double grad_norm(const ParamStore& ps);

class AdamW {
 public:
  AdamW(const ParamStore& ps, const TrainConfig& cfg);
  void step(ParamStore& ps, double lr);

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

class Trainer {
 public:
  Trainer(SceneModel& model, const TrainConfig& cfg);

  // One optimizer update over `batch`; rng streams derive from
  // (seed, epoch, step, sample index).
  LossReport train_step(const std::vector<const Sample*>& batch, std::size_t epoch);
  std::size_t steps_done() const { return step_; }

 private:
  SceneModel& model_;
  TrainConfig cfg_;
  AdamW opt_;
  std::size_t step_ = 0;
};

struct TrainHooks {
  std::function<void(const LossReport&)> on_step;
  std::function<void(std::size_t epoch)> on_epoch_end;
};

std::vector<LossReport> train(SceneModel& model, const std::vector<world::Scenario>& data, const TrainConfig& cfg,
                              const TrainHooks& hooks = {});

// Offsets the ego's observed states by up to (0.5 m, 0.5 m, 0.1 rad) times
// `magnitude` and blends the first second of its future back onto the
// recorded one, re-fit through the dynamics.
world::Scenario perturb_augment(const world::Scenario& s, double magnitude, Rng& rng);

inline constexpr const char* kTrainLogHeader = "step,lr,L_d,L_p,total,grad_norm";
std::string train_log_line(const LossReport& r);

}  // namespace mdg
