#include "mdg/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mdg/errors.hpp"
#include "mdg/kinematics.hpp"

namespace mdg {

const char* to_string(MaskMode m) { return m == MaskMode::adaptive ? "adaptive" : "random"; }

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "adaptive") return MaskMode::adaptive;
  if (s == "random") return MaskMode::random;
  throw ContractViolation("unknown mask mode '" + s + "' (expected adaptive or random)");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  static const std::vector<std::string> keys = {"lambda", "lr", "warmup", "decay_every", "decay", "clip",
                                                "weight_decay", "beta1", "beta2", "eps", "epochs", "batch",
                                                "mask_mode", "perturb", "checkpoint_every", "seed"};
  const auto unknown = kv.unknown_keys("train.", keys);
  if (!unknown.empty()) throw ContractViolation("unknown config key " + unknown.front());
  TrainConfig c;
  auto sz = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(std::string("train.") + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractViolation(std::string("train.") + k + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.lambda = kv.get_double("train.lambda", c.lambda);
  c.lr = kv.get_double("train.lr", c.lr);
  c.warmup = sz("warmup", c.warmup);
  c.decay_every = sz("decay_every", c.decay_every);
  c.decay = kv.get_double("train.decay", c.decay);
  c.clip = kv.get_double("train.clip", c.clip);
  c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.eps = kv.get_double("train.eps", c.eps);
  c.epochs = sz("epochs", c.epochs);
  c.batch = sz("batch", c.batch);
  c.mask_mode = parse_mask_mode(kv.get_string("train.mask_mode", to_string(c.mask_mode)));
  c.perturb = kv.get_double("train.perturb", c.perturb);
  c.checkpoint_every = sz("checkpoint_every", c.checkpoint_every);
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(c.seed)));
  c.validate();
  return c;
}

void TrainConfig::write_to(KeyValueConfig& kv) const {
  auto d = [](double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  kv.set("train.lambda", d(lambda));
  kv.set("train.lr", d(lr));
  kv.set("train.warmup", std::to_string(warmup));
  kv.set("train.decay_every", std::to_string(decay_every));
  kv.set("train.decay", d(decay));
  kv.set("train.clip", d(clip));
  kv.set("train.weight_decay", d(weight_decay));
  kv.set("train.beta1", d(beta1));
  kv.set("train.beta2", d(beta2));
  kv.set("train.eps", d(eps));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batch", std::to_string(batch));
  kv.set("train.mask_mode", to_string(mask_mode));
  kv.set("train.perturb", d(perturb));
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.seed", std::to_string(seed));
}

void TrainConfig::validate() const {
  require(lambda > 0.0 && lr > 0.0 && clip > 0.0, "train.lambda, train.lr and train.clip must be positive");
  require(decay > 0.0 && decay <= 1.0, "train.decay must lie in (0, 1]");
  require(decay_every >= 1, "train.decay_every must be >= 1");
  require(weight_decay >= 0.0, "train.weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, "bad optimizer moments");
  require(batch >= 1, "train.batch must be >= 1");
  require(perturb >= 0.0, "train.perturb must be non-negative");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step <= cfg.warmup) {
    return cfg.warmup == 0 ? cfg.lr : cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  }
  const std::size_t k = (step - cfg.warmup) / cfg.decay_every;
  return cfg.lr * std::pow(cfg.decay, static_cast<double>(k));
}

namespace {

std::size_t count_valid(const Mask& valid) {
  return static_cast<std::size_t>(std::count(valid.keep.begin(), valid.keep.end(), std::uint8_t{1}));
}

Tensor loss_features(const Tensor& s) {
  const Tensor th = slice(s, 2, 2, 1);
  return concat({slice(s, 2, 0, 2), sin(th), cos(th), slice(s, 2, 3, 2)}, 2);
}

void check_state_pair(const Tensor& pred, const Tensor& gt, const Mask& valid) {
  require(pred.rank() == 3 && pred.dim(2) == kin::kStateDim, "loss expects [N, T, 5] states");
  require(pred.shape() == gt.shape(), "prediction " + shape_str(pred.shape()) + " vs ground truth " +
                                          shape_str(gt.shape()));
  require(valid.shape == Shape({pred.dim(0), pred.dim(1), 1}), "validity mask must be [N, T, 1]");
}

}  // namespace

Tensor denoising_loss(const Tensor& pred, const Tensor& gt, const Mask& valid) {
  check_state_pair(pred, gt, valid);
  const std::size_t cells = count_valid(valid);
  require(cells > 0, "denoising loss needs at least one valid cell");
  const Tensor d = loss_features(pred) - loss_features(gt.detach());
  return mul_scalar(sum_all(mask_multiply(square(d), valid)), 1.0 / static_cast<double>(cells * kLossChannels));
}

std::vector<std::size_t> best_modalities(const Tensor& preds, const Tensor& gt, const Mask& valid) {
  require(preds.rank() == 4 && preds.dim(3) == 3, "predictions must be [N, M, T, 3]");
  const std::size_t n = preds.dim(0), m = preds.dim(1), t = preds.dim(2);
  require(m >= 1, "need at least one modality");
  require(gt.rank() == 3 && gt.dim(0) == n && gt.dim(1) == t, "ground truth does not match predictions");
  const auto p = preds.data();
  const auto g = gt.data();
  std::vector<std::size_t> best(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      double d = 0.0;
      for (std::size_t s = 0; s < t; ++s) {
        if (!valid.keep[i * t + s]) continue;
        const double* a = p.data() + ((i * m + k) * t + s) * 3;
        const double* b = g.data() + (i * t + s) * kin::kStateDim;
        d += std::hypot(a[0] - b[0], a[1] - b[1]);
      }
      if (d < best_d) {
        best_d = d;
        best[i] = k;
      }
    }
  }
  return best;
}

Tensor prediction_loss(const Tensor& preds, const Tensor& gt, const Mask& valid, double beta) {
  const std::size_t n = preds.dim(0), m = preds.dim(1), t = preds.dim(2);
  require(valid.shape == Shape({n, t, 1}), "validity mask must be [N, T, 1]");
  const std::vector<std::size_t> best = best_modalities(preds, gt, valid);
  const std::size_t cells = count_valid(valid);
  if (cells == 0) return Tensor::zeros({});
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i * m + best[i];
  const Tensor win = index_select(reshape(preds, {n * m, t, 3}), 0, rows);  // [N, T, 3]
  const Tensor target = slice(gt.detach(), 2, 0, 3);
  const Tensor d = win - target;
  const Tensor err = concat({slice(d, 2, 0, 2), wrap_angle(slice(d, 2, 2, 1))}, 2);
  return mul_scalar(sum_all(mask_multiply(smooth_l1(err, beta), valid)), 1.0 / static_cast<double>(cells * 3));
}

LossParts sample_loss(const SceneModel& model, const Sample& s, const noise::NoiseMask& m, const Tensor& eps,
                      double lambda) {
  const ModelConfig& cfg = model.config();
  require(s.states.dim(1) == cfg.future, "sample future length " + std::to_string(s.states.dim(1)) +
                                             " does not match model.future " + std::to_string(cfg.future));
  const Tensor z = noise::mix_noise(s.actions, eps, m, cfg.alpha_schedule());
  const EncodedScene enc = model.encode(s.ctx);
  const Tensor a_hat = model.denoise(enc, s.ctx, z, m);
  for (double v : a_hat.data()) {
    if (!std::isfinite(v)) throw NumericFailure("non-finite denoiser output");
  }
  LossParts out;
  out.states_hat = kin::rollout(s.ctx.local_init(), a_hat, cfg.dt, cfg.chunk);
  const Tensor ld = denoising_loss(out.states_hat, s.states, s.valid);
  const Tensor lp = prediction_loss(model.aux_predict(enc), s.states, s.valid);
  out.total = ld + mul_scalar(lp, lambda);
  out.denoise = ld.item();
  out.prediction = lp.item();
  return out;
}

double grad_norm(const ParamStore& ps) {
  double sq = 0.0;
  for (const NamedTensor& p : ps.entries()) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParamStore& ps, double max_norm) {
  const double norm = grad_norm(ps);
  if (std::isfinite(norm) && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const NamedTensor& p : ps.entries()) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

AdamW::AdamW(const ParamStore& ps, const TrainConfig& cfg) : cfg_(cfg) {
  for (const NamedTensor& p : ps.entries()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(ParamStore& ps, double lr) {
  require(ps.entries().size() == m_.size(), "optimizer state does not match the parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Tensor p = ps.entries()[i].tensor;
    const auto g = p.grad();
    auto w = p.mutable_data();
    const double wd = ps.decays(i) ? cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * gk;
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * gk * gk;
      const double mh = m_[i][k] / c1, vh = v_[i][k] / c2;
      w[k] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + wd * w[k]);
      if (!std::isfinite(w[k])) {
        throw NumericFailure("parameter " + ps.entries()[i].name + " became non-finite at optimizer step " +
                             std::to_string(t_));
      }
    }
  }
}

Trainer::Trainer(SceneModel& model, const TrainConfig& cfg) : model_(model), cfg_(cfg), opt_(model.params(), cfg) {
  cfg_.validate();
}

namespace {

std::string mask_summary(const noise::NoiseMask& m) {
  std::string s;
  for (std::size_t i = 0; i < m.agents; ++i) {
    if (i) s += " | ";
    for (std::size_t t = 0; t < m.steps; ++t) s += std::to_string(static_cast<int>(m.at(i, t))) + (t + 1 < m.steps ? "," : "");
  }
  return s;
}

}  // namespace

LossReport Trainer::train_step(const std::vector<const Sample*>& batch, std::size_t epoch) {
  require(!batch.empty(), "train_step needs a non-empty batch");
  const ModelConfig& mc = model_.config();
  const int k_max = mc.max_level;
  ++step_;
  LossReport rep;
  rep.step = step_;
  rep.lr = learning_rate(cfg_, step_);
  ParamStore& ps = model_.params();
  ps.zero_grad();

  const std::vector<double> rates = noise::batch_mask_rates(batch.size());
  std::vector<double> level_sum(static_cast<std::size_t>(k_max) + 1, 0.0);
  std::vector<std::size_t> level_count(level_sum.size(), 0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& s = *batch[b];
    const std::size_t n = s.ctx.num_agents(), ta = mc.action_steps();
    Rng rng = Rng::stream(cfg_.seed, {epoch, step_, b});
    noise::NoiseMask m;
    if (cfg_.mask_mode == MaskMode::adaptive) {
      const noise::MaskAxis axis = rng.coin() ? noise::MaskAxis::temporal : noise::MaskAxis::agent;
      m = noise::sample_training_mask(n, ta, rates[b], axis, k_max, rng);
    } else {
      m = noise::sample_random_mask(n, ta, k_max, rng);
    }
    std::vector<double> e(n * ta * kin::kActionDim);
    for (double& x : e) x = rng.normal();
    const std::string where = " at step " + std::to_string(step_) + ", scenario " + std::to_string(s.id) +
                              " (batch slot " + std::to_string(b) + "), mask " + mask_summary(m);
    LossParts parts;
    try {
      parts = sample_loss(model_, s, m, Tensor({n, ta, kin::kActionDim}, std::move(e)), cfg_.lambda);
    } catch (const NumericFailure& err) {
      throw NumericFailure(err.what() + where);
    }
    const double total = parts.total.item();
    if (!std::isfinite(total)) throw NumericFailure("non-finite loss" + where);
    mul_scalar(parts.total, inv_b).backward();
    rep.total += total * inv_b;
    rep.denoise += parts.denoise * inv_b;
    rep.prediction += parts.prediction * inv_b;

    const auto hat = parts.states_hat.data();
    const auto gt = s.states.data();
    const std::size_t t_len = s.states.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < t_len; ++t) {
        if (!s.valid.keep[i * t_len + t]) continue;
        const double* a = hat.data() + (i * t_len + t) * kin::kStateDim;
        const double* g = gt.data() + (i * t_len + t) * kin::kStateDim;
        const double dx = a[0] - g[0], dy = a[1] - g[1];
        const double ds = std::sin(a[2]) - std::sin(g[2]), dc = std::cos(a[2]) - std::cos(g[2]);
        const double dvx = a[3] - g[3], dvy = a[4] - g[4];
        const std::size_t l = m.at(i, t / mc.chunk);
        level_sum[l] += (dx * dx + dy * dy + ds * ds + dc * dc + dvx * dvx + dvy * dvy) / kLossChannels;
        ++level_count[l];
      }
    }
  }
  rep.per_level.resize(level_sum.size());
  for (std::size_t l = 0; l < level_sum.size(); ++l) {
    rep.per_level[l] = level_count[l] ? level_sum[l] / static_cast<double>(level_count[l])
                                      : std::numeric_limits<double>::quiet_NaN();
  }
  rep.grad_norm = clip_grad_norm(ps, cfg_.clip);
  if (!std::isfinite(rep.grad_norm)) {
    throw NumericFailure("non-finite gradient norm at step " + std::to_string(step_));
  }
  opt_.step(ps, rep.lr);
  return rep;
}

std::vector<LossReport> train(SceneModel& model, const std::vector<world::Scenario>& data, const TrainConfig& cfg,
                              const TrainHooks& hooks) {
  require(!data.empty(), "training needs at least one scenario");
  const bool with_route = model.config().use_route;
  std::vector<Sample> samples;
  samples.reserve(data.size());
  for (const world::Scenario& s : data) samples.push_back(make_sample(s, with_route));

  Trainer trainer(model, cfg);
  std::vector<LossReport> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::stream(cfg.seed, {epoch, 0x5fu});
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      if (cfg.perturb > 0.0) {
        augmented.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
          Rng aug = Rng::stream(cfg.seed, {epoch, start, k, 0xa06u});
          augmented.push_back(make_sample(perturb_augment(data[order[k]], cfg.perturb, aug), with_route));
        }
        for (const Sample& s : augmented) batch.push_back(&s);
      } else {
        for (std::size_t k = start; k < end; ++k) batch.push_back(&samples[order[k]]);
      }
      log.push_back(trainer.train_step(batch, epoch));
      if (hooks.on_step) hooks.on_step(log.back());
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
  }
  return log;
}

world::Scenario perturb_augment(const world::Scenario& s, double magnitude, Rng& rng) {
  require(magnitude >= 0.0, "perturbation magnitude must be non-negative");
  if (magnitude == 0.0) return s;
  world::Scenario out = s;
  world::Agent& ego = out.agents.at(out.ego);
  const double dx = magnitude * rng.uniform(-0.5, 0.5);
  const double dy = magnitude * rng.uniform(-0.5, 0.5);
  const double dth = magnitude * rng.uniform(-0.1, 0.1);
  const double c = std::cos(dth), sn = std::sin(dth);
  for (kin::StateRow& r : ego.history) {
    r = {r.x + dx, r.y + dy, kin::wrap_angle(r.theta + dth), c * r.vx - sn * r.vy, sn * r.vx + c * r.vy};
  }
  // Blend the first second of the future from the offset back to the record.
  const std::size_t blend = std::min(ego.future.size(), static_cast<std::size_t>(std::lround(1.0 / s.dt)));
  std::vector<kin::StateRow> target = ego.future;
  for (std::size_t k = 0; k < blend; ++k) {
    const double w = 1.0 - static_cast<double>(k + 1) / static_cast<double>(blend);
    kin::StateRow& r = target[k];
    r.x += w * dx;
    r.y += w * dy;
    r.theta = kin::wrap_angle(r.theta + w * dth);
  }
  const kin::AgentState init = ego.current();
  const auto actions = kin::inverse_dynamics_agent(target, init, s.dt);
  ego.future = kin::rollout_agent(init, actions, s.dt);
  return out;
}

std::string train_log_line(const LossReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.lr << ',' << r.denoise << ',' << r.prediction << ',' << r.total << ',' << r.grad_norm;
  return os.str();
}

}  // namespace mdg
