#include "mdg/scene_model.hpp"

#include <charconv>
#include <cmath>

#include "mdg/errors.hpp"
#include "mdg/kinematics.hpp"

namespace mdg {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = {
      "d_model", "heads", "encoder_layers", "denoiser_blocks", "mixer_layers", "modalities", "fourier", "max_level",
      "guidance_alpha", "max_agents", "history", "future", "chunk", "dt", "use_route", "seed"};
  return keys;
}

constexpr std::size_t kAgentInput = 10;
constexpr std::size_t kPolylineInput = 4;
constexpr std::size_t kDenoiserInput = 8;
constexpr std::size_t kLightPhases = 4;
constexpr double kPosScale = 10.0;

}  // namespace

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d_model = 256;
  c.heads = 8;
  c.encoder_layers = 6;
  c.denoiser_blocks = 2;
  c.max_agents = 128;
  c.history = 11;
  c.future = 80;
  return c;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
  const auto unknown = kv.unknown_keys("model.", model_keys());
  if (!unknown.empty()) throw ContractViolation("unknown config key " + unknown.front());
  ModelConfig c;
  auto sz = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(std::string("model.") + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractViolation(std::string("model.") + k + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.d_model = sz("d_model", c.d_model);
  c.heads = sz("heads", c.heads);
  c.encoder_layers = sz("encoder_layers", c.encoder_layers);
  c.denoiser_blocks = sz("denoiser_blocks", c.denoiser_blocks);
  c.mixer_layers = sz("mixer_layers", c.mixer_layers);
  c.modalities = sz("modalities", c.modalities);
  c.fourier = sz("fourier", c.fourier);
  c.max_level = static_cast<int>(kv.get_int("model.max_level", c.max_level));
  c.guidance_alpha = kv.get_double("model.guidance_alpha", c.guidance_alpha);
  c.max_agents = sz("max_agents", c.max_agents);
  c.history = sz("history", c.history);
  c.future = sz("future", c.future);
  c.chunk = sz("chunk", c.chunk);
  c.dt = kv.get_double("model.dt", c.dt);
  c.use_route = kv.get_bool("model.use_route", c.use_route);
  c.seed = static_cast<std::uint64_t>(kv.get_int("model.seed", static_cast<long long>(c.seed)));
  c.validate();
  return c;
}

void ModelConfig::write_to(KeyValueConfig& kv) const {
  kv.set("model.d_model", std::to_string(d_model));
  kv.set("model.heads", std::to_string(heads));
  kv.set("model.encoder_layers", std::to_string(encoder_layers));
  kv.set("model.denoiser_blocks", std::to_string(denoiser_blocks));
  kv.set("model.mixer_layers", std::to_string(mixer_layers));
  kv.set("model.modalities", std::to_string(modalities));
  kv.set("model.fourier", std::to_string(fourier));
  kv.set("model.max_level", std::to_string(max_level));
  kv.set("model.guidance_alpha", fmt_double(guidance_alpha));
  kv.set("model.max_agents", std::to_string(max_agents));
  kv.set("model.history", std::to_string(history));
  kv.set("model.future", std::to_string(future));
  kv.set("model.chunk", std::to_string(chunk));
  kv.set("model.dt", fmt_double(dt));
  kv.set("model.use_route", use_route ? "true" : "false");
  kv.set("model.seed", std::to_string(seed));
}

std::string ModelConfig::to_text() const {
  KeyValueConfig kv;
  write_to(kv);
  return kv.to_text();
}

void ModelConfig::validate() const {
  require(d_model >= 2 && heads >= 1 && d_model % heads == 0, "model.d_model must divide into model.heads");
  require(modalities >= 1, "model.modalities must be >= 1");
  require(fourier >= 1, "model.fourier must be >= 1");
  require(max_level >= 1 && max_level < 255, "model.max_level must lie in 1..254");
  require(history >= 1 && future >= 1 && chunk >= 1, "model dims must be positive");
  require(future % chunk == 0, "model.future must be a multiple of model.chunk");
  require(chunk == kin::kChunk, "model.chunk must equal the dynamics chunk (2)");
  require(dt > 0.0, "model.dt must be positive");
}

std::array<double, 4> raw_relation(const geo::Pose& i, const geo::Pose& j) {
  const geo::Pose l = geo::to_local(i, j);
  const double dist = std::hypot(j.x - i.x, j.y - i.y);
  if (dist == 0.0 && l.theta == 0.0) return {kSelfRelation, kSelfRelation, kSelfRelation, kSelfRelation};
  return {l.x, l.y, l.theta, dist};
}

double relation_bearing(const geo::Pose& i, const geo::Pose& j) { return std::atan2(j.y - i.y, j.x - i.x); }

std::size_t level_slot(noise::Level l, int max_level) {
  if (l == noise::kGuidance) return static_cast<std::size_t>(max_level) + 1;
  require(l <= max_level, "mask level out of range");
  return l;
}

SceneModel::SceneModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, {0x5ce7e}));
  const std::size_t d = cfg_.d_model;
  freqs_ = geometric_frequencies(cfg_.fourier, 1.0 / 200.0, 2.0);
  relation_mlp_ = Mlp::make(params_, "rel", 4 * 2 * cfg_.fourier, d, d, rng);
  agent_enc_ = MixerEncoder::make(params_, "enc.agent", cfg_.history, kAgentInput, d, cfg_.mixer_layers, rng);
  map_enc_ = MixerEncoder::make(params_, "enc.map", world::kWaypoints, kPolylineInput, d, cfg_.mixer_layers, rng);
  route_enc_ = MixerEncoder::make(params_, "enc.route", world::kWaypoints, kPolylineInput, d, cfg_.mixer_layers, rng);
  light_table_ = params_.add("enc.light", {kLightPhases, d}, ParamStore::Init::normal_small, rng, false);
  ego_route_fuse_ = Linear::make(params_, "enc.ego_route", 2 * d, d, rng);
  for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "enc.layer" + std::to_string(l);
    enc_attn_.push_back(AttentionBlock::make(params_, p + ".attn", d, cfg_.heads, rng));
    enc_ff_.push_back(FeedForward::make(params_, p + ".ff", d, rng));
  }
  aux_head_ = Mlp::make(params_, "aux", d, 2 * d, cfg_.modalities * cfg_.future * 3, rng);

  const std::size_t slots = static_cast<std::size_t>(cfg_.max_level) + 2;
  den_in_ = Mlp::make(params_, "den.in", kDenoiserInput, d, d, rng);
  level_table_ = params_.add("den.level", {slots, d}, ParamStore::Init::normal_small, rng, false);
  // Output = gate(l) * MLP + skip(l) * z, starting from sqrt(1 - a) and sqrt(a).
  level_skip_ = params_.add("den.skip", {slots}, ParamStore::Init::zeros, rng, false);
  level_gate_ = params_.add("den.gate", {slots}, ParamStore::Init::zeros, rng, false);
  const noise::AlphaSchedule sched = cfg_.alpha_schedule();
  for (std::size_t s = 0; s < slots; ++s) {
    const noise::Level l = s + 1 == slots ? noise::kGuidance : static_cast<noise::Level>(s);
    level_skip_.mutable_data()[s] = std::sqrt(sched.alpha(l));
    level_gate_.mutable_data()[s] = std::sqrt(1.0 - sched.alpha(l));
  }
  alpha_proj_ = Linear::make(params_, "den.alpha", 2 * cfg_.fourier, d, rng);
  time_table_ = sinusoidal_table(cfg_.action_steps(), d);
  for (std::size_t b = 0; b < cfg_.denoiser_blocks; ++b) {
    const std::string p = "den.block" + std::to_string(b);
    blocks_.push_back({AttentionBlock::make(params_, p + ".temporal", d, cfg_.heads, rng),
                       AttentionBlock::make(params_, p + ".agents", d, cfg_.heads, rng),
                       AttentionBlock::make(params_, p + ".scene", d, cfg_.heads, rng),
                       AttentionBlock::make(params_, p + ".route", d, cfg_.heads, rng),
                       FeedForward::make(params_, p + ".ff", d, rng)});
  }
  den_out_ = Mlp::make(params_, "den.out", d, d, kin::kActionDim, rng);
}

std::vector<geo::Pose> SceneModel::entity_poses(const SceneContext& ctx) const {
  std::vector<geo::Pose> p;
  p.insert(p.end(), ctx.agent_pose.begin(), ctx.agent_pose.end());
  p.insert(p.end(), ctx.map_pose.begin(), ctx.map_pose.end());
  p.insert(p.end(), ctx.light_pose.begin(), ctx.light_pose.end());
  if (cfg_.use_route) p.insert(p.end(), ctx.route_pose.begin(), ctx.route_pose.end());
  return p;
}

Tensor SceneModel::encode_relations(const std::vector<geo::Pose>& poses) const {
  const std::size_t e = poses.size();
  std::vector<double> raw;
  raw.reserve(e * e * 4);
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < e; ++j) {
      const auto r = raw_relation(poses[i], poses[j]);
      raw.insert(raw.end(), r.begin(), r.end());
    }
  }
  const Tensor ff = fourier_features(Tensor({e, e, 4}, std::move(raw)), freqs_);  // [E, E, 4, 2F]
  return relation_mlp_(reshape(ff, {e, e, 4 * 2 * cfg_.fourier}));
}

namespace {

Tensor polyline_features(const Tensor& pts) {
  const std::size_t n = pts.dim(0), w = pts.dim(1);
  std::vector<double> f;
  f.reserve(n * w * kPolylineInput);
  const auto v = pts.data();
  for (std::size_t i = 0; i < n * w; ++i) {
    const double* p = v.data() + 3 * i;
    f.insert(f.end(), {p[0] / kPosScale, p[1] / kPosScale, std::cos(p[2]), std::sin(p[2])});
  }
  return Tensor({n, w, kPolylineInput}, std::move(f));
}

Mask keep_mask(const std::vector<std::uint8_t>& keep) {
  return Mask{{1, 1, 1, keep.size()}, keep};
}

}  // namespace

EncodedScene SceneModel::encode(const SceneContext& ctx) const {
  const std::size_t n = ctx.num_agents();
  require(n >= 1, "encode_scene needs at least one agent");
  require(n <= cfg_.max_agents, "scene has " + std::to_string(n) + " agents, model.max_agents is " +
                                     std::to_string(cfg_.max_agents));
  require(ctx.agent_history.rank() == 3 && ctx.agent_history.dim(1) == cfg_.history,
          "agent history length does not match model.history");
  bool any_valid = false;
  for (auto v : ctx.agent_valid) any_valid = any_valid || v;
  require(any_valid, "encode_scene needs at least one valid agent");

  EncodedScene out;
  out.n_agents = n;
  out.n_map = ctx.num_map();
  out.n_lights = ctx.num_lights();
  out.n_route = cfg_.use_route ? ctx.num_route() : 0;

  // Agent tokens.
  std::vector<double> af;
  af.reserve(n * cfg_.history * kAgentInput);
  const auto hv = ctx.agent_history.data();
  for (std::size_t i = 0; i < n; ++i) {
    const bool ped = ctx.agent_type[i] == world::AgentType::pedestrian;
    for (std::size_t k = 0; k < cfg_.history; ++k) {
      const double* p = hv.data() + (i * cfg_.history + k) * kAgentFeatures;
      af.insert(af.end(), {p[0] / kPosScale, p[1] / kPosScale, std::cos(p[2]), std::sin(p[2]), p[3] / kPosScale,
                           p[4] / kPosScale, p[5] / 5.0, p[6] / 2.0, ped ? 0.0 : 1.0, ped ? 1.0 : 0.0});
    }
  }
  Tensor agents = agent_enc_(Tensor({n, cfg_.history, kAgentInput}, std::move(af)));

  std::vector<Tensor> parts;
  Tensor route;
  if (out.n_route > 0) {
    route = route_enc_(polyline_features(ctx.route_points));
    const Tensor pooled = max_axis(route, 0, true);
    const Tensor ego_tok = ego_route_fuse_(concat({slice(agents, 0, ctx.ego, 1), pooled}, 1));
    std::vector<Tensor> rows;
    if (ctx.ego > 0) rows.push_back(slice(agents, 0, 0, ctx.ego));
    rows.push_back(ego_tok);
    if (ctx.ego + 1 < n) rows.push_back(slice(agents, 0, ctx.ego + 1, n - ctx.ego - 1));
    agents = rows.size() == 1 ? rows[0] : concat(rows, 0);
  }
  parts.push_back(agents);
  if (out.n_map > 0) parts.push_back(map_enc_(polyline_features(ctx.map_points)));
  if (out.n_lights > 0) {
    std::vector<std::size_t> idx;
    for (auto ph : ctx.light_phase) idx.push_back(static_cast<std::size_t>(ph));
    parts.push_back(index_select(light_table_, 0, idx));
  }
  if (out.n_route > 0) parts.push_back(route);
  Tensor tokens = parts.size() == 1 ? parts[0] : concat(parts, 0);
  const std::size_t e = out.entities();
  const std::size_t d = cfg_.d_model;

  out.relations = encode_relations(entity_poses(ctx));
  std::vector<std::uint8_t> keep(e, 1);
  for (std::size_t i = 0; i < n; ++i) keep[i] = ctx.agent_valid[i];
  out.key_keep = keep_mask(keep);

  Tensor t = reshape(tokens, {1, e, d});
  const Tensor rel = reshape(out.relations, {1, e, e, d});
  for (std::size_t l = 0; l < enc_attn_.size(); ++l) {
    t = enc_attn_[l](t, t, &rel, &out.key_keep);
    t = enc_ff_[l](t);
  }
  out.tokens = reshape(t, {e, d});
  out.agents = slice(out.tokens, 0, 0, n);
  return out;
}

Tensor SceneModel::aux_predict(const EncodedScene& enc) const {
  const std::size_t n = enc.n_agents;
  const Tensor raw = reshape(aux_head_(enc.agents), {n, cfg_.modalities, cfg_.future, 3});
  return raw * Tensor({3}, {kPosScale, kPosScale, 1.0});
}

Tensor SceneModel::denoise(const EncodedScene& enc, const SceneContext& ctx, const Tensor& z,
                           const noise::NoiseMask& m) const {
  const std::size_t n = enc.n_agents;
  const std::size_t ta = cfg_.action_steps();
  const std::size_t d = cfg_.d_model;
  require(z.rank() == 3 && z.dim(0) == n && z.dim(1) == ta && z.dim(2) == kin::kActionDim,
          "denoise: z must be [" + std::to_string(n) + ", " + std::to_string(ta) + ", 2], got " +
              shape_str(z.shape()));
  require(m.agents == n && m.steps == ta, "denoise: mask shape does not match z");
  require(ctx.num_agents() == n, "denoise: context does not match the encoded scene");

  // Noised states at chunk ends, each agent in its own frame.
  const Tensor zd = z.detach();
  Tensor states;
  {
    NoGradGuard ng;
    states = kin::rollout(ctx.local_init(), zd, cfg_.dt, cfg_.chunk);
  }
  std::vector<double> feat;
  feat.reserve(n * ta * kDenoiserInput);
  std::vector<std::size_t> slots;
  slots.reserve(n * ta);
  std::vector<double> alphas;
  alphas.reserve(n * ta);
  const noise::AlphaSchedule sched = cfg_.alpha_schedule();
  const auto sv = states.data();
  const auto zv = zd.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ta; ++c) {
      const std::size_t t = c * cfg_.chunk + cfg_.chunk - 1;
      const double* s = sv.data() + (i * cfg_.future + t) * kin::kStateDim;
      const double* a = zv.data() + (i * ta + c) * kin::kActionDim;
      feat.insert(feat.end(), {s[0] / kPosScale, s[1] / kPosScale, std::cos(s[2]), std::sin(s[2]), s[3] / kPosScale,
                               s[4] / kPosScale, a[0], a[1]});
      const noise::Level l = m.at(i, c);
      slots.push_back(level_slot(l, cfg_.max_level));
      alphas.push_back(sched.alpha(l));
    }
  }

  Tensor h = den_in_(Tensor({n, ta, kDenoiserInput}, std::move(feat)));
  h = h + reshape(index_select(level_table_, 0, slots), {n, ta, d});
  h = h + alpha_proj_(fourier_features(Tensor({n, ta}, alphas), geometric_frequencies(cfg_.fourier, 0.25, 8.0)));
  h = h + time_table_;

  const std::size_t e = enc.entities();
  const Tensor kv_scene = reshape(enc.tokens, {1, e, d});
  const Tensor rel_agents = reshape(slice(slice(enc.relations, 0, 0, n), 1, 0, n), {1, n, n, d});
  const Tensor rel_scene = reshape(slice(enc.relations, 0, 0, n), {n, 1, e, d});
  Mask agent_keep{{1, 1, 1, n}, ctx.agent_valid};

  for (const DenoiserBlock& b : blocks_) {
    h = b.temporal(h, h, nullptr, nullptr);
    Tensor hp = permute(h, {1, 0, 2});  // [T_a, N, D]
    hp = b.inter_agent(hp, hp, &rel_agents, &agent_keep);
    h = permute(hp, {1, 0, 2});
    h = b.scene(h, kv_scene, &rel_scene, &enc.key_keep);
    if (enc.n_route > 0) {
      const std::size_t ego = ctx.ego;
      const std::size_t r0 = enc.route_offset();
      const Tensor kv_route = reshape(slice(enc.tokens, 0, r0, enc.n_route), {1, enc.n_route, d});
      const Tensor rel_route =
          reshape(slice(slice(enc.relations, 0, ego, 1), 1, r0, enc.n_route), {1, 1, enc.n_route, d});
      const Tensor he = b.route(slice(h, 0, ego, 1), kv_route, &rel_route, nullptr);
      std::vector<Tensor> rows;
      if (ego > 0) rows.push_back(slice(h, 0, 0, ego));
      rows.push_back(he);
      if (ego + 1 < n) rows.push_back(slice(h, 0, ego + 1, n - ego - 1));
      h = rows.size() == 1 ? rows[0] : concat(rows, 0);
    }
    h = b.ff(h);
  }
  const Tensor skip = reshape(index_select(level_skip_, 0, slots), {n, ta, 1});
  const Tensor gate = reshape(index_select(level_gate_, 0, slots), {n, ta, 1});
  return gate * den_out_(h) + skip * zd;
}

Checkpoint SceneModel::to_checkpoint() const {
  Checkpoint c;
  c.config = cfg_.to_text();
  for (const NamedTensor& p : params_.entries()) c.entries.push_back({p.name, p.tensor.detach()});
  return c;
}

void SceneModel::load(const Checkpoint& ckpt) {
  const ModelConfig other = ModelConfig::from_config(KeyValueConfig::parse(ckpt.config));
  if (!(other == cfg_)) {
    throw DataError("checkpoint model config differs from the requested model:\n--- checkpoint\n" + other.to_text() +
                    "--- model\n" + cfg_.to_text());
  }
  const auto& mine = params_.entries();
  if (ckpt.entries.size() != mine.size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.entries.size()) + " tensors, model expects " +
                    std::to_string(mine.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const NamedTensor& src = ckpt.entries[i];
    if (src.name != mine[i].name) throw DataError("checkpoint tensor " + src.name + " where " + mine[i].name + " expected");
    if (src.tensor.shape() != mine[i].tensor.shape()) {
      throw DataError("checkpoint tensor " + src.name + " has shape " + shape_str(src.tensor.shape()) + ", model needs " +
                      shape_str(mine[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    Tensor dst = mine[i].tensor;
    const auto s = ckpt.entries[i].tensor.data();
    std::copy(s.begin(), s.end(), dst.mutable_data().begin());
  }
}

SceneModel SceneModel::from_checkpoint(const Checkpoint& ckpt) {
  SceneModel m(ModelConfig::from_config(KeyValueConfig::parse(ckpt.config)));
  m.load(ckpt);
  return m;
}

}  // namespace mdg
