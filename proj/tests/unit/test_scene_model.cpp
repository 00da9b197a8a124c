#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mdg/context.hpp"
#include "mdg/errors.hpp"
#include "mdg/gradcheck.hpp"
#include "mdg/scene_model.hpp"
#include "mdg/synthworld.hpp"

using namespace mdg;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.denoiser_blocks = 1;
  c.modalities = 6;
  c.future = 8;
  c.max_agents = 8;
  return c;
}

world::Scenario tiny_scenario(std::uint64_t id, world::MapKind kind = world::MapKind::intersection) {
  world::WorldConfig wc;
  wc.agents = 4;
  wc.future = 8;
  wc.kinds = {kind};
  return world::generate_scenario(wc, 11, id);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

SceneContext permute_agents(const SceneContext& c, const std::vector<std::size_t>& perm) {
  SceneContext p = c;
  p.agent_history = index_select(c.agent_history, 0, perm);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    p.agent_pose[i] = c.agent_pose[perm[i]];
    p.agent_speed[i] = c.agent_speed[perm[i]];
    p.agent_type[i] = c.agent_type[perm[i]];
    p.agent_length[i] = c.agent_length[perm[i]];
    p.agent_width[i] = c.agent_width[perm[i]];
    p.agent_valid[i] = c.agent_valid[perm[i]];
    if (perm[i] == c.ego) p.ego = i;
  }
  return p;
}

noise::NoiseMask mixed_mask(std::size_t n, std::size_t ta) {
  noise::NoiseMask m = noise::NoiseMask::filled(n, ta, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < ta; ++t) m.set(i, t, static_cast<noise::Level>((i + t) % 6));
  return m;
}

}  // namespace

TEST_CASE("raw relation geometry and the self constant") {
  const auto r = raw_relation({0, 0, 0}, {10, 0, 0});
  CHECK(r[0] == 10.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 0.0);
  CHECK(r[3] == 10.0);
  const auto s = raw_relation({3, -2, 0.7}, {3, -2, 0.7});
  for (double v : s) CHECK(v == kSelfRelation);
  // j to the left of a north-facing i
  const auto l = raw_relation({0, 0, std::numbers::pi / 2}, {-5, 0, 0});
  CHECK(l[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(l[1] == doctest::Approx(5.0));
}

TEST_CASE("raw bearings are antisymmetric") {
  const geo::Pose a{1.5, -3.0, 0.2}, b{-7.25, 4.0, 2.9};
  const double ab = relation_bearing(a, b), ba = relation_bearing(b, a);
  CHECK(std::abs(kin::wrap_angle(ab - (ba + std::numbers::pi))) < 1e-12);
}

TEST_CASE("relation table is unchanged by a dyadic translation and nearly so by rotation") {
  SceneModel model(tiny_config());
  std::vector<geo::Pose> poses = {{1.5, 2.25, 0.5}, {-4.0, 8.75, -1.0}, {12.5, -3.5, 3.0}};
  const Tensor base = model.encode_relations(poses);
  std::vector<geo::Pose> moved = poses;
  for (auto& p : moved) {
    p.x += 96.0;
    p.y += 48.0;
  }
  const Tensor shifted = model.encode_relations(moved);
  CHECK(max_abs_diff(base, shifted) == 0.0);
  std::vector<geo::Pose> rot;
  for (const auto& p : poses) rot.push_back(geo::to_global({100, 50, 0.9}, p));
  CHECK(max_abs_diff(base, model.encode_relations(rot)) < 1e-9);
}

TEST_CASE("singleton attention returns the value projection") {
  ParamStore ps;
  Rng rng(3);
  const AttentionWeights w = AttentionWeights::make(ps, "a", 8, 2, rng);
  const Tensor q = random_tensor({1, 1, 8}, 1), kv = random_tensor({1, 1, 8}, 2);
  const Tensor out = relative_attention(w, q, kv, nullptr, nullptr);
  CHECK(max_abs_diff(out, w.o(w.v(kv))) < 1e-12);
}

TEST_CASE("masked keys are excluded and a fully masked row is refused") {
  ParamStore ps;
  Rng rng(4);
  const AttentionWeights w = AttentionWeights::make(ps, "a", 8, 2, rng);
  const Tensor q = random_tensor({1, 2, 8}, 5);
  Tensor kv = random_tensor({1, 3, 8}, 6);
  const Mask keep{{1, 1, 1, 3}, {1, 0, 1}};
  const Tensor a = relative_attention(w, q, kv, nullptr, &keep);
  Tensor kv2 = kv.clone_leaf();
  for (std::size_t c = 0; c < 8; ++c) kv2.mutable_data()[8 + c] = 50.0;
  const Tensor b = relative_attention(w, q, kv2, nullptr, &keep);
  CHECK(max_abs_diff(a, b) == 0.0);
  // dropping the masked key entirely gives the same result up to roundoff
  const Tensor kv3 = index_select(kv, 1, {0, 2});
  CHECK(max_abs_diff(a, relative_attention(w, q, kv3, nullptr, nullptr)) < 1e-12);
  const Mask none{{1, 1, 1, 3}, {0, 0, 0}};
  CHECK_THROWS_AS(relative_attention(w, q, kv, nullptr, &none), ContractViolation);
}

TEST_CASE("relative attention gradients match finite differences") {
  const std::size_t d = 4;
  auto f = [&](const std::vector<Tensor>& in) {
    AttentionWeights w{{in[3], in[4]}, {in[5], in[6]}, {in[7], in[8]}, {in[9], in[10]}, 2};
    const Mask keep{{1, 1, 1, 3}, {1, 1, 0}};
    const Tensor out = relative_attention(w, in[0], in[1], &in[2], &keep);
    return sum_all(square(out) + out);
  };
  std::vector<Tensor> in = {random_tensor({2, 2, d}, 10), random_tensor({1, 3, d}, 11),
                            random_tensor({2, 2, 3, d}, 12, -0.5, 0.5)};
  for (std::uint64_t s = 0; s < 4; ++s) {
    in.push_back(random_tensor({d, d}, 20 + s, -0.7, 0.7));
    in.push_back(random_tensor({d}, 30 + s, -0.2, 0.2));
  }
  CHECK(gradcheck(f, in) < 1e-4);
}

TEST_CASE("minimal scene encodes to one token") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  const world::Scenario s = tiny_scenario(1);
  SceneContext c = make_context(s, false);
  c = permute_agents(c, {c.ego});
  c.agent_pose.resize(1);
  c.agent_speed.resize(1);
  c.agent_type.resize(1);
  c.agent_length.resize(1);
  c.agent_width.resize(1);
  c.agent_valid.resize(1);
  c.agent_history = index_select(c.agent_history, 0, {0});
  c.ego = 0;
  c.map_pose.clear();
  c.map_points = Tensor::zeros({0, world::kWaypoints, 3});
  c.light_pose.clear();
  c.light_phase.clear();
  const EncodedScene enc = model.encode(c);
  CHECK(enc.tokens.shape() == Shape{1, cfg.d_model});
  CHECK(enc.agents.shape() == Shape{1, cfg.d_model});
  const Tensor out = model.denoise(enc, c, random_tensor({1, cfg.action_steps(), 2}, 3),
                                   noise::NoiseMask::filled(1, cfg.action_steps(), 5));
  CHECK(out.shape() == Shape{1, cfg.action_steps(), 2});
}

TEST_CASE("encode refuses a scene with no valid agents") {
  SceneModel model(tiny_config());
  SceneContext c = make_context(tiny_scenario(2));
  std::fill(c.agent_valid.begin(), c.agent_valid.end(), 0);
  CHECK_THROWS_AS(model.encode(c), ContractViolation);
}

TEST_CASE("aux predictor shape, determinism and gradient flow") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  const SceneContext c = make_context(tiny_scenario(3));
  const Tensor a = model.aux_predict(model.encode(c));
  CHECK(a.shape() == Shape{c.num_agents(), 6, cfg.future, 3});
  const Tensor b = model.aux_predict(model.encode(c));
  CHECK(max_abs_diff(a, b) == 0.0);
  model.params().zero_grad();
  sum_all(square(a)).backward();
  double enc_grad = 0.0;
  for (const auto& p : model.params().entries()) {
    if (p.name.rfind("enc.agent", 0) != 0 && p.name.rfind("rel.", 0) != 0) continue;
    for (double g : p.tensor.grad()) enc_grad += g * g;
  }
  CHECK(enc_grad > 0.0);
}

TEST_CASE("paper-scale config builds the published shapes") {
  const ModelConfig cfg = ModelConfig::full_scale();
  CHECK(cfg.d_model == 256);
  CHECK(cfg.heads == 8);
  CHECK(cfg.encoder_layers == 6);
  CHECK(cfg.denoiser_blocks == 2);
  SceneModel model(cfg);
  CHECK(model.params().get("den.level").shape() == Shape{7, 256});
  CHECK(model.params().contains("enc.layer5.attn.attn.q.w"));
  CHECK(model.params().contains("den.block1.route.attn.o.w"));
  CHECK(model.params().get("aux.fc2.w").shape() == Shape{512, 6 * 80 * 3});
}

TEST_CASE("agent permutation permutes every model output") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  const SceneContext c = make_context(tiny_scenario(4));
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 8);
  const noise::NoiseMask m = mixed_mask(n, ta);
  const EncodedScene enc = model.encode(c);
  const Tensor out = model.denoise(enc, c, z, m);
  const Tensor aux = model.aux_predict(enc);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i + 2) % n;
  const SceneContext pc = permute_agents(c, perm);
  noise::NoiseMask pm = noise::NoiseMask::filled(n, ta, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < ta; ++t) pm.set(i, t, m.at(perm[i], t));
  const EncodedScene penc = model.encode(pc);
  CHECK(max_abs_diff(penc.agents, index_select(enc.agents, 0, perm)) < 1e-9);
  CHECK(max_abs_diff(model.aux_predict(penc), index_select(aux, 0, perm)) < 1e-9);
  CHECK(max_abs_diff(model.denoise(penc, pc, index_select(z, 0, perm), pm), index_select(out, 0, perm)) < 1e-9);
}

TEST_CASE("rigid transform of the scene leaves model outputs unchanged") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  const world::Scenario s = tiny_scenario(5, world::MapKind::merge);
  const SceneContext c = make_context(s);
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 9);
  const noise::NoiseMask m = mixed_mask(n, ta);
  const EncodedScene enc = model.encode(c);
  const Tensor out = model.denoise(enc, c, z, m);

  for (const geo::Pose g : {geo::Pose{100, 50, 0}, geo::Pose{-30, 12, 2.2}}) {
    const SceneContext tc = make_context(world::transform_scenario(s, g));
    const EncodedScene tenc = model.encode(tc);
    CHECK(max_abs_diff(tenc.tokens, enc.tokens) < 1e-9);
    CHECK(max_abs_diff(model.aux_predict(tenc), model.aux_predict(enc)) < 1e-9);
    CHECK(max_abs_diff(model.denoise(tenc, tc, z, m), out) < 1e-9);
  }
}

TEST_CASE("zeroed scene and route attention outputs make the denoiser map-blind") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  for (const char* name : {"den.block0.scene.attn.o.w", "den.block0.scene.attn.o.b", "den.block0.route.attn.o.w",
                           "den.block0.route.attn.o.b"}) {
    Tensor t = model.params().get(name);
    for (double& v : t.mutable_data()) v = 0.0;
  }
  const SceneContext c = make_context(tiny_scenario(6));
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 10);
  const noise::NoiseMask m = mixed_mask(n, ta);
  const Tensor a = model.denoise(model.encode(c), c, z, m);
  SceneContext other = c;
  other.map_points = random_tensor(c.map_points.shape(), 77, -20, 20);
  for (auto& ph : other.light_phase) ph = world::LightPhase::green;
  const Tensor b = model.denoise(model.encode(other), other, z, m);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("mask levels change the denoiser output") {
  const ModelConfig cfg = tiny_config();
  SceneModel model(cfg);
  const SceneContext c = make_context(tiny_scenario(7));
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 12);
  const EncodedScene enc = model.encode(c);
  const Tensor a = model.denoise(enc, c, z, noise::NoiseMask::filled(n, ta, 5));
  const Tensor b = model.denoise(enc, c, z, noise::NoiseMask::filled(n, ta, 2));
  const Tensor g = model.denoise(enc, c, z, noise::NoiseMask::filled(n, ta, noise::kGuidance));
  CHECK(max_abs_diff(a, b) > 1e-3);
  CHECK(max_abs_diff(a, g) > 1e-3);
  CHECK_THROWS_AS(model.denoise(enc, c, z, noise::NoiseMask::filled(n, ta, 6)), ContractViolation);
  CHECK_THROWS_AS(model.denoise(enc, c, random_tensor({n, ta + 1, 2}, 1), noise::NoiseMask::filled(n, ta + 1, 1)),
                  ContractViolation);
}

TEST_CASE("untrained model output is reproducible from the seed") {
  const ModelConfig cfg = tiny_config();
  const SceneContext c = make_context(tiny_scenario(8));
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 13);
  const noise::NoiseMask m = mixed_mask(n, ta);
  SceneModel a(cfg), b(cfg);
  const Tensor oa = a.denoise(a.encode(c), c, z, m);
  CHECK(max_abs_diff(oa, b.denoise(b.encode(c), c, z, m)) == 0.0);
  ModelConfig other = cfg;
  other.seed = 2;
  SceneModel d(other);
  CHECK(max_abs_diff(oa, d.denoise(d.encode(c), c, z, m)) > 0.0);
}

TEST_CASE("checkpoint round trip and mismatch refusal") {
  const ModelConfig cfg = tiny_config();
  SceneModel a(cfg);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(a.to_checkpoint()));
  SceneModel b = SceneModel::from_checkpoint(ck);
  CHECK(b.config() == cfg);
  const SceneContext c = make_context(tiny_scenario(9));
  const std::size_t n = c.num_agents(), ta = cfg.action_steps();
  const Tensor z = random_tensor({n, ta, 2}, 14);
  const noise::NoiseMask m = mixed_mask(n, ta);
  CHECK(max_abs_diff(a.denoise(a.encode(c), c, z, m), b.denoise(b.encode(c), c, z, m)) == 0.0);

  ModelConfig wide = cfg;
  wide.d_model = 32;
  SceneModel w(wide);
  CHECK_THROWS_AS(w.load(ck), DataError);
  Checkpoint broken = ck;
  broken.entries[0].tensor = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(b.load(broken), DataError);
}

TEST_CASE("model config text round trip and unknown keys") {
  ModelConfig cfg = tiny_config();
  cfg.dt = 0.1;
  cfg.guidance_alpha = 0.8;
  const ModelConfig back = ModelConfig::from_config(KeyValueConfig::parse(cfg.to_text()));
  CHECK(back == cfg);
  KeyValueConfig kv = KeyValueConfig::parse("model.d_modle=32\n");
  CHECK_THROWS_AS(ModelConfig::from_config(kv), ContractViolation);
  CHECK_THROWS_AS(ModelConfig::from_config(KeyValueConfig::parse("model.d_model=30\nmodel.heads=4\n")),
                  ContractViolation);
}
