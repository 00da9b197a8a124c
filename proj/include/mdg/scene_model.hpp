#pragma once

// Scene encoder, auxiliary predictor and the mask-conditioned denoiser.

#include <array>
#include <string>
#include <vector>

#include "mdg/checkpoint.hpp"
#include "mdg/config.hpp"
#include "mdg/context.hpp"
#include "mdg/layers.hpp"
#include "mdg/noisefield.hpp"

namespace mdg {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t encoder_layers = 2;
  std::size_t denoiser_blocks = 1;
  std::size_t mixer_layers = 2;
  std::size_t modalities = 6;
  std::size_t fourier = 8;
  int max_level = 5;
  double guidance_alpha = 0.8;
  std::size_t max_agents = 16;
  std::size_t history = 10;
  std::size_t future = 40;
  std::size_t chunk = 2;
  double dt = 0.1;
  bool use_route = true;
  std::uint64_t seed = 1;

  std::size_t action_steps() const { return future / chunk; }
  noise::AlphaSchedule alpha_schedule() const { return noise::AlphaSchedule(max_level, guidance_alpha); }

  // The published full-size architecture, for shape tests.
  static ModelConfig full_scale();
  static ModelConfig from_config(const KeyValueConfig& kv);
  void write_to(KeyValueConfig& kv) const;
  std::string to_text() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Relation raw features of j seen from i: (dx, dy in i's frame, wrapped
// dtheta, distance). Coincident poses give the self constant on all four.
inline constexpr double kSelfRelation = 1e-3;
std::array<double, 4> raw_relation(const geo::Pose& i, const geo::Pose& j);
// Global bearing of j from i.
double relation_bearing(const geo::Pose& i, const geo::Pose& j);

struct EncodedScene {
  Tensor tokens;      // [E, D]
  Tensor agents;      // [N, D]
  Tensor relations;   // [E, E, D]
  std::size_t n_agents = 0, n_map = 0, n_lights = 0, n_route = 0;
  Mask key_keep;      // [1, 1, 1, E]

  std::size_t entities() const { return n_agents + n_map + n_lights + n_route; }
  std::size_t route_offset() const { return n_agents + n_map + n_lights; }
};

class SceneModel {
 public:
  explicit SceneModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::vector<geo::Pose> entity_poses(const SceneContext& ctx) const;
  Tensor encode_relations(const std::vector<geo::Pose>& poses) const;  // [E, E, D]
  EncodedScene encode(const SceneContext& ctx) const;
  Tensor aux_predict(const EncodedScene& enc) const;  // [N, M, T, 3] local frames
  // Clean normalized-action estimate [N, T_a, 2] from noised actions z.
  Tensor denoise(const EncodedScene& enc, const SceneContext& ctx, const Tensor& z,
                 const noise::NoiseMask& m) const;

  Checkpoint to_checkpoint() const;
  // Loads weights; refuses a checkpoint whose config or shapes differ.
  void load(const Checkpoint& ckpt);
  static SceneModel from_checkpoint(const Checkpoint& ckpt);

 private:
  struct DenoiserBlock {
    AttentionBlock temporal, inter_agent, scene, route;
    FeedForward ff;
  };

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<double> freqs_;
  Mlp relation_mlp_;
  MixerEncoder agent_enc_, map_enc_, route_enc_;
  Tensor light_table_;
  Linear ego_route_fuse_;
  std::vector<AttentionBlock> enc_attn_;
  std::vector<FeedForward> enc_ff_;
  Mlp aux_head_;
  Mlp den_in_;
  Tensor level_table_;
  Tensor level_skip_;
  Tensor level_gate_;
  Linear alpha_proj_;
  Tensor time_table_;
  std::vector<DenoiserBlock> blocks_;
  Mlp den_out_;
};

// Index of a mask level in the level embedding table (guidance maps to K + 1).
std::size_t level_slot(noise::Level l, int max_level);

}  // namespace mdg
