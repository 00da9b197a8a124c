#pragma once

// Parameter registry and the small set of layers the model is built from.

#include <map>
#include <string>
#include <vector>

#include "mdg/checkpoint.hpp"
#include "mdg/rng.hpp"
#include "mdg/tensor.hpp"

namespace mdg {

class ParamStore {
 public:
  enum class Init { xavier, zeros, ones, normal_small };

  // `decay` marks tensors that receive decoupled weight decay.
  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng, bool decay);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedTensor>& entries() const { return params_; }
  bool decays(std::size_t i) const { return decay_[i]; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> decay_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  static Linear make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain, bias;

  static LayerNorm make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias); }
};

struct Mlp {
  Linear fc1, fc2;

  static Mlp make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

// MLP-Mixer over a fixed-length sequence: [B, S, in] -> max-pooled [B, D].
struct MixerEncoder {
  Linear input;
  std::vector<LayerNorm> token_norm, channel_norm;
  std::vector<Mlp> token_mlp, channel_mlp;
  LayerNorm out_norm;

  static MixerEncoder make(ParamStore& ps, const std::string& name, std::size_t seq, std::size_t in,
                           std::size_t dim, std::size_t layers, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct AttentionWeights {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static AttentionWeights make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                               Rng& rng);
};

// softmax(q (k + e)^T / sqrt(d_head)) (v + e), split into heads, then the
// output projection. q_in [B, Q, D], kv_in [B, K, D], rel broadcastable to
// [B, Q, K, D] (or null), key_keep broadcastable to [B, Q, heads, K].
Tensor relative_attention(const AttentionWeights& w, const Tensor& q_in, const Tensor& kv_in,
                          const Tensor* rel, const Mask* key_keep);

// Post-LN residual wrapper around attention followed by nothing else.
struct AttentionBlock {
  AttentionWeights attn;
  LayerNorm norm;

  static AttentionBlock make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                             Rng& rng);
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, const Tensor* rel, const Mask* key_keep) const {
    return norm(q_in + relative_attention(attn, q_in, kv_in, rel, key_keep));
  }
};

struct FeedForward {
  Mlp mlp;
  LayerNorm norm;

  static FeedForward make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return norm(x + mlp(x)); }
};

// Fixed sinusoidal features of scalar inputs: [..] -> [.., 2 * freqs.size()].
Tensor fourier_features(const Tensor& x, const std::vector<double>& freqs);
std::vector<double> geometric_frequencies(std::size_t count, double lo, double hi);
// Transformer-style position encoding rows, [count, dim].
Tensor sinusoidal_table(std::size_t count, std::size_t dim);

}  // namespace mdg
