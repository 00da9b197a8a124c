#include "mdg/layers.hpp"

#include <cmath>
#include <numbers>

#include "mdg/errors.hpp"

namespace mdg {

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, Rng& rng, bool decay) {
  require(!contains(name), "duplicate parameter " + name);
  const std::size_t n = numel(shape);
  std::vector<double> v(n, 0.0);
  switch (init) {
    case Init::zeros: break;
    case Init::ones: std::fill(v.begin(), v.end(), 1.0); break;
    case Init::xavier: {
      require(shape.size() == 2, "xavier init needs a matrix");
      const double lim = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (double& x : v) x = rng.uniform(-lim, lim);
      break;
    }
    case Init::normal_small:
      for (double& x : v) x = 0.02 * rng.normal();
      break;
  }
  Tensor t(std::move(shape), std::move(v), true);
  index_[name] = params_.size();
  params_.push_back({name, t});
  decay_.push_back(decay);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter " + name);
  return params_[it->second].tensor;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return {ps.add(name + ".w", {in, out}, ParamStore::Init::xavier, rng, true),
          ps.add(name + ".b", {out}, ParamStore::Init::zeros, rng, false)};
}

Tensor Linear::operator()(const Tensor& x) const {
  const std::size_t in = w.dim(0);
  require(x.rank() >= 1 && x.shape().back() == in,
          "linear expects last dim " + std::to_string(in) + ", got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const Tensor flat = reshape(x, {x.numel() / in, in});
  return reshape(matmul(flat, w) + b, std::move(out_shape));
}

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng) {
  return {ps.add(name + ".g", {dim}, ParamStore::Init::ones, rng, false),
          ps.add(name + ".b", {dim}, ParamStore::Init::zeros, rng, false)};
}

Mlp Mlp::make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
              Rng& rng) {
  return {Linear::make(ps, name + ".fc1", in, hidden, rng), Linear::make(ps, name + ".fc2", hidden, out, rng)};
}

MixerEncoder MixerEncoder::make(ParamStore& ps, const std::string& name, std::size_t seq, std::size_t in,
                                std::size_t dim, std::size_t layers, Rng& rng) {
  MixerEncoder m;
  m.input = Linear::make(ps, name + ".in", in, dim, rng);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = name + ".mix" + std::to_string(l);
    m.token_norm.push_back(LayerNorm::make(ps, p + ".tok_norm", dim, rng));
    m.token_mlp.push_back(Mlp::make(ps, p + ".tok", seq, 2 * seq, seq, rng));
    m.channel_norm.push_back(LayerNorm::make(ps, p + ".ch_norm", dim, rng));
    m.channel_mlp.push_back(Mlp::make(ps, p + ".ch", dim, 2 * dim, dim, rng));
  }
  m.out_norm = LayerNorm::make(ps, name + ".out_norm", dim, rng);
  return m;
}

Tensor MixerEncoder::operator()(const Tensor& x) const {
  require(x.rank() == 3, "mixer input must be [B, S, F]");
  Tensor h = input(x);
  for (std::size_t l = 0; l < token_mlp.size(); ++l) {
    const Tensor t = transpose_last2(token_norm[l](h));        // [B, D, S]
    h = h + transpose_last2(token_mlp[l](t));                  // mix along S
    h = h + channel_mlp[l](channel_norm[l](h));                // mix along D
  }
  return max_axis(out_norm(h), 1);
}

AttentionWeights AttentionWeights::make(ParamStore& ps, const std::string& name, std::size_t dim,
                                        std::size_t heads, Rng& rng) {
  require(heads >= 1 && dim % heads == 0, "model dim must divide into heads");
  AttentionWeights w;
  w.q = Linear::make(ps, name + ".q", dim, dim, rng);
  w.k = Linear::make(ps, name + ".k", dim, dim, rng);
  w.v = Linear::make(ps, name + ".v", dim, dim, rng);
  w.o = Linear::make(ps, name + ".o", dim, dim, rng);
  w.heads = heads;
  return w;
}

Tensor relative_attention(const AttentionWeights& w, const Tensor& q_in, const Tensor& kv_in, const Tensor* rel,
                          const Mask* key_keep) {
  require(q_in.rank() == 3 && kv_in.rank() == 3, "attention inputs must be [B, S, D]");
  const std::size_t bq = q_in.dim(0), nq = q_in.dim(1), d = q_in.dim(2);
  const std::size_t bk = kv_in.dim(0), nk = kv_in.dim(1);
  require(kv_in.dim(2) == d, "attention query/key width mismatch");
  require(bk == bq || bk == 1, "attention batch mismatch");
  const std::size_t h = w.heads, dh = d / h;

  const Tensor q = reshape(w.q(q_in), {bq, nq, 1, h, dh});
  Tensor k = reshape(w.k(kv_in), {bk, 1, nk, d});
  Tensor v = reshape(w.v(kv_in), {bk, 1, nk, d});
  if (rel != nullptr) {
    require(rel->rank() == 4 && rel->dim(2) == nk && rel->dim(3) == d,
            "relation slice " + shape_str(rel->shape()) + " does not match keys [" + std::to_string(nk) + "]");
    require(rel->dim(1) == 1 || rel->dim(1) == nq, "relation slice does not match queries");
    k = k + *rel;
    v = v + *rel;
  }
  const std::size_t bkv = k.dim(0), qkv = k.dim(1);
  k = reshape(k, {bkv, qkv, nk, h, dh});
  v = reshape(v, {bkv, qkv, nk, h, dh});

  // scores[b, q, k, h]
  const Tensor scores = mul_scalar(sum_axis(q * k, 4), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = softmax_lastdim(permute(scores, {0, 1, 3, 2}), key_keep);  // [B, Q, H, K]
  const Tensor weights = reshape(permute(attn, {0, 1, 3, 2}), {bq, nq, nk, h, 1});
  const Tensor out = sum_axis(weights * v, 2);  // [B, Q, H, dh]
  return w.o(reshape(out, {bq, nq, d}));
}

AttentionBlock AttentionBlock::make(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                    Rng& rng) {
  return {AttentionWeights::make(ps, name + ".attn", dim, heads, rng), LayerNorm::make(ps, name + ".norm", dim, rng)};
}

FeedForward FeedForward::make(ParamStore& ps, const std::string& name, std::size_t dim, Rng& rng) {
  return {Mlp::make(ps, name + ".mlp", dim, 2 * dim, dim, rng), LayerNorm::make(ps, name + ".norm", dim, rng)};
}

Tensor fourier_features(const Tensor& x, const std::vector<double>& freqs) {
  Shape s = x.shape();
  s.push_back(1);
  std::vector<double> w(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) w[i] = 2.0 * std::numbers::pi * freqs[i];
  const Tensor phase = reshape(x, s) * Tensor({freqs.size()}, w);
  return concat({sin(phase), cos(phase)}, phase.rank() - 1);
}

std::vector<double> geometric_frequencies(std::size_t count, double lo, double hi) {
  require(count >= 1 && lo > 0.0 && hi >= lo, "bad frequency range");
  std::vector<double> f(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    f[i] = lo * std::pow(hi / lo, u);
  }
  return f;
}

Tensor sinusoidal_table(std::size_t count, std::size_t dim) {
  std::vector<double> v(count * dim);
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[p * dim + i] = i % 2 == 0 ? std::sin(static_cast<double>(p) * rate) : std::cos(static_cast<double>(p) * rate);
    }
  }
  return Tensor({count, dim}, std::move(v));
}

}  // namespace mdg
