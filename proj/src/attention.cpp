#include "cstt/attention.hpp"

#include <cmath>

namespace cstt {

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale,
                            bool value_residual, std::span<const std::uint8_t> keep,
                            Tensor* weights_out) {
  if (k.shape() != v.shape()) {
    throw ShapeError("attention: key " + to_string(k.shape()) + " and value " +
                     to_string(v.shape()) + " differ");
  }
  if (q.rank() != k.rank() || q.dim(-1) != k.dim(-1)) {
    throw ShapeError("attention: query " + to_string(q.shape()) + " incompatible with key " +
                     to_string(k.shape()));
  }
  Tensor logits = cstt::scale(matmul(q, transpose(k)), scale);
  Tensor weights = keep.empty() ? softmax(logits, -1) : masked_softmax(logits, keep);
  if (weights_out != nullptr) *weights_out = weights.detach();
  Tensor out = matmul(weights, v);
  if (value_residual) {
    if (q.dim(-2) != k.dim(-2)) {
      throw ShapeError("attention: value residual needs L_q == L_k, got " +
                       to_string(q.shape()) + " vs " + to_string(k.shape()));
    }
    out = add(out, v);
  }
  return out;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               bool with_bias)
    : weight(store.create(name + ".weight", {in, out}, Init::FanIn)) {
  if (with_bias) bias = store.create(name + ".bias", {out}, Init::Zeros);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias ? add(y, bias) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t width)
    : gamma(store.create(name + ".gamma", {width}, Init::Ones)),
      beta(store.create(name + ".beta", {width}, Init::Zeros)) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       std::size_t width_, std::size_t heads_)
    : width(width_), heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  w_q = store.create(name + ".w_q", {width, width}, Init::FanIn);
  w_k = store.create(name + ".w_k", {width, width}, Init::FanIn);
  w_v = store.create(name + ".w_v", {width, width}, Init::FanIn);
  w_o = store.create(name + ".w_o", {width, width}, Init::FanIn);
}

namespace {

// [G, L, D] -> [G, H, L, D/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t g = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (heads == 1) return reshape(x, {g, 1, l, d});
  return permute(reshape(x, {g, l, heads, d / heads}), {0, 2, 1, 3});
}

// [G, H, L, Dh] -> [G, L, H*Dh]
Tensor merge_heads(const Tensor& x) {
  const std::size_t g = x.dim(0), h = x.dim(1), l = x.dim(2), dh = x.dim(3);
  if (h == 1) return reshape(x, {g, l, dh});
  return reshape(permute(x, {0, 2, 1, 3}), {g, l, h * dh});
}

}  // namespace

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      const AttentionOptions& opts) const {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3) {
    throw ShapeError("multi-head attention expects [G,L,D] inputs, got " +
                     to_string(query.shape()) + ", " + to_string(key.shape()) + ", " +
                     to_string(value.shape()));
  }
  if (query.dim(2) != width || key.dim(2) != width || value.dim(2) != width ||
      query.dim(0) != key.dim(0) || key.shape() != value.shape()) {
    throw ShapeError("multi-head attention: shapes " + to_string(query.shape()) + ", " +
                     to_string(key.shape()) + ", " + to_string(value.shape()) +
                     " do not fit width " + std::to_string(width));
  }
  const std::size_t g = query.dim(0);
  const std::size_t lq = query.dim(1);
  const std::size_t lk = key.dim(1);

  Tensor q = split_heads(matmul(query, w_q), heads);
  Tensor k = split_heads(matmul(key, w_k), heads);
  Tensor v = split_heads(matmul(value, w_v), heads);

  std::vector<std::uint8_t> expanded;
  std::span<const std::uint8_t> keep;
  if (!opts.keep.empty()) {
    if (opts.keep.size() != g * lq * lk) {
      throw ShapeError("multi-head attention: mask size does not match [G,Lq,Lk]");
    }
    if (heads == 1) {
      keep = opts.keep;
    } else {
      expanded.resize(g * heads * lq * lk);
      const std::size_t block = lq * lk;
      for (std::size_t gi = 0; gi < g; ++gi)
        for (std::size_t h = 0; h < heads; ++h)
          std::copy_n(opts.keep.data() + gi * block, block,
                      expanded.data() + (gi * heads + h) * block);
      keep = expanded;
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  Tensor heads_out =
      scaled_dot_attention(q, k, v, scale, opts.value_residual, keep, opts.weights_out);
  return matmul(merge_heads(heads_out), w_o);
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::size_t width,
                         std::size_t hidden)
    : in(store, name + ".in", width, hidden), out(store, name + ".out", hidden, width) {}

Tensor FeedForward::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return out(ctx.drop(relu(in(x))));
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, std::size_t width,
                           std::size_t heads, std::size_t hidden)
    : norm_attn(store, name + ".norm_attn", width),
      attn(store, name + ".attn", width, heads),
      norm_ffn(store, name + ".norm_ffn", width),
      ffn(store, name + ".ffn", width, hidden) {}

Tensor EncoderLayer::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = norm_attn(x);
  AttentionOptions opts;
  opts.value_residual = true;
  Tensor a = ctx.drop(attn(h, h, h, opts));
  return feed_forward_block(a, ctx);
}

Tensor EncoderLayer::feed_forward_block(const Tensor& attended, const ForwardContext& ctx) const {
  return add(attended, ctx.drop(ffn(norm_ffn(attended), ctx)));
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& name, std::size_t width,
                           std::size_t heads, std::size_t hidden, bool self_attention)
    : has_self_attention(self_attention) {
  if (self_attention) {
    norm_self = LayerNorm(store, name + ".norm_self", width);
    self_attn = MultiHeadAttention(store, name + ".self_attn", width, heads);
  }
  norm_cross = LayerNorm(store, name + ".norm_cross", width);
  cross_attn = MultiHeadAttention(store, name + ".cross_attn", width, heads);
  norm_ffn = LayerNorm(store, name + ".norm_ffn", width);
  ffn = FeedForward(store, name + ".ffn", width, hidden);
}

Tensor DecoderLayer::operator()(const Tensor& query, const Tensor& memory,
                                const ForwardContext& ctx) const {
  if (!memory.defined() || memory.rank() != 3) {
    throw ContractError("decoder: memory must be a non-empty [G,L,D] tensor");
  }
  Tensor x = query;
  if (has_self_attention) {
    Tensor h = norm_self(x);
    AttentionOptions self_opts;
    self_opts.value_residual = true;
    x = ctx.drop(self_attn(h, h, h, self_opts));
  }
  Tensor a = add(x, ctx.drop(cross_attn(norm_cross(x), memory, memory)));
  return add(a, ctx.drop(ffn(norm_ffn(a), ctx)));
}

}  // namespace cstt
