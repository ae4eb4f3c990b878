#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cstt/context.hpp"
#include "cstt/params.hpp"
#include "cstt/tensor.hpp"

namespace cstt {

// softmax(q k^T * scale) v, plus v itself when `value_residual` is set (the
// self-attention form, which needs L_q == L_k). q is [..., L_q, d], k and v
// are [..., L_k, d]. `keep` optionally masks logits ([..., L_q, L_k], 1 =
// attend). When `weights_out` is given it receives the attention matrix.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale,
                            bool value_residual, std::span<const std::uint8_t> keep = {},
                            Tensor* weights_out = nullptr);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
};

struct AttentionOptions {
  bool value_residual = false;
  // Keep-mask shared by all heads, laid out [G, L_q, L_k].
  std::span<const std::uint8_t> keep;
  // Receives per-head weights [G, H, L_q, L_k] when set.
  Tensor* weights_out = nullptr;
};

// Multi-head attention over [G, L, D] sequences (G independent groups).
// Projections are bias-free D x D maps; logits are scaled by 1/sqrt(D).
struct MultiHeadAttention {
  Tensor w_q, w_k, w_v, w_o;
  std::size_t width = 0;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t width,
                     std::size_t heads);

  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    const AttentionOptions& opts = {}) const;
};

struct FeedForward {
  Linear in;
  Linear out;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
};

// Pre-norm encoder layer. The attention sub-block keeps the in-equation
// value residual and has no outer skip; the FFN sub-block is residual:
//   a = drop(MHA(LN1 x, LN1 x, LN1 x) with +V)
//   y = a + drop(FFN(LN2 a))
struct EncoderLayer {
  LayerNorm norm_attn;
  MultiHeadAttention attn;
  LayerNorm norm_ffn;
  FeedForward ffn;

  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
               std::size_t hidden);

  // x: [G, L, D].
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  // Output of the FFN sub-block given the attention sub-block output.
  Tensor feed_forward_block(const Tensor& attended, const ForwardContext& ctx) const;
};

// Pre-norm decoder layer: optional self-attention sub-block (encoder-style),
// cross-attention with a residual on the query stream, then residual FFN.
struct DecoderLayer {
  bool has_self_attention = false;
  LayerNorm norm_self;
  MultiHeadAttention self_attn;
  LayerNorm norm_cross;
  MultiHeadAttention cross_attn;
  LayerNorm norm_ffn;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
               std::size_t hidden, bool self_attention = false);

  // query: [G, L_q, D], memory: [G, L_m, D].
  Tensor operator()(const Tensor& query, const Tensor& memory, const ForwardContext& ctx) const;
};

}  // namespace cstt
