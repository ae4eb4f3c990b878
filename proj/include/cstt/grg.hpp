#pragma once

#include "cstt/attention.hpp"
#include "cstt/model_config.hpp"

namespace cstt {

// K attention-pooled scene tokens per frame, averaged to one token.
// Both maps are per-pixel (1x1) linear maps over the C_g channels.
struct SceneTokenizer {
  Linear attend;  // C_g -> K, no bias (a per-token constant cancels in the pixel softmax)
  Linear embed;   // C_g -> D

  SceneTokenizer() = default;
  SceneTokenizer(ParamStore& store, const std::string& name, std::size_t channels,
                 std::size_t tokens, std::size_t width);

  // scene: [B, T, C_g, P] with P = H*W pixels. Returns [B, T, D].
  Tensor operator()(const Tensor& scene) const;
  // The K tokens before pooling: [B*T, K, D]. `weights_out` receives A as [B*T, K, P].
  Tensor tokens(const Tensor& scene, Tensor* weights_out = nullptr) const;
};

struct GroupRepresentationGenerator {
  SceneTokenizer scene;
  Tensor query;  // [T, D] learned query
  DecoderLayer decoder;
  Linear fuse;
  Fusion fusion = Fusion::Sum;

  GroupRepresentationGenerator() = default;
  GroupRepresentationGenerator(ParamStore& store, const std::string& name,
                               const ModelConfig& cfg);

  Tensor scene_tokens(const Tensor& scene) const;  // [B, T, D]
  // x_i: [B, T, N, D]. Each frame's query row attends over that frame's N individuals.
  Tensor individual_token(const Tensor& x_i, const ForwardContext& ctx) const;
  Tensor fuse_tokens(const Tensor& scene_tok, const Tensor& ind_tok) const;
  // X_G^0: [B, T, D].
  Tensor operator()(const Tensor& scene, const Tensor& x_i, const ForwardContext& ctx) const;
};

// [T, D] -> [B, T, D] copy along a new batch axis (differentiable).
Tensor repeat_batch(const Tensor& x, std::size_t batch);

}  // namespace cstt
