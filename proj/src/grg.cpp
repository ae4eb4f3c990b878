#include "cstt/grg.hpp"

namespace cstt {

Tensor repeat_batch(const Tensor& x, std::size_t batch) {
  Shape shape = x.shape();
  shape.insert(shape.begin(), batch);
  return add(Tensor::zeros(shape), x);
}

SceneTokenizer::SceneTokenizer(ParamStore& store, const std::string& name, std::size_t channels,
                               std::size_t tokens, std::size_t width)
    : attend(store, name + ".attend", channels, tokens, false),
      embed(store, name + ".embed", channels, width) {}

Tensor SceneTokenizer::tokens(const Tensor& scene, Tensor* weights_out) const {
  if (scene.rank() != 4 || scene.dim(2) != attend.weight.dim(0)) {
    throw ShapeError("scene tokens expect [B,T,C_g,P] with C_g=" +
                     std::to_string(attend.weight.dim(0)) + ", got " + to_string(scene.shape()));
  }
  const std::size_t bt = scene.dim(0) * scene.dim(1);
  const std::size_t c = scene.dim(2), p = scene.dim(3);
  Tensor pixels = permute(reshape(scene, {bt, c, p}), {0, 2, 1});  // [BT, P, C_g]
  Tensor a = transpose(softmax(attend(pixels), 1));                // [BT, K, P]
  if (weights_out != nullptr) *weights_out = a.detach();
  return matmul(a, embed(pixels));  // [BT, K, D]
}

Tensor SceneTokenizer::operator()(const Tensor& scene) const {
  Tensor pooled = mean(tokens(scene), 1);  // [BT, D]
  return reshape(pooled, {scene.dim(0), scene.dim(1), pooled.dim(1)});
}

GroupRepresentationGenerator::GroupRepresentationGenerator(ParamStore& store,
                                                           const std::string& name,
                                                           const ModelConfig& cfg)
    : scene(store, name + ".scene", cfg.scene_channels, cfg.scene_tokens, cfg.width),
      query(store.create(name + ".query", {cfg.frames, cfg.width}, Init::SmallNormal)),
      decoder(store, name + ".decoder", cfg.width, cfg.heads, cfg.ffn_width(),
              cfg.decoder_self_attention),
      fuse(store, name + ".fuse", cfg.grg_fusion == Fusion::Concat ? 2 * cfg.width : cfg.width,
           cfg.width),
      fusion(cfg.grg_fusion) {}

Tensor GroupRepresentationGenerator::scene_tokens(const Tensor& s) const { return scene(s); }

Tensor GroupRepresentationGenerator::individual_token(const Tensor& x_i,
                                                      const ForwardContext& ctx) const {
  if (x_i.rank() != 4) {
    throw ShapeError("individual token expects [B,T,N,D], got " + to_string(x_i.shape()));
  }
  const std::size_t b = x_i.dim(0), t = x_i.dim(1), n = x_i.dim(2), d = x_i.dim(3);
  if (n == 0) throw ContractError("individual token: no individuals");
  if (t != query.dim(0)) {
    throw ShapeError("individual token: clip has " + std::to_string(t) + " frames, query has " +
                     std::to_string(query.dim(0)));
  }
  Tensor q = reshape(repeat_batch(query, b), {b * t, 1, d});
  Tensor memory = reshape(x_i, {b * t, n, d});
  return reshape(decoder(q, memory, ctx), {b, t, d});
}

Tensor GroupRepresentationGenerator::fuse_tokens(const Tensor& scene_tok,
                                                 const Tensor& ind_tok) const {
  if (scene_tok.shape() != ind_tok.shape()) {
    throw ShapeError("fuse_tokens: " + to_string(scene_tok.shape()) + " vs " +
                     to_string(ind_tok.shape()));
  }
  if (fusion == Fusion::Concat) return fuse(concat({scene_tok, ind_tok}, -1));
  return fuse(add(scene_tok, ind_tok));
}

Tensor GroupRepresentationGenerator::operator()(const Tensor& s, const Tensor& x_i,
                                                const ForwardContext& ctx) const {
  return fuse_tokens(scene_tokens(s), individual_token(x_i, ctx));
}

}  // namespace cstt
