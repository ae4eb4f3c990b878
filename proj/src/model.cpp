#include "cstt/model.hpp"

namespace cstt {

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg), store_(init_seed) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  input_embed_ = Linear(store_, "input_embed", cfg_.input_dim, d);
  positions_ = store_.create("temporal_position", {cfg_.frames, d}, Init::SmallNormal);
  if (cfg_.grg) {
    grg_ = GroupRepresentationGenerator(store_, "grg", cfg_);
  } else {
    group_query_ = store_.create("group_query", {cfg_.frames, d}, Init::SmallNormal);
  }
  if (cfg_.uses_blocks()) {
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      blocks_.emplace_back(store_, "block" + std::to_string(b), cfg_);
    }
  } else {
    baseline_fc_ = Linear(store_, "baseline.fc", d, d);
    baseline_decoder_ = DecoderLayer(store_, "baseline.group_decoder", d, cfg_.heads,
                                     cfg_.ffn_width(), cfg_.decoder_self_attention);
  }
  heads_ = Heads(store_, "head", cfg_);
}

void Model::check_batch(const Batch& batch) const {
  const Shape want_i{batch.size(), cfg_.frames, cfg_.individuals, cfg_.input_dim};
  if (!batch.individuals.defined() || batch.individuals.shape() != want_i) {
    throw ShapeError("batch individuals " +
                     (batch.individuals.defined() ? to_string(batch.individuals.shape())
                                                  : std::string("<none>")) +
                     " do not match model " + to_string(want_i));
  }
  if (cfg_.grg) {
    const Shape want_s{batch.size(), cfg_.frames, cfg_.scene_channels, cfg_.scene_pixels()};
    if (!batch.scene.defined() || batch.scene.shape() != want_s) {
      throw ShapeError("batch scene grid does not match model " + to_string(want_s));
    }
  }
}

Tensor Model::embed_individuals(const Tensor& raw) const {
  const std::size_t t = raw.dim(1), n = raw.dim(2);
  std::vector<std::size_t> frame_of(t * n);
  for (std::size_t i = 0; i < t * n; ++i) frame_of[i] = i / n;
  Tensor pos = reshape(embedding(positions_, frame_of), {t, n, cfg_.width});
  return add(input_embed_(raw), pos);
}

Tensor Model::initial_group(const Batch& batch, const Tensor& x_i,
                            const ForwardContext& ctx) const {
  if (cfg_.grg) return grg_(batch.scene, x_i, ctx);
  return repeat_batch(group_query_, batch.size());
}

std::pair<Tensor, Tensor> Model::stack_forward(const Tensor& x_i, const Tensor& x_g,
                                               const ForwardContext& ctx) const {
  std::pair<Tensor, Tensor> state{x_i, x_g};
  for (const auto& block : blocks_) state = block(state.first, state.second, ctx);
  return state;
}

ModelOutput Model::forward(const Batch& batch, const ForwardContext& ctx) const {
  check_batch(batch);
  Tensor x_i = embed_individuals(batch.individuals);
  Tensor x_g = initial_group(batch, x_i, ctx);
  ModelOutput out;
  if (cfg_.uses_blocks()) {
    std::tie(out.individuals, out.group) = stack_forward(x_i, x_g, ctx);
  } else {
    const std::size_t b = x_i.dim(0), t = x_i.dim(1), n = x_i.dim(2), d = x_i.dim(3);
    out.individuals = baseline_fc_(x_i);
    out.group = reshape(baseline_decoder_(reshape(x_g, {b * t, 1, d}),
                                          reshape(out.individuals, {b * t, n, d}), ctx),
                        {b, t, d});
  }
  out.group_logits = heads_.group_logits(out.group);
  out.individual_logits = heads_.individual_logits(out.individuals);
  return out;
}

Tensor Model::loss(const ModelOutput& out, const Batch& batch, double lambda) const {
  return combined_loss(out.group_logits, batch.group_labels, out.individual_logits,
                       batch.action_labels, lambda);
}

}  // namespace cstt
