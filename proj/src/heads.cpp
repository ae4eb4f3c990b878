#include "cstt/heads.hpp"

#include <numeric>

namespace cstt {

Heads::Heads(ParamStore& store, const std::string& name, const ModelConfig& cfg)
    : group(store, name + ".group", cfg.width, cfg.group_classes),
      individual(store, name + ".individual", cfg.width, cfg.action_classes),
      group_pooling(cfg.group_pooling),
      individual_pooling(cfg.individual_pooling) {}

Tensor select_frame(const Tensor& x, std::size_t t) {
  if (x.rank() < 2 || t >= x.dim(1)) {
    throw ShapeError("select_frame: frame " + std::to_string(t) + " out of range for " +
                     to_string(x.shape()));
  }
  const std::size_t b = x.dim(0), frames = x.dim(1);
  const std::size_t inner = x.numel() / (b * frames);
  std::vector<std::size_t> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = i * frames + t;
  Shape out(x.shape().begin() + 2, x.shape().end());
  out.insert(out.begin(), b);
  return reshape(gather_rows(reshape(x, {b * frames, inner}), rows), out);
}

Tensor Heads::group_logits(const Tensor& x_g) const {
  if (x_g.rank() != 3) throw ShapeError("group head expects [B,T,D], got " + to_string(x_g.shape()));
  Tensor pooled = group_pooling == GroupPooling::Last ? select_frame(x_g, x_g.dim(1) - 1)
                                                      : mean(x_g, 1);
  return group(pooled);
}

Tensor Heads::individual_logits(const Tensor& x_i) const {
  if (x_i.rank() != 4) {
    throw ShapeError("individual head expects [B,T,N,D], got " + to_string(x_i.shape()));
  }
  Tensor pooled = individual_pooling == IndividualPooling::Center
                      ? select_frame(x_i, x_i.dim(1) / 2)
                      : mean(x_i, 1);
  return individual(pooled);
}

Tensor combined_loss(const Tensor& group_logits, std::span<const int> group_labels,
                     const Tensor& individual_logits, std::span<const int> action_labels,
                     double lambda) {
  if (lambda < 0.0) throw ContractError("loss weight lambda must be nonnegative");
  Tensor l1 = cross_entropy(group_logits, group_labels);
  if (lambda == 0.0) return l1;
  const std::size_t classes = individual_logits.dim(-1);
  Tensor flat = reshape(individual_logits, {individual_logits.numel() / classes, classes});
  return add(l1, scale(cross_entropy(flat, action_labels), lambda));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t k = logits.dim(-1);
  const std::size_t rows = logits.numel() / k;
  std::vector<int> out(rows);
  const auto d = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (d[r * k + j] > d[r * k + best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cstt
