#pragma once

#include <span>

#include "cstt/attention.hpp"
#include "cstt/model_config.hpp"

namespace cstt {

struct Heads {
  Linear group;       // D -> G_cls
  Linear individual;  // D -> A_cls
  GroupPooling group_pooling = GroupPooling::Mean;
  IndividualPooling individual_pooling = IndividualPooling::Mean;

  Heads() = default;
  Heads(ParamStore& store, const std::string& name, const ModelConfig& cfg);

  // x_g: [B, T, D] -> [B, G_cls]
  Tensor group_logits(const Tensor& x_g) const;
  // x_i: [B, T, N, D] -> [B, N, A_cls]
  Tensor individual_logits(const Tensor& x_i) const;
};

// Frame `t` of every clip: [B, T, ...] -> [B, ...].
Tensor select_frame(const Tensor& x, std::size_t t);

// L1 + lambda * L2 with both terms softmax cross-entropies averaged over rows.
// group: [B, G_cls]; individual: [R, A_cls] or [B, N, A_cls] (flattened).
Tensor combined_loss(const Tensor& group_logits, std::span<const int> group_labels,
                     const Tensor& individual_logits, std::span<const int> action_labels,
                     double lambda);

// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cstt
