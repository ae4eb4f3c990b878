#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cstt/cstt_block.hpp"
#include "cstt/grg.hpp"
#include "cstt/heads.hpp"
#include "cstt/model_config.hpp"

namespace cstt {

struct Batch {
  Tensor individuals;               // [B, T, N, D_in]
  Tensor scene;                     // [B, T, C_g, H*W]
  std::vector<int> group_labels;    // [B]
  std::vector<int> action_labels;   // [B*N]
  std::size_t size() const { return individuals.defined() ? individuals.dim(0) : 0; }
};

struct ModelOutput {
  Tensor group_logits;       // [B, G_cls]
  Tensor individual_logits;  // [B, N, A_cls]
  Tensor individuals;        // final X_I [B, T, N, D]
  Tensor group;              // final X_G [B, T, D]
};

// Front end (input embedding + temporal positions), GRG or bare learned
// query, b stacked CSTT blocks (or the FC + group decoder baseline), heads.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::vector<CsttBlock>& blocks() const { return blocks_; }
  const GroupRepresentationGenerator& grg() const { return grg_; }
  const Heads& heads() const { return heads_; }

  // raw: [B, T, N, D_in] -> X_I [B, T, N, D]
  Tensor embed_individuals(const Tensor& raw) const;
  // X_G^0 [B, T, D]
  Tensor initial_group(const Batch& batch, const Tensor& x_i, const ForwardContext& ctx) const;
  // Runs the blocks in order; zero blocks returns the inputs.
  std::pair<Tensor, Tensor> stack_forward(const Tensor& x_i, const Tensor& x_g,
                                          const ForwardContext& ctx) const;
  ModelOutput forward(const Batch& batch, const ForwardContext& ctx) const;
  Tensor loss(const ModelOutput& out, const Batch& batch, double lambda) const;

 private:
  void check_batch(const Batch& batch) const;

  ModelConfig cfg_;
  ParamStore store_;
  Linear input_embed_;
  Tensor positions_;  // [T, D]
  GroupRepresentationGenerator grg_;
  Tensor group_query_;  // [T, D], used when the GRG is off
  std::vector<CsttBlock> blocks_;
  Linear baseline_fc_;
  DecoderLayer baseline_decoder_;
  Heads heads_;
};

}  // namespace cstt
