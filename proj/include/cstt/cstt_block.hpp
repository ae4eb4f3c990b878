#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cstt/attention.hpp"
#include "cstt/model_config.hpp"

namespace cstt {

using GroupLabels = std::vector<std::vector<int>>;  // [G][L]

// Encoder layer whose self-attention is split by cluster:
//   intra: attention restricted to tokens sharing a cluster (full attention
//          when `intra` is off), with the value residual;
//   inter: attention among the C cluster means of the normalized tokens,
//          added back to every member.
// Labels come from k-means over the projected queries (stop-gradient).
struct ClusteredEncoderLayer {
  EncoderLayer base;
  MultiHeadAttention inter_attn;
  std::size_t clusters = 1;
  bool intra = true;
  bool inter = true;

  ClusteredEncoderLayer() = default;
  ClusteredEncoderLayer(ParamStore& store, const std::string& name, std::size_t width,
                        std::size_t heads, std::size_t hidden, std::size_t clusters, bool intra,
                        bool inter);

  // h: normalized tokens [G, L, D].
  Tensor intra_term(const Tensor& h, const GroupLabels& labels) const;
  Tensor inter_term(const Tensor& h, const GroupLabels& labels) const;
  Tensor attend(const Tensor& h, const GroupLabels& labels) const;

  // Points handed to k-means: detached h W_q, [G, L, D].
  Tensor cluster_points(const Tensor& h) const;

  // Full layer on x: [G, L, D]; labels drawn from ctx.clusters under `site`.
  Tensor operator()(const Tensor& x, const ForwardContext& ctx, const std::string& site) const;
};

// One spatial-temporal transformer block. Shapes: X_I [B, T, N, D],
// X_G [B, T, D].
class CsttBlock {
 public:
  CsttBlock() = default;
  CsttBlock(ParamStore& store, const std::string& name, const ModelConfig& cfg);

  const std::string& name() const { return name_; }

  Tensor spatial_encode(const Tensor& x_i, const ForwardContext& ctx) const;   // [B,T,N,D]
  Tensor temporal_encode(const Tensor& x_i, const ForwardContext& ctx) const;  // [B,N,T,D]
  // v_s: [B,T,N,D], v_t: [B,N,T,D] -> [B,T,N,D]
  Tensor cross_decode(const Tensor& v_s, const Tensor& v_t, const ForwardContext& ctx) const;
  // x_g: [B,T,D], x_i: [B,T,N,D] -> [B,T,D]
  Tensor group_decode(const Tensor& x_g, const Tensor& x_i, const ForwardContext& ctx) const;
  // Individual path of the configured variant.
  Tensor individual_path(const Tensor& x_i, const ForwardContext& ctx) const;

  std::pair<Tensor, Tensor> operator()(const Tensor& x_i, const Tensor& x_g,
                                       const ForwardContext& ctx) const;

  // Sub-layers, exposed for tests and inspection.
  EncoderLayer spatial;
  ClusteredEncoderLayer spatial_clustered;
  EncoderLayer temporal;
  ClusteredEncoderLayer temporal_clustered;
  DecoderLayer spatial_decoder;   // V_s queries over V_t
  DecoderLayer temporal_decoder;  // V_t queries over V_s
  Linear fuse;
  DecoderLayer group_decoder;

 private:
  std::string name_;
  Variant variant_ = Variant::Ours;
  bool cluster_spatial_ = false;
  bool cluster_temporal_ = false;
  ClusterScope scope_ = ClusterScope::PerFrame;
};

}  // namespace cstt
