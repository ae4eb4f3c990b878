#include "cstt/cstt_block.hpp"

#include "cstt/clustering.hpp"

namespace cstt {

ClusteredEncoderLayer::ClusteredEncoderLayer(ParamStore& store, const std::string& name,
                                             std::size_t width, std::size_t heads,
                                             std::size_t hidden, std::size_t clusters_,
                                             bool intra_, bool inter_)
    : base(store, name, width, heads, hidden), clusters(clusters_), intra(intra_), inter(inter_) {
  if (clusters == 0) throw ConfigError("clustered attention needs at least one cluster");
  if (inter) inter_attn = MultiHeadAttention(store, name + ".inter_attn", width, heads);
}

namespace {

void check_labels(const Tensor& h, const GroupLabels& labels, std::size_t clusters) {
  if (h.rank() != 3) throw ShapeError("clustered attention expects [G,L,D], got " + to_string(h.shape()));
  if (labels.size() != h.dim(0)) throw ContractError("clustered attention: label groups do not match");
  for (const auto& row : labels) {
    if (row.size() != h.dim(1)) throw ContractError("clustered attention: label count does not match");
    for (int l : row)
      if (l < 0 || static_cast<std::size_t>(l) >= clusters)
        throw ContractError("clustered attention: label out of range");
  }
}

}  // namespace

Tensor ClusteredEncoderLayer::intra_term(const Tensor& h, const GroupLabels& labels) const {
  check_labels(h, labels, clusters);
  const std::size_t g = h.dim(0), l = h.dim(1);
  AttentionOptions opts;
  opts.value_residual = true;
  std::vector<std::uint8_t> keep;
  if (intra) {
    keep.resize(g * l * l);
    for (std::size_t gi = 0; gi < g; ++gi)
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < l; ++j)
          keep[(gi * l + i) * l + j] = labels[gi][i] == labels[gi][j];
    opts.keep = keep;
  }
  return base.attn(h, h, h, opts);
}

Tensor ClusteredEncoderLayer::inter_term(const Tensor& h, const GroupLabels& labels) const {
  check_labels(h, labels, clusters);
  const std::size_t g = h.dim(0), l = h.dim(1), c = clusters;
  std::vector<double> avg(g * c * l, 0.0), onehot(g * l * c, 0.0);
  std::vector<std::uint8_t> keep(g * c * c, 0);
  for (std::size_t gi = 0; gi < g; ++gi) {
    std::vector<std::size_t> size(c, 0);
    for (int lab : labels[gi]) ++size[static_cast<std::size_t>(lab)];
    for (std::size_t i = 0; i < l; ++i) {
      const auto k = static_cast<std::size_t>(labels[gi][i]);
      avg[(gi * c + k) * l + i] = 1.0 / static_cast<double>(size[k]);
      onehot[(gi * l + i) * c + k] = 1.0;
    }
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) keep[(gi * c + a) * c + b] = size[b] > 0;
  }
  Tensor centroids = matmul(Tensor::from({g, c, l}, std::move(avg)), h);  // [G, C, D]
  AttentionOptions opts;
  opts.keep = keep;
  Tensor updated = inter_attn(centroids, centroids, centroids, opts);
  return matmul(Tensor::from({g, l, c}, std::move(onehot)), updated);  // broadcast to members
}

Tensor ClusteredEncoderLayer::attend(const Tensor& h, const GroupLabels& labels) const {
  Tensor out = intra_term(h, labels);
  return inter ? add(out, inter_term(h, labels)) : out;
}

Tensor ClusteredEncoderLayer::cluster_points(const Tensor& h) const {
  return matmul(h.detach(), base.attn.w_q.detach());
}

Tensor ClusteredEncoderLayer::operator()(const Tensor& x, const ForwardContext& ctx,
                                         const std::string& site) const {
  if (ctx.clusters == nullptr) throw ContractError("clustered attention needs a cluster engine");
  if (ctx.clusters->clusters() != clusters) {
    throw ContractError("cluster engine has " + std::to_string(ctx.clusters->clusters()) +
                        " clusters, layer expects " + std::to_string(clusters));
  }
  Tensor h = base.norm_attn(x);
  GroupLabels labels = ctx.clusters->assign_groups(site, cluster_points(h), ctx.training);
  Tensor a = ctx.drop(attend(h, labels));
  return base.feed_forward_block(a, ctx);
}

// ---- CsttBlock -------------------------------------------------------------

CsttBlock::CsttBlock(ParamStore& store, const std::string& name, const ModelConfig& cfg)
    : name_(name),
      variant_(cfg.variant),
      cluster_spatial_(cfg.clustering_enabled()),
      cluster_temporal_(cfg.clustering_enabled() && cfg.cluster_temporal),
      scope_(cfg.cluster_scope) {
  const std::size_t d = cfg.width, h = cfg.heads, ff = cfg.ffn_width();
  if (cluster_spatial_) {
    spatial_clustered = ClusteredEncoderLayer(store, name + ".spatial", d, h, ff, cfg.clusters,
                                              cfg.intra, cfg.inter);
  } else {
    spatial = EncoderLayer(store, name + ".spatial", d, h, ff);
  }
  const bool needs_temporal = variant_ != Variant::Spatial;
  if (needs_temporal) {
    if (cluster_temporal_) {
      temporal_clustered = ClusteredEncoderLayer(store, name + ".temporal", d, h, ff,
                                                 cfg.clusters, cfg.intra, cfg.inter);
    } else {
      temporal = EncoderLayer(store, name + ".temporal", d, h, ff);
    }
  }
  if (variant_ == Variant::Ours) {
    spatial_decoder =
        DecoderLayer(store, name + ".spatial_decoder", d, h, ff, cfg.decoder_self_attention);
    temporal_decoder =
        DecoderLayer(store, name + ".temporal_decoder", d, h, ff, cfg.decoder_self_attention);
  }
  if (variant_ == Variant::Ours || variant_ == Variant::Parallel) {
    fuse = Linear(store, name + ".fuse", d, d);
  }
  group_decoder = DecoderLayer(store, name + ".group_decoder", d, h, ff, cfg.decoder_self_attention);
}

namespace {

void check_xi(const Tensor& x_i, const char* what) {
  if (x_i.rank() != 4) {
    throw ShapeError(std::string(what) + " expects [B,T,N,D], got " + to_string(x_i.shape()));
  }
}

// [B, A, C, D] -> [B, C, A, D]
Tensor swap_middle(const Tensor& x) { return permute(x, {0, 2, 1, 3}); }

}  // namespace

Tensor CsttBlock::spatial_encode(const Tensor& x_i, const ForwardContext& ctx) const {
  check_xi(x_i, "spatial encoder");
  const std::size_t b = x_i.dim(0), t = x_i.dim(1), n = x_i.dim(2), d = x_i.dim(3);
  if (!cluster_spatial_) return reshape(spatial(reshape(x_i, {b * t, n, d}), ctx), x_i.shape());
  const Shape grouped =
      scope_ == ClusterScope::Joint ? Shape{b, t * n, d} : Shape{b * t, n, d};
  return reshape(spatial_clustered(reshape(x_i, grouped), ctx, name_ + ".spatial"), x_i.shape());
}

Tensor CsttBlock::temporal_encode(const Tensor& x_i, const ForwardContext& ctx) const {
  check_xi(x_i, "temporal encoder");
  const std::size_t b = x_i.dim(0), t = x_i.dim(1), n = x_i.dim(2), d = x_i.dim(3);
  Tensor seq = reshape(swap_middle(x_i), {b * n, t, d});
  Tensor out = cluster_temporal_ ? temporal_clustered(seq, ctx, name_ + ".temporal")
                                 : temporal(seq, ctx);
  return reshape(out, {b, n, t, d});
}

Tensor CsttBlock::cross_decode(const Tensor& v_s, const Tensor& v_t,
                               const ForwardContext& ctx) const {
  check_xi(v_s, "cross decoder");
  if (v_t.rank() != 4 || v_t.dim(0) != v_s.dim(0) || v_t.dim(1) != v_s.dim(2) ||
      v_t.dim(2) != v_s.dim(1) || v_t.dim(3) != v_s.dim(3)) {
    throw ContractError("cross decoder: V_s " + to_string(v_s.shape()) + " and V_t " +
                        to_string(v_t.shape()) + " come from different clip sizes");
  }
  const std::size_t b = v_s.dim(0), t = v_s.dim(1), n = v_s.dim(2), d = v_s.dim(3);
  // Actor queries per individual over that individual's timeline.
  Tensor s_query = reshape(swap_middle(v_s), {b * n, t, d});
  Tensor s_memory = reshape(v_t, {b * n, t, d});
  Tensor s_out = swap_middle(reshape(spatial_decoder(s_query, s_memory, ctx), {b, n, t, d}));
  // Time queries per frame over that frame's roster.
  Tensor t_query = reshape(swap_middle(v_t), {b * t, n, d});
  Tensor t_memory = reshape(v_s, {b * t, n, d});
  Tensor t_out = reshape(temporal_decoder(t_query, t_memory, ctx), {b, t, n, d});
  return fuse(add(s_out, t_out));
}

Tensor CsttBlock::group_decode(const Tensor& x_g, const Tensor& x_i,
                               const ForwardContext& ctx) const {
  check_xi(x_i, "group decoder");
  const std::size_t b = x_i.dim(0), t = x_i.dim(1), n = x_i.dim(2), d = x_i.dim(3);
  if (x_g.shape() != Shape{b, t, d}) {
    throw ShapeError("group decoder: X_G " + to_string(x_g.shape()) + " does not match X_I " +
                     to_string(x_i.shape()));
  }
  Tensor out = group_decoder(reshape(x_g, {b * t, 1, d}), reshape(x_i, {b * t, n, d}), ctx);
  return reshape(out, {b, t, d});
}

Tensor CsttBlock::individual_path(const Tensor& x_i, const ForwardContext& ctx) const {
  switch (variant_) {
    case Variant::Spatial:
      return spatial_encode(x_i, ctx);
    case Variant::Stacked:
      return swap_middle(temporal_encode(spatial_encode(x_i, ctx), ctx));
    case Variant::Parallel:
      return fuse(add(spatial_encode(x_i, ctx), swap_middle(temporal_encode(x_i, ctx))));
    case Variant::Ours:
      return cross_decode(spatial_encode(x_i, ctx), temporal_encode(x_i, ctx), ctx);
    case Variant::Baseline:
      break;
  }
  throw ContractError("baseline variant has no spatial-temporal block");
}

std::pair<Tensor, Tensor> CsttBlock::operator()(const Tensor& x_i, const Tensor& x_g,
                                                const ForwardContext& ctx) const {
  Tensor next_i = individual_path(x_i, ctx);
  return {next_i, group_decode(x_g, next_i, ctx)};
}

}  // namespace cstt
