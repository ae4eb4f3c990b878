#include <gtest/gtest.h>

#include <cmath>

#include "cstt/grad_check.hpp"
#include "cstt/model.hpp"
#include "layer_oracles.hpp"

using namespace cstt;
using namespace cstt::testing;

namespace {

ModelConfig small_cfg(std::size_t clusters = 1) {
  ModelConfig c;
  c.frames = 3;
  c.individuals = 4;
  c.input_dim = 5;
  c.width = 8;
  c.heads = 2;
  c.blocks = 2;
  c.clusters = clusters;
  c.scene_channels = 3;
  c.scene_height = 2;
  c.scene_width = 2;
  c.scene_tokens = 2;
  c.group_classes = 4;
  c.action_classes = 3;
  c.dropout = 0.0;
  return c;
}

// x[b, :, n, :] of a [B, T, N, D] tensor as a T x D matrix.
Mat timeline(const Tensor& x, std::size_t b, std::size_t n) {
  const std::size_t t = x.dim(1), d = x.dim(3);
  Mat m(t, d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x.at({b, i, n, j});
  return m;
}

// x[b, t, :, :] of a [B, T, N, D] tensor as an N x D matrix.
Mat roster(const Tensor& x, std::size_t b, std::size_t t) {
  const std::size_t n = x.dim(2), d = x.dim(3);
  return Mat(n, d, x.data().subspan((b * x.dim(1) + t) * n * d, n * d));
}

Batch random_batch(const ModelConfig& cfg, std::size_t b, Rng& rng) {
  Batch batch;
  batch.individuals = random_tensor(rng, {b, cfg.frames, cfg.individuals, cfg.input_dim});
  batch.scene = random_tensor(rng, {b, cfg.frames, cfg.scene_channels, cfg.scene_pixels()});
  for (std::size_t i = 0; i < b; ++i)
    batch.group_labels.push_back(static_cast<int>(rng.index(cfg.group_classes)));
  for (std::size_t i = 0; i < b * cfg.individuals; ++i)
    batch.action_labels.push_back(static_cast<int>(rng.index(cfg.action_classes)));
  return batch;
}

}  // namespace

TEST(SpatialEncode, MatchesPerFrameEncoderOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = small_cfg();
    cfg.width = 4;
    ParamStore store(seed);
    CsttBlock block(store, "b", cfg);
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor x = random_tensor(rng, {1, 2, 3, 4});
    Tensor v = block.spatial_encode(x, {});
    for (std::size_t t = 0; t < 2; ++t)
      ASSERT_LE(max_abs_diff(roster(v, 0, t).v, oracle_encoder(block.spatial, roster(x, 0, t)).v),
                1e-12);
  }
}

TEST(SpatialEncode, SingleIndividualAndIdenticalFrames) {
  auto cfg = small_cfg();
  ParamStore store(3);
  CsttBlock block(store, "b", cfg);
  randomize(store, 4);
  Rng rng(5);
  Tensor one = random_tensor(rng, {2, 3, 1, 8});
  Tensor v = block.spatial_encode(one, {});
  EXPECT_EQ(v.shape(), one.shape());
  for (double x : v.data()) EXPECT_TRUE(std::isfinite(x));
  Tensor frame = random_tensor(rng, {1, 1, 4, 8});
  Tensor two = reshape(concat({frame, frame}, 1), {1, 2, 4, 8});
  Tensor w = block.spatial_encode(two, {});
  EXPECT_LE(max_abs_diff(roster(w, 0, 0).v, roster(w, 0, 1).v), 1e-12);
}

TEST(TemporalEncode, MatchesPerIndividualEncoderOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    CsttBlock block(store, "b", small_cfg());
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor x = random_tensor(rng, {2, 3, 4, 8});
    Tensor v = block.temporal_encode(x, {});
    ASSERT_EQ(v.shape(), (Shape{2, 4, 3, 8}));
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t n = 0; n < 4; ++n) {
        Mat got(3, 8, v.data().subspan((b * 4 + n) * 24, 24));
        ASSERT_LE(max_abs_diff(got.v, oracle_encoder(block.temporal, timeline(x, b, n)).v), 1e-12);
      }
  }
}

TEST(TemporalEncode, SingleFrameAndIdenticalTrajectories) {
  ParamStore store(6);
  CsttBlock block(store, "b", small_cfg());
  randomize(store, 7);
  Rng rng(8);
  EXPECT_EQ(block.temporal_encode(random_tensor(rng, {1, 1, 4, 8}), {}).shape(),
            (Shape{1, 4, 1, 8}));
  Tensor x = random_tensor(rng, {1, 3, 2, 8});
  Tensor same = permute_individuals(x, {0, 0});
  Tensor v = block.temporal_encode(same, {});
  for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(v.data()[i], v.data()[24 + i], 1e-12);
}

TEST(CrossDecode, MatchesHandUnrolledOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = small_cfg();
    cfg.width = 4;
    ParamStore store(seed);
    CsttBlock block(store, "b", cfg);
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    const std::size_t t = 2, n = 2, d = 4;
    Tensor vs = random_tensor(rng, {1, t, n, d});
    Tensor vt = random_tensor(rng, {1, n, t, d});
    Tensor out = block.cross_decode(vs, vt, {});
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t ni = 0; ni < n; ++ni) {
        // actor query row ti of individual ni over that individual's V_t timeline
        Mat s_row = slice_rows(
            oracle_decoder(block.spatial_decoder, timeline(vs, 0, ni),
                           Mat(t, d, vt.data().subspan(ni * t * d, t * d))),
            ti, 1);
        // time query of individual ni at frame ti over frame ti's V_s roster
        Mat vt_frame(n, d);
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t j = 0; j < d; ++j) vt_frame(k, j) = vt.at({0, k, ti, j});
        Mat t_row = slice_rows(
            oracle_decoder(block.temporal_decoder, vt_frame, roster(vs, 0, ti)), ni, 1);
        Mat expected = oracle_linear(block.fuse, naive_add(s_row, t_row));
        Mat got(1, d, out.data().subspan((ti * n + ni) * d, d));
        ASSERT_LE(max_abs_diff(got.v, expected.v), 1e-12) << seed;
      }
  }
}

TEST(CrossDecode, SingleFrameAndConstantInputs) {
  ParamStore store(9);
  CsttBlock block(store, "b", small_cfg());
  randomize(store, 10);
  Rng rng(11);
  Tensor out = block.cross_decode(random_tensor(rng, {1, 1, 4, 8}),
                                  random_tensor(rng, {1, 4, 1, 8}), {});
  EXPECT_EQ(out.shape(), (Shape{1, 1, 4, 8}));
  Tensor row = random_tensor(rng, {8});
  Tensor vs = add(Tensor::zeros({1, 3, 4, 8}), row);
  Tensor vt = add(Tensor::zeros({1, 4, 3, 8}), row);
  Tensor c = block.cross_decode(vs, vt, {});
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c.data()[i], c.data()[i % 8], 1e-12);
}

TEST(CrossDecode, ClipSizeMismatchIsContractError) {
  ParamStore store(12);
  CsttBlock block(store, "b", small_cfg());
  EXPECT_THROW(block.cross_decode(Tensor::zeros({1, 3, 4, 8}), Tensor::zeros({1, 3, 4, 8}), {}),
               ContractError);
}

TEST(GroupDecode, MatchesOracleAndSingleIndividual) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    CsttBlock block(store, "b", small_cfg());
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    const std::size_t n = seed % 2 == 0 ? 1 : 4;
    Tensor xi = random_tensor(rng, {2, 3, n, 8});
    Tensor xg = random_tensor(rng, {2, 3, 8});
    Tensor out = block.group_decode(xg, xi, {});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 3; ++t) {
        Mat q(1, 8, xg.data().subspan((b * 3 + t) * 8, 8));
        ASSERT_LE(max_abs_diff(out.data().subspan((b * 3 + t) * 8, 8),
                               oracle_decoder(block.group_decoder, q, roster(xi, b, t)).v),
                  1e-12);
      }
  }
}

TEST(GroupDecode, InvariantToIndividualPermutation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    CsttBlock block(store, "b", small_cfg());
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor xi = random_tensor(rng, {1, 3, 4, 8});
    Tensor xg = random_tensor(rng, {1, 3, 8});
    ASSERT_LE(max_abs_diff(block.group_decode(xg, xi, {}),
                           block.group_decode(xg, permute_individuals(xi, random_permutation(rng, 4)), {})),
              1e-9);
  }
}

TEST(ClusteredAttention, MatchesMaskedBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    ClusteredEncoderLayer layer(store, "c", 4, 2, 16, 2, true, true);
    randomize(store, seed + 1);
    ClusterEngine engine(ClusterMode::Lloyd, 2, seed);
    engine.set_freeze(ClusterEngine::Freeze::Record);
    Rng rng(seed + 2);
    Tensor x = random_tensor(rng, {3, 4, 4});
    ForwardContext ctx{false, nullptr, &engine};
    Tensor y = layer(x, ctx, "site");
    const auto& labels = engine.recorded().at(0);
    for (std::size_t g = 0; g < 3; ++g)
      ASSERT_LE(max_abs_diff(group_mat(y, g).v, oracle_clustered_layer(layer, group_mat(x, g), labels[g]).v),
                1e-12)
          << seed;
  }
}

TEST(ClusteredAttention, EmptyClustersAreMaskedInInterAttention) {
  ParamStore store(13);
  ClusteredEncoderLayer layer(store, "c", 4, 2, 16, 3, true, true);
  randomize(store, 14);
  Rng rng(15);
  Tensor h = random_tensor(rng, {1, 4, 4});
  GroupLabels labels{{0, 2, 0, 2}};
  Mat expected = oracle_clustered_attend(layer, group_mat(h, 0), labels[0]);
  EXPECT_LE(max_abs_diff(layer.attend(h, labels).data(), expected.v), 1e-12);
}

TEST(ClusteredAttention, ToggleCombinationsMatchOracle) {
  for (int mode = 0; mode < 4; ++mode) {
    ParamStore store(16);
    ClusteredEncoderLayer layer(store, "c", 8, 2, 32, 2, mode & 1, mode & 2);
    randomize(store, 17);
    Rng rng(18);
    Tensor h = random_tensor(rng, {1, 5, 8});
    GroupLabels labels{{1, 0, 0, 1, 1}};
    Mat expected = oracle_clustered_attend(layer, group_mat(h, 0), labels[0]);
    EXPECT_LE(max_abs_diff(layer.attend(h, labels).data(), expected.v), 1e-12) << mode;
  }
}

TEST(ClusteredAttention, SingleClusterIntraMatchesPlainAttentionBitwise) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    ClusteredEncoderLayer layer(store, "c", 8, 2, 32, 1, true, true);
    Rng rng(seed + 3);
    Tensor h = random_tensor(rng, {2, 5, 8});
    GroupLabels labels(2, std::vector<int>(5, 0));
    AttentionOptions opts;
    opts.value_residual = true;
    Tensor plain = layer.base.attn(h, h, h, opts);
    ASSERT_EQ(max_abs_diff(layer.intra_term(h, labels), plain), 0.0);
    // The inter term over a single centroid is one broadcast row per group.
    Tensor inter = layer.inter_term(h, labels);
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) ASSERT_EQ(inter.at({g, i, j}), inter.at({g, 0, j}));
  }
}

TEST(ClusteredAttention, OneClusterPerTokenIsSingleTokenCase) {
  ParamStore store(19);
  ClusteredEncoderLayer layer(store, "c", 8, 2, 32, 4, true, false);
  Rng rng(20);
  Tensor h = random_tensor(rng, {1, 4, 8});
  Tensor intra = layer.intra_term(h, {{0, 1, 2, 3}});
  Tensor expected = scale(matmul(matmul(h, layer.base.attn.w_v), layer.base.attn.w_o), 2.0);
  EXPECT_LE(max_abs_diff(intra, expected), 1e-12);
}

TEST(ClusteredAttention, EngineClusterCountMustMatch) {
  ParamStore store(21);
  ClusteredEncoderLayer layer(store, "c", 8, 2, 32, 2, true, true);
  ClusterEngine engine(ClusterMode::Lloyd, 3, 0);
  ForwardContext ctx{false, nullptr, &engine};
  EXPECT_THROW(layer(Tensor::zeros({1, 4, 8}), ctx, "s"), ContractError);
  EXPECT_THROW(layer(Tensor::zeros({1, 4, 8}), {}, "s"), ContractError);
}

TEST(Stack, SingleBlockEqualsManualCallAndTwoBlocksCompose) {
  for (std::size_t b : {1u, 2u}) {
    auto cfg = small_cfg();
    cfg.blocks = b;
    Model model(cfg, 22);
    randomize(model.params(), 23);
    Rng rng(24);
    Tensor xi = random_tensor(rng, {2, 3, 4, 8});
    Tensor xg = random_tensor(rng, {2, 3, 8});
    auto [si, sg] = model.stack_forward(xi, xg, {});
    auto manual = model.blocks()[0](xi, xg, {});
    if (b == 2) manual = model.blocks()[1](manual.first, manual.second, {});
    EXPECT_EQ(max_abs_diff(si, manual.first), 0.0);
    EXPECT_EQ(max_abs_diff(sg, manual.second), 0.0);
    EXPECT_EQ(si.shape(), xi.shape());
    EXPECT_EQ(sg.shape(), xg.shape());
  }
}

TEST(Stack, CompositionMatchesFullOracle) {
  // Two non-clustered blocks rebuilt from the straight-line layer oracles.
  auto cfg = small_cfg();
  cfg.width = 4;
  Model model(cfg, 25);
  randomize(model.params(), 26);
  Rng rng(27);
  const std::size_t t = 3, n = 4, d = 4;
  Tensor xi = random_tensor(rng, {1, t, n, d});
  Tensor xg = random_tensor(rng, {1, t, d});
  auto [fi, fg] = model.stack_forward(xi, xg, {});

  std::vector<Mat> frames(t);  // X_I as per-frame N x D
  for (std::size_t f = 0; f < t; ++f) frames[f] = roster(xi, 0, f);
  Mat g(t, d, xg.data());
  for (const auto& block : model.blocks()) {
    std::vector<Mat> vs(t), vt(n), next(t, Mat(n, d));
    for (std::size_t f = 0; f < t; ++f) vs[f] = oracle_encoder(block.spatial, frames[f]);
    for (std::size_t k = 0; k < n; ++k) {
      Mat line(t, d);
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t j = 0; j < d; ++j) line(f, j) = frames[f](k, j);
      vt[k] = oracle_encoder(block.temporal, line);
    }
    for (std::size_t k = 0; k < n; ++k) {
      Mat q(t, d);
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t j = 0; j < d; ++j) q(f, j) = vs[f](k, j);
      Mat s_out = oracle_decoder(block.spatial_decoder, q, vt[k]);
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t j = 0; j < d; ++j) next[f](k, j) = s_out(f, j);
    }
    for (std::size_t f = 0; f < t; ++f) {
      Mat q(n, d);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < d; ++j) q(k, j) = vt[k](f, j);
      next[f] = oracle_linear(block.fuse, naive_add(next[f], oracle_decoder(block.temporal_decoder, q, vs[f])));
    }
    Mat g_next(t, d);
    for (std::size_t f = 0; f < t; ++f) {
      Mat row = oracle_decoder(block.group_decoder, slice_rows(g, f, 1), next[f]);
      for (std::size_t j = 0; j < d; ++j) g_next(f, j) = row(0, j);
    }
    frames = next;
    g = g_next;
  }
  for (std::size_t f = 0; f < t; ++f) EXPECT_LE(max_abs_diff(roster(fi, 0, f).v, frames[f].v), 1e-12);
  EXPECT_LE(max_abs_diff(fg.data(), g.v), 1e-12);
}

TEST(Stack, PermutationEquivariantWithoutClustering) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model model(small_cfg(), seed);
    randomize(model.params(), seed + 1);
    Rng rng(seed + 2);
    Tensor xi = random_tensor(rng, {2, 3, 4, 8});
    Tensor xg = random_tensor(rng, {2, 3, 8});
    auto perm = random_permutation(rng, 4);
    auto [a_i, a_g] = model.stack_forward(xi, xg, {});
    auto [b_i, b_g] = model.stack_forward(permute_individuals(xi, perm), xg, {});
    ASSERT_LE(max_abs_diff(b_i, permute_individuals(a_i, perm)), 1e-9);
    ASSERT_LE(max_abs_diff(b_g, a_g), 1e-9);
  }
}

TEST(Stack, PermutationEquivariantWithConsistentlyPermutedAssignment) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model model(small_cfg(2), seed);
    randomize(model.params(), seed + 1);
    Rng rng(seed + 2);
    Tensor xi = random_tensor(rng, {1, 3, 4, 8});
    Tensor xg = random_tensor(rng, {1, 3, 8});
    auto perm = random_permutation(rng, 4);
    std::vector<std::vector<std::vector<int>>> calls(2, std::vector<std::vector<int>>(3));
    for (auto& call : calls)
      for (auto& frame : call)
        for (int k = 0; k < 4; ++k) frame.push_back(static_cast<int>(rng.index(2)));
    auto permuted = calls;
    for (std::size_t c = 0; c < calls.size(); ++c)
      for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t k = 0; k < 4; ++k) permuted[c][f][k] = calls[c][f][perm[k]];
    ClusterEngine engine(ClusterMode::Lloyd, 2, 0);
    ForwardContext ctx{false, nullptr, &engine};
    engine.set_replay(calls);
    auto [a_i, a_g] = model.stack_forward(xi, xg, ctx);
    engine.set_replay(permuted);
    auto [b_i, b_g] = model.stack_forward(permute_individuals(xi, perm), xg, ctx);
    ASSERT_LE(max_abs_diff(b_i, permute_individuals(a_i, perm)), 1e-9);
    ASSERT_LE(max_abs_diff(b_g, a_g), 1e-9);
  }
}

TEST(Model, ReversingFramesChangesGroupOutput) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = small_cfg();
    Model model(cfg, seed);
    Rng rng(seed + 1);
    Batch batch = random_batch(cfg, 1, rng);
    Batch reversed = batch;
    std::vector<std::size_t> rows{2, 1, 0};
    reversed.individuals =
        reshape(gather_rows(reshape(batch.individuals, {3, 20}), rows), batch.individuals.shape());
    reversed.scene = reshape(gather_rows(reshape(batch.scene, {3, 12}), rows), batch.scene.shape());
    auto a = model.forward(batch, {});
    auto b = model.forward(reversed, {});
    Tensor b_back = reshape(gather_rows(reshape(b.group, {3, 8}), rows), b.group.shape());
    EXPECT_GT(max_abs_diff(a.group, b_back), 1e-6);
  }
}

TEST(Model, EveryVariantRunsWithExpectedShapes) {
  for (Variant v : {Variant::Baseline, Variant::Spatial, Variant::Stacked, Variant::Parallel,
                    Variant::Ours}) {
    for (bool grg : {true, false}) {
      auto cfg = small_cfg(2);
      cfg.variant = v;
      cfg.grg = grg;
      Model model(cfg, 28);
      ClusterEngine engine(ClusterMode::Lloyd, 2, 1);
      Rng rng(29);
      Batch batch = random_batch(cfg, 2, rng);
      auto out = model.forward(batch, {false, nullptr, &engine});
      EXPECT_EQ(out.group_logits.shape(), (Shape{2, 4})) << to_string(v);
      EXPECT_EQ(out.individual_logits.shape(), (Shape{2, 4, 3}));
      EXPECT_TRUE(std::isfinite(model.loss(out, batch, 1.0).item()));
    }
  }
}

TEST(Model, ZeroBlocksIsTheBaselineArchitecture) {
  auto zero = small_cfg();
  zero.blocks = 0;
  auto base = small_cfg();
  base.variant = Variant::Baseline;
  Model a(zero, 30), b(base, 30);
  ASSERT_EQ(a.params().items().size(), b.params().items().size());
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    EXPECT_EQ(a.params().items()[i].name, b.params().items()[i].name);
    EXPECT_EQ(max_abs_diff(a.params().items()[i].tensor, b.params().items()[i].tensor), 0.0);
  }
  EXPECT_NE(a.params().find("baseline.fc.weight").numel(), 0u);
}

TEST(Model, ParametersAreUntiedAcrossBlocks) {
  Model model(small_cfg(), 31);
  Tensor w0 = model.params().find("block0.spatial.attn.w_q");
  Tensor w1 = model.params().find("block1.spatial.attn.w_q");
  EXPECT_FALSE(w0.same_node(w1));
  EXPECT_GT(max_abs_diff(w0, w1), 0.0);
}

TEST(Model, BatchShapeMismatchIsShapeError) {
  Model model(small_cfg(), 32);
  Batch batch;
  batch.individuals = Tensor::zeros({1, 3, 4, 6});
  EXPECT_THROW(model.forward(batch, {}), ShapeError);
}

TEST(Model, JointScopeAndTemporalClusteringRun) {
  auto cfg = small_cfg(2);
  cfg.cluster_scope = ClusterScope::Joint;
  cfg.cluster_temporal = true;
  Model model(cfg, 33);
  ClusterEngine engine(ClusterMode::MiniBatch, 2, 1);
  engine.set_capture(true);
  Rng rng(34);
  Batch batch = random_batch(cfg, 2, rng);
  model.forward(batch, {true, nullptr, &engine});
  bool joint = false, temporal = false;
  for (const auto& rec : engine.captured()) {
    joint |= rec.site == "block0.spatial" && rec.labels.size() == 12;
    temporal |= rec.site == "block1.temporal" && rec.labels.size() == 3;
  }
  EXPECT_TRUE(joint);
  EXPECT_TRUE(temporal);
  EXPECT_EQ(engine.states().size(), 4u);
}

TEST(Model, GradCheckWithFrozenClusters) {
  auto cfg = small_cfg(2);
  cfg.frames = 2;
  cfg.individuals = 3;
  cfg.blocks = 1;
  Model model(cfg, 35);
  randomize(model.params(), 36, -0.5, 0.5);
  ClusterEngine engine(ClusterMode::Lloyd, 2, 2);
  ForwardContext ctx{false, nullptr, &engine};
  Rng rng(37);
  Batch batch = random_batch(cfg, 1, rng);
  engine.set_freeze(ClusterEngine::Freeze::Record);
  model.forward(batch, ctx);
  auto objective = [&] {
    engine.set_freeze(ClusterEngine::Freeze::Replay);
    return model.loss(model.forward(batch, ctx), batch, 1.0);
  };
  auto report = grad_check(objective, model.params().items());
  EXPECT_TRUE(report.pass) << report.max_rel_error;
  EXPECT_EQ(report.entries.size(), model.params().items().size());
}
