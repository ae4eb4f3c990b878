#include <gtest/gtest.h>

#include <cmath>

#include "cstt/grad_check.hpp"
#include "cstt/grg.hpp"
#include "layer_oracles.hpp"

using namespace cstt;
using namespace cstt::testing;

namespace {

ModelConfig tiny(std::size_t tokens = 2) {
  ModelConfig c;
  c.frames = 2;
  c.individuals = 3;
  c.width = 4;
  c.heads = 2;
  c.scene_channels = 3;
  c.scene_height = 2;
  c.scene_width = 2;
  c.scene_tokens = tokens;
  c.dropout = 0.0;
  return c;
}

// Scene tokens of one frame: grid [C, P] by direct loops.
std::vector<double> oracle_scene_frame(const SceneTokenizer& s, const std::vector<double>& grid,
                                       std::size_t c, std::size_t p) {
  const std::size_t k = s.attend.weight.dim(1), d = s.embed.weight.dim(1);
  Mat wa = param_mat(s.attend.weight), we = param_mat(s.embed.weight);
  std::vector<double> pooled(d, 0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    std::vector<double> logit(p, 0.0);
    for (std::size_t px = 0; px < p; ++px)
      for (std::size_t ch = 0; ch < c; ++ch) logit[px] += grid[ch * p + px] * wa(ch, kk);
    double z = 0.0;
    for (double l : logit) z += std::exp(l);
    for (std::size_t px = 0; px < p; ++px) {
      const double a = std::exp(logit[px]) / z;
      for (std::size_t j = 0; j < d; ++j) {
        double e = s.embed.bias.data()[j];
        for (std::size_t ch = 0; ch < c; ++ch) e += grid[ch * p + px] * we(ch, j);
        pooled[j] += a * e / static_cast<double>(k);
      }
    }
  }
  return pooled;
}

}  // namespace

TEST(SceneTokens, ConstantGridGivesEmbeddingOfThePixel) {
  ParamStore store(1);
  auto cfg = tiny();
  GroupRepresentationGenerator g(store, "grg", cfg);
  randomize(store, 2);
  std::vector<double> pixel{0.3, -1.2, 0.7};
  std::vector<double> grid;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t px = 0; px < 4; ++px) grid.push_back(pixel[ch]);
  Tensor scene = Tensor::from({1, 1, 3, 4}, grid);
  Tensor a;
  g.scene.tokens(scene, &a);
  for (double w : a.data()) EXPECT_NEAR(w, 0.25, 1e-15);
  Tensor expected = g.scene.embed(Tensor::from({1, 3}, pixel));
  EXPECT_LE(max_abs_diff(g.scene_tokens(scene).data(), expected.data()), 1e-12);
}

TEST(SceneTokens, SingleTokenPoolingIsIdentity) {
  ParamStore store(3);
  GroupRepresentationGenerator g(store, "grg", tiny(1));
  Rng rng(4);
  Tensor scene = random_tensor(rng, {2, 2, 3, 4});
  Tensor toks = g.scene.tokens(scene);
  ASSERT_EQ(toks.shape(), (Shape{4, 1, 4}));
  EXPECT_EQ(max_abs_diff(toks.data(), g.scene_tokens(scene).data()), 0.0);
}

TEST(SceneTokens, MatchesSoftmaxWeightedSumOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    GroupRepresentationGenerator g(store, "grg", tiny(2));
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor scene = random_tensor(rng, {1, 1, 3, 4});
    std::vector<double> grid(scene.data().begin(), scene.data().end());
    auto expected = oracle_scene_frame(g.scene, grid, 3, 4);
    ASSERT_LE(max_abs_diff(g.scene_tokens(scene).data(), expected), 1e-12) << seed;
  }
}

TEST(SceneTokens, PixelPermutationInvariant) {
  ParamStore store(5);
  GroupRepresentationGenerator g(store, "grg", tiny());
  randomize(store, 6);
  Rng rng(7);
  Tensor scene = random_tensor(rng, {1, 2, 3, 4});
  // permute the pixel axis
  Tensor flat = reshape(permute(scene, {0, 1, 3, 2}), {8, 3});
  std::vector<std::size_t> rows{2, 0, 3, 1, 6, 5, 7, 4};
  Tensor shuffled = permute(reshape(gather_rows(flat, rows), {1, 2, 4, 3}), {0, 1, 3, 2});
  EXPECT_LE(max_abs_diff(g.scene_tokens(scene), g.scene_tokens(shuffled)), 1e-12);
}

TEST(IndividualToken, SingleIndividualAttendsWholly) {
  ParamStore store(8);
  auto cfg = tiny();
  GroupRepresentationGenerator g(store, "grg", cfg);
  randomize(store, 9);
  Rng rng(10);
  Tensor x = random_tensor(rng, {1, 2, 1, 4});
  Tensor tok = g.individual_token(x, {});
  for (std::size_t t = 0; t < 2; ++t) {
    Mat q(1, 4, g.query.data().subspan(t * 4, 4));
    Mat mem(1, 4, x.data().subspan(t * 4, 4));
    EXPECT_LE(max_abs_diff(tok.data().subspan(t * 4, 4), oracle_decoder(g.decoder, q, mem).v),
              1e-12);
  }
}

TEST(IndividualToken, IdenticalIndividualsMatchSingleIndividual) {
  ParamStore store(11);
  GroupRepresentationGenerator g(store, "grg", tiny());
  randomize(store, 12);
  Rng rng(13);
  Tensor one = random_tensor(rng, {1, 2, 1, 4});
  std::vector<double> rep;
  for (std::size_t t = 0; t < 2; ++t)
    for (int n = 0; n < 3; ++n)
      for (std::size_t j = 0; j < 4; ++j) rep.push_back(one.data()[t * 4 + j]);
  Tensor three = Tensor::from({1, 2, 3, 4}, rep);
  EXPECT_LE(max_abs_diff(g.individual_token(one, {}), g.individual_token(three, {})), 1e-12);
}

TEST(IndividualToken, MatchesDecoderOracleAndIsPermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    GroupRepresentationGenerator g(store, "grg", tiny());
    randomize(store, seed + 3);
    Rng rng(seed + 4);
    Tensor x = random_tensor(rng, {2, 2, 3, 4});
    Tensor tok = g.individual_token(x, {});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 2; ++t) {
        Mat q(1, 4, g.query.data().subspan(t * 4, 4));
        Mat mem(3, 4, x.data().subspan((b * 2 + t) * 12, 12));
        ASSERT_LE(max_abs_diff(tok.data().subspan((b * 2 + t) * 4, 4),
                               oracle_decoder(g.decoder, q, mem).v),
                  1e-12);
      }
    Tensor perm = reshape(gather_rows(reshape(x, {12, 4}), {2, 0, 1, 5, 3, 4, 7, 8, 6, 10, 11, 9}),
                          {2, 2, 3, 4});
    ASSERT_LE(max_abs_diff(tok, g.individual_token(perm, {})), 1e-9);
  }
}

TEST(IndividualToken, FrameCountMismatchIsShapeError) {
  ParamStore store(14);
  GroupRepresentationGenerator g(store, "grg", tiny());
  EXPECT_THROW(g.individual_token(Tensor::zeros({1, 3, 2, 4}), {}), ShapeError);
}

TEST(FuseTokens, ZeroSceneAndIdentityLinearGivesIndividualToken) {
  ParamStore store(15);
  GroupRepresentationGenerator g(store, "grg", tiny());
  auto w = g.fuse.weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  Rng rng(16);
  Tensor ind = random_tensor(rng, {1, 2, 4});
  EXPECT_EQ(max_abs_diff(g.fuse_tokens(Tensor::zeros({1, 2, 4}), ind), ind), 0.0);
  Tensor zero = g.fuse_tokens(Tensor::zeros({1, 2, 4}), Tensor::zeros({1, 2, 4}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(FuseTokens, MatchesSumThenLinearOracle) {
  ParamStore store(17);
  GroupRepresentationGenerator g(store, "grg", tiny());
  randomize(store, 18);
  Rng rng(19);
  Tensor s = random_tensor(rng, {1, 2, 4}), i = random_tensor(rng, {1, 2, 4});
  Mat expected = oracle_linear(g.fuse, naive_add(Mat(2, 4, s.data()), Mat(2, 4, i.data())));
  EXPECT_LE(max_abs_diff(g.fuse_tokens(s, i).data(), expected.v), 1e-12);
  EXPECT_THROW(g.fuse_tokens(s, Tensor::zeros({1, 3, 4})), ShapeError);
}

TEST(FuseTokens, ConcatOption) {
  ParamStore store(20);
  auto cfg = tiny();
  cfg.grg_fusion = Fusion::Concat;
  GroupRepresentationGenerator g(store, "grg", cfg);
  EXPECT_EQ(g.fuse.weight.shape(), (Shape{8, 4}));
  Rng rng(21);
  Tensor s = random_tensor(rng, {1, 2, 4}), i = random_tensor(rng, {1, 2, 4});
  Mat expected = oracle_linear(g.fuse, hconcat({Mat(2, 4, s.data()), Mat(2, 4, i.data())}));
  EXPECT_LE(max_abs_diff(g.fuse_tokens(s, i).data(), expected.v), 1e-12);
}

TEST(Grg, GradCheckIncludingLearnedQuery) {
  ParamStore store(22);
  GroupRepresentationGenerator g(store, "grg", tiny());
  randomize(store, 23, -0.5, 0.5);
  Rng rng(24);
  Tensor scene = random_tensor(rng, {2, 2, 3, 4});
  Tensor x = random_tensor(rng, {2, 2, 3, 4});
  Tensor probe = random_tensor(rng, {2, 2, 4});
  auto report = grad_check([&] { return sum_all(mul(g(scene, x, {}), probe)); }, store.items());
  EXPECT_TRUE(report.pass) << report.max_rel_error;
  bool saw_query = false;
  for (const auto& e : report.entries) saw_query |= e.name == "grg.query";
  EXPECT_TRUE(saw_query);
}
