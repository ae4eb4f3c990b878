#include <gtest/gtest.h>

#include <cmath>

#include "cstt/grad_check.hpp"
#include "cstt/heads.hpp"
#include "layer_oracles.hpp"

using namespace cstt;
using namespace cstt::testing;

namespace {

ModelConfig head_cfg() {
  ModelConfig c;
  c.width = 4;
  c.group_classes = 5;
  c.action_classes = 3;
  return c;
}

double oracle_ce(const std::vector<double>& logits, std::size_t k, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t r = 0; r < y.size(); ++r) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[r * k + j] - m);
    total += -(logits[r * k + static_cast<std::size_t>(y[r])] - m - std::log(z));
  }
  return total / static_cast<double>(y.size());
}

}  // namespace

TEST(GroupLogits, SingleFrameIsLinearOfThatFrame) {
  ParamStore store(1);
  Heads h(store, "head", head_cfg());
  randomize(store, 2);
  Rng rng(3);
  Tensor x = random_tensor(rng, {1, 1, 4});
  Mat expected = oracle_linear(h.group, Mat(1, 4, x.data()));
  EXPECT_LE(max_abs_diff(h.group_logits(x).data(), expected.v), 1e-15);
}

TEST(GroupLogits, ConstantOverTimeMatchesSingleFrame) {
  ParamStore store(4);
  Heads h(store, "head", head_cfg());
  randomize(store, 5);
  Tensor one = Tensor::from({1, 1, 4}, {0.5, -1, 2, 0.25});
  Tensor three = Tensor::from({1, 3, 4}, {0.5, -1, 2, 0.25, 0.5, -1, 2, 0.25, 0.5, -1, 2, 0.25});
  EXPECT_LE(max_abs_diff(h.group_logits(one), h.group_logits(three)), 1e-12);
}

TEST(GroupLogits, MatchesMeanThenLinearOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    Heads h(store, "head", head_cfg());
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor x = random_tensor(rng, {2, 3, 4});
    Tensor y = h.group_logits(x);
    for (std::size_t b = 0; b < 2; ++b) {
      Mat m(1, 4);
      for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t j = 0; j < 4; ++j) m(0, j) += x.at({b, t, j}) / 3.0;
      ASSERT_LE(max_abs_diff(y.data().subspan(b * 5, 5), oracle_linear(h.group, m).v), 1e-12);
    }
  }
}

TEST(GroupLogits, LastFramePooling) {
  ParamStore store(6);
  auto cfg = head_cfg();
  cfg.group_pooling = GroupPooling::Last;
  Heads h(store, "head", cfg);
  Rng rng(7);
  Tensor x = random_tensor(rng, {2, 3, 4});
  Tensor y = h.group_logits(x);
  for (std::size_t b = 0; b < 2; ++b) {
    Mat last(1, 4, x.data().subspan((b * 3 + 2) * 4, 4));
    EXPECT_LE(max_abs_diff(y.data().subspan(b * 5, 5), oracle_linear(h.group, last).v), 1e-12);
  }
}

TEST(IndividualLogits, SingleIndividualSingleFrame) {
  ParamStore store(8);
  Heads h(store, "head", head_cfg());
  randomize(store, 9);
  Tensor x = Tensor::from({1, 1, 1, 4}, {1, 2, 3, 4});
  Mat expected = oracle_linear(h.individual, Mat(1, 4, x.data()));
  EXPECT_LE(max_abs_diff(h.individual_logits(x).data(), expected.v), 1e-15);
}

TEST(IndividualLogits, DuplicatedIndividualsGiveIdenticalRows) {
  ParamStore store(10);
  Heads h(store, "head", head_cfg());
  randomize(store, 11);
  Rng rng(12);
  Tensor row = random_tensor(rng, {2, 1, 4});
  std::vector<double> v;
  for (std::size_t t = 0; t < 2; ++t)
    for (int n = 0; n < 2; ++n)
      for (std::size_t j = 0; j < 4; ++j) v.push_back(row.data()[t * 4 + j]);
  Tensor y = h.individual_logits(Tensor::from({1, 2, 2, 4}, v));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y.data()[j], y.data()[3 + j]);
}

TEST(IndividualLogits, MatchesMeanThenLinearOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    Heads h(store, "head", head_cfg());
    randomize(store, seed + 1);
    Rng rng(seed + 2);
    Tensor x = random_tensor(rng, {2, 3, 2, 4});
    Tensor y = h.individual_logits(x);
    ASSERT_EQ(y.shape(), (Shape{2, 2, 3}));
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t n = 0; n < 2; ++n) {
        Mat m(1, 4);
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t j = 0; j < 4; ++j) m(0, j) += x.at({b, t, n, j}) / 3.0;
        ASSERT_LE(max_abs_diff(y.data().subspan((b * 2 + n) * 3, 3),
                               oracle_linear(h.individual, m).v),
                  1e-12);
      }
  }
}

TEST(IndividualLogits, CenterFramePooling) {
  ParamStore store(13);
  auto cfg = head_cfg();
  cfg.individual_pooling = IndividualPooling::Center;
  Heads h(store, "head", cfg);
  Rng rng(14);
  Tensor x = random_tensor(rng, {1, 3, 2, 4});
  Tensor y = h.individual_logits(x);
  Mat center(2, 4, x.data().subspan(8, 8));
  EXPECT_LE(max_abs_diff(y.data(), oracle_linear(h.individual, center).v), 1e-12);
}

TEST(CombinedLoss, UniformLogitsGiveLogOfClassCount) {
  std::vector<int> yg{3, 0}, ya{0, 1};
  Tensor l = combined_loss(Tensor::zeros({2, 8}), yg, Tensor::zeros({2, 3}), ya, 0.0);
  EXPECT_NEAR(l.item(), std::log(8.0), 1e-12);
}

TEST(CombinedLoss, SaturatedCorrectPredictionIsNearZero) {
  std::vector<int> yg{1}, ya{2, 0};
  Tensor g = Tensor::from({1, 3}, {0, 1000, 0});
  Tensor a = Tensor::from({1, 2, 3}, {0, 0, 1000, 1000, 0, 0});
  EXPECT_LE(combined_loss(g, yg, a, ya, 1.0).item(), 1e-3);
}

TEST(CombinedLoss, MatchesLogSoftmaxOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor g = random_tensor(rng, {3, 5}, -4, 4);
    Tensor a = random_tensor(rng, {3, 2, 4}, -4, 4);
    std::vector<int> yg(3), ya(6);
    for (int& y : yg) y = static_cast<int>(rng.index(5));
    for (int& y : ya) y = static_cast<int>(rng.index(4));
    const double lambda = seed == 0 ? 1.0 : rng.uniform(0, 3);
    std::vector<double> gv(g.data().begin(), g.data().end()), av(a.data().begin(), a.data().end());
    const double expected = oracle_ce(gv, 5, yg) + lambda * oracle_ce(av, 4, ya);
    const double got = combined_loss(g, yg, a, ya, lambda).item();
    ASSERT_NEAR(got, expected, 1e-12);
    ASSERT_GE(got, 0.0);
    ASSERT_EQ(combined_loss(g, yg, a, ya, 0.0).item(), cross_entropy(g, yg).item());
    // shift invariance per head
    Tensor g_shift = add(g, Tensor::full({5}, 7.5));
    ASSERT_NEAR(combined_loss(g_shift, yg, a, ya, lambda).item(), got, 1e-9);
  }
}

TEST(CombinedLoss, OutOfRangeLabelIsContractError) {
  std::vector<int> yg{5}, ya{0};
  EXPECT_THROW(combined_loss(Tensor::zeros({1, 5}), yg, Tensor::zeros({1, 3}), ya, 1.0),
               ContractError);
}

TEST(CombinedLoss, GradCheck) {
  Rng rng(30);
  Tensor g = random_param(rng, {3, 5}, -2, 2);
  Tensor a = random_param(rng, {3, 2, 4}, -2, 2);
  std::vector<int> yg{0, 4, 2}, ya{1, 3, 0, 0, 2, 1};
  auto report = grad_check([&] { return combined_loss(g, yg, a, ya, 1.0); },
                           {{"group", g}, {"individual", a}});
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(Argmax, TiesGoToLowestIndex) {
  Tensor l = Tensor::from({2, 3}, {0, 0, 0, 1, 5, 5});
  EXPECT_EQ(argmax_rows(l), (std::vector<int>{0, 1}));
}
