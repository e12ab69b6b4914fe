#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "proclip/frame_sampler.hpp"
#include "proclip/trainer.hpp"
#include "test_util.hpp"

using namespace proclip;
using testing_util::fd_error;
using testing_util::random_matrix;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Var column(const Eigen::VectorXd& v) { return Var(Matrix(v)); }

struct Scorer {
  ParamStore store;
  ScorerParams params;
  Scorer(Eigen::Index dim, Eigen::Index hidden, std::uint64_t seed = 1) {
    CounterRng rng(seed);
    params = make_scorer(store, rng, dim, hidden);
  }
  void constant_head(const MlpParams& head, double out_bias) {
    store[head.hidden.weight].mutable_value().setZero();
    store[head.hidden.bias].mutable_value().setZero();
    store[head.out.weight].mutable_value().setZero();
    store[head.out.bias].mutable_value().setConstant(out_bias);
  }
  oracle::Vec head_reference(const MlpParams& head, const oracle::Mat& x) const {
    const oracle::Mat h = oracle::map(oracle::linear(store, head.hidden, x), oracle::gelu);
    oracle::Vec out;
    for (const auto& row : oracle::linear(store, head.out, h)) out.push_back(row[0]);
    return out;
  }
};

}  // namespace

TEST(FrameSampler, ConstantHeadsGiveHalf) {
  Scorer s(3, 4);
  s.constant_head(s.params.frame_head, 1.0);
  s.constant_head(s.params.fused_head, 0.0);
  CounterRng rng(1);
  const Matrix scores = frame_scores(s.store, s.params, Var(random_matrix(rng, 5, 3)), Var(random_matrix(rng, 5, 3))).value();
  for (int j = 0; j < 5; ++j) EXPECT_EQ(scores(j, 0), 0.5);
}

TEST(FrameSampler, SaturatedRelevanceReturnsLogits) {
  Scorer s(3, 4, 2);
  s.constant_head(s.params.fused_head, 40.0);
  CounterRng rng(2);
  const Matrix frames = random_matrix(rng, 4, 3);
  const Matrix scores = frame_scores(s.store, s.params, Var(frames), Var(random_matrix(rng, 4, 3))).value();
  const oracle::Vec logits = s.head_reference(s.params.frame_head, oracle::from(frames));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(scores(j, 0), logits[j], 1e-6);
}

TEST(FrameSampler, ScoresMatchScriptedPerceptrons) {
  Scorer s(3, 5, 3);
  CounterRng rng(3);
  const Matrix frames = random_matrix(rng, 4, 3);
  const Matrix y = random_matrix(rng, 4, 3);
  const Matrix scores = frame_scores(s.store, s.params, Var(frames), Var(y)).value();
  const oracle::Vec logits = s.head_reference(s.params.frame_head, oracle::from(frames));
  const oracle::Vec relevance = s.head_reference(s.params.fused_head, oracle::from(y));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(scores(j, 0), logits[j] * oracle::sigmoid(relevance[j]), 1e-12);
  EXPECT_THROW(frame_scores(s.store, s.params, Var(frames), Var(random_matrix(rng, 3, 3))), std::invalid_argument);
}

TEST(FrameSampler, ScoreGradientsMatchFiniteDifferences) {
  Scorer s(3, 4, 4);
  CounterRng rng(4);
  const Matrix frames = random_matrix(rng, 5, 3);
  const Matrix y = random_matrix(rng, 5, 3);
  const Matrix w = random_matrix(rng, 5, 1);
  std::vector<Var> leaves;
  for (auto& e : s.store.entries()) leaves.push_back(e.var);
  leaves.push_back(Var(frames));
  leaves.push_back(Var(y));
  const double err = fd_error(leaves, [&] {
    return sum(mul(frame_scores(s.store, s.params, leaves[leaves.size() - 2], leaves.back()), constant(w)));
  });
  EXPECT_LT(err, 1e-4);
  EXPECT_LT(grad_check("scorer").max_relative_error, 1e-4);
}

TEST(FrameSampler, TopkExamples) {
  const auto a = topk_infer(vec({0.1, 0.9, 0.5}), 2);
  EXPECT_EQ(a.indices, (std::vector<int>{1, 2}));
  const double e = std::exp(0.4);
  EXPECT_NEAR(a.alpha(0), e / (1 + e), 1e-12);
  EXPECT_NEAR(a.alpha(0), 0.599, 1e-3);
  EXPECT_NEAR(a.alpha(1), 0.401, 1e-3);

  const auto tied = topk_infer(vec({0.3, 0.3, 0.3, 0.3}), 2);
  EXPECT_EQ(tied.indices, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(tied.alpha(0), 0.5);
  EXPECT_DOUBLE_EQ(tied.alpha(1), 0.5);

  const Eigen::VectorXd s = vec({0.2, -1.0, 3.0});
  const auto all = topk_infer(s, 3);
  EXPECT_EQ(all.indices, (std::vector<int>{0, 1, 2}));
  const oracle::Vec ref = oracle::softmax({0.2, -1.0, 3.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(all.alpha(i), ref[i], 1e-12);
  EXPECT_EQ(all.scores_all, s);

  EXPECT_THROW(topk_infer(s, 4), std::invalid_argument);
  EXPECT_THROW(topk_infer(s, 0), std::invalid_argument);
}

TEST(FrameSampler, TopkMatchesExhaustiveSort) {
  CounterRng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<int>(rng.uniform_int(1, 32));
    const auto k = static_cast<int>(rng.uniform_int(1, std::min(n, 12)));
    oracle::Vec scores(n);
    // Coarse grid so ties occur.
    for (double& x : scores) x = static_cast<double>(rng.uniform_int(-4, 4)) * 0.25;
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(scores.data(), n);
    const auto sel = topk_infer(v, k);
    ASSERT_EQ(sel.indices, oracle::topk_by_sort(scores, k));
    ASSERT_NEAR(sel.alpha.sum(), 1.0, 1e-6);
    for (int i = 0; i < k; ++i) {
      ASSERT_GT(sel.alpha(i), 0.0);
      for (int j = 0; j < k; ++j) {
        if (scores[sel.indices[i]] > scores[sel.indices[j]]) ASSERT_GT(sel.alpha(i), sel.alpha(j));
      }
    }
  }
}

TEST(FrameSampler, HardTopkLowTemperatureIsOneHot) {
  const auto sel = hard_topk_train(column(vec({0.1, 0.9, 0.5})), 2, 1e-4);
  const Matrix& w = sel.weights.value();
  ASSERT_EQ(w.rows(), 2);
  EXPECT_NEAR(w(0, 1), 1.0, 1e-6);
  EXPECT_NEAR(w(1, 2), 1.0, 1e-6);
  EXPECT_NEAR(w(0, 0) + w(0, 2), 0.0, 1e-6);
  EXPECT_NEAR(w(1, 0) + w(1, 1), 0.0, 1e-6);
  std::vector<int> claimed = sel.claimed;
  std::sort(claimed.begin(), claimed.end());
  EXPECT_EQ(claimed, topk_infer(vec({0.1, 0.9, 0.5}), 2).indices);
}

TEST(FrameSampler, HardTopkHighTemperatureIsUniform) {
  const auto sel = hard_topk_train(column(vec({0.1, 0.9, 0.5})), 1, 1e4);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(sel.weights.value()(0, j), 1.0 / 3.0, 1e-3);
  EXPECT_THROW(hard_topk_train(column(vec({0.1, 0.9})), 3, 1.0), std::invalid_argument);
  EXPECT_THROW(hard_topk_train(column(vec({0.1, 0.9})), 1, 0.0), std::invalid_argument);
  EXPECT_THROW(hard_topk_train(column(vec({0.1, 0.9})), 1, -2.0), std::invalid_argument);
}

TEST(FrameSampler, HardTopkRowsAreStochasticWithDistinctArgmax) {
  CounterRng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<int>(rng.uniform_int(1, 32));
    const auto k = static_cast<int>(rng.uniform_int(1, std::min(n, 12)));
    const double tau = std::exp(rng.uniform(std::log(1e-4), std::log(1e3)));
    const auto sel = hard_topk_train(Var(random_matrix(rng, n, 1, 2.0)), k, tau);
    const Matrix& w = sel.weights.value();
    ASSERT_EQ(w.rows(), k);
    ASSERT_GE(w.minCoeff(), 0.0);
    for (int r = 0; r < k; ++r) ASSERT_NEAR(w.row(r).sum(), 1.0, 1e-5);
    ASSERT_EQ(std::set<int>(sel.claimed.begin(), sel.claimed.end()).size(), static_cast<std::size_t>(k));
  }
}

TEST(FrameSampler, LowTemperatureLimitMatchesExactSelection) {
  CounterRng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<int>(rng.uniform_int(1, 32));
    const auto k = static_cast<int>(rng.uniform_int(1, std::min(n, 12)));
    const Matrix scores = random_matrix(rng, n, 1);
    const auto sel = hard_topk_train(Var(scores), k, 1e-4);
    std::set<int> argmaxes;
    for (int r = 0; r < k; ++r) {
      Eigen::Index j = 0;
      sel.weights.value().row(r).maxCoeff(&j);
      argmaxes.insert(static_cast<int>(j));
    }
    const auto exact = topk_infer(scores.col(0), k);
    ASSERT_EQ(std::vector<int>(argmaxes.begin(), argmaxes.end()), exact.indices);
  }
}

TEST(FrameSampler, HardTopkGradientsMatchFiniteDifferences) {
  CounterRng rng(8);
  const Matrix w = random_matrix(rng, 3, 6);
  std::vector<Var> leaves{Var(random_matrix(rng, 6, 1))};
  const double err = fd_error(leaves, [&] { return sum(mul(hard_topk_train(leaves[0], 3, 0.7).weights, constant(w))); });
  EXPECT_LT(err, 1e-4);
  EXPECT_LT(grad_check("hard_topk").max_relative_error, 1e-4);
}

TEST(FrameSampler, AnnealSchedule) {
  EXPECT_EQ(anneal_temperature(0), 5.0);
  EXPECT_NEAR(anneal_temperature(10), 5.0 * std::exp(-0.45), 1e-12);
  for (long step = 0; step < 500; ++step) ASSERT_LT(anneal_temperature(step + 1), anneal_temperature(step));
  EXPECT_THROW(anneal_temperature(-1), std::invalid_argument);
}

TEST(FrameSampler, SelectionIsDeterministic) {
  CounterRng rng(9);
  const Matrix scores = random_matrix(rng, 20, 1);
  const auto a = hard_topk_train(Var(scores), 5, 0.3);
  const auto b = hard_topk_train(Var(scores), 5, 0.3);
  EXPECT_EQ(a.weights.value(), b.weights.value());
  EXPECT_EQ(a.claimed, b.claimed);
  EXPECT_EQ(topk_infer(scores.col(0), 5).alpha, topk_infer(scores.col(0), 5).alpha);
}
