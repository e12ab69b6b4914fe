#include <gtest/gtest.h>

#include "oracles.hpp"
#include "proclip/tensor.hpp"
#include "test_util.hpp"

using namespace proclip;
using testing_util::fd_error;
using testing_util::random_matrix;

namespace {

void expect_near(const Matrix& got, const oracle::Mat& want, double tol) {
  ASSERT_EQ(static_cast<std::size_t>(got.rows()), want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[i].size(); ++j) EXPECT_NEAR(got(i, j), want[i][j], tol) << i << "," << j;
}

// Weighted sum so each output entry gets a distinct upstream gradient.
Var contract(const Var& out, const Matrix& w) { return sum(mul(out, constant(w))); }

}  // namespace

TEST(Tensor, MatmulMatchesTripleLoop) {
  CounterRng rng(3);
  const Matrix a = random_matrix(rng, 4, 3);
  const Matrix b = random_matrix(rng, 3, 5);
  expect_near(matmul(Var(a), Var(b)).value(), oracle::matmul(oracle::from(a), oracle::from(b)), 1e-12);
  expect_near(matmul_nt(Var(a), Var(b.transpose())).value(), oracle::matmul(oracle::from(a), oracle::from(b)), 1e-12);
  EXPECT_THROW(matmul(Var(a), Var(a)), std::invalid_argument);
}

TEST(Tensor, SoftmaxRowsIsStableAndNormalized) {
  Matrix big(2, 3);
  big << 1000, 1001, 1002, -1000, -1000, -1000;
  const Matrix s = softmax_rows(Var(big)).value();
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s.row(0).sum(), 1.0, 1e-12);
  EXPECT_NEAR(s(1, 0), 1.0 / 3.0, 1e-12);
  expect_near(s, oracle::softmax_rows(oracle::from(big)), 1e-12);
  const Matrix ls = log_softmax_rows(Var(big)).value();
  EXPECT_NEAR(ls(0, 2), std::log(s(0, 2)), 1e-12);
}

TEST(Tensor, LayerNormMatchesReference) {
  CounterRng rng(5);
  const Matrix x = random_matrix(rng, 3, 6);
  const Matrix g = random_matrix(rng, 1, 6);
  const Matrix b = random_matrix(rng, 1, 6);
  expect_near(layer_norm_rows(Var(x), Var(g), Var(b)).value(),
              oracle::layer_norm(oracle::from(x), oracle::from(g), oracle::from(b)), 1e-12);
}

TEST(Tensor, GeluUsesExactErf) {
  Matrix x(1, 3);
  x << -1.5, 0.0, 2.0;
  const Matrix y = gelu(Var(x)).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(0, i), oracle::gelu(x(0, i)), 1e-15);
}

TEST(Tensor, L2NormalizeRejectsZeroRow) {
  EXPECT_THROW(l2_normalize_rows(Var(Matrix::Zero(1, 3))), std::domain_error);
}

TEST(Tensor, OpGradientsMatchFiniteDifferences) {
  CounterRng rng(11);
  const Matrix w34 = random_matrix(rng, 3, 4);
  const Matrix w33 = random_matrix(rng, 3, 3);
  const Matrix w11 = random_matrix(rng, 1, 1);
  struct Case {
    const char* name;
    std::vector<Var> leaves;
    std::function<Var(const std::vector<Var>&)> f;
  };
  std::vector<Case> cases = {
      {"matmul", {Var(random_matrix(rng, 3, 2)), Var(random_matrix(rng, 2, 4))},
       [&](const auto& v) { return contract(matmul(v[0], v[1]), w34); }},
      {"matmul_nt", {Var(random_matrix(rng, 3, 2)), Var(random_matrix(rng, 4, 2))},
       [&](const auto& v) { return contract(matmul_nt(v[0], v[1]), w34); }},
      {"transpose", {Var(random_matrix(rng, 4, 3))}, [&](const auto& v) { return contract(transpose(v[0]), w34); }},
      {"add_sub_mul", {Var(random_matrix(rng, 3, 4)), Var(random_matrix(rng, 3, 4))},
       [&](const auto& v) { return contract(mul(add(v[0], v[1]), sub(v[0], v[1])), w34); }},
      {"scale_add_scalar", {Var(random_matrix(rng, 3, 4))},
       [&](const auto& v) { return contract(add_scalar(scale(v[0], -1.7), 0.3), w34); }},
      {"relu", {Var(random_matrix(rng, 3, 4))}, [&](const auto& v) { return contract(relu(v[0]), w34); }},
      {"gelu", {Var(random_matrix(rng, 3, 4))}, [&](const auto& v) { return contract(gelu(v[0]), w34); }},
      {"sigmoid", {Var(random_matrix(rng, 3, 4))}, [&](const auto& v) { return contract(sigmoid(v[0]), w34); }},
      {"add_row", {Var(random_matrix(rng, 3, 4)), Var(random_matrix(rng, 1, 4))},
       [&](const auto& v) { return contract(add_row(v[0], v[1]), w34); }},
      {"scale_rows", {Var(random_matrix(rng, 3, 4)), Var(random_matrix(rng, 3, 1))},
       [&](const auto& v) { return contract(scale_rows(v[0], v[1]), w34); }},
      {"softmax", {Var(random_matrix(rng, 3, 4))}, [&](const auto& v) { return contract(softmax_rows(v[0]), w34); }},
      {"log_softmax", {Var(random_matrix(rng, 3, 4))},
       [&](const auto& v) { return contract(log_softmax_rows(v[0]), w34); }},
      {"layer_norm", {Var(random_matrix(rng, 3, 4)), Var(random_matrix(rng, 1, 4)), Var(random_matrix(rng, 1, 4))},
       [&](const auto& v) { return contract(layer_norm_rows(v[0], v[1], v[2]), w34); }},
      {"l2_normalize", {Var(random_matrix(rng, 3, 4))},
       [&](const auto& v) { return contract(l2_normalize_rows(v[0]), w34); }},
      {"mean_rows", {Var(random_matrix(rng, 5, 4))},
       [&](const auto& v) { return contract(mean_rows(v[0]), w34.topRows(1)); }},
      {"diag", {Var(random_matrix(rng, 3, 3))}, [&](const auto& v) { return contract(diag(v[0]), w33.leftCols(1)); }},
      {"concat", {Var(random_matrix(rng, 3, 1)), Var(random_matrix(rng, 3, 3))},
       [&](const auto& v) { return contract(concat_cols(v[0], v[1]), w34); }},
      {"concat_rows", {Var(random_matrix(rng, 1, 4)), Var(random_matrix(rng, 2, 4))},
       [&](const auto& v) { return contract(concat_rows({v[0], v[1]}), w34); }},
      {"slice_cols", {Var(random_matrix(rng, 3, 6))},
       [&](const auto& v) { return contract(slice_cols(v[0], 1, 4), w34); }},
      {"sum", {Var(random_matrix(rng, 2, 2))}, [&](const auto& v) { return contract(sum(mul(v[0], v[0])), w11); }},
  };
  for (auto& c : cases) {
    const auto leaves = c.leaves;
    EXPECT_LT(fd_error(c.leaves, [&] { return c.f(leaves); }), 1e-6) << c.name;
  }
}

TEST(Tensor, SharedSubgraphAccumulatesGradient) {
  Var x(Matrix::Constant(1, 1, 3.0), true);
  const Var y = mul(x, x);
  const Var z = add(y, y);  // 2 x^2
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Var x(Matrix::Ones(2, 2), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(sum(mul(x, x)).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(sum(mul(x, x)).requires_grad());
}

TEST(Tensor, CloneIsDeep) {
  Var a(Matrix::Ones(2, 2), true);
  Var b = a.clone();
  b.mutable_value()(0, 0) = 5.0;
  EXPECT_DOUBLE_EQ(a.value()(0, 0), 1.0);
  EXPECT_TRUE(b.requires_grad());
}
