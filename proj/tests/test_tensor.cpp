#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "hosnet/linalg.hpp"
#include "hosnet/ops.hpp"
#include "hosnet/params.hpp"
#include "test_util.hpp"

using namespace hosnet;
using namespace hosnet::testing;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor a = randn({3, 4}, rng);
  EXPECT_EQ(max_abs_diff(matmul(Tensor::eye(3), a), a), 0.0);
}

TEST(Matmul, HandArithmetic) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(2);
  const Tensor a = randn({7, 5}, rng), b = randn({5, 3}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-13);
    }
}

TEST(Matmul, InnerExtentMismatchIsDimensionError) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(SoftmaxRows, ZerosGiveUniformRow) {
  const Tensor s = softmax_rows(Tensor::zeros({1, 4}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SoftmaxRows, LogTwoClosedForm) {
  const Tensor s = softmax_rows(Tensor::matrix({{std::log(2.0), 0.0}}));
  EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, MatchesExpSumOracleAndShiftInvariance) {
  std::mt19937_64 rng(3);
  const Tensor a = randn({6, 6}, rng, 3.0);
  const Tensor s = softmax_rows(a);
  for (std::size_t i = 0; i < 6; ++i) {
    double z = 0.0, row = 0.0;
    for (std::size_t j = 0; j < 6; ++j) z += std::exp(a.at(i, j));
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(s.at(i, j), std::exp(a.at(i, j)) / z, 1e-12);
      row += s.at(i, j);
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
  EXPECT_LT(max_abs_diff(softmax_rows(add_scalar(a, 123.0)), s), 1e-12);
}

TEST(Cholesky, IdentityAndHandCase) {
  EXPECT_EQ(max_abs_diff(cholesky(Tensor::eye(4)), Tensor::eye(4)), 0.0);
  const Tensor L = cholesky(Tensor::matrix({{4, 2}, {2, 5}}));
  EXPECT_LT(max_abs_diff(L, Tensor::matrix({{2, 0}, {1, 2}})), 1e-15);
}

TEST(Cholesky, RandomSpdReconstruction) {
  std::mt19937_64 rng(4);
  const Tensor a = randn({8, 8}, rng);
  const Tensor sigma = add(matmul(transpose(a), a), Tensor::eye(8));
  const Tensor L = cholesky(sigma);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) EXPECT_EQ(L.at(i, j), 0.0);
  EXPECT_LT(max_abs_diff(matmul(L, transpose(L)), sigma), 1e-10);
}

TEST(Cholesky, NonPositivePivotNamesIndex) {
  try {
    cholesky(Tensor::matrix({{1, 2}, {2, 1}}));
    FAIL() << "expected a decomposition error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
}

TEST(SolveLower, MatchesForwardSubstitution) {
  std::mt19937_64 rng(5);
  const Tensor a = randn({5, 5}, rng);
  const Tensor L = cholesky(add(matmul(a, transpose(a)), Tensor::eye(5)));
  const Tensor b = randn({5, 2}, rng);
  EXPECT_LT(max_abs_diff(matmul(L, solve_lower(L, b)), b), 1e-12);
}

TEST(Backward, SumGivesAllOnes) {
  Tensor x = Tensor::zeros({2, 3, 2}, true);
  Tape tape;
  {
    TapeScope s(tape);
    backward(sum(x), tape);
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, QuadraticFormClosedForm) {
  std::mt19937_64 rng(6);
  const Tensor A = randn({4, 3}, rng);
  Tensor x = randn({3, 1}, rng);
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope s(tape);
    const Tensor ax = matmul(A, x);
    backward(sum(mul(ax, ax)), tape);
  }
  const Tensor expect = scale(matmul(matmul(transpose(A), A), x), 2.0);
  EXPECT_LT(max_abs_diff(x.grad(), std::vector<double>(expect.data().begin(), expect.data().end())), 1e-12);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::full({3}, 2.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope s(tape);
    loss = sum(mul(x, x));
  }
  backward(loss, tape);
  backward(loss, tape);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 8.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::zeros({2}, true);
  Tape tape;
  TapeScope s(tape);
  const Tensor y = scale(x, 2.0);
  EXPECT_THROW(backward(y, tape), ContractError);
}

TEST(Backward, VisitsRecordsInReverseOrderAndIsDeterministic) {
  std::mt19937_64 rng(7);
  auto run = [&]() {
    std::mt19937_64 r(8);
    Tensor x = randn({4, 4}, r);
    x.set_requires_grad(true);
    Tape tape;
    {
      TapeScope s(tape);
      const Tensor y = softmax_rows(matmul(x, transpose(x)));
      backward(sum(mul(y, y)), tape);
    }
    EXPECT_EQ(tape.records().front().op, "transpose");
    EXPECT_EQ(tape.records().back().op, "sum");
    return x.grad();
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bitwise_equal(a, b));
}

TEST(Tensor, NonFiniteResultRaises) {
  EXPECT_THROW(log(Tensor::zeros({2})), NumericalError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
}

TEST(FiniteDiff, SumOfSquares) {
  const auto g = finite_diff_grad([](const Tensor& x) { return sum(mul(x, x)).item(); },
                                  Tensor({2}, {1.0, 2.0}));
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, SoftmaxFirstEntryJacobian) {
  // d s0 / d x_j = s0 (δ_0j − s_j); at the origin s = (½, ½).
  const auto g = finite_diff_grad(
      [](const Tensor& x) { return softmax_rows(reshape(x, {1, 2}))[0]; }, Tensor({2}, {0.0, 0.0}));
  EXPECT_NEAR(g[0], 0.25, 1e-9);
  EXPECT_NEAR(g[1], -0.25, 1e-9);
}

TEST(FiniteDiff, CholeskySelfConsistency) {
  std::mt19937_64 rng(9);
  Tensor a = randn({4, 4}, rng);
  const Tensor w = randn({4, 4}, rng);
  auto f = [&](const Tensor& x) {
    return sum(mul(cholesky(add(matmul(x, transpose(x)), Tensor::eye(4))), w));
  };
  a.set_requires_grad(true);
  Tape tape;
  {
    TapeScope s(tape);
    backward(f(a), tape);
  }
  const auto numeric = finite_diff_grad([&](const Tensor& x) { return f(x).item(); }, a);
  const auto analytic = a.grad();
  for (std::size_t i = 0; i < numeric.size(); ++i)
    EXPECT_LT(std::abs(analytic[i] - numeric[i]) / std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3}), 1e-4);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  std::mt19937_64 rng(10);
  ParameterStore a;
  a.add_normal("w", {3, 2}, 1.0, rng);
  a.add_normal("b", {5}, 1.0, rng);
  a.add_buffer("stats", {2}, 0.5);
  a.all()[0].momentum[1] = -3.25;
  const auto path = (std::filesystem::temp_directory_path() / "hosnet_ckpt_test.bin").string();
  save_checkpoint(path, a, {7, "x = 1\n", "rng-state"});
  ParameterStore b;
  b.add_constant("w", {3, 2}, 0.0);
  b.add_constant("b", {5}, 0.0);
  b.add_buffer("stats", {2}, 0.0);
  const auto meta = load_checkpoint(path, b);
  EXPECT_EQ(meta.epoch, 7);
  EXPECT_EQ(meta.config, "x = 1\n");
  EXPECT_EQ(meta.rng_state, "rng-state");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bitwise_equal(a.all()[i].value.data(), b.all()[i].value.data()));
    EXPECT_TRUE(bitwise_equal(a.all()[i].momentum, b.all()[i].momentum));
  }
  ParameterStore wrong;
  wrong.add_constant("w", {2, 3}, 0.0);
  wrong.add_constant("b", {5}, 0.0);
  wrong.add_buffer("stats", {2}, 0.0);
  EXPECT_THROW(load_checkpoint(path, wrong), ContractError);
  std::remove(path.c_str());
}

TEST(Parameters, DuplicateNameRejected) {
  ParameterStore ps;
  ps.add_constant("w", {1}, 0.0);
  EXPECT_THROW(ps.add_constant("w", {1}, 0.0), ContractError);
}
