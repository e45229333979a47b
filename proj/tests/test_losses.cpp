#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "hosnet/losses.hpp"
#include "oracles.hpp"

using namespace hosnet;
using namespace hosnet::testing;

namespace {

const double kPairClosedForm = -2.0 * std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));

Tensor orthonormal2() { return Tensor::matrix({{1, 0, 0}, {0, 1, 0}}); }

SlotCenters equal_slots() {
  SlotCenters c;
  for (std::size_t s = 0; s < 4; ++s) c[s] = {orthonormal2(), slot_name(s)};
  return c;
}

BatchFeatures random_batch(std::mt19937_64& rng, std::size_t P, std::size_t K, std::size_t D, bool middle) {
  BatchFeatures f;
  f.P = P;
  f.K = K;
  for (std::size_t s = 0; s < 4; ++s) {
    f.enhanced[s] = l2_normalize_rows(randn({P * K, D}, rng));
    if (middle) f.middle[s] = l2_normalize_rows(randn({P * K, D}, rng));
  }
  f.embedding = randn({2 * P * K, 2 * D}, rng);
  f.inference = l2_normalize_rows(f.embedding);
  for (int rep = 0; rep < 2; ++rep)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t k = 0; k < K; ++k) f.labels.push_back(p);
  return f;
}

}  // namespace

TEST(IdentityCenter, SingleFeatureIsItself) {
  const Tensor r = Tensor::matrix({{0.3, -1.2, 2.0}});
  EXPECT_TRUE(bitwise_equal(identity_center(r).data(), r.data()));
}

TEST(IdentityCenter, IdenticalFeaturesReturnThatFeature) {
  const Tensor r = Tensor::matrix({{0.5, 0.25}, {0.5, 0.25}, {0.5, 0.25}});
  const Tensor c = identity_center(r);
  EXPECT_NEAR(c[0], 0.5, 1e-15);
  EXPECT_NEAR(c[1], 0.25, 1e-15);
}

TEST(IdentityCenter, MatchesTwoLoopOracleAndStaysInHull) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor r = randn({4, 3}, rng, 0.5);
    const Tensor c = identity_center(r);
    EXPECT_LT(max_abs_diff(c.data(), std::span<const double>(oracle::identity_center(to_mat(r)))), 1e-10);
    for (std::size_t d = 0; d < 3; ++d) {
      double lo = r.at(0, d), hi = lo;
      for (std::size_t k = 1; k < 4; ++k) {
        lo = std::min(lo, r.at(k, d));
        hi = std::max(hi, r.at(k, d));
      }
      EXPECT_GE(c[d], lo - 1e-12);
      EXPECT_LE(c[d], hi + 1e-12);
    }
  }
}

TEST(IdentityCenters, BatchedMatchesPerGroup) {
  std::mt19937_64 rng(2);
  const Tensor f = randn({6, 3}, rng);
  const Tensor c = identity_centers(f, 3, 2);
  for (std::size_t p = 0; p < 3; ++p) {
    const Tensor one = identity_center(slice_rows(f, 2 * p, 2 * p + 2));
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(c.at(p, d), one[d], 1e-14);
  }
  EXPECT_THROW(identity_centers(f, 4, 2), DimensionError);
}

TEST(MricPair, EqualOrthonormalClosedForm) {
  const double v = mric_pair(orthonormal2(), orthonormal2()).item();
  EXPECT_NEAR(v, kPairClosedForm, 1e-12);
  EXPECT_NEAR(v, 0.6266, 1e-3);
}

TEST(MricPair, MatchesPseudocodeOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng);
    EXPECT_NEAR(mric_pair(a, b).item(), oracle::mric_pair(to_mat(a), to_mat(b)), 1e-10);
  }
}

TEST(MricPair, ContrastiveTermIsScaleInvariant) {
  std::mt19937_64 rng(4);
  const Tensor a = randn({3, 4}, rng);
  // A = B removes the L1 term; the cosine part ignores a positive rescale
  EXPECT_NEAR(mric_pair(a, a).item(), mric_pair(scale(a, 7.3), scale(a, 7.3)).item(), 1e-12);
}

TEST(MricPair, JointIdentityPermutationInvariant) {
  std::mt19937_64 rng(5);
  const Tensor a = randn({4, 3}, rng), b = randn({4, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  EXPECT_NEAR(mric_pair(a, b).item(), mric_pair(index_select(a, perm), index_select(b, perm)).item(), 1e-12);
}

TEST(MricPair, CardinalityMismatchIsContractError) {
  EXPECT_THROW(mric_pair(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), ContractError);
  EXPECT_THROW(mric_pair(CenterSet{Tensor::zeros({2, 3}), "a"}, CenterSet{Tensor::zeros({3, 3}), "b"}),
               ContractError);
}

TEST(MricComposites, EqualOrthonormalClosedForms) {
  const auto c = equal_slots();
  EXPECT_NEAR(mric_sl(c).item(), 2.0 * kPairClosedForm, 1e-12);
  EXPECT_NEAR(mric_mid(c).item(), 6.0 * kPairClosedForm, 1e-12);
  const CenterSet v{orthonormal2(), "vis"}, i{orthonormal2(), "ir"}, m{orthonormal2(), "mid"};
  EXPECT_NEAR(mric_vim(v, i, &m).item(), 3.0 * kPairClosedForm, 1e-12);
  EXPECT_NEAR(mric_vim(v, i, nullptr).item(), kPairClosedForm, 1e-12);
  SlotCenters missing = c;
  missing[2].centers = Tensor();
  EXPECT_THROW(mric_sl(missing), ContractError);
}

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  ClassifierParams cls{Tensor::zeros({3, 5}), Tensor::zeros({5})};
  std::mt19937_64 rng(6);
  EXPECT_NEAR(ce_loss(randn({4, 3}, rng), {0, 1, 2, 4}, cls).item(), std::log(5.0), 1e-14);
}

TEST(Triplet, SeparatedIdentitiesGiveZero) {
  // identical features per identity, orthogonal across: d_ap = 0, d_an = √2 > margin
  const Tensor f = Tensor::matrix({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const auto r = triplet_loss(f, {0, 0, 1, 1}, 0.3);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-12);
  EXPECT_EQ(r.anchors_used, 4u);
}

TEST(Triplet, CoincidentIdentitiesGiveMargin) {
  const Tensor f = Tensor::matrix({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
  EXPECT_NEAR(triplet_loss(f, {0, 0, 1, 1}, 0.3).loss.item(), 0.3, 1e-5);
}

TEST(Triplet, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor f = randn({8, 3}, rng);
    const std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2, 3, 3};
    const Mat x = to_mat(l2_normalize_rows(f));
    auto dist = [&](std::size_t i, std::size_t j) {
      double s = 0.0;
      for (std::size_t d = 0; d < 3; ++d) s += (x[i][d] - x[j][d]) * (x[i][d] - x[j][d]);
      return std::sqrt(s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      double hp = 0.0, hn = 1e9;
      for (std::size_t j = 0; j < 8; ++j) {
        if (j == i) continue;
        if (labels[j] == labels[i]) hp = std::max(hp, dist(i, j));
        else hn = std::min(hn, dist(i, j));
      }
      total += std::max(hp - hn + 0.3, 0.0);
    }
    EXPECT_NEAR(triplet_loss(f, labels, 0.3).loss.item(), total / 8.0, 1e-9);
  }
}

TEST(Triplet, NoPositivesFlagsAllSkipped) {
  const auto r = triplet_loss(Tensor::matrix({{1, 0}, {0, 1}}), {0, 1}, 0.3);
  EXPECT_TRUE(r.all_skipped);
  EXPECT_EQ(r.loss.item(), 0.0);
}

TEST(JointLoss, TotalIsSumOfComponents) {
  std::mt19937_64 rng(8);
  ParameterStore ps;
  Rng r(0);
  const auto cls = ClassifierParams::create(ps, 8, 3, r);
  const auto f = random_batch(rng, 3, 2, 4, true);
  const auto l = joint_loss(f, cls, LossConfig{});
  EXPECT_NEAR(l.total.item(),
              l.ce.item() + l.tri.item() + l.mric_sl.item() + l.mric_mid.item() + l.mric_vim.item(), 1e-12);
  LossConfig off;
  off.mric = false;
  const auto m = joint_loss(f, cls, off);
  EXPECT_EQ(m.mric_sl.item() + m.mric_mid.item() + m.mric_vim.item(), 0.0);
  EXPECT_NEAR(m.total.item(), m.ce.item() + m.tri.item(), 1e-12);
}

TEST(JointLoss, AllZeroFeaturesStayFinite) {
  ParameterStore ps;
  Rng r(0);
  const auto cls = ClassifierParams::create(ps, 8, 2, r);
  BatchFeatures f;
  f.P = 2;
  f.K = 2;
  for (std::size_t s = 0; s < 4; ++s) f.enhanced[s] = f.middle[s] = Tensor::zeros({4, 4});
  f.embedding = f.inference = Tensor::zeros({8, 8});
  f.labels = {0, 0, 1, 1, 0, 0, 1, 1};
  EXPECT_TRUE(std::isfinite(joint_loss(f, cls, LossConfig{}).total.item()));
}

TEST(MricTerms, NonnegativeOnRandomBatches) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto f = random_batch(rng, 2 + trial % 3, 1 + trial % 2, 3, trial % 2 == 0);
    const auto t = mric_terms(f, LossConfig{});
    EXPECT_GE(t.sl.item(), 0.0);
    EXPECT_GE(t.mid.item(), 0.0);
    EXPECT_GE(t.vim.item(), 0.0);
  }
}
