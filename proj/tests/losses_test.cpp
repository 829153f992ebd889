#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hofmn/losses.hpp"
#include "test_support.hpp"

namespace hofmn {
namespace {

using testing::uniform_vector;

Vector logits(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

TEST(LossValue, LogitDifference) {
  EXPECT_DOUBLE_EQ(loss_value(LossKind::ll, logits({2, 5}), 0), -3.0);
}

TEST(LossValue, DifferenceOfLogitsRatio) {
  EXPECT_DOUBLE_EQ(loss_value(LossKind::dlr, logits({3, 1, 0, -1}), 0), 2.0 / 3.0);
}

TEST(LossValue, CrossEntropyIsLogSoftmax) {
  EXPECT_NEAR(loss_value(LossKind::ce, logits({0, 0}), 0), std::log(0.5), 1e-15);
  // Large logits must not overflow.
  EXPECT_NEAR(loss_value(LossKind::ce, logits({1000, 0}), 0), 0.0, 1e-15);
}

TEST(LossValue, DlrErrors) {
  EXPECT_THROW(loss_value(LossKind::dlr, logits({1, 2}), 0), unsupported_configuration);
  EXPECT_THROW(loss_value(LossKind::dlr, logits({1, 1, 1}), 0), degenerate_denominator);
}

TEST(LossValue, RejectsBadLabel) {
  EXPECT_THROW(loss_value(LossKind::ll, logits({1, 2}), 2), rejected_input);
}

TEST(Names, RoundTrip) {
  for (auto kind : {LossKind::ce, LossKind::ll, LossKind::dlr})
    EXPECT_EQ(loss_kind_from_string(to_string(kind)), kind);
  EXPECT_THROW(loss_kind_from_string("mse"), rejected_input);
}

TEST(IsAdversarial, ArgmaxWithLowestIndexTies) {
  EXPECT_TRUE(is_adversarial(logits({2, 5}), 0));
  EXPECT_FALSE(is_adversarial(logits({5, 5}), 0));
  EXPECT_TRUE(is_adversarial(logits({5, 5}), 1));
}

TEST(IsAdversarial, MatchesLogitLossSignWithoutTies) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> classes(2, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector z = uniform_vector(rng, classes(rng), -5, 5);
    const std::size_t y = rng() % static_cast<std::size_t>(z.size());
    EXPECT_EQ(is_adversarial(z, y), loss_value(LossKind::ll, z, y) < 0.0);
  }
}

TEST(SortedLogitIndices, DescendingPermutation) {
  const auto order = sorted_logit_indices(logits({0.5, 2.0, -1.0, 2.0}));
  EXPECT_EQ(order, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Invariance, DlrScaleAndShift) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector z = uniform_vector(rng, 5, -3, 3);
    const std::size_t y = rng() % 5;
    const double base = loss_value(LossKind::dlr, z, y);
    const double c = std::exp(uniform_vector(rng, 1, -3, 3)[0]);
    EXPECT_NEAR(loss_value(LossKind::dlr, c * z, y), base, 1e-10);
    const Vector shifted = z.array() + 7.25;
    EXPECT_NEAR(loss_value(LossKind::dlr, shifted, y), base, 1e-10);
    EXPECT_NEAR(loss_value(LossKind::ll, shifted, y), loss_value(LossKind::ll, z, y), 1e-10);
    EXPECT_NEAR(loss_value(LossKind::ce, shifted, y), loss_value(LossKind::ce, z, y), 1e-10);
  }
}

TEST(LossGradient, LinearLogitLossIsRowDifference) {
  std::mt19937_64 rng(8);
  const Matrix w = testing::normal_matrix(rng, 4, 6);
  const Model m = Model::linear(w, Vector::Zero(4));
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = uniform_vector(rng, 6);
    const Vector f = m.forward(x);
    const std::size_t y = predict(f);
    Eigen::Index runner = y == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < 4; ++j)
      if (j != static_cast<Eigen::Index>(y) && f[j] > f[runner]) runner = j;
    const Vector expected = (w.row(static_cast<Eigen::Index>(y)) - w.row(runner)).transpose();
    EXPECT_LT((loss_gradient(LossKind::ll, m, x, y) - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(LossGradient, MatchesFiniteDifferencesForAllKinds) {
  std::mt19937_64 rng(99);
  for (auto kind : {LossKind::ce, LossKind::ll, LossKind::dlr}) {
    int checked = 0;
    while (checked < 50) {
      const Model m = testing::random_mlp(rng, 5, 10, 4);
      const Vector x = uniform_vector(rng, 5);
      const std::size_t y = rng() % 4;
      if (testing::kink_distance(m, x) < 1e-3) continue;
      if (testing::branch_gap(m.forward(x), y) < 1e-3) continue;
      const auto head = [&](const Vector& z) { return loss_head(kind, z, y); };
      const Vector fd = finite_diff_gradient(m, x, head, 1e-5);
      // DLR is flat (-1) when y is third and the top class is the strongest other,
      // so compare against an absolute floor as well.
      const Vector g = loss_gradient(kind, m, x, y);
      EXPECT_LE((g - fd).norm(), 1e-4 * std::max(fd.norm(), 1e-8)) << "loss " << to_string(kind);
      ++checked;
    }
  }
}

TEST(LossGradient, SaturatedCrossEntropyIsFlat) {
  Matrix w = Matrix::Zero(3, 2);
  w(0, 0) = 60.0;
  const Model m = Model::linear(w, Vector::Zero(3));
  Vector x(2);
  x << 0.5, 0.5;
  const Vector z = m.forward(x);
  const double zy = std::exp(loss_value(LossKind::ce, z, 0));
  ASSERT_GT(zy, 1.0 - 1e-8);
  EXPECT_LT(loss_gradient(LossKind::ce, m, x, 0).norm(), 1e-6);
}

}  // namespace
}  // namespace hofmn
