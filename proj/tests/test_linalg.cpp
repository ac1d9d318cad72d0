#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ftnode/linalg.hpp"
#include "support.hpp"

using namespace ftnode;
using testing_support::random_matrix;

namespace {

Mat reconstruct(const SvdResult& s) {
  Mat us = s.left_vectors;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.singular_values[c];
  return matmul(us, transpose(s.right_vectors));
}

double orthogonality_defect(const Mat& q) {
  return frobenius_norm(matmul(transpose(q), q) - Mat::identity(q.cols()));
}

}  // namespace

TEST(Svd, DiagonalMatrixGivesSortedAbsoluteEntries) {
  const Mat m{{-0.5, 0.0}, {0.0, 3.0}};
  const auto s = svd(m);
  EXPECT_DOUBLE_EQ(s.singular_values[0], 3.0);
  EXPECT_DOUBLE_EQ(s.singular_values[1], 0.5);
  EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-14);
}

TEST(Svd, RotationHasUnitSingularValues) {
  const double a = 0.7;
  const Mat r{{std::cos(a), -std::sin(a)}, {std::sin(a), std::cos(a)}};
  const auto s = svd(r);
  EXPECT_NEAR(s.singular_values[0], 1.0, 1e-15);
  EXPECT_NEAR(s.singular_values[1], 1.0, 1e-15);
}

TEST(Svd, ShearMatchesClosedForm) {
  // [[1, k], [0, 1]] has sigma = (sqrt(k^2 + 4) +- k) / 2
  const double k = 3.0;
  const auto s = svd(Mat{{1.0, k}, {0.0, 1.0}});
  EXPECT_NEAR(s.singular_values[0], (std::sqrt(k * k + 4) + k) / 2, 1e-14);
  EXPECT_NEAR(s.singular_values[1], (std::sqrt(k * k + 4) - k) / 2, 1e-14);
}

TEST(Svd, RandomSquareAndRectangularReconstruct) {
  Rng rng(42);
  for (auto [r, c] : {std::pair{2, 2}, {3, 3}, {5, 2}, {2, 5}, {6, 6}}) {
    const Mat m = random_matrix(rng, r, c);
    const auto s = svd(m);
    EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-12 * (1 + frobenius_norm(m)));
    EXPECT_LT(orthogonality_defect(s.left_vectors), 1e-12);
    EXPECT_LT(orthogonality_defect(s.right_vectors), 1e-12);
    for (std::size_t i = 1; i < s.singular_values.size(); ++i)
      EXPECT_GE(s.singular_values[i - 1], s.singular_values[i]);
  }
}

TEST(Svd, RankDeficientMatrixKeepsOrthonormalFactors) {
  const Mat m{{1.0, 2.0}, {2.0, 4.0}};
  const auto s = svd(m);
  EXPECT_NEAR(s.singular_values[0], 5.0, 1e-14);
  EXPECT_NEAR(s.singular_values[1], 0.0, 1e-14);
  EXPECT_LT(orthogonality_defect(s.left_vectors), 1e-12);
  EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-13);
}

TEST(Svd, SignConventionIsCanonical) {
  Rng rng(3);
  const auto s = svd(random_matrix(rng, 2, 2));
  for (std::size_t c = 0; c < 2; ++c) {
    std::size_t first = 0;
    while (std::abs(s.right_vectors(first, c)) <= 1e-14) ++first;
    EXPECT_GT(s.right_vectors(first, c), 0.0);
  }
}

TEST(Svd, RejectsNonFiniteAndEmpty) {
  EXPECT_THROW(svd(Mat{{1.0, NAN}, {0.0, 1.0}}), InvalidInput);
  EXPECT_THROW(svd(Mat(0, 0)), InvalidInput);
}

TEST(SymEig, MatchesClosedFormFor2x2) {
  // [[2, 1], [1, 2]] -> 3, 1
  const auto e = sym_eig(Mat{{2.0, 1.0}, {1.0, 2.0}});
  EXPECT_NEAR(e.eigenvalues[0], 3.0, 1e-14);
  EXPECT_NEAR(e.eigenvalues[1], 1.0, 1e-14);
  EXPECT_NEAR(std::abs(e.eigenvectors(0, 0)), std::numbers::sqrt2 / 2, 1e-14);
}

TEST(SymEig, RandomSymmetricDiagonalizes) {
  Rng rng(9);
  for (std::size_t n : {2u, 3u, 7u}) {
    const Mat a = random_matrix(rng, n, n);
    const Mat s = matmul(transpose(a), a);
    const auto e = sym_eig(s);
    Mat d(n, n);
    for (std::size_t i = 0; i < n; ++i) d(i, i) = e.eigenvalues[i];
    const Mat back = matmul(matmul(e.eigenvectors, d), transpose(e.eigenvectors));
    EXPECT_LT(frobenius_norm(back - s), 1e-11 * (1 + frobenius_norm(s)));
  }
}

TEST(SymEig, RejectsAsymmetricInput) { EXPECT_THROW(sym_eig(Mat{{1.0, 2.0}, {0.0, 1.0}}), InvalidInput); }

TEST(Determinant, KnownValues) {
  EXPECT_DOUBLE_EQ(determinant(Mat{{0.0, 1.0}, {1.0, 0.0}}), -1.0);
  EXPECT_DOUBLE_EQ(determinant(Mat{{2.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {1.0, 1.0, 4.0}}), 24.0);
  EXPECT_DOUBLE_EQ(determinant(Mat{{1.0, 2.0}, {2.0, 4.0}}), 0.0);
}

TEST(Determinant, ProductOfSingularValuesEqualsAbsDet) {
  Rng rng(17);
  for (int k = 0; k < 20; ++k) {
    const Mat m = random_matrix(rng, 3, 3);
    const auto s = svd(m);
    EXPECT_NEAR(s.singular_values[0] * s.singular_values[1] * s.singular_values[2], std::abs(determinant(m)),
                1e-12 * (1 + std::abs(determinant(m))));
  }
}
