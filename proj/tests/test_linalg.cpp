#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "seka/svd.hpp"

using namespace seka;

namespace {

double orthonormality_error(const Matrix& u) {
    const Matrix g = matmul(transpose(u), u);
    return frobenius_distance(g, identity(u.cols));
}

double reconstruction_error(const Matrix& a, const SvdResult& sv) {
    Matrix us = sv.u;
    for (std::size_t i = 0; i < us.rows; ++i)
        for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= sv.s[j];
    return frobenius_distance(matmul(us, transpose(sv.v)), a);
}

void expect_valid_svd(const Matrix& a, const SvdResult& sv) {
    const std::size_t r = std::min(a.rows, a.cols);
    ASSERT_EQ(sv.s.size(), r);
    ASSERT_EQ(sv.u.rows, a.rows);
    ASSERT_EQ(sv.u.cols, r);
    ASSERT_EQ(sv.v.rows, a.cols);
    ASSERT_EQ(sv.v.cols, r);
    for (std::size_t i = 0; i < r; ++i) {
        EXPECT_GE(sv.s[i], 0.0);
        if (i > 0) EXPECT_LE(sv.s[i], sv.s[i - 1]);
    }
    EXPECT_LE(orthonormality_error(sv.u), 1e-10);
    EXPECT_LE(orthonormality_error(sv.v), 1e-10);
    EXPECT_LE(reconstruction_error(a, sv), 1e-8 * std::max(1.0, frobenius_norm(a)));
}

}  // namespace

TEST(Svd, Identity3x3) {
    const Matrix a = identity(3);
    const SvdResult sv = svd(a);
    EXPECT_EQ(sv.u, identity(3));
    EXPECT_EQ(sv.v, identity(3));
    for (double s : sv.s) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(Svd, Diagonal) {
    Matrix a(2, 2);
    a(0, 0) = 3.0;
    a(1, 1) = 1.0;
    const SvdResult sv = svd(a);
    EXPECT_DOUBLE_EQ(sv.s[0], 3.0);
    EXPECT_DOUBLE_EQ(sv.s[1], 1.0);
    EXPECT_EQ(sv.u, identity(2));
    EXPECT_EQ(sv.v, identity(2));
}

TEST(Svd, GramEigenvalueOracle) {
    SplitMix64 rng(20240401);
    const Matrix a = oracles::random_matrix(rng, 4, 3);
    const SvdResult sv = svd(a);
    const std::vector<double> ev = oracles::sym_eigenvalues_desc(matmul(transpose(a), a));
    ASSERT_EQ(ev.size(), sv.s.size());
    for (std::size_t i = 0; i < ev.size(); ++i)
        EXPECT_NEAR(sv.s[i] * sv.s[i], ev[i], 1e-9);
}

TEST(Svd, InvariantsOverRandomShapes) {
    SplitMix64 rng(7);
    const std::size_t shapes[][2] = {{1, 1}, {2, 5}, {5, 2}, {6, 6}, {9, 4}, {3, 8}, {16, 16}};
    for (const auto& sh : shapes) {
        for (int rep = 0; rep < 5; ++rep) {
            const Matrix a = oracles::random_matrix(rng, sh[0], sh[1], -3.0, 3.0);
            expect_valid_svd(a, svd(a));
        }
    }
}

TEST(Svd, RankDeficientGetsOrthonormalCompletion) {
    SplitMix64 rng(11);
    Matrix a(5, 4);
    const Matrix col = oracles::random_matrix(rng, 5, 1);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 5; ++i) a(i, j) = col(i, 0) * static_cast<double>(j + 1);
    const SvdResult sv = svd(a);
    expect_valid_svd(a, sv);
    EXPECT_GT(sv.s[0], 0.0);
    EXPECT_NEAR(sv.s[1], 0.0, 1e-12);
}

TEST(Svd, ZeroMatrix) {
    const Matrix a(3, 3);
    const SvdResult sv = svd(a);
    expect_valid_svd(a, sv);
    for (double s : sv.s) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(Svd, SymmetricPsdMatchesEigenvalues) {
    SplitMix64 rng(99);
    const Matrix b = oracles::random_matrix(rng, 6, 6);
    const Matrix a = matmul(transpose(b), b);
    const SvdResult sv = svd(a);
    const std::vector<double> ev = oracles::sym_eigenvalues_desc(a);
    for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_NEAR(sv.s[i], ev[i], 1e-9);
}

TEST(Svd, Deterministic) {
    SplitMix64 rng(5);
    const Matrix a = oracles::random_matrix(rng, 8, 8);
    const SvdResult s1 = svd(a);
    const SvdResult s2 = svd(a);
    EXPECT_EQ(s1.u, s2.u);
    EXPECT_EQ(s1.v, s2.v);
    EXPECT_EQ(s1.s, s2.s);
}

TEST(Svd, SignConvention) {
    SplitMix64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix a = oracles::random_matrix(rng, 6, 5);
        const SvdResult sv = svd(a);
        for (std::size_t j = 0; j < sv.s.size(); ++j) {
            std::size_t pivot = 0;
            double best = -1.0;
            for (std::size_t i = 0; i < sv.u.rows; ++i) {
                if (std::abs(sv.u(i, j)) > best) {
                    best = std::abs(sv.u(i, j));
                    pivot = i;
                }
            }
            EXPECT_GE(sv.u(pivot, j), 0.0);
        }
    }
}

TEST(Svd, RejectsBadInput) {
    EXPECT_THROW(svd(Matrix()), InvalidInput);
    Matrix a(2, 2);
    a(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(svd(a), InvalidInput);
    a(0, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(svd(a), InvalidInput);
}

TEST(Pca2, PointsOnAxisIn3d) {
    Matrix points(4, 3);
    for (std::size_t i = 0; i < 4; ++i) points(i, 0) = static_cast<double>(i) - 1.5;
    const Pca2Result res = pca2(points);
    EXPECT_NEAR(std::abs(res.components(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(res.components(1, 0), 0.0, 1e-12);
    EXPECT_NEAR(res.components(2, 0), 0.0, 1e-12);
    double c01 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) c01 += res.components(i, 0) * res.components(i, 1);
    EXPECT_NEAR(c01, 0.0, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.projected(i, 1), 0.0, 1e-12);
}

TEST(Pca2, FullRank2dReconstructs) {
    SplitMix64 rng(31);
    Matrix pts = oracles::random_matrix(rng, 6, 2);
    // Center the cloud first so the projection is pure rotation/reflection.
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 6; ++i) mean += pts(i, j);
        mean /= 6.0;
        for (std::size_t i = 0; i < 6; ++i) pts(i, j) -= mean;
    }
    const Pca2Result res = pca2(pts);
    const Matrix back = matmul(res.projected, transpose(res.components));
    EXPECT_LE(frobenius_distance(back, pts), 1e-10);
    for (std::size_t i = 0; i < 6; ++i) {
        double n_orig = 0.0, n_proj = 0.0;
        for (std::size_t j = 0; j < 2; ++j) {
            n_orig += pts(i, j) * pts(i, j);
            n_proj += res.projected(i, j) * res.projected(i, j);
        }
        EXPECT_NEAR(n_orig, n_proj, 1e-10);
    }
}

TEST(Pca2, VarianceRatioMatchesCovarianceOracle) {
    SplitMix64 rng(47);
    const Matrix pts = oracles::random_matrix(rng, 10, 4);
    const Pca2Result res = pca2(pts);

    Matrix centered = pts;
    for (std::size_t j = 0; j < 4; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 10; ++i) mean += pts(i, j);
        mean /= 10.0;
        for (std::size_t i = 0; i < 10; ++i) centered(i, j) -= mean;
    }
    const std::vector<double> ev = oracles::sym_eigenvalues_desc(matmul(transpose(centered), centered));
    double total = 0.0;
    for (double v : ev) total += v;

    double captured = 0.0;
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 2; ++j) captured += res.projected(i, j) * res.projected(i, j);

    EXPECT_NEAR(captured / total, (ev[0] + ev[1]) / total, 1e-9);
}

TEST(Pca2, RejectsTooFewRows) {
    EXPECT_THROW(pca2(Matrix(1, 3)), InvalidInput);
    EXPECT_THROW(pca2(Matrix(3, 1)), InvalidInput);
}
