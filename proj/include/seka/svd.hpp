#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "seka/matrix.hpp"

namespace seka {

/// Thin SVD: u is m x r, s holds r singular values (descending, nonnegative),
/// v is n x r, with r = min(m, n).
struct SvdResult {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

namespace detail {

inline double column_dot(const std::vector<std::vector<double>>& c, std::size_t p, std::size_t q) {
    return dot(c[p].data(), c[q].data(), c[p].size());
}

/// Fills zero-norm columns with an orthonormal completion built from standard
/// basis vectors, Gram-Schmidt against everything already placed.
inline void complete_column(std::vector<std::vector<double>>& u_cols, std::size_t slot) {
    const std::size_t m = u_cols[slot].size();
    for (std::size_t cand = 0; cand < m; ++cand) {
        std::vector<double> v(m, 0.0);
        v[cand] = 1.0;
        for (std::size_t j = 0; j < u_cols.size(); ++j) {
            if (j == slot) continue;
            const auto& uj = u_cols[j];
            double nj = dot(uj.data(), uj.data(), m);
            if (nj == 0.0) continue;
            double proj = dot(v.data(), uj.data(), m);
            for (std::size_t i = 0; i < m; ++i) v[i] -= proj * uj[i];
        }
        double norm = std::sqrt(dot(v.data(), v.data(), m));
        if (norm > 0.5) {
            for (std::size_t i = 0; i < m; ++i) v[i] /= norm;
            u_cols[slot] = std::move(v);
            return;
        }
    }
    throw NumericalFailure("svd: failed to complete orthonormal basis");
}

}  // namespace detail

/// One-sided Jacobi SVD. Sign convention: in each column of U the entry of
/// largest magnitude is nonnegative (ties broken by lowest row index), with V
/// adjusted to match, so repeated runs on identical bytes give identical
/// output bytes.
inline SvdResult svd(const Matrix& a) {
    if (a.rows == 0 || a.cols == 0) throw InvalidInput("svd: empty matrix");
    if (!all_finite(a)) throw InvalidInput("svd: non-finite entries");

    const bool transposed = a.rows < a.cols;
    const Matrix b = transposed ? transpose(a) : a;
    const std::size_t m = b.rows;  // m >= n
    const std::size_t n = b.cols;

    std::vector<std::vector<double>> bc(n, std::vector<double>(m));
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) bc[j][i] = b(i, j);

    std::vector<std::vector<double>> vc(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) vc[j][j] = 1.0;

    // Rotate until every column pair is orthogonal relative to its norms.
    constexpr int kMaxSweeps = 64;
    constexpr double kTol = 1e-12;
    bool converged = (n <= 1);
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = detail::column_dot(bc, p, p);
                const double beta = detail::column_dot(bc, q, q);
                const double gamma = detail::column_dot(bc, p, q);
                if (gamma == 0.0) continue;
                if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                auto& bp = bc[p];
                auto& bq = bc[q];
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = bp[i], y = bq[i];
                    bp[i] = c * x - s * y;
                    bq[i] = s * x + c * y;
                }
                auto& vp = vc[p];
                auto& vq = vc[q];
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        }
    }
    if (!converged) throw NumericalFailure("svd: Jacobi sweep budget exhausted");

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j)
        norms[j] = std::sqrt(dot(bc[j].data(), bc[j].data(), m));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    std::vector<std::vector<double>> u_cols(n);
    std::vector<std::vector<double>> v_cols(n);
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        s[j] = norms[src];
        v_cols[j] = vc[src];
        if (norms[src] > 0.0) {
            u_cols[j] = bc[src];
            for (double& x : u_cols[j]) x /= norms[src];
        } else {
            u_cols[j] = std::vector<double>(m, 0.0);  // filled below
        }
    }
    for (std::size_t j = 0; j < n; ++j)
        if (s[j] == 0.0) detail::complete_column(u_cols, j);

    Matrix u_mat(m, n), v_mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) u_mat(i, j) = u_cols[j][i];
        for (std::size_t i = 0; i < n; ++i) v_mat(i, j) = v_cols[j][i];
    }

    SvdResult res;
    if (transposed) {
        res.u = std::move(v_mat);
        res.v = std::move(u_mat);
    } else {
        res.u = std::move(u_mat);
        res.v = std::move(v_mat);
    }
    res.s = std::move(s);

    for (std::size_t j = 0; j < res.s.size(); ++j) {
        std::size_t pivot = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < res.u.rows; ++i) {
            const double mag = std::abs(res.u(i, j));
            if (mag > best) {
                best = mag;
                pivot = i;
            }
        }
        if (res.u(pivot, j) < 0.0) {
            for (std::size_t i = 0; i < res.u.rows; ++i) res.u(i, j) = -res.u(i, j);
            for (std::size_t i = 0; i < res.v.rows; ++i) res.v(i, j) = -res.v(i, j);
        }
    }
    return res;
}

struct Pca2Result {
    Matrix projected;   // n x 2
    Matrix components;  // d x 2
    std::vector<double> mean;
};

/// Two-component PCA: components are the top-2 right singular vectors of the
/// row-centered matrix.
inline Pca2Result pca2(const Matrix& points) {
    if (points.rows < 2) throw InvalidInput("pca2: need at least 2 rows");
    if (points.cols < 2) throw InvalidInput("pca2: need at least 2 cols");
    if (!all_finite(points)) throw InvalidInput("pca2: non-finite entries");

    Pca2Result out;
    out.mean.assign(points.cols, 0.0);
    for (std::size_t i = 0; i < points.rows; ++i)
        for (std::size_t j = 0; j < points.cols; ++j) out.mean[j] += points(i, j);
    for (double& v : out.mean) v /= static_cast<double>(points.rows);

    Matrix centered(points.rows, points.cols);
    for (std::size_t i = 0; i < points.rows; ++i)
        for (std::size_t j = 0; j < points.cols; ++j)
            centered(i, j) = points(i, j) - out.mean[j];

    const SvdResult sv = svd(centered);
    out.components = columns(sv.v, 0, 2);
    out.projected = matmul(centered, out.components);
    return out;
}

}  // namespace seka
