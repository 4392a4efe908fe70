#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "seka/svd.hpp"

namespace seka {

/// Symmetric idempotent projections built from the positive-side top singular
/// vectors and the negative-side tail singular vectors.
struct ProjectionPair {
    Matrix p_pos;
    Matrix p_neg;
    std::size_t k_pos = 0;
    std::size_t k_neg = 0;
    double gamma = 0.0;
};

struct SteeringGains {
    double g_pos = 0.0;
    double g_neg = 0.0;
};

/// h_neutral^T * h_signed / n over paired per-token key rows.
inline Matrix cross_covariance(const Matrix& h_neutral, const Matrix& h_signed) {
    if (h_neutral.rows != h_signed.rows || h_neutral.cols != h_signed.cols)
        throw InvalidInput("cross_covariance: shape mismatch");
    if (h_neutral.rows == 0) throw InvalidInput("cross_covariance: no token rows");
    Matrix omega = matmul(transpose(h_neutral), h_signed);
    const double inv_n = 1.0 / static_cast<double>(h_neutral.rows);
    for (double& v : omega.data) v *= inv_n;
    return omega;
}

enum class RankSide { positive, negative };

/// Smallest k whose leading singular-value mass reaches gamma. On the
/// positive side k counts the retained head vectors; on the negative side the
/// same k is the split index after which the retained tail vectors begin.
inline std::size_t select_rank(const std::vector<double>& s, double gamma, RankSide side) {
    (void)side;
    if (s.empty()) throw InvalidInput("select_rank: empty spectrum");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("select_rank: gamma must be in (0, 1]");
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i] >= 0.0) || !std::isfinite(s[i]))
            throw InvalidInput("select_rank: singular values must be finite and nonnegative");
        if (i > 0 && s[i] > s[i - 1])
            throw InvalidInput("select_rank: singular values must be descending");
        total += s[i];
    }
    if (total <= 0.0) throw InvalidInput("select_rank: all-zero spectrum");
    double cum = 0.0;
    for (std::size_t k = 1; k <= s.size(); ++k) {
        cum += s[k - 1];
        if (cum >= gamma * total) return k;
    }
    return s.size();
}

namespace detail {

/// Sum of outer products u_j u_j^T over columns [first, first+count).
inline Matrix projector_from_columns(const Matrix& u, std::size_t first, std::size_t count) {
    Matrix p(u.rows, u.rows);
    for (std::size_t j = first; j < first + count; ++j) {
        for (std::size_t r = 0; r < u.rows; ++r) {
            const double ur = u(r, j);
            if (ur == 0.0) continue;
            for (std::size_t c = 0; c < u.rows; ++c) p(r, c) += ur * u(c, j);
        }
    }
    return p;
}

}  // namespace detail

inline ProjectionPair build_projections(const SvdResult& svd_pos, const SvdResult& svd_neg,
                                        double gamma) {
    if (svd_pos.u.rows != svd_pos.u.cols || svd_neg.u.rows != svd_neg.u.cols)
        throw InvalidInput("build_projections: expected SVDs of square covariances");
    if (svd_pos.u.rows != svd_neg.u.rows)
        throw InvalidInput("build_projections: positive/negative dimension mismatch");
    const std::size_t d = svd_pos.u.rows;

    ProjectionPair pair;
    pair.gamma = gamma;
    pair.k_pos = select_rank(svd_pos.s, gamma, RankSide::positive);
    pair.k_neg = select_rank(svd_neg.s, gamma, RankSide::negative);
    pair.p_pos = detail::projector_from_columns(svd_pos.u, 0, pair.k_pos);
    if (pair.k_neg == d) {
        warn("build_projections: negative tail is empty (k- = d_k), P- is zero");
        pair.p_neg = Matrix(d, d);
    } else {
        pair.p_neg = detail::projector_from_columns(svd_neg.u, pair.k_neg, d - pair.k_neg);
    }
    return pair;
}

/// k' = k + (g+ P+ k + g- P- k) / 2
inline std::vector<double> edit_key(const std::vector<double>& k, const ProjectionPair& pair,
                                    const SteeringGains& gains) {
    if (pair.p_pos.cols != k.size() || pair.p_neg.cols != k.size())
        throw InvalidInput("edit_key: dimension mismatch");
    const std::vector<double> pk = matvec(pair.p_pos, k);
    const std::vector<double> nk = matvec(pair.p_neg, k);
    std::vector<double> out(k.size());
    for (std::size_t i = 0; i < k.size(); ++i)
        out[i] = k[i] + (gains.g_pos * pk[i] + gains.g_neg * nk[i]) / 2.0;
    return out;
}

/// Orthogonal decomposition of x against the column span of U:
/// x_parallel = U U^T x, x_perp = x - x_parallel. With these parts,
/// (I + g U U^T) x = x_perp + (1 + g) x_parallel for any g.
inline std::pair<std::vector<double>, std::vector<double>> decompose_subspace(
    const std::vector<double>& x, const Matrix& u) {
    if (u.rows != x.size()) throw InvalidInput("decompose_subspace: dimension mismatch");
    double max_dev = 0.0;
    for (std::size_t a = 0; a < u.cols; ++a) {
        for (std::size_t b = a; b < u.cols; ++b) {
            double g = 0.0;
            for (std::size_t i = 0; i < u.rows; ++i) g += u(i, a) * u(i, b);
            const double want = (a == b) ? 1.0 : 0.0;
            max_dev = std::max(max_dev, std::abs(g - want));
        }
    }
    if (max_dev > 1e-8) throw InvalidInput("decompose_subspace: U columns not orthonormal");

    std::vector<double> coeff(u.cols, 0.0);
    for (std::size_t j = 0; j < u.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < u.rows; ++i) acc += u(i, j) * x[i];
        coeff[j] = acc;
    }
    std::vector<double> parallel(x.size(), 0.0);
    for (std::size_t j = 0; j < u.cols; ++j)
        for (std::size_t i = 0; i < u.rows; ++i) parallel[i] += u(i, j) * coeff[j];
    std::vector<double> perp(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) perp[i] = x[i] - parallel[i];
    return {std::move(parallel), std::move(perp)};
}

}  // namespace seka
