#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seka/matrix.hpp"

namespace oracles {

/// Classic two-sided cyclic Jacobi eigenvalue iteration for symmetric
/// matrices; returns eigenvalues sorted descending. Deliberately a different
/// algorithm from the library's one-sided SVD.
inline std::vector<double> sym_eigenvalues_desc(seka::Matrix a) {
    const std::size_t n = a.rows;
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += std::abs(a(p, q));
        if (off < 1e-14 * (1.0 + seka::frobenius_norm(a))) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = 0.5 * std::atan2(2.0 * a(p, q), a(q, q) - a(p, p));
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end(), std::greater<double>());
    return ev;
}

inline seka::Matrix random_matrix(seka::SplitMix64& rng, std::size_t rows, std::size_t cols,
                                  double lo = -1.0, double hi = 1.0) {
    seka::Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

/// Orthonormal d x r basis by Gram-Schmidt over random vectors.
inline seka::Matrix random_orthonormal(seka::SplitMix64& rng, std::size_t d, std::size_t r) {
    seka::Matrix u(d, r);
    for (std::size_t j = 0; j < r; ++j) {
        std::vector<double> v(d);
        for (;;) {
            for (std::size_t i = 0; i < d; ++i) v[i] = rng.uniform(-1.0, 1.0);
            for (std::size_t prev = 0; prev < j; ++prev) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) proj += v[i] * u(i, prev);
                for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u(i, prev);
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-3) {
                for (std::size_t i = 0; i < d; ++i) u(i, j) = v[i] / norm;
                break;
            }
        }
    }
    return u;
}

/// Smallest k whose cumulative share of the total reaches gamma, by direct
/// scan over prefix sums.
inline std::size_t brute_force_rank(const std::vector<double>& s, double gamma) {
    double total = 0.0;
    for (double v : s) total += v;
    double cum = 0.0;
    for (std::size_t k = 1; k <= s.size(); ++k) {
        cum += s[k - 1];
        if (cum / total >= gamma) return k;
    }
    return s.size();
}

/// Rank by singular-value counting with a relative cutoff.
inline std::size_t numeric_rank(const seka::Matrix& m, double rel_tol = 1e-9);

}  // namespace oracles

#include "seka/svd.hpp"

namespace oracles {

inline std::size_t numeric_rank(const seka::Matrix& m, double rel_tol) {
    const seka::SvdResult sv = seka::svd(m);
    if (sv.s.empty() || sv.s[0] == 0.0) return 0;
    std::size_t r = 0;
    for (double v : sv.s)
        if (v > rel_tol * sv.s[0]) ++r;
    return r;
}

}  // namespace oracles
