#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "seka/common.hpp"

namespace seka {

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    bool empty() const { return rows == 0 || cols == 0; }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InvalidInput("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    if (a.cols != x.size()) throw InvalidInput("matvec: dimension mismatch");
    std::vector<double> y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += ai[j] * x[j];
        y[i] = acc;
    }
    return y;
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidInput("dot: dimension mismatch");
    return dot(a.data(), b.data(), a.size());
}

inline double l2_norm(const std::vector<double>& v) {
    return std::sqrt(dot(v.data(), v.data(), v.size()));
}

inline double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data) acc += v * v;
    return std::sqrt(acc);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw InvalidInput("frobenius_distance: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline Matrix scaled(const Matrix& a, double c) {
    Matrix r = a;
    for (double& v : r.data) v *= c;
    return r;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw InvalidInput("add: shape mismatch");
    Matrix r = a;
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
    return r;
}

/// Columns [first, first+count) of a, as an rows x count matrix.
inline Matrix columns(const Matrix& a, std::size_t first, std::size_t count) {
    if (first + count > a.cols) throw InvalidInput("columns: range out of bounds");
    Matrix r(a.rows, count);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < count; ++j) r(i, j) = a(i, first + j);
    return r;
}

}  // namespace seka
