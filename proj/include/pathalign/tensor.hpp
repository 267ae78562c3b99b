#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathalign/errors.hpp"

namespace pathalign {

// Dense row-major matrix of 64-bit reals. All training and evaluation math
// runs in double precision; 32-bit floats appear only in checkpoint files.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    std::size_t size() const { return values.size(); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Tensor2&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// C = A (m x k) * B (k x n)
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Tensor2 c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.values.data() + i * a.cols;
        double* crow = c.values.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.values.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// C = A (m x d) * B^T (n x d) -> m x n; rows of both operands share dimension d.
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: row dimensions differ");
    Tensor2 c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) c.at(i, j) = dot(a.row(i), b.row(j));
    return c;
}

// C = A^T (m x r) * B (m x n) -> r x n
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: outer dimensions differ");
    Tensor2 c(a.cols, b.cols);
    for (std::size_t m = 0; m < a.rows; ++m) {
        const double* arow = a.values.data() + m * a.cols;
        const double* brow = b.values.data() + m * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double v = arow[i];
            if (v == 0.0) continue;
            double* crow = c.values.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += v * brow[j];
        }
    }
    return c;
}

inline constexpr double kNormEps = 1e-12;

// v / ||v||. Near-zero vectors have no direction to preserve.
inline std::vector<double> l2_normalize(std::span<const double> v) {
    const double n = norm2(v);
    if (!(n > kNormEps)) throw NumericError("degenerate embedding: vector norm below 1e-12");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// Pairwise inner products of unit rows: entry (i,j) = <a_i, b_j>.
inline Tensor2 similarity_matrix(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.cols) throw std::invalid_argument("similarity_matrix: embedding dimensions differ");
    return matmul_nt(a, b);
}

// tau * log sum_i exp(sign * xs[i] / tau), max-shifted. sign=+1 relates to a
// soft maximum, sign=-1 to a soft minimum (negate the result for the latter).
inline double logsumexp(std::span<const double> xs, int sign, double tau) {
    if (xs.empty()) throw std::invalid_argument("logsumexp: empty input");
    if (!(tau > 0.0)) throw std::invalid_argument("logsumexp: tau must be positive");
    double m = sign * xs[0] / tau;
    for (std::size_t i = 1; i < xs.size(); ++i) m = std::max(m, sign * xs[i] / tau);
    double s = 0.0;
    for (double x : xs) s += std::exp(sign * x / tau - m);
    return tau * (m + std::log(s));
}

inline double soft_max(std::span<const double> xs, double tau) { return logsumexp(xs, +1, tau); }
inline double soft_min(std::span<const double> xs, double tau) { return -logsumexp(xs, -1, tau); }

// log(1 + e^x) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// 1 / (1 + e^-x)
inline double logistic(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace pathalign
