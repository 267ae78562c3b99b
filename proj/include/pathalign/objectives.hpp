#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "pathalign/tensor.hpp"

namespace pathalign {

// Unit attribute embeddings grouped by entity: rows [i*k, (i+1)*k) belong to
// entity i.
struct EmbeddingBatch {
    std::size_t n = 0;
    std::size_t k = 0;
    Tensor2 embeddings;  // (n*k) x d

    void validate() const {
        if (n < 2 || k < 2) throw std::invalid_argument("EmbeddingBatch: need n >= 2 and k >= 2");
        if (embeddings.rows != n * k)
            throw std::invalid_argument("EmbeddingBatch: embeddings must have n*k rows");
    }
};

// Index-aligned image / text / frozen-knowledge embeddings.
struct AlignedTriple {
    Tensor2 v;
    Tensor2 t;
    Tensor2 k;

    void validate() const {
        if (!v.same_shape(t) || !v.same_shape(k))
            throw std::invalid_argument("AlignedTriple: shapes must match");
        if (v.rows == 0) throw std::invalid_argument("AlignedTriple: empty batch");
    }
};

struct LossConfig {
    double tau = 0.04;
    double alpha = 0.3;
    double margin = 0.3;

    void validate() const {
        if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be positive");
        if (alpha < 0.0) throw std::invalid_argument("LossConfig: alpha must be non-negative");
    }
};

struct LossGrad {
    double loss = 0.0;
    Tensor2 grad;
};

namespace detail {

inline double lse(std::span<const double> xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace detail

// Soft max-min positive similarity over one entity's k x k block:
//   tau * log( sum_p 1 / sum_q exp(-S[p,q]/tau) ),
// self-pairs included. Converges to max_p min_q S[p,q] as tau -> 0.
inline double soft_maxmin_positive(const Tensor2& block, double tau) {
    if (block.rows == 0 || block.rows != block.cols)
        throw std::invalid_argument("soft_maxmin_positive: block must be square and non-empty");
    if (!(tau > 0.0)) throw std::invalid_argument("soft_maxmin_positive: tau must be positive");
    std::vector<double> neg_la(block.rows);
    std::vector<double> scaled(block.cols);
    for (std::size_t p = 0; p < block.rows; ++p) {
        for (std::size_t q = 0; q < block.cols; ++q) scaled[q] = -block.at(p, q) / tau;
        neg_la[p] = -detail::lse(scaled);
    }
    return tau * detail::lse(neg_la);
}

// Soft maximal negative similarity over all cross-entity entries:
//   tau * log sum exp(S/tau).
inline double soft_max_negative(const Tensor2& cross, double tau) {
    if (cross.size() == 0) throw std::invalid_argument("soft_max_negative: empty input");
    if (!(tau > 0.0)) throw std::invalid_argument("soft_max_negative: tau must be positive");
    std::vector<double> scaled(cross.size());
    for (std::size_t i = 0; i < cross.size(); ++i) scaled[i] = cross.values[i] / tau;
    return tau * detail::lse(scaled);
}

// Metric loss over an entity-grouped batch:
//   (1/n) sum_i log(1 + exp((S_i^- - S_i^+)/tau)),
// with both similarities in their soft form. The returned gradient is with
// respect to the raw embedding coordinates.
inline LossGrad adasp_loss(const EmbeddingBatch& emb, double tau) {
    emb.validate();
    if (!(tau > 0.0)) throw std::invalid_argument("adasp_loss: tau must be positive");
    const std::size_t n = emb.n, k = emb.k, rows = n * k;
    const Tensor2& z = emb.embeddings;
    const Tensor2 s = matmul_nt(z, z);

    Tensor2 g(rows, rows);
    double loss = 0.0;
    std::vector<double> la(k);        // log sum_q exp(-S_pq/tau) per anchor row
    std::vector<double> neg_la(k);
    std::vector<double> scaled(k);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i * k, hi = lo + k;

        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t q = 0; q < k; ++q) scaled[q] = -s.at(lo + p, lo + q) / tau;
            la[p] = detail::lse(scaled);
            neg_la[p] = -la[p];
        }
        const double log_t = detail::lse(neg_la);
        const double s_pos = tau * log_t;

        // max over cross entries of S/tau, then the stabilized sum
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t r = lo; r < hi; ++r)
            for (std::size_t c = 0; c < rows; ++c) {
                if (c >= lo && c < hi) continue;
                m = std::max(m, s.at(r, c) / tau);
            }
        double sum = 0.0;
        for (std::size_t r = lo; r < hi; ++r)
            for (std::size_t c = 0; c < rows; ++c) {
                if (c >= lo && c < hi) continue;
                sum += std::exp(s.at(r, c) / tau - m);
            }
        const double log_u = m + std::log(sum);
        const double s_neg = tau * log_u;

        const double x = (s_neg - s_pos) / tau;
        loss += softplus(x);
        const double sig = logistic(x);
        const double d_pos = -sig / (static_cast<double>(n) * tau);
        const double d_neg = +sig / (static_cast<double>(n) * tau);

        // dS+/dS_pq = exp(-S_pq/tau - 2*la_p - log_t); weights sum to 1
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = 0; q < k; ++q) {
                const double w = std::exp(-s.at(lo + p, lo + q) / tau - 2.0 * la[p] - log_t);
                g.at(lo + p, lo + q) += d_pos * w;
            }
        // dS-/dS_rc = exp(S_rc/tau - log_u); weights sum to 1
        for (std::size_t r = lo; r < hi; ++r)
            for (std::size_t c = 0; c < rows; ++c) {
                if (c >= lo && c < hi) continue;
                g.at(r, c) += d_neg * std::exp(s.at(r, c) / tau - log_u);
            }
    }
    loss /= static_cast<double>(n);

    // L depends on Z through S = Z Z^T: dZ = (G + G^T) Z
    Tensor2 sym = g;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < rows; ++c) sym.at(r, c) += g.at(c, r);
    return {loss, matmul(sym, z)};
}

// Batch-hard triplet baseline in similarity form: per anchor, hinge on the
// hardest (lowest-similarity) positive and hardest (highest-similarity)
// negative. Positives exclude the anchor itself; ties resolve to the lowest
// index.
inline LossGrad triplet_batchhard_loss(const EmbeddingBatch& emb, double margin) {
    emb.validate();
    const std::size_t n = emb.n, k = emb.k, rows = n * k;
    const Tensor2& z = emb.embeddings;
    const Tensor2 s = matmul_nt(z, z);

    Tensor2 g(rows, rows);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t a = 0; a < rows; ++a) {
        const std::size_t lo = (a / k) * k, hi = lo + k;
        std::size_t argmin_pos = rows, argmax_neg = rows;
        double min_pos = 0.0, max_neg = 0.0;
        for (std::size_t c = lo; c < hi; ++c) {
            if (c == a) continue;
            if (argmin_pos == rows || s.at(a, c) < min_pos) {
                min_pos = s.at(a, c);
                argmin_pos = c;
            }
        }
        for (std::size_t c = 0; c < rows; ++c) {
            if (c >= lo && c < hi) continue;
            if (argmax_neg == rows || s.at(a, c) > max_neg) {
                max_neg = s.at(a, c);
                argmax_neg = c;
            }
        }
        const double hinge = margin - min_pos + max_neg;
        if (hinge > 0.0) {
            loss += hinge;
            g.at(a, argmin_pos) -= inv;
            g.at(a, argmax_neg) += inv;
        }
    }
    loss *= inv;

    Tensor2 sym = g;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < rows; ++c) sym.at(r, c) += g.at(c, r);
    return {loss, matmul(sym, z)};
}

struct InfoNceResult {
    double loss = 0.0;
    Tensor2 grad_a;
    Tensor2 grad_b;
};

// Bidirectional InfoNCE with matched diagonal pairs, averaged over the batch:
//   (1/n) sum_i [ (lse_j S_ij/tau - S_ii/tau) + (lse_j S_ji/tau - S_ii/tau) ].
inline InfoNceResult info_nce(const Tensor2& a, const Tensor2& b, double tau) {
    if (!a.same_shape(b)) throw std::invalid_argument("info_nce: A and B must share shape");
    if (a.rows == 0) throw std::invalid_argument("info_nce: empty batch");
    if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
    const std::size_t n = a.rows;
    const Tensor2 s = matmul_nt(a, b);

    std::vector<double> row_lse(n), col_lse(n);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scaled[j] = s.at(i, j) / tau;
        row_lse[i] = detail::lse(scaled);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scaled[j] = s.at(j, i) / tau;
        col_lse[i] = detail::lse(scaled);
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        loss += (row_lse[i] - s.at(i, i) / tau) + (col_lse[i] - s.at(i, i) / tau);
    loss /= static_cast<double>(n);

    // dL/dS = (P_row + P_col - 2I) / (n*tau)
    Tensor2 ds(n, n);
    const double inv = 1.0 / (static_cast<double>(n) * tau);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double v = std::exp(s.at(i, j) / tau - row_lse[i]) +
                       std::exp(s.at(i, j) / tau - col_lse[j]);
            if (i == j) v -= 2.0;
            ds.at(i, j) = v * inv;
        }

    InfoNceResult r;
    r.loss = loss;
    r.grad_a = matmul(ds, b);
    Tensor2 dst(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dst.at(i, j) = ds.at(j, i);
    r.grad_b = matmul(dst, a);
    return r;
}

struct KepLossResult {
    double total = 0.0;
    double l_vt = 0.0;
    double l_tk = 0.0;
    Tensor2 grad_v;
    Tensor2 grad_t;
    Tensor2 grad_k;  // identically zero: the knowledge branch is frozen
};

// Combined alignment loss: image-text InfoNCE plus alpha-weighted
// distillation InfoNCE against the frozen knowledge embeddings. No gradient
// reaches K.
inline KepLossResult kep_loss(const AlignedTriple& triple, const LossConfig& cfg) {
    triple.validate();
    cfg.validate();
    const InfoNceResult vt = info_nce(triple.v, triple.t, cfg.tau);
    const InfoNceResult tk = info_nce(triple.k, triple.t, cfg.tau);

    KepLossResult r;
    r.l_vt = vt.loss;
    r.l_tk = tk.loss;
    r.total = vt.loss + cfg.alpha * tk.loss;
    r.grad_v = vt.grad_a;
    r.grad_t = vt.grad_b;
    for (std::size_t i = 0; i < r.grad_t.size(); ++i)
        r.grad_t.values[i] += cfg.alpha * tk.grad_b.values[i];
    r.grad_k = Tensor2(triple.k.rows, triple.k.cols);
    return r;
}

}  // namespace pathalign
