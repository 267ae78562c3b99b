#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <vector>

#include "pathalign/gradcheck.hpp"
#include "pathalign/objectives.hpp"
#include "pathalign/rng.hpp"
#include "pathalign/tensor.hpp"

namespace pathalign {

namespace gradsuite_detail {

inline Tensor2 random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor2 t(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = rng.gauss();
        const std::vector<double> u = l2_normalize(t.row(r));
        std::copy(u.begin(), u.end(), t.row(r).begin());
    }
    return t;
}

// Finite differences around hinge kinks or argmin/argmax ties are
// meaningless; only clearly smooth points qualify.
inline bool triplet_smooth(const EmbeddingBatch& emb, double margin, double gap = 1e-3) {
    const Tensor2 s = matmul_nt(emb.embeddings, emb.embeddings);
    const std::size_t rows = emb.n * emb.k, k = emb.k;
    for (std::size_t a = 0; a < rows; ++a) {
        const std::size_t lo = (a / k) * k, hi = lo + k;
        double min1 = 2.0, min2 = 2.0, max1 = -2.0, max2 = -2.0;
        for (std::size_t c = lo; c < hi; ++c) {
            if (c == a) continue;
            const double v = s.at(a, c);
            if (v < min1) { min2 = min1; min1 = v; }
            else if (v < min2) { min2 = v; }
        }
        for (std::size_t c = 0; c < rows; ++c) {
            if (c >= lo && c < hi) continue;
            const double v = s.at(a, c);
            if (v > max1) { max2 = max1; max1 = v; }
            else if (v > max2) { max2 = v; }
        }
        const double hinge = margin - min1 + max1;
        if (std::abs(hinge) < gap) return false;
        if (hinge > 0.0) {
            if (emb.k > 2 && min2 - min1 < gap) return false;
            if (emb.n > 2 && max1 - max2 < gap) return false;
        }
    }
    return true;
}

}  // namespace gradsuite_detail

struct GradSuiteResult {
    double adasp = 0.0;
    double triplet = 0.0;
    double info_nce = 0.0;
    double kep = 0.0;
    double seconds = 0.0;

    double worst() const { return std::max({adasp, triplet, info_nce, kep}); }
};

// Checks the analytic gradients of all four losses against central finite
// differences on random batches; returns the worst relative error per loss.
inline GradSuiteResult run_gradient_suite(std::uint64_t seed, std::size_t batches_per_loss,
                                          double tau = 0.04, double margin = 0.3) {
    using gradsuite_detail::random_unit_rows;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    GradSuiteResult result;
    const std::size_t dim = 8;

    for (std::size_t b = 0; b < batches_per_loss; ++b) {
        const std::size_t n = 2 + rng.uniform_int(4), k = 2 + rng.uniform_int(3);
        Tensor2 z = random_unit_rows(n * k, dim, rng);
        EmbeddingBatch emb{n, k, z};
        const LossGrad lg = adasp_loss(emb, tau);
        auto f = [&](std::span<const double> x) {
            EmbeddingBatch e{n, k, Tensor2(n * k, dim)};
            std::copy(x.begin(), x.end(), e.embeddings.values.begin());
            return adasp_loss(e, tau).loss;
        };
        result.adasp = std::max(result.adasp, finite_diff_check(f, lg.grad.values, z.values));
    }

    for (std::size_t b = 0; b < batches_per_loss; ++b) {
        std::size_t n = 2 + rng.uniform_int(4), k = 2 + rng.uniform_int(3);
        EmbeddingBatch emb{n, k, Tensor2()};
        do {
            emb.embeddings = random_unit_rows(n * k, dim, rng);
        } while (!gradsuite_detail::triplet_smooth(emb, margin));
        const LossGrad lg = triplet_batchhard_loss(emb, margin);
        auto f = [&](std::span<const double> x) {
            EmbeddingBatch e{n, k, Tensor2(n * k, dim)};
            std::copy(x.begin(), x.end(), e.embeddings.values.begin());
            return triplet_batchhard_loss(e, margin).loss;
        };
        result.triplet =
            std::max(result.triplet, finite_diff_check(f, lg.grad.values, emb.embeddings.values));
    }

    for (std::size_t b = 0; b < batches_per_loss; ++b) {
        const std::size_t n = 2 + rng.uniform_int(5);
        const Tensor2 a = random_unit_rows(n, dim, rng);
        const Tensor2 bm = random_unit_rows(n, dim, rng);
        const InfoNceResult r = info_nce(a, bm, tau);
        std::vector<double> point(a.values);
        point.insert(point.end(), bm.values.begin(), bm.values.end());
        std::vector<double> grad(r.grad_a.values);
        grad.insert(grad.end(), r.grad_b.values.begin(), r.grad_b.values.end());
        auto f = [&](std::span<const double> x) {
            Tensor2 xa(n, dim), xb(n, dim);
            std::copy(x.begin(), x.begin() + n * dim, xa.values.begin());
            std::copy(x.begin() + n * dim, x.end(), xb.values.begin());
            return info_nce(xa, xb, tau).loss;
        };
        result.info_nce = std::max(result.info_nce, finite_diff_check(f, grad, point));
    }

    for (std::size_t b = 0; b < batches_per_loss; ++b) {
        const std::size_t n = 2 + rng.uniform_int(5);
        const Tensor2 v = random_unit_rows(n, dim, rng);
        const Tensor2 t = random_unit_rows(n, dim, rng);
        const Tensor2 know = random_unit_rows(n, dim, rng);
        const LossConfig cfg{tau, 0.3, margin};
        const KepLossResult r = kep_loss({v, t, know}, cfg);
        std::vector<double> point(v.values);
        point.insert(point.end(), t.values.begin(), t.values.end());
        std::vector<double> grad(r.grad_v.values);
        grad.insert(grad.end(), r.grad_t.values.begin(), r.grad_t.values.end());
        auto f = [&](std::span<const double> x) {
            Tensor2 xv(n, dim), xt(n, dim);
            std::copy(x.begin(), x.begin() + n * dim, xv.values.begin());
            std::copy(x.begin() + n * dim, x.end(), xt.values.begin());
            return kep_loss({xv, xt, know}, cfg).total;
        };
        result.kep = std::max(result.kep, finite_diff_check(f, grad, point));
    }

    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace pathalign
