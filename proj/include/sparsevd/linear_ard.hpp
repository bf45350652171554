#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// Fixed-alpha linear regression instance: design X [N x D], targets y [N],
/// per-feature dropout rates alpha [D] (alpha >= 0).
struct LinearProblem {
    Tensor design;  // X
    Tensor targets; // y
    Tensor alpha;

    void check() const {
        if (design.rank() != 2 || targets.rank() != 1 || alpha.rank() != 1)
            throw dimension_error("LinearProblem wants X [N x D], y [N], alpha [D]");
        if (design.extent(0) != targets.extent(0) || design.extent(1) != alpha.extent(0))
            throw dimension_error("LinearProblem extents disagree: X " +
                                  Tensor::shape_str(design.shape()) + ", y " +
                                  Tensor::shape_str(targets.shape()) + ", alpha " +
                                  Tensor::shape_str(alpha.shape()));
        for (std::size_t i = 0; i < alpha.numel(); ++i)
            if (alpha[i] < 0.0) throw argument_error("alpha entries must be nonnegative");
    }
};

namespace detail {

/// Solve A x = b by LU with partial pivoting; A is square and dense.
/// Throws numeric_error on a singular pivot, reporting a 1-norm condition
/// estimate of the factorable part. Optionally reports the condition
/// estimate of the full solve.
inline Tensor lu_solve(Tensor a, Tensor b, double* cond_out = nullptr) {
    const std::size_t d = a.extent(0);
    if (a.rank() != 2 || a.extent(1) != d || b.numel() != d)
        throw dimension_error("lu_solve wants square A and matching b, got A " +
                              Tensor::shape_str(a.shape()) + ", b " + Tensor::shape_str(b.shape()));
    double norm_a = 0.0; // 1-norm: max column abs sum
    for (std::size_t j = 0; j < d; ++j) {
        double c = 0.0;
        for (std::size_t i = 0; i < d; ++i) c += std::fabs(a.at2(i, j));
        norm_a = std::max(norm_a, c);
    }
    std::vector<std::size_t> piv(d);
    for (std::size_t i = 0; i < d; ++i) piv[i] = i;
    for (std::size_t k = 0; k < d; ++k) {
        std::size_t p = k;
        for (std::size_t i = k + 1; i < d; ++i)
            if (std::fabs(a.at2(i, k)) > std::fabs(a.at2(p, k))) p = i;
        if (a.at2(p, k) == 0.0)
            throw numeric_error("singular system at column " + std::to_string(k) +
                                " (1-norm of matrix: " + std::to_string(norm_a) + ")");
        if (p != k) {
            for (std::size_t j = 0; j < d; ++j) std::swap(a.at2(p, j), a.at2(k, j));
            std::swap(b[p], b[k]);
        }
        for (std::size_t i = k + 1; i < d; ++i) {
            const double f = a.at2(i, k) / a.at2(k, k);
            a.at2(i, k) = f;
            for (std::size_t j = k + 1; j < d; ++j) a.at2(i, j) -= f * a.at2(k, j);
            b[i] -= f * b[k];
        }
    }
    // back substitution
    Tensor x({d});
    for (std::size_t i = d; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < d; ++j) s -= a.at2(i, j) * x[j];
        x[i] = s / a.at2(i, i);
    }
    if (cond_out) {
        // cond_1 = ||A||_1 ||A^-1||_1. Solving L U w = e_col for every basis
        // vector walks the columns of A^-1 up to the row permutation, which
        // leaves the max column norm unchanged.
        double norm_inv = 0.0;
        for (std::size_t col = 0; col < d; ++col) {
            Tensor w({d});
            w[col] = 1.0;
            for (std::size_t k = 0; k < d; ++k)
                for (std::size_t i = k + 1; i < d; ++i) w[i] -= a.at2(i, k) * w[k];
            for (std::size_t i = d; i-- > 0;) {
                double s = w[i];
                for (std::size_t j = i + 1; j < d; ++j) s -= a.at2(i, j) * w[j];
                w[i] = s / a.at2(i, i);
            }
            double c = 0.0;
            for (std::size_t i = 0; i < d; ++i) c += std::fabs(w[i]);
            norm_inv = std::max(norm_inv, c);
        }
        *cond_out = norm_a * norm_inv;
    }
    return x;
}

inline Tensor gram(const Tensor& x) { // X^T X
    return matmul(transpose(x), x);
}

inline Tensor xty(const Tensor& x, const Tensor& y) {
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor out({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x.at2(i, j) * y[i];
    return out;
}

} // namespace detail

/// Ordinary least squares, the alpha = 0 corner of both closed forms.
inline Tensor ols(const Tensor& x, const Tensor& y) {
    return detail::lu_solve(detail::gram(x), detail::xty(x, y));
}

/// Sparse variational dropout regression at fixed alpha:
///   theta = (X^T X + diag(X^T X) diag(alpha))^-1 X^T y.
inline Tensor sparse_vd_linreg(const LinearProblem& p, double* cond_out = nullptr) {
    p.check();
    Tensor a = detail::gram(p.design);
    const std::size_t d = a.extent(0);
    for (std::size_t i = 0; i < d; ++i) a.at2(i, i) += a.at2(i, i) * p.alpha[i];
    return detail::lu_solve(std::move(a), detail::xty(p.design, p.targets), cond_out);
}

/// Relevance vector machine MAP weights at fixed alpha:
///   w = (X^T X + diag(alpha))^-1 X^T y.
inline Tensor rvm_map(const LinearProblem& p, double* cond_out = nullptr) {
    p.check();
    Tensor a = detail::gram(p.design);
    const std::size_t d = a.extent(0);
    for (std::size_t i = 0; i < d; ++i) a.at2(i, i) += p.alpha[i];
    return detail::lu_solve(std::move(a), detail::xty(p.design, p.targets), cond_out);
}

struct DecayRow {
    double alpha_i = 0.0;
    double theta_i = 0.0;
    double theta_times_alpha = 0.0; // -> constant: theta_i = Theta(1/alpha_i)
    double alpha_theta_sq = 0.0;    // -> 0
};

/// Closed-form sweep of one feature's dropout rate: evaluates Eq.-17-style
/// solutions along `alpha_sweep` for feature `feature`, holding the other
/// rates at the template's values.
inline std::vector<DecayRow> asymptotic_decay_check(const LinearProblem& base, std::size_t feature,
                                                    const std::vector<double>& alpha_sweep) {
    base.check();
    if (feature >= base.alpha.numel())
        throw argument_error("feature index " + std::to_string(feature) + " out of range");
    double col_norm = 0.0;
    for (std::size_t i = 0; i < base.design.extent(0); ++i)
        col_norm += base.design.at2(i, feature) * base.design.at2(i, feature);
    if (col_norm == 0.0)
        throw argument_error("asymptotic_decay_check requires a nonzero column for feature " +
                             std::to_string(feature));
    std::vector<DecayRow> rows;
    for (double av : alpha_sweep) {
        LinearProblem p = base;
        p.alpha[feature] = av;
        Tensor theta = sparse_vd_linreg(p);
        DecayRow r;
        r.alpha_i = av;
        r.theta_i = theta[feature];
        r.theta_times_alpha = theta[feature] * av;
        r.alpha_theta_sq = av * theta[feature] * theta[feature];
        rows.push_back(r);
    }
    return rows;
}

} // namespace sparsevd
