#pragma once

#include <cmath>
#include <vector>

#include "sparsevd/layers.hpp"
#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// Single-row regression instance used to compare gradient estimators.
/// The target equals a theta exactly (zero residual): in that case the two
/// parameterizations have identical leading-order gradient variance as
/// alpha -> 0, so their ratio tends to 1 there.
struct VarianceProblem {
    Tensor a;      // [1 x I]
    Tensor theta;  // [I x O]
    Tensor target; // [1 x O]
};

inline VarianceProblem fixed_variance_problem() {
    RngState rng(0x5EEDBA5Eu);
    VarianceProblem p;
    p.a = sample_standard_normal({1, 8}, rng);
    p.theta = sample_standard_normal({8, 2}, rng);
    p.target = matmul(p.a, p.theta);
    return p;
}

struct VarianceRow {
    double log_alpha = 0.0;
    double var_mult = 0.0; // weight-space noise, w = theta (1 + sqrt(a) eps)
    double var_add = 0.0;  // additive noise + local reparameterization
    double ratio = 0.0;    // var_mult / var_add
};

/// For each grid value of log alpha, estimates the per-entry variance of
/// dL/dtheta for the squared loss L = 0.5 ||a w - t||^2 across n_trials
/// independent noise draws, under both parameterizations, and reports the
/// mean variance over entries plus the mult/add ratio.
inline std::vector<VarianceRow> grad_variance_experiment(const VarianceProblem& p,
                                                         const std::vector<double>& log_alpha_grid,
                                                         std::size_t n_trials, RngState& rng) {
    if (log_alpha_grid.empty()) throw argument_error("grad_variance_experiment: empty grid");
    if (n_trials < 2) throw argument_error("grad_variance_experiment needs n_trials >= 2");
    const std::size_t n_weights = p.theta.numel();
    const std::size_t out_dim = p.theta.extent(1);

    std::vector<VarianceRow> rows;
    for (double la : log_alpha_grid) {
        const double alpha = std::exp(la);
        MultParamDense mult{p.theta, Tensor(p.theta.shape(), la)};
        // Additive path precomputation: gamma and delta do not move with the
        // per-trial noise.
        Tensor sigma2(p.theta.shape());
        for (std::size_t i = 0; i < n_weights; ++i)
            sigma2[i] = alpha * p.theta[i] * p.theta[i];
        Tensor gamma = matmul(p.a, p.theta);
        Tensor delta = matmul(square(p.a), sigma2);

        // Welford accumulators, one per theta entry and parameterization.
        std::vector<double> mean_m(n_weights, 0.0), m2_m(n_weights, 0.0);
        std::vector<double> mean_a(n_weights, 0.0), m2_a(n_weights, 0.0);
        for (std::size_t t = 0; t < n_trials; ++t) {
            Tensor b_m = mult.forward(p.a, rng);
            Tensor g_m = sub(b_m, p.target);
            Tensor grad_m = mult.backward_theta(g_m);

            Tensor eps = sample_standard_normal({1, out_dim}, rng);
            Tensor b_a(gamma.shape());
            for (std::size_t i = 0; i < b_a.numel(); ++i)
                b_a[i] = gamma[i] + std::sqrt(delta[i]) * eps[i];
            Tensor g_a = sub(b_a, p.target);
            // In the (theta, sigma) parameterization theta only enters
            // through gamma, so dL/dtheta = a^T (b - t).
            Tensor grad_a = matmul(transpose(p.a), g_a);

            const double k = static_cast<double>(t + 1);
            for (std::size_t i = 0; i < n_weights; ++i) {
                double d = grad_m[i] - mean_m[i];
                mean_m[i] += d / k;
                m2_m[i] += d * (grad_m[i] - mean_m[i]);
                d = grad_a[i] - mean_a[i];
                mean_a[i] += d / k;
                m2_a[i] += d * (grad_a[i] - mean_a[i]);
            }
        }
        VarianceRow r;
        r.log_alpha = la;
        for (std::size_t i = 0; i < n_weights; ++i) {
            r.var_mult += m2_m[i] / static_cast<double>(n_trials - 1);
            r.var_add += m2_a[i] / static_cast<double>(n_trials - 1);
        }
        r.var_mult /= static_cast<double>(n_weights);
        r.var_add /= static_cast<double>(n_weights);
        r.ratio = r.var_mult / r.var_add;
        rows.push_back(r);
    }
    return rows;
}

} // namespace sparsevd
