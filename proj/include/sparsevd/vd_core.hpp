#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// Fitted constants of the sigmoid KL approximation, fixed for all time.
namespace kl_const {
inline constexpr double k1 = 0.63576;
inline constexpr double k2 = 1.87320;
inline constexpr double k3 = 1.48695;
/// Additive constant of the KL against the improper log-uniform prior,
/// chosen so D_KL -> 0 as alpha -> infinity.
inline constexpr double C = -k1;
} // namespace kl_const

inline constexpr double kLogAlphaMin = -20.0;
inline constexpr double kLogAlphaMax = 20.0;
inline constexpr double kLogSigma2Min = -20.0;
inline constexpr double kLogSigma2Max = 10.0;
inline constexpr double kDefaultThreshold = 3.0;

/// Per-layer approximate posterior q(w | theta, sigma^2): posterior means
/// theta and log sigma^2 of the same shape, with sigma^2 = alpha * theta^2.
struct VariationalParams {
    Tensor theta;
    Tensor log_sigma2;

    VariationalParams() = default;
    VariationalParams(Tensor t, Tensor ls2) : theta(std::move(t)), log_sigma2(std::move(ls2)) {
        if (!theta.same_shape(log_sigma2))
            throw dimension_error("theta shape " + Tensor::shape_str(theta.shape()) +
                                  " differs from log_sigma2 shape " +
                                  Tensor::shape_str(log_sigma2.shape()));
    }
};

inline double log_alpha_scalar(double theta, double log_sigma2) {
    if (theta == 0.0) return kLogAlphaMax; // fully noise-dominated weight
    double la = log_sigma2 - 2.0 * std::log(std::fabs(theta));
    return std::min(std::max(la, kLogAlphaMin), kLogAlphaMax);
}

/// Elementwise log alpha = log sigma^2 - 2 log|theta|, clamped to [-20, 20].
inline Tensor log_alpha(const VariationalParams& p) {
    Tensor out(p.theta.shape());
    for (std::size_t i = 0, n = out.numel(); i < n; ++i)
        out[i] = log_alpha_scalar(p.theta[i], p.log_sigma2[i]);
    return out;
}

/// softplus(x) = log(1 + e^x), overflow-safe.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Sigmoid approximation of the KL divergence from q(w|theta, alpha) to the
/// log-uniform prior, as a positive quantity:
///   D_KL = -[k1 sigmoid(k2 + k3 log a) - 0.5 log(1 + 1/a) + C],  C = -k1.
/// Tight on the whole log-alpha axis; D_KL -> 0 as log alpha -> +inf.
inline double kl_per_weight_scalar(double log_alpha) {
    double s = sigmoid_scalar(kl_const::k2 + kl_const::k3 * log_alpha);
    return -(kl_const::k1 * s - 0.5 * softplus(-log_alpha) + kl_const::C);
}

inline Tensor kl_per_weight(const Tensor& log_alpha) {
    return detail::unary(log_alpha, kl_per_weight_scalar);
}

/// d D_KL / d log alpha; nonpositive everywhere (KL falls as alpha grows).
inline double kl_grad_log_alpha_scalar(double log_alpha) {
    double s = sigmoid_scalar(kl_const::k2 + kl_const::k3 * log_alpha);
    // d/dx [0.5 log(1+e^-x)] = -0.5 sigmoid(-x)
    return -(kl_const::k1 * kl_const::k3 * s * (1.0 - s) + 0.5 * sigmoid_scalar(-log_alpha));
}

inline Tensor kl_grad_log_alpha(const Tensor& log_alpha) {
    return detail::unary(log_alpha, kl_grad_log_alpha_scalar);
}

struct KlMcEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// Monte-Carlo estimate of the exact KL term,
///   D_KL = -[0.5 log a - E_{eps~N(1,a)} log|eps| + C],
/// averaging log|1 + sqrt(a) eps0| over n_samples standard-normal draws.
/// Returns the estimate and its standard error (Welford accumulation).
inline KlMcEstimate kl_mc_oracle(double log_alpha, std::uint64_t n_samples, RngState& rng) {
    if (n_samples == 0) throw argument_error("kl_mc_oracle requires n_samples >= 1");
    const double sqrt_alpha = std::exp(0.5 * log_alpha);
    double mean = 0.0, m2 = 0.0;
    for (std::uint64_t i = 0; i < n_samples; ++i) {
        double x = std::log(std::fabs(1.0 + sqrt_alpha * rng.next_normal()));
        double d = x - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (x - mean);
    }
    KlMcEstimate est;
    est.value = -0.5 * log_alpha + mean - kl_const::C;
    est.stderr_ = n_samples > 1
                      ? std::sqrt(m2 / static_cast<double>(n_samples - 1) /
                                  static_cast<double>(n_samples))
                      : 0.0;
    return est;
}

/// Keep mask: 1 where log alpha < threshold, 0 (prune) at or above it.
inline Tensor threshold_mask(const Tensor& log_alpha, double threshold = kDefaultThreshold) {
    return less_than(log_alpha, threshold);
}

struct LayerSparsity {
    std::string name;
    bool variational = false;
    std::uint64_t total = 0;
    std::uint64_t kept = 0;
    double sparsity_pct = 0.0;
    double mean_dropout_rate = 0.0; // mean of p = alpha / (1 + alpha)
};

struct SparsityReport {
    std::vector<LayerSparsity> layers;
    std::uint64_t total = 0;
    std::uint64_t kept = 0;
    double sparsity_pct = 0.0;
    double compression = 1.0; // total / kept
    bool compression_defined = true;
    double threshold = kDefaultThreshold;
};

/// Aggregate per-layer keep counts at `threshold`. Layers handed in with a
/// null log-alpha tensor are listed but excluded from the counts.
inline SparsityReport
build_sparsity_report(const std::vector<std::pair<std::string, const Tensor*>>& layer_log_alphas,
                      double threshold = kDefaultThreshold) {
    SparsityReport rep;
    rep.threshold = threshold;
    for (const auto& [name, la] : layer_log_alphas) {
        LayerSparsity ls;
        ls.name = name;
        if (la != nullptr) {
            ls.variational = true;
            ls.total = la->numel();
            double p_sum = 0.0;
            for (std::size_t i = 0; i < la->numel(); ++i) {
                if ((*la)[i] < threshold) ++ls.kept;
                p_sum += sigmoid_scalar((*la)[i]); // alpha/(1+alpha) = sigmoid(log alpha)
            }
            ls.sparsity_pct =
                ls.total ? 100.0 * (1.0 - static_cast<double>(ls.kept) / static_cast<double>(ls.total))
                         : 0.0;
            ls.mean_dropout_rate = ls.total ? p_sum / static_cast<double>(ls.total) : 0.0;
            rep.total += ls.total;
            rep.kept += ls.kept;
        }
        rep.layers.push_back(std::move(ls));
    }
    rep.sparsity_pct =
        rep.total ? 100.0 * (1.0 - static_cast<double>(rep.kept) / static_cast<double>(rep.total)) : 0.0;
    if (rep.total == 0 || rep.kept == 0) {
        rep.compression_defined = false; // undefined: no variational weights, or none kept
        rep.compression = 0.0;
    } else {
        rep.compression = static_cast<double>(rep.total) / static_cast<double>(rep.kept);
    }
    return rep;
}

} // namespace sparsevd
