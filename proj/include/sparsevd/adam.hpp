#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sparsevd/layers.hpp"
#include "sparsevd/tensor.hpp"
#include "sparsevd/vd_core.hpp"

namespace sparsevd {

/// Adam moment state, one (m, v) pair per parameter tensor in the order the
/// parameters are handed to adam_step.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;
};

/// One bias-corrected Adam update over all parameters. log sigma^2 tensors
/// are re-clamped to [-20, 10] after the step.
inline void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value->shape());
            state.v.emplace_back(p.value->shape());
        }
    }
    if (state.m.size() != params.size())
        throw dimension_error("adam state holds " + std::to_string(state.m.size()) +
                              " tensors but " + std::to_string(params.size()) + " were passed");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        if (!p.value->same_shape(*p.grad) || !p.value->same_shape(state.m[pi]))
            throw dimension_error("adam shape mismatch for parameter " + p.name + ": value " +
                                  Tensor::shape_str(p.value->shape()) + ", grad " +
                                  Tensor::shape_str(p.grad->shape()));
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        for (std::size_t i = 0; i < m.numel(); ++i) {
            const double g = (*p.grad)[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            double x = (*p.value)[i] - lr * m_hat / (std::sqrt(v_hat) + state.eps);
            if (p.kind == ParamKind::log_sigma2)
                x = std::min(std::max(x, kLogSigma2Min), kLogSigma2Max);
            (*p.value)[i] = x;
        }
    }
}

} // namespace sparsevd
