#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

struct LossValue {
    double mean_nll = 0.0;
    Tensor grad_logits; // gradient of the batch-mean NLL
};

/// Mean negative log-likelihood of a softmax classifier over logits [M x K],
/// computed through a shifted log-sum-exp. The gradient is
/// (softmax - onehot) / M.
inline LossValue softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
    if (logits.rank() != 2)
        throw dimension_error("softmax_cross_entropy expects [M x K] logits, got " +
                              Tensor::shape_str(logits.shape()));
    const std::size_t m = logits.extent(0), k = logits.extent(1);
    if (labels.size() != m)
        throw dimension_error("label count " + std::to_string(labels.size()) +
                              " does not match batch size " + std::to_string(m));
    LossValue out;
    out.grad_logits = Tensor({m, k});
    double nll_sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::int64_t y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw argument_error("label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
                                 ")");
        const double* row = logits.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        nll_sum += lse - row[static_cast<std::size_t>(y)];
        double* grow = out.grad_logits.data() + i * k;
        for (std::size_t j = 0; j < k; ++j)
            grow[j] = std::exp(row[j] - lse) / static_cast<double>(m);
        grow[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(m);
    }
    out.mean_nll = nll_sum / static_cast<double>(m);
    return out;
}

/// Gaussian (unit variance) negative log-likelihood up to a constant:
/// mean over the batch of 0.5 * sum_o (pred - target)^2.
inline LossValue squared_error(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw dimension_error("squared_error shapes differ: " + Tensor::shape_str(pred.shape()) +
                              " vs " + Tensor::shape_str(target.shape()));
    if (pred.rank() != 2)
        throw dimension_error("squared_error expects [M x O] predictions, got " +
                              Tensor::shape_str(pred.shape()));
    const double m = static_cast<double>(pred.extent(0));
    LossValue out;
    out.grad_logits = Tensor(pred.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double r = pred[i] - target[i];
        acc += 0.5 * r * r;
        out.grad_logits[i] = r / m;
    }
    out.mean_nll = acc / m;
    return out;
}

} // namespace sparsevd
