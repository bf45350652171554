#pragma once

#include "sparsevd/errors.hpp"

namespace sparsevd {

/// Minimized training loss: N * mean batch NLL + beta * KL. This is the
/// negated stochastic variational lower bound at beta = 1; the likelihood
/// term (N/M) sum of NLL over the minibatch equals N times the batch mean.
inline double sgvb_objective(double batch_mean_nll, std::size_t batch_size,
                             std::size_t dataset_size, double kl_sum, double beta) {
    if (batch_size == 0 || dataset_size == 0)
        throw argument_error("sgvb_objective requires positive batch and dataset sizes");
    if (kl_sum < 0.0) throw argument_error("sgvb_objective requires kl_sum >= 0");
    return static_cast<double>(dataset_size) * batch_mean_nll + beta * kl_sum;
}

/// KL warm-up factor: 0 before `start`, 1 at and after `end`, linear in
/// between.
inline double warmup_beta(int epoch, int start, int end) {
    if (epoch < start) return 0.0;
    if (epoch >= end) return 1.0;
    return static_cast<double>(epoch - start) / static_cast<double>(end - start);
}

/// Linear decay from lr0 at epoch 0 to zero at `total_epochs`.
inline double lr_linear_decay(int epoch, int total_epochs, double lr0) {
    if (total_epochs < 1) throw argument_error("lr schedule requires total_epochs >= 1");
    return lr0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

} // namespace sparsevd
