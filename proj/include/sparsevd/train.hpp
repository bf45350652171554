#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sparsevd/adam.hpp"
#include "sparsevd/data_io.hpp"
#include "sparsevd/loss.hpp"
#include "sparsevd/model.hpp"
#include "sparsevd/objective.hpp"

namespace sparsevd {

enum class LrScheduleKind { linear_decay, constant };
enum class TrainMode { scratch, finetune };

struct TrainConfig {
    std::string dataset = "mnist";
    std::string architecture;
    int epochs = 200;
    int batch_size = 100;
    std::size_t dataset_size = 0; // 0: take it from the loaded data
    double lr0 = 1e-4;
    LrScheduleKind lr_schedule = LrScheduleKind::linear_decay;
    int warmup_start = 10;
    int warmup_end = 100;
    std::uint64_t seed = 0;
    double threshold = kDefaultThreshold;
    std::string pretrained;
    TrainMode mode = TrainMode::scratch;

    void validate(std::size_t n_train) const {
        if (epochs < 0) throw config_error("epochs must be nonnegative");
        if (batch_size <= 0 || static_cast<std::size_t>(batch_size) > n_train)
            throw config_error("batch size " + std::to_string(batch_size) +
                               " outside (0, N] with N = " + std::to_string(n_train));
        if (lr0 <= 0.0) throw config_error("lr0 must be positive");
        if (warmup_start > warmup_end || (epochs > 0 && warmup_end > epochs))
            throw config_error("warm-up window [" + std::to_string(warmup_start) + ", " +
                               std::to_string(warmup_end) + "] must satisfy start <= end <= epochs");
    }

    double beta_at(int epoch) const { return warmup_beta(epoch, warmup_start, warmup_end); }

    double lr_at(int epoch) const {
        return lr_schedule == LrScheduleKind::constant ? lr0
                                                       : lr_linear_decay(epoch, epochs, lr0);
    }
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double beta = 0.0;
    double train_loss = 0.0;
    double train_err = 0.0;
    double test_err = 0.0;
    double kl_sum = 0.0;
    double elbo = 0.0;
    double sparsity_pct = 0.0;
};

namespace detail {

/// Dense stacks take [M x D] inputs; conv stacks take [M x H x W x C].
/// Image datasets are stored [N x H x W]; adapt the batch to the first layer.
inline Tensor adapt_batch(Tensor batch, const Model& model) {
    const Layer* first = model.layers.front().get();
    const bool wants_matrix = dynamic_cast<const DenseLayer*>(first) != nullptr ||
                              dynamic_cast<const DenseVDLayer*>(first) != nullptr;
    if (wants_matrix && batch.rank() > 2)
        return batch.reshaped({batch.extent(0), batch.numel() / batch.extent(0)});
    if (!wants_matrix && batch.rank() == 3)
        return batch.reshaped({batch.extent(0), batch.extent(1), batch.extent(2), 1});
    return batch;
}

struct EvalStats {
    double err = 0.0; // misclassification rate, or RMSE for regression
    double mean_nll = 0.0;
};

} // namespace detail

/// Deterministic whole-dataset evaluation at `threshold` (chunked).
inline detail::EvalStats evaluate(Model& model, const Dataset& data, double threshold,
                                  std::size_t chunk = 1000) {
    detail::EvalStats st;
    const std::size_t n = data.size();
    if (n == 0) return st;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    double nll_sum = 0.0, err_sum = 0.0;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t last = std::min(n, first + chunk);
        Tensor batch = detail::adapt_batch(data.gather_inputs(idx, first, last), model);
        Tensor out = model.forward_eval(batch, threshold);
        if (data.is_classification()) {
            auto labels = data.gather_labels(idx, first, last);
            LossValue lv = softmax_cross_entropy(out, labels);
            nll_sum += lv.mean_nll * static_cast<double>(last - first);
            const std::size_t k = out.extent(1);
            for (std::size_t i = 0; i < labels.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t j = 1; j < k; ++j)
                    if (out.at2(i, j) > out.at2(i, best)) best = j;
                if (best != static_cast<std::size_t>(labels[i])) err_sum += 1.0;
            }
        } else {
            Tensor target = data.gather_targets(idx, first, last);
            LossValue lv = squared_error(out, target);
            nll_sum += lv.mean_nll * static_cast<double>(last - first);
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double r = out[i] - target[i];
                err_sum += r * r;
            }
        }
    }
    st.mean_nll = nll_sum / static_cast<double>(n);
    st.err = data.is_classification() ? err_sum / static_cast<double>(n)
                                      : std::sqrt(err_sum / static_cast<double>(n));
    return st;
}

namespace detail {

[[noreturn]] inline void diagnose_non_finite(Model& model, const Tensor& batch, int epoch,
                                             std::size_t batch_index) {
    std::string where = "loss head";
    Tensor h = batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        h = model.layers[i]->forward_eval(h, std::numeric_limits<double>::infinity());
        if (!h.all_finite()) {
            where = "layer L" + std::to_string(i) + " (" + model.layers[i]->token() + ")";
            break;
        }
    }
    throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch_index) + "; first non-finite output from " + where);
}

} // namespace detail

/// Runs `cfg.epochs` epochs of shuffled minibatch SGVB training with Adam.
/// Deterministic given `rng`; aborts with a layer-naming diagnostic on a
/// non-finite loss.
inline std::vector<EpochMetrics> train(Model& model, const Dataset& train_data,
                                       const Dataset* test_data, const TrainConfig& cfg,
                                       RngState& rng) {
    const std::size_t n = train_data.size();
    cfg.validate(n);
    const std::size_t objective_n = cfg.dataset_size ? cfg.dataset_size : n;

    std::vector<EpochMetrics> metrics;
    AdamState adam;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        const double beta = cfg.beta_at(epoch);

        // Fisher-Yates shuffle from the run RNG; the last partial batch is kept.
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[rng.next_u64() % i]);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < n; first += cfg.batch_size, ++batches) {
            const std::size_t last = std::min(n, first + cfg.batch_size);
            Tensor batch = detail::adapt_batch(train_data.gather_inputs(order, first, last), model);
            model.zero_grads();
            Tensor out = model.forward_train(batch, rng);
            LossValue lv;
            if (train_data.is_classification())
                lv = softmax_cross_entropy(out, train_data.gather_labels(order, first, last));
            else
                lv = squared_error(out, train_data.gather_targets(order, first, last));
            const double kl = model.kl_sum();
            const double loss = sgvb_objective(lv.mean_nll, last - first, objective_n, kl, beta);
            if (!std::isfinite(loss)) detail::diagnose_non_finite(model, batch, epoch, batches);
            model.backward(mul_scalar(lv.grad_logits, static_cast<double>(objective_n)));
            model.accumulate_kl_grad(beta);
            adam_step(model.param_refs(), adam, lr);
            loss_sum += loss;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        em.beta = beta;
        em.train_loss = loss_sum / static_cast<double>(batches);
        em.kl_sum = model.kl_sum();
        detail::EvalStats tr = evaluate(model, train_data, cfg.threshold);
        em.train_err = tr.err;
        // Plug-in lower bound of the *unpruned* model: deterministic pass at
        // theta, minus the full KL. Without variational layers the pruned
        // pass already is that pass.
        bool any_vd = false;
        for (const auto& l : model.layers)
            if (l->variational()) any_vd = true;
        detail::EvalStats full =
            any_vd ? evaluate(model, train_data, std::numeric_limits<double>::infinity()) : tr;
        em.elbo = -(static_cast<double>(objective_n) * full.mean_nll) - em.kl_sum;
        if (test_data) em.test_err = evaluate(model, *test_data, cfg.threshold).err;
        em.sparsity_pct = sparsity_report(model, cfg.threshold).sparsity_pct;
        metrics.push_back(em);
    }
    return metrics;
}

} // namespace sparsevd
