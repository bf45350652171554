#pragma once

#include <cstdint>
#include <string>

#include "sparsevd/data_io.hpp"
#include "sparsevd/linear_ard.hpp"
#include "sparsevd/model.hpp"
#include "sparsevd/train.hpp"

namespace sparsevd {

/// Side-by-side linear ARD comparison on one synthetic problem: OLS, the
/// fixed-alpha closed forms evaluated at the learned dropout rates, and the
/// SGVB-trained variational linear model itself.
struct LinregComparison {
    Tensor true_w;
    Tensor ols_w;
    Tensor rvm_w;          // Eq.-16 style MAP at the learned alpha
    Tensor closed_form_w;  // Eq.-17 style solution at the learned alpha
    Tensor theta_sgvb;
    Tensor log_alpha_sgvb;
    double train_rmse = 0.0;
};

/// Training recipe for the linear model: one variational dense unit,
/// squared loss, Adam with linearly decaying learning rate and a short KL
/// warm-up. Deterministic given `seed`.
inline TrainConfig linreg_train_config(std::size_t n, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.dataset = "synthreg";
    cfg.epochs = 600;
    cfg.batch_size = static_cast<int>(std::min<std::size_t>(100, n));
    cfg.lr0 = 5e-3;
    cfg.lr_schedule = LrScheduleKind::linear_decay;
    cfg.warmup_start = 0;
    cfg.warmup_end = 150;
    cfg.seed = seed;
    return cfg;
}

inline constexpr std::uint64_t kLinregTrainSeedSalt = 0x5D2AC4B19E3779B9ULL;

inline LinregComparison run_linreg_comparison(std::size_t n, std::size_t d,
                                              std::size_t d_relevant, double noise_sd,
                                              std::uint64_t seed) {
    SyntheticRegression synth = synthetic_regression(n, d, d_relevant, noise_sd, seed);
    Dataset data = regression_dataset(synth);

    TrainConfig cfg = linreg_train_config(n, seed);
    cfg.architecture = "dense:" + std::to_string(d) + ":1:vd";
    Model model = parse_architecture(cfg.architecture, LossKind::squared_error);
    RngState rng(seed ^ kLinregTrainSeedSalt);
    model.init_params(rng);
    train(model, data, nullptr, cfg, rng);

    LinregComparison out;
    out.true_w = synth.true_weights;
    const VariationalParams* vp = model.layers.front()->variational();
    out.theta_sgvb = vp->theta.reshaped({d});
    out.log_alpha_sgvb = log_alpha(*vp).reshaped({d});

    LinearProblem prob;
    prob.design = synth.design;
    prob.targets = synth.targets;
    prob.alpha = exp(out.log_alpha_sgvb);
    out.ols_w = ols(synth.design, synth.targets);
    out.rvm_w = rvm_map(prob);
    out.closed_form_w = sparse_vd_linreg(prob);
    out.train_rmse = evaluate(model, data, std::numeric_limits<double>::infinity()).err;
    return out;
}

} // namespace sparsevd
