// Command-line front end: training, sparsification, evaluation and the
// desk-scale experiments, all deterministic under --seed.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsevd/checkpoint.hpp"
#include "sparsevd/config.hpp"
#include "sparsevd/data_io.hpp"
#include "sparsevd/linear_ard.hpp"
#include "sparsevd/linreg_experiment.hpp"
#include "sparsevd/model.hpp"
#include "sparsevd/report.hpp"
#include "sparsevd/train.hpp"
#include "sparsevd/variance.hpp"
#include "sparsevd/vd_core.hpp"

namespace {

using namespace sparsevd;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct LoadedData {
    Dataset train;
    std::optional<Dataset> test;
    LossKind loss = LossKind::softmax_cross_entropy;
};

LoadedData load_datasets(const RunConfig& rc) {
    LoadedData out;
    if (rc.dataset == "mnist") {
        out.train = load_mnist_idx(rc.train_images, rc.train_labels);
        out.train.truncate(rc.limit);
        if (rc.randomize_labels) out.train = randomize_labels(out.train, rc.label_seed);
        if (!rc.test_images.empty()) {
            if (rc.test_labels.empty())
                throw config_error("config: data.test_images without data.test_labels");
            Dataset t = load_mnist_idx(rc.test_images, rc.test_labels);
            t.split = "test";
            t.truncate(rc.test_limit);
            out.test = std::move(t);
        }
        out.loss = LossKind::softmax_cross_entropy;
    } else {
        SyntheticRegression s =
            synthetic_regression(rc.n, rc.d, rc.d_relevant, rc.noise_sd, rc.data_seed);
        out.train = regression_dataset(s);
        out.loss = LossKind::squared_error;
    }
    return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& ms) {
    std::ostringstream os;
    os << "epoch,lr,beta,train_loss,train_err,test_err,kl_sum,elbo,sparsity_pct\n";
    for (const auto& m : ms)
        os << m.epoch << ',' << fmt(m.lr) << ',' << fmt(m.beta) << ',' << fmt(m.train_loss) << ','
           << fmt(m.train_err) << ',' << fmt(m.test_err) << ',' << fmt(m.kl_sum) << ','
           << fmt(m.elbo) << ',' << fmt(m.sparsity_pct) << '\n';
    return os.str();
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& pretrained_flag, std::optional<std::uint64_t> seed_flag,
              std::string metrics_path, std::string report_path) {
    RunConfig rc = load_run_config(config_path);
    for (const auto& n : rc.notices) std::cerr << n << "\n";
    if (seed_flag) rc.train.seed = *seed_flag;
    if (!pretrained_flag.empty()) rc.train.pretrained = pretrained_flag;
    if (metrics_path.empty()) metrics_path = out_path + ".metrics.csv";
    if (report_path.empty()) report_path = out_path + ".sparsity.json";

    LoadedData data = load_datasets(rc);
    Model model = parse_architecture(rc.train.architecture, data.loss);
    RngState rng(rc.train.seed);
    model.init_params(rng);
    if (!rc.train.pretrained.empty()) warm_start(model, read_checkpoint(rc.train.pretrained));

    std::vector<EpochMetrics> metrics =
        train(model, data.train, data.test ? &*data.test : nullptr, rc.train, rng);

    save_checkpoint(model, config_echo(rc), static_cast<std::uint32_t>(rc.train.epochs), out_path);
    atomic_write_file(metrics_path, metrics_csv(metrics));
    atomic_write_file(report_path, sparsity_report_text(sparsity_report(model, rc.train.threshold)));
    return 0;
}

int cmd_sparsify(const std::string& in_path, double threshold, const std::string& out_path,
                 std::string report_path) {
    if (report_path.empty()) report_path = out_path + ".sparsity.json";
    Checkpoint ck = read_checkpoint(in_path);
    Model model = parse_architecture(ck.descriptor);
    warm_start(model, ck); // same descriptor: plain tensor copy
    for (auto& layer : model.layers) {
        VariationalParams* vp = layer->variational();
        if (!vp) continue;
        Tensor la = log_alpha(*vp);
        for (std::size_t i = 0; i < la.numel(); ++i) {
            if (la[i] >= threshold) {
                vp->theta[i] = 0.0;
                vp->log_sigma2[i] = kLogSigma2Min; // sigma^2 numerically zero
            }
        }
    }
    save_checkpoint(model, ck.config_echo + " sparsified_at=" + fmt(threshold), ck.epoch, out_path);
    atomic_write_file(report_path, sparsity_report_text(sparsity_report(model, threshold)));
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, double threshold) {
    std::ifstream in(data_path);
    if (!in) throw config_error("cannot open data config " + data_path);
    RunConfig rc = parse_run_config(in, /*require_arch=*/false);
    for (const auto& n : rc.notices) std::cerr << n << "\n";
    LoadedData data = load_datasets(rc);
    Model model = load_checkpoint(ckpt_path, data.loss);
    const Dataset& split = data.test ? *data.test : data.train;
    auto stats = evaluate(model, split, threshold);
    std::printf("split=%s test_err=%.6f nll=%.6f\n", split.split.c_str(), stats.err,
                stats.mean_nll);
    return 0;
}

int cmd_kl_table(double lo, double hi, double step, std::uint64_t mc_samples, std::uint64_t seed,
                 const std::string& out_path) {
    if (!(lo < hi)) throw argument_error("kl-table requires min < max");
    if (!(step > 0.0)) throw argument_error("kl-table requires step > 0");
    if (mc_samples == 0) throw argument_error("kl-table requires mc-samples >= 1");
    RngState rng(seed);
    std::ostringstream os;
    os << "log_alpha,kl_approx,kl_mc,mc_stderr,abs_dev\n";
    double max_dev = 0.0;
    const auto steps = static_cast<std::size_t>((hi - lo) / step + 1e-9);
    for (std::size_t i = 0; i <= steps; ++i) {
        const double la = lo + static_cast<double>(i) * step;
        const double approx = kl_per_weight_scalar(la);
        KlMcEstimate mc = kl_mc_oracle(la, mc_samples, rng);
        const double dev = std::fabs(approx - mc.value);
        max_dev = std::max(max_dev, dev);
        os << fmt(la) << ',' << fmt(approx) << ',' << fmt(mc.value) << ',' << fmt(mc.stderr_)
           << ',' << fmt(dev) << '\n';
    }
    atomic_write_file(out_path, os.str());
    std::printf("max_abs_deviation=%.6f\n", max_dev);
    return 0;
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> grid;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw argument_error("bad grid entry '" + tok + "'");
        }
    }
    if (grid.empty()) throw argument_error("empty log-alpha grid");
    return grid;
}

int cmd_variance(const std::string& grid_csv, std::size_t trials, std::uint64_t seed,
                 const std::string& out_path) {
    RngState rng(seed);
    auto rows = grad_variance_experiment(fixed_variance_problem(), parse_grid(grid_csv), trials, rng);
    std::ostringstream os;
    os << "log_alpha,var_mult,var_add,ratio\n";
    for (const auto& r : rows)
        os << fmt(r.log_alpha) << ',' << fmt(r.var_mult) << ',' << fmt(r.var_add) << ','
           << fmt(r.ratio) << '\n';
    atomic_write_file(out_path, os.str());
    for (const auto& r : rows)
        std::printf("log_alpha=%g ratio=%.3f\n", r.log_alpha, r.ratio);
    return 0;
}

int cmd_linreg(std::size_t n, std::size_t d, std::size_t d_relevant, double noise,
               std::uint64_t seed, const std::string& out_path) {
    LinregComparison cmp = run_linreg_comparison(n, d, d_relevant, noise, seed);
    std::ostringstream os;
    os << "feature,true_w,ols,rvm_map,svd_closed_form,theta_sgvb,log_alpha_sgvb\n";
    for (std::size_t j = 0; j < d; ++j)
        os << j << ',' << fmt(cmp.true_w[j]) << ',' << fmt(cmp.ols_w[j]) << ',' << fmt(cmp.rvm_w[j])
           << ',' << fmt(cmp.closed_form_w[j]) << ',' << fmt(cmp.theta_sgvb[j]) << ','
           << fmt(cmp.log_alpha_sgvb[j]) << '\n';
    atomic_write_file(out_path, os.str());
    std::printf("train_rmse=%.6f\n", cmp.train_rmse);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse variational dropout: training, pruning and desk-scale experiments"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    std::string cfg_path, out_ckpt, pretrained, metrics_path, report_path;
    std::optional<std::uint64_t> seed_flag;
    train_cmd->add_option("--config", cfg_path, "run config file")->required();
    train_cmd->add_option("--out", out_ckpt, "output checkpoint path")->required();
    train_cmd->add_option("--pretrained", pretrained, "warm-start checkpoint");
    train_cmd->add_option("--seed", seed_flag, "override [train] seed");
    train_cmd->add_option("--metrics", metrics_path, "metrics CSV path (default <out>.metrics.csv)");
    train_cmd->add_option("--report", report_path, "sparsity JSON path (default <out>.sparsity.json)");

    // sparsify
    auto* sp_cmd = app.add_subcommand("sparsify", "Zero weights with log alpha at or above threshold");
    std::string sp_in, sp_out, sp_report;
    double sp_threshold = kDefaultThreshold;
    sp_cmd->add_option("--ckpt", sp_in, "input checkpoint")->required();
    sp_cmd->add_option("--threshold", sp_threshold, "log alpha threshold (default 3)");
    sp_cmd->add_option("--out", sp_out, "output checkpoint")->required();
    sp_cmd->add_option("--report", sp_report, "sparsity JSON path (default <out>.sparsity.json)");

    // eval
    auto* ev_cmd = app.add_subcommand("eval", "Deterministic evaluation of a checkpoint");
    std::string ev_ckpt, ev_data;
    double ev_threshold = kDefaultThreshold;
    ev_cmd->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev_cmd->add_option("--data", ev_data, "data config file ([data] section)")->required();
    ev_cmd->add_option("--threshold", ev_threshold, "log alpha threshold (default 3)");

    // kl-table
    auto* kl_cmd = app.add_subcommand("kl-table", "KL approximation vs Monte-Carlo estimate");
    double kl_min = -10.0, kl_max = 10.0, kl_step = 0.25;
    std::uint64_t kl_samples = 10000000, kl_seed = 0;
    std::string kl_out = "kl_table.csv";
    kl_cmd->add_option("--min", kl_min, "grid start (default -10)");
    kl_cmd->add_option("--max", kl_max, "grid end (default 10)");
    kl_cmd->add_option("--step", kl_step, "grid step (default 0.25)");
    kl_cmd->add_option("--mc-samples", kl_samples, "MC samples per point (default 1e7)");
    kl_cmd->add_option("--seed", kl_seed, "RNG seed");
    kl_cmd->add_option("--out", kl_out, "output CSV path");

    // variance
    auto* var_cmd = app.add_subcommand("variance", "Gradient variance: multiplicative vs additive");
    std::string var_grid = "-20,-10,-4,-2,0,2,4,6,8";
    std::size_t var_trials = 10000;
    std::uint64_t var_seed = 0;
    std::string var_out = "variance.csv";
    var_cmd->add_option("--log-alpha-grid", var_grid, "comma-separated log alpha values");
    var_cmd->add_option("--trials", var_trials, "noise draws per grid point (default 1e4)");
    var_cmd->add_option("--seed", var_seed, "RNG seed");
    var_cmd->add_option("--out", var_out, "output CSV path");

    // linreg
    auto* lr_cmd = app.add_subcommand("linreg", "Linear ARD comparison on synthetic data");
    std::size_t lr_n = 1000, lr_d = 20, lr_drel = 5;
    double lr_noise = 0.1;
    std::uint64_t lr_seed = 0;
    std::string lr_out = "linreg.csv";
    lr_cmd->add_option("--n", lr_n, "sample count (default 1000)");
    lr_cmd->add_option("--d", lr_d, "feature count (default 20)");
    lr_cmd->add_option("--d-relevant", lr_drel, "relevant feature count (default 5)");
    lr_cmd->add_option("--noise", lr_noise, "target noise standard deviation (default 0.1)");
    lr_cmd->add_option("--seed", lr_seed, "RNG seed");
    lr_cmd->add_option("--out", lr_out, "output CSV path");

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed())
            return cmd_train(cfg_path, out_ckpt, pretrained, seed_flag, metrics_path, report_path);
        if (sp_cmd->parsed()) return cmd_sparsify(sp_in, sp_threshold, sp_out, sp_report);
        if (ev_cmd->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_threshold);
        if (kl_cmd->parsed())
            return cmd_kl_table(kl_min, kl_max, kl_step, kl_samples, kl_seed, kl_out);
        if (var_cmd->parsed()) return cmd_variance(var_grid, var_trials, var_seed, var_out);
        if (lr_cmd->parsed()) return cmd_linreg(lr_n, lr_d, lr_drel, lr_noise, lr_seed, lr_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const argument_error& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const dimension_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
