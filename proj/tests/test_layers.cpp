#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "sparsevd/layers.hpp"
#include "sparsevd/loss.hpp"
#include "sparsevd/rng.hpp"

using namespace sparsevd;

namespace {

// J = sum(c .* forward(a)) with frozen noise; c makes the output gradient
// trivially c itself, and central differences of J probe every parameter.
struct LinearFunctionalCheck {
    Layer& layer;
    Tensor a;
    Tensor c;

    double eval() {
        RngState unused(0);
        Tensor out = layer.forward_train(a, unused);
        return sum(mul(c, out));
    }

    /// Max relative error between analytic gradients and central differences
    /// over every parameter entry and every input entry.
    double max_gradient_error(double h = 1e-4) {
        RngState unused(0);
        layer.zero_grads();
        layer.forward_train(a, unused);
        Tensor grad_a = layer.backward(c);
        double worst = 0.0;
        for (const ParamRef& p : layer.param_refs()) {
            for (std::size_t i = 0; i < p.value->numel(); ++i) {
                double* slot = &p.value->values()[i];
                const double fd = testutil::central_diff([&] { return eval(); }, slot, h);
                worst = std::max(worst, testutil::rel_err((*p.grad)[i], fd));
            }
        }
        for (std::size_t i = 0; i < a.numel(); ++i) {
            double* slot = &a.values()[i];
            const double fd = testutil::central_diff([&] { return eval(); }, slot, h);
            worst = std::max(worst, testutil::rel_err(grad_a[i], fd));
        }
        return worst;
    }
};

} // namespace

TEST_CASE("dense_vd forward with zero noise hook reproduces gamma = A theta") {
    DenseVDLayer layer(2, 1);
    RngState rng(1);
    auto refs = layer.param_refs();
    *refs[0].value = Tensor::from_rows({{2.0}, {5.0}});    // theta
    *refs[1].value = Tensor({2, 1}, -20.0);                // sigma^2 ~ 0
    layer.fix_noise(Tensor({1, 1}));                       // eps = 0
    Tensor out = layer.forward_train(Tensor::from_rows({{1.0, 0.0}}), rng);
    REQUIRE(out[0] == 2.0); // exactly gamma: the noise term is multiplied by eps = 0
}

TEST_CASE("dense_vd with tiny sigma stays within the delta-floor effect") {
    DenseVDLayer layer(3, 2);
    RngState rng(7);
    layer.init_params(rng);
    auto refs = layer.param_refs();
    *refs[1].value = Tensor({3, 2}, -20.0);
    Tensor a = sample_standard_normal({4, 3}, rng);
    Tensor noisy = layer.forward_train(a, rng);
    Tensor clean = layer.forward_eval(a, 1e18);
    // noise scale is sqrt(a^2 sigma^2 + 1e-8) ~ 1e-4
    for (std::size_t i = 0; i < noisy.numel(); ++i)
        REQUIRE(std::fabs(noisy[i] - clean[i]) < 1e-3);
}

TEST_CASE("dense_vd matches the hand-computed gamma/delta example by Monte Carlo") {
    // A = [[1, 0]], theta = [[2],[5]], sigma^2 = [[9],[~0]]:
    // gamma = 2, delta = 9, so b ~ N(2, 9).
    DenseVDLayer layer(2, 1);
    auto refs = layer.param_refs();
    *refs[0].value = Tensor::from_rows({{2.0}, {5.0}});
    Tensor ls2({2, 1}, -40.0);
    ls2[0] = std::log(9.0);
    *refs[1].value = ls2;
    Tensor a = Tensor::from_rows({{1.0, 0.0}});
    RngState rng(99);
    const std::size_t n = 100000;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor b = layer.forward_train(a, rng);
        const double d = b[0] - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (b[0] - mean);
    }
    const double var = m2 / static_cast<double>(n - 1);
    REQUIRE(std::fabs(mean - 2.0) < 0.03); // 3 sigma: 3*3/sqrt(1e5) = 0.028
    REQUIRE(std::fabs(var - 9.0) < 0.15);  // 3 sigma: 3*9*sqrt(2/1e5) = 0.12
}

TEST_CASE("dense_vd backward: zero upstream gradient gives zero gradients") {
    DenseVDLayer layer(3, 2);
    RngState rng(3);
    layer.init_params(rng);
    layer.zero_grads();
    layer.forward_train(sample_standard_normal({2, 3}, rng), rng);
    Tensor grad_a = layer.backward(Tensor({2, 2}));
    for (const ParamRef& p : layer.param_refs())
        REQUIRE(sum(abs(*p.grad)) == 0.0);
    REQUIRE(sum(abs(grad_a)) == 0.0);
}

TEST_CASE("dense_vd backward matches central finite differences at fixed noise") {
    RngState rng(12345);
    for (int instance = 0; instance < 20; ++instance) {
        DenseVDLayer layer(3, 2);
        layer.init_params(rng);
        auto refs = layer.param_refs();
        // roomy sigma so the delta path carries real gradient
        *refs[1].value = add_scalar(sample_standard_normal({3, 2}, rng), -1.0);
        *refs[2].value = sample_standard_normal({2}, rng); // bias
        layer.fix_noise(sample_standard_normal({2, 2}, rng));
        LinearFunctionalCheck check{layer, sample_standard_normal({2, 3}, rng),
                                    sample_standard_normal({2, 2}, rng)};
        REQUIRE(check.max_gradient_error() < 1e-4);
    }
}

TEST_CASE("dense_vd backward without forward is a state error") {
    DenseVDLayer layer(2, 2);
    REQUIRE_THROWS_AS(layer.backward(Tensor({1, 2})), state_error);
}

TEST_CASE("dense_vd with sigma ~ 0 and zero noise reduces to plain dense backprop") {
    DenseVDLayer layer(3, 2);
    RngState rng(11);
    layer.init_params(rng);
    auto refs = layer.param_refs();
    *refs[1].value = Tensor({3, 2}, -60.0);
    Tensor a = sample_standard_normal({4, 3}, rng);
    Tensor g = sample_standard_normal({4, 2}, rng);
    layer.fix_noise(Tensor({4, 2}));
    layer.zero_grads();
    layer.forward_train(a, rng);
    Tensor grad_a = layer.backward(g);
    Tensor expected_theta_grad = matmul(transpose(a), g);
    REQUIRE(testutil::bits_equal(*layer.param_refs()[0].grad, expected_theta_grad));
    Tensor theta = *layer.param_refs()[0].value;
    REQUIRE(testutil::bits_equal(grad_a, matmul(g, transpose(theta))));
}

TEST_CASE("conv_vd forward with sigma ~ 0 equals the plain correlation") {
    ConvVDLayer layer(2, 2, 1, 2, 1, 0);
    RngState rng(21);
    layer.init_params(rng);
    auto refs = layer.param_refs();
    *refs[1].value = Tensor({2, 2, 1, 2}, -60.0);
    layer.fix_noise(Tensor({1, 3, 3, 2}));
    Tensor a = sample_standard_normal({1, 4, 4, 1}, rng);
    Tensor train_out = layer.forward_train(a, rng);
    Tensor eval_out = layer.forward_eval(a, 1e18);
    REQUIRE(train_out.shape() == std::vector<std::size_t>{1, 3, 3, 2});
    REQUIRE(testutil::bits_equal(train_out, eval_out));
}

TEST_CASE("conv_vd scalar case has the advertised output moments") {
    // 1x1 input a, 1x1 kernel: output ~ N(a theta, a^2 sigma^2)
    ConvVDLayer layer(1, 1, 1, 1, 1, 0);
    auto refs = layer.param_refs();
    (*refs[0].value)[0] = 1.5;            // theta
    (*refs[1].value)[0] = std::log(0.25); // sigma^2
    Tensor a({1, 1, 1, 1}, 2.0);
    RngState rng(31);
    const std::size_t n = 100000;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor b = layer.forward_train(a, rng);
        const double d = b[0] - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (b[0] - mean);
    }
    const double var = m2 / static_cast<double>(n - 1);
    // mean 2*1.5 = 3, var 4*0.25 = 1
    REQUIRE(std::fabs(mean - 3.0) < 3.1 * 1.0 / std::sqrt(1e5));
    REQUIRE(std::fabs(var - 1.0) < 3.1 * std::sqrt(2.0 / 1e5));
}

TEST_CASE("conv_vd zero input gives zero output regardless of parameters") {
    ConvVDLayer layer(2, 2, 1, 1, 1, 0);
    RngState rng(41);
    layer.init_params(rng);
    layer.fix_noise(Tensor({1, 2, 2, 1}));
    Tensor out = layer.forward_train(Tensor({1, 3, 3, 1}), rng);
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
    layer.unfix_noise();
    Tensor out2 = layer.forward_train(Tensor({1, 3, 3, 1}), rng);
    // gamma = delta = 0; only the floor noise sqrt(1e-8)*eps remains
    for (std::size_t i = 0; i < out2.numel(); ++i) REQUIRE(std::fabs(out2[i]) < 1e-3);
}

TEST_CASE("conv_vd backward matches central finite differences at fixed noise") {
    RngState rng(4242);
    for (int instance = 0; instance < 20; ++instance) {
        const std::size_t pad = instance % 2;
        ConvVDLayer layer(2, 2, 1, 2, 1, pad);
        layer.init_params(rng);
        auto refs = layer.param_refs();
        *refs[1].value = add_scalar(sample_standard_normal({2, 2, 1, 2}, rng), -1.0);
        *refs[2].value = sample_standard_normal({2}, rng);
        const std::size_t ho = pad ? 5 : 3;
        layer.fix_noise(sample_standard_normal({1, ho, ho, 2}, rng));
        LinearFunctionalCheck check{layer, sample_standard_normal({1, 4, 4, 1}, rng),
                                    sample_standard_normal({1, ho, ho, 2}, rng)};
        REQUIRE(check.max_gradient_error() < 1e-4);
    }
}

TEST_CASE("conv_vd backward: zero upstream gradient gives zeros") {
    ConvVDLayer layer(2, 2, 1, 1, 1, 0);
    RngState rng(51);
    layer.init_params(rng);
    layer.zero_grads();
    layer.forward_train(sample_standard_normal({1, 3, 3, 1}, rng), rng);
    Tensor grad_a = layer.backward(Tensor({1, 2, 2, 1}));
    for (const ParamRef& p : layer.param_refs()) REQUIRE(sum(abs(*p.grad)) == 0.0);
    REQUIRE(sum(abs(grad_a)) == 0.0);
}

TEST_CASE("conv_vd with sigma ~ 0 reduces to plain conv backprop for theta") {
    ConvVDLayer vd(2, 2, 1, 1, 1, 0);
    ConvLayer plain(2, 2, 1, 1, 1, 0);
    RngState r1(61), r2(61);
    vd.init_params(r1);
    plain.init_params(r2);
    auto vrefs = vd.param_refs();
    *vrefs[1].value = Tensor({2, 2, 1, 1}, -60.0);
    Tensor a = sample_standard_normal({2, 3, 3, 1}, r1);
    Tensor g = sample_standard_normal({2, 2, 2, 1}, r1);
    vd.fix_noise(Tensor({2, 2, 2, 1}));
    vd.zero_grads();
    plain.zero_grads();
    vd.forward_train(a, r1);
    RngState unused(0);
    plain.forward_train(a, unused);
    Tensor ga_vd = vd.backward(g);
    Tensor ga_plain = plain.backward(g);
    REQUIRE(testutil::bits_equal(*vd.param_refs()[0].grad, *plain.param_refs()[0].grad));
    REQUIRE(testutil::bits_equal(ga_vd, ga_plain));
}

TEST_CASE("binary dropout identity, moments and determinism") {
    RngState rng(71);
    BinaryDropoutLayer none(0.0);
    Tensor x = sample_standard_normal({5, 4}, rng);
    REQUIRE(testutil::bits_equal(none.forward_train(x, rng), x));
    REQUIRE_THROWS_AS(BinaryDropoutLayer(1.0), argument_error);
    REQUIRE_THROWS_AS(BinaryDropoutLayer(-0.1), argument_error);

    BinaryDropoutLayer half(0.5);
    Tensor ones({1000000}, 1.0);
    RngState r2(123);
    Tensor kept = half.forward_train(ones, r2);
    REQUIRE(std::fabs(mean(kept) - 1.0) < 0.004); // 3 sigma: 3*1/sqrt(1e6) = 0.003
    RngState r3(555), r4(555);
    Tensor m1 = half.forward_train(ones, r3);
    Tensor m2 = half.forward_train(ones, r4);
    REQUIRE(testutil::bits_equal(m1, m2));
    // eval is the identity
    REQUIRE(testutil::bits_equal(half.forward_eval(x, 3.0), x));
}

TEST_CASE("relu, flatten and maxpool behave and route gradients") {
    RngState rng(81);
    ReluLayer relu;
    Tensor x = Tensor::vector({-1.0, 0.0, 2.0});
    Tensor y = relu.forward_train(x, rng);
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == 0.0);
    REQUIRE(y[2] == 2.0);
    Tensor g = relu.backward(Tensor::vector({5.0, 5.0, 5.0}));
    REQUIRE(g[0] == 0.0);
    REQUIRE(g[1] == 0.0); // dead at exactly zero
    REQUIRE(g[2] == 5.0);

    FlattenLayer fl;
    Tensor img = sample_standard_normal({2, 3, 3, 1}, rng);
    Tensor flat = fl.forward_train(img, rng);
    REQUIRE(flat.shape() == std::vector<std::size_t>{2, 9});
    Tensor back = fl.backward(flat);
    REQUIRE(testutil::bits_equal(back, img));

    MaxPool2Layer pool;
    Tensor pin({1, 2, 2, 1}, std::vector<double>{1.0, 4.0, 2.0, 3.0});
    Tensor pout = pool.forward_train(pin, rng);
    REQUIRE(pout.numel() == 1);
    REQUIRE(pout[0] == 4.0);
    Tensor pgrad = pool.backward(Tensor({1, 1, 1, 1}, 7.0));
    REQUIRE(pgrad[1] == 7.0);
    REQUIRE(pgrad[0] == 0.0);
}

TEST_CASE("mult_param reference: zero-noise hook and alpha -> 0 give A theta") {
    RngState rng(91);
    MultParamDense ref{sample_standard_normal({3, 2}, rng), Tensor({3, 2}, -60.0), {}, {}, {}};
    Tensor a = sample_standard_normal({2, 3}, rng);
    Tensor expect = matmul(a, ref.theta);
    ref.fixed_eps = Tensor({3, 2});
    REQUIRE(testutil::bits_equal(ref.forward(a, rng), expect));
    ref.fixed_eps.reset();
    Tensor out = ref.forward(a, rng); // alpha = e^-60: noise far below the comparison scale
    for (std::size_t i = 0; i < out.numel(); ++i)
        REQUIRE_THAT(out[i], Catch::Matchers::WithinAbs(expect[i], 1e-10));
}

TEST_CASE("moment equivalence: weight-space and activation-space sampling agree") {
    // Same (theta, sigma^2): weight-space samples w = theta (1 + sqrt(a) eps),
    // activation-space samples b = gamma + sqrt(A^2 sigma^2) eps. Per-activation
    // means and variances must agree within 3 standard errors at 1e5 samples.
    RngState rng(0xABCDEF);
    for (int config = 0; config < 3; ++config) {
        const std::size_t in = 2 + config, out = 2, m = 2;
        Tensor theta = sample_standard_normal({in, out}, rng);
        Tensor log_alpha_t = mul_scalar(sample_standard_normal({in, out}, rng), 0.5);
        Tensor a = sample_standard_normal({m, in}, rng);

        MultParamDense wspace{theta, log_alpha_t, {}, {}, {}};
        DenseVDLayer aspace(in, out);
        auto refs = aspace.param_refs();
        *refs[0].value = theta;
        Tensor ls2(theta.shape());
        for (std::size_t i = 0; i < ls2.numel(); ++i)
            ls2[i] = log_alpha_t[i] + 2.0 * std::log(std::fabs(theta[i]));
        *refs[1].value = ls2;
        aspace.set_delta_floor(0.0);

        const std::size_t trials = 100000;
        const std::size_t acts = m * out;
        std::vector<double> mw(acts, 0.0), vw(acts, 0.0), ma(acts, 0.0), va(acts, 0.0);
        for (std::size_t t = 0; t < trials; ++t) {
            Tensor bw = wspace.forward(a, rng);
            Tensor ba = aspace.forward_train(a, rng);
            const double k = static_cast<double>(t + 1);
            for (std::size_t i = 0; i < acts; ++i) {
                double d = bw[i] - mw[i];
                mw[i] += d / k;
                vw[i] += d * (bw[i] - mw[i]);
                d = ba[i] - ma[i];
                ma[i] += d / k;
                va[i] += d * (ba[i] - ma[i]);
            }
        }
        for (std::size_t i = 0; i < acts; ++i) {
            const double var_w = vw[i] / static_cast<double>(trials - 1);
            const double var_a = va[i] / static_cast<double>(trials - 1);
            const double se_mean = std::sqrt((var_w + var_a) / static_cast<double>(trials));
            REQUIRE(std::fabs(mw[i] - ma[i]) <= 3.0 * se_mean);
            const double se_var = std::sqrt(2.0 / static_cast<double>(trials - 1)) *
                                  std::sqrt(var_w * var_w + var_a * var_a);
            REQUIRE(std::fabs(var_w - var_a) <= 3.0 * se_var);
        }
    }
}

TEST_CASE("softmax cross entropy examples and gradient") {
    SECTION("uniform logits give ln K") {
        Tensor logits({4, 10});
        std::vector<std::int64_t> labels{0, 3, 7, 9};
        LossValue lv = softmax_cross_entropy(logits, labels);
        REQUIRE_THAT(lv.mean_nll, Catch::Matchers::WithinAbs(std::log(10.0), 1e-12));
        REQUIRE_THAT(lv.mean_nll, Catch::Matchers::WithinAbs(2.302585, 1e-6));
    }
    SECTION("strongly peaked logits give essentially zero loss") {
        Tensor logits({1, 4});
        logits[2] = 50.0;
        LossValue lv = softmax_cross_entropy(logits, std::vector<std::int64_t>{2});
        REQUIRE(lv.mean_nll < 1e-15);
    }
    SECTION("out-of-range labels rejected") {
        Tensor logits({1, 4});
        REQUIRE_THROWS_AS(softmax_cross_entropy(logits, std::vector<std::int64_t>{4}),
                          argument_error);
        REQUIRE_THROWS_AS(softmax_cross_entropy(logits, std::vector<std::int64_t>{-1}),
                          argument_error);
    }
    SECTION("gradient matches finite differences to relative 1e-6") {
        RngState rng(101);
        Tensor logits = sample_standard_normal({3, 4}, rng);
        std::vector<std::int64_t> labels{1, 0, 3};
        LossValue lv = softmax_cross_entropy(logits, labels);
        for (std::size_t i = 0; i < logits.numel(); ++i) {
            double* slot = &logits.values()[i];
            const double fd = testutil::central_diff(
                [&] { return softmax_cross_entropy(logits, labels).mean_nll; }, slot, 1e-6);
            REQUIRE(testutil::rel_err(lv.grad_logits[i], fd, 1e-4) < 1e-6);
        }
    }
    SECTION("huge logits stay finite through the shifted log-sum-exp") {
        Tensor logits({1, 3});
        logits[0] = 1e4;
        logits[1] = -1e4;
        LossValue lv = softmax_cross_entropy(logits, std::vector<std::int64_t>{0});
        REQUIRE(std::isfinite(lv.mean_nll));
    }
}

TEST_CASE("squared error value and gradient") {
    Tensor pred = Tensor::from_rows({{1.0}, {3.0}});
    Tensor target = Tensor::from_rows({{0.0}, {1.0}});
    LossValue lv = squared_error(pred, target);
    REQUIRE_THAT(lv.mean_nll, Catch::Matchers::WithinAbs(0.5 * (1.0 + 4.0) / 2.0, 1e-12));
    REQUIRE_THAT(lv.grad_logits[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(lv.grad_logits[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THROWS_AS(squared_error(pred, Tensor({3, 1})), dimension_error);
}
