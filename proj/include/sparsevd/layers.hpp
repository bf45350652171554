#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"
#include "sparsevd/vd_core.hpp"

namespace sparsevd {

/// Floor added under sqrt(delta) so the noise scale stays differentiable
/// at delta = 0.
inline constexpr double kDeltaFloor = 1e-8;

enum class ParamKind { weight, bias, log_sigma2 };

/// Mutable view of one parameter tensor and its gradient accumulator.
struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
    ParamKind kind;
};

/// One step of a feed-forward network. Training forwards cache whatever the
/// matching backward needs; backward accumulates parameter gradients and
/// returns the gradient w.r.t. the layer input. Eval forwards are pure.
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string token() const = 0; // descriptor token this layer round-trips to
    virtual Tensor forward_train(const Tensor& a, RngState& rng) = 0;
    virtual Tensor forward_eval(const Tensor& a, double threshold) const = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void init_params(RngState&) {}
    virtual std::vector<ParamRef> param_refs() { return {}; }
    virtual VariationalParams* variational() { return nullptr; }
    virtual const VariationalParams* variational() const { return nullptr; }
    virtual void accumulate_kl_grad(double /*scale*/) {}
    virtual void zero_grads() {}
    virtual void clear_cache() {}
};

namespace detail {
inline Tensor fan_in_gaussian(const std::vector<std::size_t>& shape, std::size_t fan_in,
                              RngState& rng) {
    return mul_scalar(sample_standard_normal(shape, rng),
                      1.0 / std::sqrt(static_cast<double>(fan_in)));
}

inline void require_batch_matrix(const Tensor& a, std::size_t in, const std::string& who) {
    if (a.rank() != 2 || a.extent(1) != in)
        throw dimension_error(who + " expects [M x " + std::to_string(in) + "] input, got " +
                              Tensor::shape_str(a.shape()));
}

inline Tensor col_sum(const Tensor& g) { // [M x O] -> [O]
    Tensor out({g.extent(1)});
    for (std::size_t m = 0; m < g.extent(0); ++m)
        for (std::size_t j = 0; j < g.extent(1); ++j) out[j] += g.at2(m, j);
    return out;
}
} // namespace detail

/// Fully connected layer with a variational posterior per weight, trained
/// with the local reparameterization trick on the additive parameterization:
///   gamma = A theta,  delta = A^2 sigma^2,  b = gamma + sqrt(delta + floor) eps + bias.
/// One eps per output activation per batch. The bias is deterministic.
class DenseVDLayer : public Layer {
public:
    DenseVDLayer(std::size_t in, std::size_t out)
        : in_(in), out_(out),
          params_(Tensor({in, out}), Tensor({in, out}, kInitLogSigma2)),
          bias_({out}), theta_grad_({in, out}), log_sigma2_grad_({in, out}), bias_grad_({out}) {}

    static constexpr double kInitLogSigma2 = -8.0;

    std::string token() const override {
        return "dense:" + std::to_string(in_) + ":" + std::to_string(out_) + ":vd";
    }

    void init_params(RngState& rng) override {
        params_.theta = detail::fan_in_gaussian({in_, out_}, in_, rng);
        params_.log_sigma2 = Tensor({in_, out_}, kInitLogSigma2);
        bias_ = Tensor({out_});
    }

    Tensor forward_train(const Tensor& a, RngState& rng) override {
        detail::require_batch_matrix(a, in_, "dense_vd");
        const std::size_t m = a.extent(0);
        cache_.a = a;
        cache_.gamma = matmul(a, params_.theta);
        cache_.sigma2 = exp(params_.log_sigma2);
        cache_.delta = matmul(square(a), cache_.sigma2);
        if (fixed_eps_) {
            if (!fixed_eps_->same_shape(cache_.gamma))
                throw dimension_error("fixed noise shape " + Tensor::shape_str(fixed_eps_->shape()) +
                                      " does not match activations " +
                                      Tensor::shape_str(cache_.gamma.shape()));
            cache_.eps = *fixed_eps_;
        } else {
            cache_.eps = sample_standard_normal({m, out_}, rng);
        }
        cache_.valid = true;
        Tensor b(cache_.gamma.shape());
        for (std::size_t i = 0; i < b.numel(); ++i)
            b[i] = cache_.gamma[i] + std::sqrt(cache_.delta[i] + delta_floor_) * cache_.eps[i] +
                   bias_[i % out_];
        return b;
    }

    Tensor forward_eval(const Tensor& a, double threshold) const override {
        detail::require_batch_matrix(a, in_, "dense_vd");
        Tensor w = mul(params_.theta, threshold_mask(log_alpha(params_), threshold));
        Tensor b = matmul(a, w);
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] += bias_[i % out_];
        return b;
    }

    /// Pathwise gradients at the cached noise: exact chain rule through
    /// gamma, delta and sqrt(delta + floor).
    Tensor backward(const Tensor& grad_b) override {
        if (!cache_.valid) throw state_error("dense_vd backward without cached forward state");
        if (!grad_b.same_shape(cache_.gamma))
            throw dimension_error("dense_vd grad shape " + Tensor::shape_str(grad_b.shape()) +
                                  " does not match forward output " +
                                  Tensor::shape_str(cache_.gamma.shape()));
        Tensor d(grad_b.shape()); // dL/d delta
        for (std::size_t i = 0; i < d.numel(); ++i)
            d[i] = grad_b[i] * cache_.eps[i] * 0.5 / std::sqrt(cache_.delta[i] + delta_floor_);
        Tensor a_t = transpose(cache_.a);
        Tensor a_sq = square(cache_.a);
        theta_grad_ = add(theta_grad_, matmul(a_t, grad_b));
        Tensor sigma2_grad = matmul(transpose(a_sq), d);
        log_sigma2_grad_ = add(log_sigma2_grad_, mul(cache_.sigma2, sigma2_grad));
        bias_grad_ = add(bias_grad_, detail::col_sum(grad_b));
        // dL/da = G theta^T + 2 a .* (D sigma2^T)
        Tensor grad_a = matmul(grad_b, transpose(params_.theta));
        Tensor d_s2t = matmul(d, transpose(cache_.sigma2));
        for (std::size_t i = 0; i < grad_a.numel(); ++i)
            grad_a[i] += 2.0 * cache_.a[i] * d_s2t[i];
        return grad_a;
    }

    void accumulate_kl_grad(double scale) override {
        Tensor la = log_alpha(params_);
        for (std::size_t i = 0; i < la.numel(); ++i) {
            double g = scale * kl_grad_log_alpha_scalar(la[i]);
            log_sigma2_grad_[i] += g;
            double th = params_.theta[i];
            double safe = std::fabs(th) < 1e-12 ? (th < 0.0 ? -1e-12 : 1e-12) : th;
            theta_grad_[i] += g * (-2.0 / safe);
        }
    }

    std::vector<ParamRef> param_refs() override {
        return {{"theta", &params_.theta, &theta_grad_, ParamKind::weight},
                {"log_sigma2", &params_.log_sigma2, &log_sigma2_grad_, ParamKind::log_sigma2},
                {"bias", &bias_, &bias_grad_, ParamKind::bias}};
    }

    VariationalParams* variational() override { return &params_; }
    const VariationalParams* variational() const override { return &params_; }

    void zero_grads() override {
        theta_grad_ = Tensor({in_, out_});
        log_sigma2_grad_ = Tensor({in_, out_});
        bias_grad_ = Tensor({out_});
    }

    void clear_cache() override { cache_ = Cache{}; }

    // Test hooks.
    void fix_noise(Tensor eps) { fixed_eps_ = std::move(eps); }
    void unfix_noise() { fixed_eps_.reset(); }
    void set_delta_floor(double f) { delta_floor_ = f; }

    std::size_t fan_in() const { return in_; }
    std::size_t fan_out() const { return out_; }
    Tensor& bias() { return bias_; }

private:
    std::size_t in_, out_;
    VariationalParams params_;
    Tensor bias_;
    Tensor theta_grad_, log_sigma2_grad_, bias_grad_;
    struct Cache {
        Tensor a, eps, gamma, delta, sigma2;
        bool valid = false;
    } cache_;
    std::optional<Tensor> fixed_eps_;
    double delta_floor_ = kDeltaFloor;
};

/// Plain fully connected layer, b = A W + bias.
class DenseLayer : public Layer {
public:
    DenseLayer(std::size_t in, std::size_t out)
        : in_(in), out_(out), weight_({in, out}), bias_({out}), weight_grad_({in, out}),
          bias_grad_({out}) {}

    std::string token() const override {
        return "dense:" + std::to_string(in_) + ":" + std::to_string(out_);
    }

    void init_params(RngState& rng) override {
        weight_ = detail::fan_in_gaussian({in_, out_}, in_, rng);
        bias_ = Tensor({out_});
    }

    Tensor forward_train(const Tensor& a, RngState&) override {
        detail::require_batch_matrix(a, in_, "dense");
        cache_a_ = a;
        has_cache_ = true;
        return with_bias(matmul(a, weight_));
    }

    Tensor forward_eval(const Tensor& a, double) const override {
        detail::require_batch_matrix(a, in_, "dense");
        return with_bias(matmul(a, weight_));
    }

    Tensor backward(const Tensor& grad_b) override {
        if (!has_cache_) throw state_error("dense backward without cached forward state");
        weight_grad_ = add(weight_grad_, matmul(transpose(cache_a_), grad_b));
        bias_grad_ = add(bias_grad_, detail::col_sum(grad_b));
        return matmul(grad_b, transpose(weight_));
    }

    std::vector<ParamRef> param_refs() override {
        return {{"weight", &weight_, &weight_grad_, ParamKind::weight},
                {"bias", &bias_, &bias_grad_, ParamKind::bias}};
    }

    void zero_grads() override {
        weight_grad_ = Tensor({in_, out_});
        bias_grad_ = Tensor({out_});
    }

    void clear_cache() override {
        cache_a_ = Tensor();
        has_cache_ = false;
    }

private:
    Tensor with_bias(Tensor b) const {
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] += bias_[i % out_];
        return b;
    }

    std::size_t in_, out_;
    Tensor weight_, bias_, weight_grad_, bias_grad_;
    Tensor cache_a_;
    bool has_cache_ = false;
};

namespace detail {
/// Contiguous [h x w x C] slice of a [h x w x C x K] filter bank.
inline Tensor filter_slice(const Tensor& bank, std::size_t k) {
    const std::size_t h = bank.extent(0), w = bank.extent(1), c = bank.extent(2),
                      nk = bank.extent(3);
    Tensor f({h, w, c});
    for (std::size_t i = 0; i < h * w * c; ++i) f[i] = bank[i * nk + k];
    return f;
}

inline void require_batch_image(const Tensor& a, std::size_t channels, const std::string& who) {
    if (a.rank() != 4 || a.extent(3) != channels)
        throw dimension_error(who + " expects [M x H x W x " + std::to_string(channels) +
                              "] input, got " + Tensor::shape_str(a.shape()));
}

inline Tensor image_slice(const Tensor& batch, std::size_t m) {
    const std::size_t h = batch.extent(1), w = batch.extent(2), c = batch.extent(3);
    const std::size_t n = h * w * c;
    Tensor img({h, w, c});
    const double* src = batch.data() + m * n;
    std::copy(src, src + n, img.data());
    return img;
}
} // namespace detail

/// Convolutional layer with a variational posterior per weight; the local
/// reparameterization uses the layer's linearity:
///   gamma = A * theta_k,  delta = A^2 * sigma_k^2 (cross-correlation),
///   b = gamma + sqrt(delta + floor) eps + bias, eps per output activation.
class ConvVDLayer : public Layer {
public:
    ConvVDLayer(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                std::size_t stride, std::size_t padding)
        : kh_(kh), kw_(kw), cin_(cin), cout_(cout), stride_(stride), padding_(padding),
          params_(Tensor({kh, kw, cin, cout}), Tensor({kh, kw, cin, cout}, DenseVDLayer::kInitLogSigma2)),
          bias_({cout}), theta_grad_({kh, kw, cin, cout}), log_sigma2_grad_({kh, kw, cin, cout}),
          bias_grad_({cout}) {
        if (kh == 0 || kw == 0) throw argument_error("conv_vd kernel extents must be positive");
    }

    std::string token() const override {
        return "conv:" + std::to_string(kh_) + "x" + std::to_string(kw_) + ":" +
               std::to_string(cin_) + ":" + std::to_string(cout_) + ":" + std::to_string(stride_) +
               ":" + std::to_string(padding_) + ":vd";
    }

    void init_params(RngState& rng) override {
        params_.theta = detail::fan_in_gaussian({kh_, kw_, cin_, cout_}, kh_ * kw_ * cin_, rng);
        params_.log_sigma2 = Tensor({kh_, kw_, cin_, cout_}, DenseVDLayer::kInitLogSigma2);
        bias_ = Tensor({cout_});
    }

    Tensor forward_train(const Tensor& a, RngState& rng) override {
        detail::require_batch_image(a, cin_, "conv_vd");
        cache_.a = a;
        cache_.sigma2 = exp(params_.log_sigma2);
        cache_.gamma = correlate_batch(a, params_.theta);
        cache_.delta = correlate_batch(square(a), cache_.sigma2);
        if (fixed_eps_) {
            if (!fixed_eps_->same_shape(cache_.gamma))
                throw dimension_error("fixed noise shape does not match conv activations");
            cache_.eps = *fixed_eps_;
        } else {
            cache_.eps = sample_standard_normal(cache_.gamma.shape(), rng);
        }
        cache_.valid = true;
        Tensor b(cache_.gamma.shape());
        for (std::size_t i = 0; i < b.numel(); ++i)
            b[i] = cache_.gamma[i] + std::sqrt(cache_.delta[i] + delta_floor_) * cache_.eps[i] +
                   bias_[i % cout_];
        return b;
    }

    Tensor forward_eval(const Tensor& a, double threshold) const override {
        detail::require_batch_image(a, cin_, "conv_vd");
        Tensor w = mul(params_.theta, threshold_mask(log_alpha(params_), threshold));
        Tensor b = correlate_batch(a, w);
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] += bias_[i % cout_];
        return b;
    }

    Tensor backward(const Tensor& grad_b) override {
        if (!cache_.valid) throw state_error("conv_vd backward without cached forward state");
        if (!grad_b.same_shape(cache_.gamma))
            throw dimension_error("conv_vd grad shape " + Tensor::shape_str(grad_b.shape()) +
                                  " does not match forward output " +
                                  Tensor::shape_str(cache_.gamma.shape()));
        Tensor d(grad_b.shape());
        for (std::size_t i = 0; i < d.numel(); ++i)
            d[i] = grad_b[i] * cache_.eps[i] * 0.5 / std::sqrt(cache_.delta[i] + delta_floor_);

        Tensor a_sq = square(cache_.a);
        Tensor grad_a(cache_.a.shape());
        Tensor sigma2_grad(params_.log_sigma2.shape());
        accumulate_weight_and_input_grads(cache_.a, grad_b, params_.theta, theta_grad_, grad_a,
                                          /*input_factor=*/nullptr);
        accumulate_weight_and_input_grads(a_sq, d, cache_.sigma2, sigma2_grad, grad_a,
                                          /*input_factor=*/&cache_.a);
        log_sigma2_grad_ = add(log_sigma2_grad_, mul(cache_.sigma2, sigma2_grad));
        const std::size_t m = grad_b.extent(0), ho = grad_b.extent(1), wo = grad_b.extent(2);
        for (std::size_t i = 0; i < m * ho * wo; ++i)
            for (std::size_t k = 0; k < cout_; ++k) bias_grad_[k] += grad_b[i * cout_ + k];
        return grad_a;
    }

    void accumulate_kl_grad(double scale) override {
        Tensor la = log_alpha(params_);
        for (std::size_t i = 0; i < la.numel(); ++i) {
            double g = scale * kl_grad_log_alpha_scalar(la[i]);
            log_sigma2_grad_[i] += g;
            double th = params_.theta[i];
            double safe = std::fabs(th) < 1e-12 ? (th < 0.0 ? -1e-12 : 1e-12) : th;
            theta_grad_[i] += g * (-2.0 / safe);
        }
    }

    std::vector<ParamRef> param_refs() override {
        return {{"theta", &params_.theta, &theta_grad_, ParamKind::weight},
                {"log_sigma2", &params_.log_sigma2, &log_sigma2_grad_, ParamKind::log_sigma2},
                {"bias", &bias_, &bias_grad_, ParamKind::bias}};
    }

    VariationalParams* variational() override { return &params_; }
    const VariationalParams* variational() const override { return &params_; }

    void zero_grads() override {
        theta_grad_ = Tensor({kh_, kw_, cin_, cout_});
        log_sigma2_grad_ = Tensor({kh_, kw_, cin_, cout_});
        bias_grad_ = Tensor({cout_});
    }

    void clear_cache() override { cache_ = Cache{}; }

    void fix_noise(Tensor eps) { fixed_eps_ = std::move(eps); }
    void unfix_noise() { fixed_eps_.reset(); }
    void set_delta_floor(double f) { delta_floor_ = f; }

private:
    /// [M x H x W x Cin] cross-correlated with every filter of a
    /// [h x w x Cin x K] bank -> [M x H' x W' x K].
    Tensor correlate_batch(const Tensor& a, const Tensor& bank) const {
        const std::size_t m = a.extent(0);
        std::vector<Tensor> filters;
        filters.reserve(cout_);
        for (std::size_t k = 0; k < cout_; ++k) filters.push_back(detail::filter_slice(bank, k));
        Tensor first = conv2d(detail::image_slice(a, 0), filters[0], stride_, padding_);
        const std::size_t ho = first.extent(0), wo = first.extent(1);
        Tensor out({m, ho, wo, cout_});
        for (std::size_t im = 0; im < m; ++im) {
            Tensor img = detail::image_slice(a, im);
            for (std::size_t k = 0; k < cout_; ++k) {
                Tensor plane = (im == 0 && k == 0) ? first : conv2d(img, filters[k], stride_, padding_);
                for (std::size_t i = 0; i < ho * wo; ++i)
                    out[((im * ho * wo) + i) * cout_ + k] = plane[i];
            }
        }
        return out;
    }

    /// Adjoints of the correlation: accumulates dL/dW into weight_grad and
    /// the input-path contribution into grad_a. When input_factor is null
    /// the input path adds W * G (linear path, input = a); otherwise input
    /// was a^2 elementwise and the path adds 2 * input_factor * (W * G).
    void accumulate_weight_and_input_grads(const Tensor& input, const Tensor& g,
                                           const Tensor& weights, Tensor& weight_grad,
                                           Tensor& grad_a, const Tensor* input_factor) const {
        const std::size_t m = g.extent(0), ho = g.extent(1), wo = g.extent(2);
        const std::size_t hi = input.extent(1), wi = input.extent(2);
        for (std::size_t im = 0; im < m; ++im) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const double* grow = g.data() + ((im * ho + oy) * wo + ox) * cout_;
                    for (std::size_t p = 0; p < kh_; ++p) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + p) -
                                                  static_cast<std::ptrdiff_t>(padding_);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(hi)) continue;
                        for (std::size_t q = 0; q < kw_; ++q) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + q) -
                                                      static_cast<std::ptrdiff_t>(padding_);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wi)) continue;
                            const std::size_t in_base = ((im * hi + iy) * wi + ix) * cin_;
                            const std::size_t w_base = (p * kw_ + q) * cin_;
                            for (std::size_t c = 0; c < cin_; ++c) {
                                double in_v = input[in_base + c];
                                double acc = 0.0;
                                for (std::size_t k = 0; k < cout_; ++k) {
                                    weight_grad[(w_base + c) * cout_ + k] += in_v * grow[k];
                                    acc += weights[(w_base + c) * cout_ + k] * grow[k];
                                }
                                if (input_factor)
                                    grad_a[in_base + c] += 2.0 * (*input_factor)[in_base + c] * acc;
                                else
                                    grad_a[in_base + c] += acc;
                            }
                        }
                    }
                }
            }
        }
    }

    std::size_t kh_, kw_, cin_, cout_, stride_, padding_;
    VariationalParams params_;
    Tensor bias_;
    Tensor theta_grad_, log_sigma2_grad_, bias_grad_;
    struct Cache {
        Tensor a, eps, gamma, delta, sigma2;
        bool valid = false;
    } cache_;
    std::optional<Tensor> fixed_eps_;
    double delta_floor_ = kDeltaFloor;
};

/// Plain convolutional layer.
class ConvLayer : public Layer {
public:
    ConvLayer(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
              std::size_t stride, std::size_t padding)
        : kh_(kh), kw_(kw), cout_(cout), stride_(stride), padding_(padding),
          vd_(kh, kw, cin, cout, stride, padding) {
        // Reuses the VD machinery with sigma^2 pinned numerically at zero
        // and the noise fixed to zero: gamma is exactly the correlation and
        // every sigma-path gradient vanishes.
        pin_sigma();
    }

    std::string token() const override {
        std::string t = vd_.token();
        return t.substr(0, t.size() - 3); // strip ":vd"
    }

    void init_params(RngState& rng) override {
        vd_.init_params(rng);
        pin_sigma();
    }

    Tensor forward_train(const Tensor& a, RngState& rng) override {
        if (a.rank() != 4)
            throw dimension_error("conv expects [M x H x W x C] input, got " +
                                  Tensor::shape_str(a.shape()));
        if (kh_ > a.extent(1) + 2 * padding_ || kw_ > a.extent(2) + 2 * padding_)
            throw dimension_error("conv kernel larger than padded input " +
                                  Tensor::shape_str(a.shape()));
        const std::size_t ho = (a.extent(1) + 2 * padding_ - kh_) / stride_ + 1;
        const std::size_t wo = (a.extent(2) + 2 * padding_ - kw_) / stride_ + 1;
        vd_.fix_noise(Tensor({a.extent(0), ho, wo, cout_}));
        Tensor out = vd_.forward_train(a, rng);
        vd_.unfix_noise();
        return out;
    }

    Tensor forward_eval(const Tensor& a, double) const override {
        return vd_.forward_eval(a, 1e18); // no pruning for plain weights
    }

    Tensor backward(const Tensor& grad_b) override { return vd_.backward(grad_b); }

    std::vector<ParamRef> param_refs() override {
        auto refs = vd_.param_refs();
        std::vector<ParamRef> out;
        for (auto& r : refs) {
            if (r.kind == ParamKind::log_sigma2) continue;
            if (r.name == "theta") r.name = "weight";
            out.push_back(r);
        }
        return out;
    }

    void zero_grads() override { vd_.zero_grads(); }
    void clear_cache() override { vd_.clear_cache(); }

private:
    void pin_sigma() {
        for (auto& r : vd_.param_refs())
            if (r.kind == ParamKind::log_sigma2)
                *r.value = Tensor(r.value->shape(), -60.0); // sigma^2 ~ 1e-26, numerically zero
    }

    std::size_t kh_, kw_, cout_, stride_, padding_;
    ConvVDLayer vd_;
};

class ReluLayer : public Layer {
public:
    std::string token() const override { return "relu"; }

    Tensor forward_train(const Tensor& a, RngState&) override {
        cache_in_ = a;
        has_cache_ = true;
        return apply(a);
    }

    Tensor forward_eval(const Tensor& a, double) const override { return apply(a); }

    Tensor backward(const Tensor& grad_out) override {
        if (!has_cache_) throw state_error("relu backward without cached forward state");
        Tensor g(grad_out.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = cache_in_[i] > 0.0 ? grad_out[i] : 0.0;
        return g;
    }

    void clear_cache() override {
        cache_in_ = Tensor();
        has_cache_ = false;
    }

private:
    static Tensor apply(const Tensor& a) {
        return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
    }

    Tensor cache_in_;
    bool has_cache_ = false;
};

/// Reshape [M x d1 x ... x dk] into [M x (d1*...*dk)].
class FlattenLayer : public Layer {
public:
    std::string token() const override { return "flatten"; }

    Tensor forward_train(const Tensor& a, RngState&) override {
        in_shape_ = a.shape();
        return flat(a);
    }

    Tensor forward_eval(const Tensor& a, double) const override { return flat(a); }

    Tensor backward(const Tensor& grad_out) override {
        if (in_shape_.empty()) throw state_error("flatten backward without cached forward state");
        return grad_out.reshaped(in_shape_);
    }

    void clear_cache() override { in_shape_.clear(); }

private:
    static Tensor flat(const Tensor& a) {
        if (a.rank() < 2) throw dimension_error("flatten expects rank >= 2, got " +
                                                Tensor::shape_str(a.shape()));
        return a.reshaped({a.extent(0), a.numel() / a.extent(0)});
    }

    std::vector<std::size_t> in_shape_;
};

/// Inverted binary dropout: entries kept with probability 1-p are scaled by
/// 1/(1-p) at train time; eval is the identity.
class BinaryDropoutLayer : public Layer {
public:
    explicit BinaryDropoutLayer(double p) : p_(p) {
        if (p < 0.0 || p >= 1.0)
            throw argument_error("binary dropout rate must lie in [0, 1), got " + std::to_string(p));
    }

    std::string token() const override {
        std::ostringstream os;
        os << "bdrop:" << p_;
        return os.str();
    }

    Tensor forward_train(const Tensor& a, RngState& rng) override {
        mask_ = Tensor(a.shape());
        const double scale = 1.0 / (1.0 - p_);
        for (std::size_t i = 0; i < mask_.numel(); ++i)
            mask_[i] = rng.next_uniform() >= p_ ? scale : 0.0;
        has_cache_ = true;
        return mul(a, mask_);
    }

    Tensor forward_eval(const Tensor& a, double) const override { return a; }

    Tensor backward(const Tensor& grad_out) override {
        if (!has_cache_) throw state_error("bdrop backward without cached forward state");
        return mul(grad_out, mask_);
    }

    void clear_cache() override {
        mask_ = Tensor();
        has_cache_ = false;
    }

    double rate() const { return p_; }

private:
    double p_;
    Tensor mask_;
    bool has_cache_ = false;
};

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
class MaxPool2Layer : public Layer {
public:
    std::string token() const override { return "maxpool2"; }

    Tensor forward_train(const Tensor& a, RngState&) override {
        in_shape_ = a.shape();
        return pool(a, &argmax_);
    }

    Tensor forward_eval(const Tensor& a, double) const override { return pool(a, nullptr); }

    Tensor backward(const Tensor& grad_out) override {
        if (argmax_.empty()) throw state_error("maxpool2 backward without cached forward state");
        Tensor g(in_shape_);
        for (std::size_t i = 0; i < grad_out.numel(); ++i) g[argmax_[i]] += grad_out[i];
        return g;
    }

    void clear_cache() override {
        argmax_.clear();
        in_shape_.clear();
    }

private:
    static Tensor pool(const Tensor& a, std::vector<std::size_t>* argmax) {
        if (a.rank() != 4)
            throw dimension_error("maxpool2 expects [M x H x W x C] input, got " +
                                  Tensor::shape_str(a.shape()));
        const std::size_t m = a.extent(0), h = a.extent(1), w = a.extent(2), c = a.extent(3);
        const std::size_t ho = h / 2, wo = w / 2;
        if (ho == 0 || wo == 0)
            throw dimension_error("maxpool2 input too small: " + Tensor::shape_str(a.shape()));
        Tensor out({m, ho, wo, c});
        if (argmax) argmax->assign(out.numel(), 0);
        for (std::size_t im = 0; im < m; ++im)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double best = -1e308;
                        std::size_t best_idx = 0;
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                std::size_t idx =
                                    ((im * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
                                if (a[idx] > best) {
                                    best = a[idx];
                                    best_idx = idx;
                                }
                            }
                        std::size_t oidx = ((im * ho + oy) * wo + ox) * c + ch;
                        out[oidx] = best;
                        if (argmax) (*argmax)[oidx] = best_idx;
                    }
        return out;
    }

    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_shape_;
};

/// Reference weight-space sampler for the original multiplicative
/// parameterization, w = theta (1 + sqrt(alpha) eps) with one eps per
/// weight per minibatch. Kept for variance comparisons against the
/// additive, locally reparameterized path.
struct MultParamDense {
    Tensor theta;     // [I x O]
    Tensor log_alpha; // [I x O]
    std::optional<Tensor> fixed_eps;

    Tensor last_eps;
    Tensor last_a;

    Tensor forward(const Tensor& a, RngState& rng) {
        if (!theta.same_shape(log_alpha))
            throw dimension_error("mult_param theta/log_alpha shape mismatch");
        detail::require_batch_matrix(a, theta.extent(0), "mult_param");
        last_eps = fixed_eps ? *fixed_eps : sample_standard_normal(theta.shape(), rng);
        last_a = a;
        Tensor w(theta.shape());
        for (std::size_t i = 0; i < w.numel(); ++i)
            w[i] = theta[i] * (1.0 + std::exp(0.5 * log_alpha[i]) * last_eps[i]);
        return matmul(a, w);
    }

    /// Pathwise dL/dtheta at the last-sampled noise: (A^T G) .* (1 + sqrt(alpha) eps).
    Tensor backward_theta(const Tensor& grad_b) const {
        Tensor g = matmul(transpose(last_a), grad_b);
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] *= 1.0 + std::exp(0.5 * log_alpha[i]) * last_eps[i];
        return g;
    }
};

} // namespace sparsevd
