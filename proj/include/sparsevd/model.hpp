#pragma once

#include <charconv>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparsevd/layers.hpp"
#include "sparsevd/vd_core.hpp"

namespace sparsevd {

enum class LossKind { softmax_cross_entropy, squared_error };

/// Ordered layer stack plus one loss head. Built from an architecture
/// descriptor string; see parse_architecture for the grammar.
class Model {
public:
    std::vector<std::unique_ptr<Layer>> layers;
    std::string descriptor;
    LossKind loss = LossKind::softmax_cross_entropy;

    void init_params(RngState& rng) {
        for (auto& l : layers) l->init_params(rng);
    }

    Tensor forward_train(const Tensor& x, RngState& rng) {
        Tensor h = x;
        for (auto& l : layers) h = l->forward_train(h, rng);
        return h;
    }

    /// Deterministic pass: variational layers use theta masked at
    /// `threshold`, dropout is off. Clears training caches.
    Tensor forward_eval(const Tensor& x, double threshold) {
        for (auto& l : layers) l->clear_cache();
        Tensor h = x;
        for (auto& l : layers) h = l->forward_eval(h, threshold);
        return h;
    }

    Tensor backward(const Tensor& grad_out) {
        Tensor g = grad_out;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    double kl_sum() const {
        double s = 0.0;
        for (const auto& l : layers)
            if (const VariationalParams* vp = l->variational())
                s += sum(kl_per_weight(log_alpha(*vp)));
        return s;
    }

    void accumulate_kl_grad(double scale) {
        for (auto& l : layers) l->accumulate_kl_grad(scale);
    }

    void zero_grads() {
        for (auto& l : layers) l->zero_grads();
    }

    std::vector<ParamRef> param_refs() {
        std::vector<ParamRef> refs;
        for (std::size_t i = 0; i < layers.size(); ++i)
            for (auto r : layers[i]->param_refs()) {
                r.name = "L" + std::to_string(i) + "." + r.name;
                refs.push_back(r);
            }
        return refs;
    }

    /// Per-layer log-alpha views for sparsity accounting; non-variational
    /// layers appear with a null tensor.
    std::vector<std::pair<std::string, Tensor>> layer_log_alphas() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            std::string name = "L" + std::to_string(i) + ":" + layers[i]->token();
            if (const VariationalParams* vp = layers[i]->variational())
                out.emplace_back(std::move(name), log_alpha(*vp));
            else
                out.emplace_back(std::move(name), Tensor());
        }
        return out;
    }
};

/// Sparsity accounting for every layer of the model at `threshold`.
/// Layers without variational parameters are listed but not counted.
inline SparsityReport sparsity_report(const Model& model, double threshold = kDefaultThreshold) {
    bool any_vd = false;
    for (const auto& l : model.layers)
        if (l->variational()) any_vd = true;
    if (!any_vd && model.layers.empty())
        throw argument_error("sparsity_report requires a model with at least one layer");
    auto las = model.layer_log_alphas();
    std::vector<std::pair<std::string, const Tensor*>> views;
    views.reserve(las.size());
    for (const auto& [name, la] : las)
        views.emplace_back(name, la.numel() ? &la : nullptr);
    return build_sparsity_report(views, threshold);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string_view::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

inline std::size_t parse_extent(std::string_view tok, const std::string& ctx) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw config_error("bad integer '" + std::string(tok) + "' in " + ctx);
    return v;
}

inline double parse_real(std::string_view tok, const std::string& ctx) {
    try {
        std::size_t used = 0;
        std::string s(tok);
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw config_error("bad real '" + std::string(tok) + "' in " + ctx);
    }
}

} // namespace detail

/// Architecture descriptor grammar, tokens joined by ';':
///   dense:<in>:<out>[:vd]
///   conv:<h>x<w>:<cin>:<cout>:<stride>:<pad>[:vd]
///   relu | flatten | maxpool2
///   bdrop:<p>
/// Example (LeNet-300-100):
///   dense:784:300:vd;relu;dense:300:100:vd;relu;dense:100:10:vd
inline Model parse_architecture(const std::string& descriptor,
                                LossKind loss = LossKind::softmax_cross_entropy) {
    Model m;
    m.descriptor = descriptor;
    m.loss = loss;
    for (std::string_view tok : detail::split(descriptor, ';')) {
        if (tok.empty()) throw config_error("empty layer token in descriptor '" + descriptor + "'");
        auto parts = detail::split(tok, ':');
        const std::string ctx = "layer token '" + std::string(tok) + "'";
        const std::string_view kind = parts[0];
        if (kind == "dense") {
            bool vd = parts.size() == 4 && parts[3] == "vd";
            if (!(parts.size() == 3 || vd))
                throw config_error("expected dense:<in>:<out>[:vd], got " + ctx);
            std::size_t in = detail::parse_extent(parts[1], ctx);
            std::size_t out = detail::parse_extent(parts[2], ctx);
            if (in == 0 || out == 0) throw config_error("zero extent in " + ctx);
            if (vd)
                m.layers.push_back(std::make_unique<DenseVDLayer>(in, out));
            else
                m.layers.push_back(std::make_unique<DenseLayer>(in, out));
        } else if (kind == "conv") {
            bool vd = parts.size() == 7 && parts[6] == "vd";
            if (!(parts.size() == 6 || vd))
                throw config_error("expected conv:<h>x<w>:<cin>:<cout>:<stride>:<pad>[:vd], got " +
                                   ctx);
            auto hw = detail::split(parts[1], 'x');
            if (hw.size() != 2) throw config_error("expected <h>x<w> in " + ctx);
            std::size_t kh = detail::parse_extent(hw[0], ctx);
            std::size_t kw = detail::parse_extent(hw[1], ctx);
            std::size_t cin = detail::parse_extent(parts[2], ctx);
            std::size_t cout = detail::parse_extent(parts[3], ctx);
            std::size_t stride = detail::parse_extent(parts[4], ctx);
            std::size_t pad = detail::parse_extent(parts[5], ctx);
            if (kh == 0 || kw == 0 || cin == 0 || cout == 0 || stride == 0)
                throw config_error("zero extent in " + ctx);
            if (vd)
                m.layers.push_back(std::make_unique<ConvVDLayer>(kh, kw, cin, cout, stride, pad));
            else
                m.layers.push_back(std::make_unique<ConvLayer>(kh, kw, cin, cout, stride, pad));
        } else if (kind == "relu") {
            if (parts.size() != 1) throw config_error("relu takes no arguments in " + ctx);
            m.layers.push_back(std::make_unique<ReluLayer>());
        } else if (kind == "flatten") {
            if (parts.size() != 1) throw config_error("flatten takes no arguments in " + ctx);
            m.layers.push_back(std::make_unique<FlattenLayer>());
        } else if (kind == "maxpool2") {
            if (parts.size() != 1) throw config_error("maxpool2 takes no arguments in " + ctx);
            m.layers.push_back(std::make_unique<MaxPool2Layer>());
        } else if (kind == "bdrop") {
            if (parts.size() != 2) throw config_error("expected bdrop:<p>, got " + ctx);
            double p = detail::parse_real(parts[1], ctx);
            if (p < 0.0 || p >= 1.0) throw config_error("bdrop rate outside [0,1) in " + ctx);
            m.layers.push_back(std::make_unique<BinaryDropoutLayer>(p));
        } else {
            throw config_error("unknown layer kind in " + ctx);
        }
    }
    if (m.layers.empty()) throw config_error("descriptor built an empty model");
    return m;
}

} // namespace sparsevd
