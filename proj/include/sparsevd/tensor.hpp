#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsevd/errors.hpp"

namespace sparsevd {

/// Dense N-dimensional array of doubles, flat row-major storage.
///
/// All operations on tensors are pure and deterministic: reductions and
/// matrix products accumulate in ascending row-major index order, so the
/// same inputs always produce bit-identical outputs.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw dimension_error("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }

    /// 2-D constructor from nested lists, mostly for tests and fixtures.
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> flat;
        flat.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw dimension_error("ragged row list in Tensor::from_rows");
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(flat));
    }

    static Tensor vector(std::initializer_list<double> v) {
        return Tensor({v.size()}, std::vector<double>(v));
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Reinterpret the flat data under a new shape with the same element count.
    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count(new_shape) != data_.size())
            throw dimension_error("reshape from " + shape_str(shape_) + " to " +
                                  shape_str(new_shape) + " changes element count");
        return Tensor(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    static std::string shape_str(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
        os << "]";
        return os.str();
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {

/// Broadcast result shape under the trailing-dimension rule: shapes are
/// aligned at their last axis; each pair of extents must be equal or one
/// of them 1 (missing leading axes count as 1).
inline std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                                const std::vector<std::size_t>& b) {
    std::size_t rank = std::max(a.size(), b.size());
    std::vector<std::size_t> out(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
        std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw dimension_error("shapes " + Tensor::shape_str(a) + " and " +
                                  Tensor::shape_str(b) + " are not broadcast-compatible");
        out[rank - 1 - k] = std::max(ea, eb);
    }
    return out;
}

/// Row-major strides for `shape` embedded in a result of rank `out_rank`,
/// with stride 0 on broadcast (extent-1 or missing) axes.
inline std::vector<std::size_t> broadcast_strides(const std::vector<std::size_t>& shape,
                                                  std::size_t out_rank) {
    std::vector<std::size_t> strides(out_rank, 0);
    std::size_t s = 1;
    for (std::size_t k = 0; k < shape.size(); ++k) {
        std::size_t axis = shape.size() - 1 - k;
        std::size_t out_axis = out_rank - 1 - k;
        strides[out_axis] = (shape[axis] == 1) ? 0 : s;
        s *= shape[axis];
    }
    return strides;
}

template <class BinOp>
inline Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinOp op) {
    if (a.same_shape(b)) { // fast path, no index arithmetic
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0, n = a.numel(); i < n; ++i) po[i] = op(pa[i], pb[i]);
        return out;
    }
    auto out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out(out_shape);
    std::size_t rank = out_shape.size();
    auto sa = broadcast_strides(a.shape(), rank);
    auto sb = broadcast_strides(b.shape(), rank);
    std::vector<std::size_t> idx(rank, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::size_t n = out.numel();
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        po[i] = op(pa[oa], pb[ob]);
        for (std::size_t k = rank; k-- > 0;) {
            ++idx[k];
            oa += sa[k];
            ob += sb[k];
            if (idx[k] < out_shape[k]) break;
            oa -= sa[k] * out_shape[k];
            ob -= sb[k] * out_shape[k];
            idx[k] = 0;
        }
    }
    return out;
}

template <class UnOp>
inline Tensor unary(const Tensor& a, UnOp op) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0, n = a.numel(); i < n; ++i) po[i] = op(pa[i]);
    return out;
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(a, b, [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(a, b, [](double x, double y) { return x * y; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(a, b, [](double x, double y) { return x / y; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x + s; });
}
inline Tensor mul_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x * s; });
}
inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; });
}
inline Tensor sqrt(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::sqrt(x); });
}
inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); });
}
inline Tensor log(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::log(x); });
}
inline Tensor abs(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::fabs(x); });
}

inline double sigmoid_scalar(double x) {
    // Split on sign so exp never overflows.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) { return detail::unary(a, sigmoid_scalar); }

inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
}

/// 0/1 mask: 1 where a[i] < s.
inline Tensor less_than(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x < s ? 1.0 : 0.0; });
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0, n = a.numel(); i < n; ++i) s += a[i];
    return s;
}

inline double mean(const Tensor& a) {
    if (a.numel() == 0) throw argument_error("mean of empty tensor");
    return sum(a) / static_cast<double>(a.numel());
}

/// Matrix product of a[M x I] and w[I x O], row-major accumulation:
/// every output element sums its terms in ascending k order.
inline Tensor matmul(const Tensor& a, const Tensor& w) {
    if (a.rank() != 2 || w.rank() != 2)
        throw dimension_error("matmul expects rank-2 operands, got " +
                              Tensor::shape_str(a.shape()) + " and " + Tensor::shape_str(w.shape()));
    if (a.extent(1) != w.extent(0))
        throw dimension_error("matmul inner extents differ: " + Tensor::shape_str(a.shape()) +
                              " x " + Tensor::shape_str(w.shape()));
    const std::size_t m = a.extent(0), inner = a.extent(1), o = w.extent(1);
    Tensor out({m, o});
    const double* pa = a.data();
    const double* pw = w.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * o;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = pa[i * inner + k];
            if (aik == 0.0) continue;
            const double* wrow = pw + k * o;
            for (std::size_t j = 0; j < o; ++j) orow[j] += aik * wrow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw dimension_error("transpose expects rank 2, got " + Tensor::shape_str(a.shape()));
    const std::size_t r = a.extent(0), c = a.extent(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return out;
}

/// 2-D cross-correlation (no kernel flip) of a single H x W x C input with
/// an h x w x C kernel, zero padding, output extent floor((H+2p-h)/s)+1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                     std::size_t padding = 0) {
    if (input.rank() != 3 || kernel.rank() != 3)
        throw dimension_error("conv2d expects rank-3 input and kernel, got " +
                              Tensor::shape_str(input.shape()) + " and " +
                              Tensor::shape_str(kernel.shape()));
    if (stride == 0) throw argument_error("conv2d stride must be positive");
    const std::size_t h_in = input.extent(0), w_in = input.extent(1), c_in = input.extent(2);
    const std::size_t kh = kernel.extent(0), kw = kernel.extent(1), kc = kernel.extent(2);
    if (kc != c_in)
        throw dimension_error("conv2d channel mismatch: input " + Tensor::shape_str(input.shape()) +
                              " vs kernel " + Tensor::shape_str(kernel.shape()));
    if (kh > h_in + 2 * padding || kw > w_in + 2 * padding)
        throw dimension_error("conv2d kernel " + Tensor::shape_str(kernel.shape()) +
                              " larger than padded input " + Tensor::shape_str(input.shape()));
    const std::size_t h_out = (h_in + 2 * padding - kh) / stride + 1;
    const std::size_t w_out = (w_in + 2 * padding - kw) / stride + 1;
    Tensor out({h_out, w_out});
    for (std::size_t oy = 0; oy < h_out; ++oy) {
        for (std::size_t ox = 0; ox < w_out; ++ox) {
            double acc = 0.0;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_in)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w_in)) continue;
                    const double* in_px = input.data() + (iy * w_in + ix) * c_in;
                    const double* k_px = kernel.data() + (ky * kw + kx) * kc;
                    for (std::size_t c = 0; c < c_in; ++c) acc += in_px[c] * k_px[c];
                }
            }
            out[oy * w_out + ox] = acc;
        }
    }
    return out;
}

} // namespace sparsevd
