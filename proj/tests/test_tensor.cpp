#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"

using namespace sparsevd;

TEST_CASE("tensor shape/data invariant enforced") {
    REQUIRE_THROWS_AS(Tensor({2, 3}, std::vector<double>{1.0, 2.0}), dimension_error);
    Tensor t({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.rank() == 2);
}

TEST_CASE("matmul identity leaves the operand unchanged") {
    Tensor w = Tensor::from_rows({{1.5, -2.0}, {0.25, 7.0}});
    Tensor out = matmul(Tensor::identity(2), w);
    REQUIRE(testutil::bits_equal(out, w));
}

TEST_CASE("matmul hand example") {
    Tensor a = Tensor::from_rows({{1.0, 2.0}});
    Tensor w = Tensor::from_rows({{3.0}, {4.0}});
    Tensor out = matmul(a, w);
    REQUIRE(out.shape() == std::vector<std::size_t>{1, 1});
    REQUIRE(out[0] == 11.0);
}

TEST_CASE("matmul zero operand gives zeros") {
    Tensor a({3, 4});
    Tensor w({4, 2}, 0.37);
    Tensor out = matmul(a, w);
    REQUIRE(out.shape() == std::vector<std::size_t>{3, 2});
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
}

TEST_CASE("matmul mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor w({4, 2});
    try {
        matmul(a, w);
        FAIL("expected dimension_error");
    } catch (const dimension_error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[2, 3]") != std::string::npos);
        REQUIRE(msg.find("[4, 2]") != std::string::npos);
    }
}

TEST_CASE("conv2d 1x1 unit kernel is the identity on one channel") {
    Tensor in({3, 4, 1});
    for (std::size_t i = 0; i < in.numel(); ++i) in[i] = static_cast<double>(i) * 0.5 - 2.0;
    Tensor k({1, 1, 1}, 1.0);
    Tensor out = conv2d(in, k, 1, 0);
    REQUIRE(out.shape() == std::vector<std::size_t>{3, 4});
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == in[i]);
}

TEST_CASE("conv2d hand example sums the window") {
    Tensor in({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
    Tensor k({2, 2, 1}, 1.0);
    Tensor out = conv2d(in, k, 1, 0);
    REQUIRE(out.shape() == std::vector<std::size_t>{1, 1});
    REQUIRE(out[0] == 10.0);
}

TEST_CASE("conv2d zero kernel zeroes the output") {
    Tensor in({4, 4, 2}, 1.25);
    Tensor k({2, 2, 2});
    Tensor out = conv2d(in, k, 1, 1);
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Tensor in({2, 2, 1});
    Tensor k({5, 5, 1});
    REQUIRE_THROWS_AS(conv2d(in, k, 1, 1), dimension_error);
    REQUIRE_THROWS_AS(conv2d(in, Tensor({2, 2, 3}), 1, 0), dimension_error);
}

TEST_CASE("conv2d stride and padding shape arithmetic") {
    Tensor in({5, 5, 1}, 1.0);
    Tensor k({3, 3, 1}, 1.0);
    Tensor out = conv2d(in, k, 2, 1);
    // floor((5 + 2 - 3)/2) + 1 = 3
    REQUIRE(out.shape() == std::vector<std::size_t>{3, 3});
    // corners see a 2x2 live window
    REQUIRE(out[0] == 4.0);
    REQUIRE(out.at2(1, 1) == 9.0);
}

TEST_CASE("elementwise examples") {
    Tensor sq = square(Tensor::vector({-2.0, 3.0}));
    REQUIRE(sq[0] == 4.0);
    REQUIRE(sq[1] == 9.0);
    REQUIRE(sigmoid(Tensor::vector({0.0}))[0] == 0.5);
    Tensor x = Tensor::vector({1.0, -0.5, 3.25});
    REQUIRE(testutil::bits_equal(add(x, Tensor::zeros_like(x)), x));
}

TEST_CASE("sigmoid saturates without overflow") {
    REQUIRE(sigmoid_scalar(1000.0) == 1.0);
    REQUIRE(sigmoid_scalar(-1000.0) == 0.0);
    REQUIRE(sigmoid_scalar(0.0) == 0.5);
}

TEST_CASE("broadcast rejects incompatible trailing shapes") {
    REQUIRE_THROWS_AS(add(Tensor({2, 3}), Tensor({2, 4})), dimension_error);
    REQUIRE_THROWS_AS(mul(Tensor({3}), Tensor({2})), dimension_error);
}

namespace {

// Independent oracle: explicit tiling of both operands to the result shape.
std::vector<std::size_t> oracle_shape(std::vector<std::size_t> a, std::vector<std::size_t> b) {
    while (a.size() < b.size()) a.insert(a.begin(), 1);
    while (b.size() < a.size()) b.insert(b.begin(), 1);
    std::vector<std::size_t> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1) return {};
        out[i] = std::max(a[i], b[i]);
    }
    return out;
}

double fetch_tiled(const Tensor& t, const std::vector<std::size_t>& out_shape,
                   const std::vector<std::size_t>& idx) {
    const auto& s = t.shape();
    std::size_t off = 0, stride = 1;
    for (std::size_t k = s.size(); k-- > 0;) {
        const std::size_t out_axis = idx.size() - (s.size() - k);
        const std::size_t i = s[k] == 1 ? 0 : idx[out_axis];
        off += i * stride;
        stride *= s[k];
    }
    (void)out_shape;
    return t[off];
}

} // namespace

TEST_CASE("broadcast add/multiply agree with explicit tiling, rank <= 3, extents <= 4") {
    std::vector<std::vector<std::size_t>> shapes;
    for (std::size_t a = 1; a <= 4; ++a) {
        shapes.push_back({a});
        for (std::size_t b = 1; b <= 4; ++b) {
            shapes.push_back({a, b});
            for (std::size_t c = 1; c <= 4; ++c) shapes.push_back({a, b, c});
        }
    }
    RngState rng(42);
    std::size_t tested = 0;
    for (const auto& sa : shapes) {
        for (const auto& sb : shapes) {
            auto os = oracle_shape(sa, sb);
            if (os.empty()) continue;
            Tensor ta = sample_standard_normal(sa, rng);
            Tensor tb = sample_standard_normal(sb, rng);
            Tensor sum = add(ta, tb);
            Tensor prod = mul(ta, tb);
            REQUIRE(sum.shape() == os);
            std::vector<std::size_t> idx(os.size(), 0);
            for (std::size_t flat = 0; flat < sum.numel(); ++flat) {
                const double ea = fetch_tiled(ta, os, idx);
                const double eb = fetch_tiled(tb, os, idx);
                REQUIRE(sum[flat] == ea + eb);
                REQUIRE(prod[flat] == ea * eb);
                for (std::size_t k = os.size(); k-- > 0;) {
                    if (++idx[k] < os[k]) break;
                    idx[k] = 0;
                }
            }
            ++tested;
        }
    }
    REQUIRE(tested > 1000);
}

TEST_CASE("reductions and transpose") {
    Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    REQUIRE(sum(t) == 21.0);
    REQUIRE(mean(t) == 3.5);
    Tensor tt = transpose(t);
    REQUIRE(tt.shape() == std::vector<std::size_t>{3, 2});
    REQUIRE(tt.at2(2, 1) == 6.0);
    REQUIRE_THROWS_AS(mean(Tensor({0})), argument_error);
}

TEST_CASE("reshape preserves data and rejects bad element counts") {
    Tensor t = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor r = t.reshaped({4});
    REQUIRE(r[3] == 4.0);
    REQUIRE_THROWS_AS(t.reshaped({3}), dimension_error);
}
