#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "sparsevd/tensor.hpp"

namespace testutil {

/// Relative error with a floor on the denominator, the usual gradient-check
/// metric: |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-3) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline double max_rel_err(const sparsevd::Tensor& a, const sparsevd::Tensor& b,
                          double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, rel_err(a[i], b[i], floor));
    return worst;
}

/// ||a - b||_2 / ||b||_2.
inline double vector_rel_err(const sparsevd::Tensor& a, const sparsevd::Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::sqrt(den);
}

inline bool bits_equal(const sparsevd::Tensor& a, const sparsevd::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double va = a[i], vb = b[i];
        std::uint64_t ba, bb;
        std::memcpy(&ba, &va, 8);
        std::memcpy(&bb, &vb, 8);
        if (ba != bb) return false;
    }
    return true;
}

/// Central finite difference of `eval` w.r.t. one scalar slot.
inline double central_diff(const std::function<double()>& eval, double* slot, double h) {
    const double orig = *slot;
    *slot = orig + h;
    const double fp = eval();
    *slot = orig - h;
    const double fm = eval();
    *slot = orig;
    return (fp - fm) / (2.0 * h);
}

/// Fresh per-test scratch directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        base_ = std::filesystem::temp_directory_path() /
                ("sparsevd_test_" + tag + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(base_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(base_, ec);
    }
    std::string path(const std::string& name) const { return (base_ / name).string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path base_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace testutil
