#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// In-memory dataset: inputs plus either integer class labels or real
/// regression targets.
struct Dataset {
    Tensor inputs; // [N x ...]
    std::vector<std::int64_t> labels;
    Tensor targets; // [N x O]
    std::size_t num_classes = 0;
    std::string split = "train";
    double scale = 1.0, offset = 0.0; // normalization applied to raw inputs

    bool is_classification() const { return num_classes > 0; }

    std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.extent(0); }

    /// Copy of the rows picked by `idx[first, last)`, keeping input rank.
    Tensor gather_inputs(const std::vector<std::size_t>& idx, std::size_t first,
                         std::size_t last) const {
        const std::size_t row = inputs.numel() / std::max<std::size_t>(size(), 1);
        std::vector<std::size_t> shape = inputs.shape();
        shape[0] = last - first;
        Tensor out(shape);
        for (std::size_t i = first; i < last; ++i) {
            const double* src = inputs.data() + idx[i] * row;
            std::copy(src, src + row, out.data() + (i - first) * row);
        }
        return out;
    }

    std::vector<std::int64_t> gather_labels(const std::vector<std::size_t>& idx, std::size_t first,
                                            std::size_t last) const {
        std::vector<std::int64_t> out(last - first);
        for (std::size_t i = first; i < last; ++i) out[i - first] = labels[idx[i]];
        return out;
    }

    Tensor gather_targets(const std::vector<std::size_t>& idx, std::size_t first,
                          std::size_t last) const {
        const std::size_t row = targets.numel() / std::max<std::size_t>(size(), 1);
        Tensor out({last - first, row});
        for (std::size_t i = first; i < last; ++i) {
            const double* src = targets.data() + idx[i] * row;
            std::copy(src, src + row, out.data() + (i - first) * row);
        }
        return out;
    }

    /// First n items (no-op when n is 0 or past the end).
    void truncate(std::size_t n) {
        if (n == 0 || n >= size()) return;
        const std::size_t row = inputs.numel() / size();
        std::vector<std::size_t> shape = inputs.shape();
        shape[0] = n;
        inputs = Tensor(shape, std::vector<double>(inputs.data(), inputs.data() + n * row));
        if (!labels.empty()) labels.resize(n);
        if (targets.numel()) {
            const std::size_t trow = targets.numel() / targets.extent(0);
            targets = Tensor({n, trow},
                             std::vector<double>(targets.data(), targets.data() + n * trow));
        }
    }
};

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw data_error("truncated IDX header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

} // namespace detail

/// MNIST-style IDX pair: big-endian magic 0x00000803 for u8 image cubes and
/// 0x00000801 for u8 label vectors. Pixels are scaled by 1/255 into [0, 1].
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw data_error("cannot open IDX image file " + images_path);
    const std::uint32_t img_magic = detail::read_u32_be(img, images_path);
    if (img_magic != 0x00000803u) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "0x%08X", img_magic);
        throw data_error("IDX image magic mismatch in " + images_path + ": expected 0x00000803, got " +
                         buf);
    }
    const std::uint32_t n = detail::read_u32_be(img, images_path);
    const std::uint32_t rows = detail::read_u32_be(img, images_path);
    const std::uint32_t cols = detail::read_u32_be(img, images_path);
    std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * rows * cols);
    if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
        throw data_error("truncated IDX image payload in " + images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw data_error("cannot open IDX label file " + labels_path);
    const std::uint32_t lab_magic = detail::read_u32_be(lab, labels_path);
    if (lab_magic != 0x00000801u) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "0x%08X", lab_magic);
        throw data_error("IDX label magic mismatch in " + labels_path + ": expected 0x00000801, got " +
                         buf);
    }
    const std::uint32_t n_lab = detail::read_u32_be(lab, labels_path);
    if (n_lab != n)
        throw data_error("IDX count mismatch: " + std::to_string(n) + " images in " + images_path +
                         " vs " + std::to_string(n_lab) + " labels in " + labels_path);
    std::vector<unsigned char> raw_labels(n_lab);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n_lab)))
        throw data_error("truncated IDX label payload in " + labels_path);

    Dataset d;
    d.inputs = Tensor({n, rows, cols});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        d.inputs[i] = static_cast<double>(pixels[i]) / 255.0;
    d.labels.assign(raw_labels.begin(), raw_labels.end());
    d.num_classes = 10;
    d.scale = 1.0 / 255.0;
    return d;
}

struct SyntheticRegression {
    Tensor design;  // X, [n x d]
    Tensor targets; // y, [n]
    Tensor true_weights;
};

/// X with i.i.d. standard normal entries; the first d_relevant weights are
/// +-1 with signs drawn from the seed, the rest zero; y = Xw + noise_sd * xi.
inline SyntheticRegression synthetic_regression(std::size_t n, std::size_t d,
                                                std::size_t d_relevant, double noise_sd,
                                                std::uint64_t seed) {
    if (d_relevant > d)
        throw argument_error("d_relevant " + std::to_string(d_relevant) + " exceeds d " +
                             std::to_string(d));
    if (n < d)
        throw argument_error("synthetic_regression requires n >= d, got n = " + std::to_string(n) +
                             ", d = " + std::to_string(d));
    if (noise_sd < 0.0) throw argument_error("noise_sd must be nonnegative");
    RngState rng(seed);
    SyntheticRegression out;
    out.design = sample_standard_normal({n, d}, rng);
    out.true_weights = Tensor({d});
    for (std::size_t j = 0; j < d_relevant; ++j)
        out.true_weights[j] = (rng.next_u64() & 1) ? 1.0 : -1.0;
    out.targets = Tensor({n});
    Tensor noise = noise_sd > 0.0 ? sample_standard_normal({n}, rng) : Tensor({n});
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += out.design[i * d + j] * out.true_weights[j];
        out.targets[i] = acc + noise_sd * noise[i];
    }
    return out;
}

inline Dataset regression_dataset(const SyntheticRegression& s, const std::string& split = "train") {
    Dataset d;
    d.inputs = s.design;
    d.targets = s.targets.reshaped({s.targets.extent(0), 1});
    d.split = split;
    return d;
}

/// Replace every label with an independent uniform draw over [0, K).
inline Dataset randomize_labels(const Dataset& d, std::uint64_t seed) {
    if (!d.is_classification())
        throw argument_error("randomize_labels requires a classification dataset");
    Dataset out = d;
    RngState rng(seed);
    for (auto& y : out.labels)
        y = static_cast<std::int64_t>(rng.next_u64() % d.num_classes);
    return out;
}

} // namespace sparsevd
