#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/model.hpp"
#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// Checkpoint container: magic "SVDC", version u16, metadata, then a tensor
/// table of (name, shape, raw little-endian f64 payload). Round trips are
/// bit-exact; integers and doubles are serialized byte by byte, so files
/// are portable across platforms.
struct Checkpoint {
    std::string descriptor;
    std::string config_echo;
    std::uint32_t epoch = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline constexpr char kMagic[4] = {'S', 'V', 'D', 'C'};
inline constexpr std::uint16_t kVersion = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw data_error("truncated checkpoint " + path + " while reading " + what);
    }
    std::uint16_t u16() {
        need(2, "u16");
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n, "string");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace detail

/// Write `content` atomically: to a sibling temp file, then rename over the
/// destination, so failures never leave partial output behind.
inline void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw data_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out;
    out.append(detail::kMagic, 4);
    detail::put_u16(out, detail::kVersion);
    detail::put_str(out, ck.descriptor);
    detail::put_str(out, ck.config_echo);
    detail::put_u32(out, ck.epoch);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        detail::put_str(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) detail::put_u64(out, e);
        for (std::size_t i = 0; i < t.numel(); ++i) detail::put_f64(out, t[i]);
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& buf, const std::string& path) {
    detail::Reader r{buf, 0, path};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), detail::kMagic, 4) != 0)
        throw data_error("bad checkpoint magic in " + path + ": expected \"SVDC\"");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != detail::kVersion)
        throw data_error("unsupported checkpoint version " + std::to_string(version) + " in " +
                         path + " (expected " + std::to_string(detail::kVersion) + ")");
    Checkpoint ck;
    ck.descriptor = r.str();
    ck.config_echo = r.str();
    ck.epoch = r.u32();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.u64());
        Tensor t(shape);
        for (std::size_t j = 0; j < t.numel(); ++j) t[j] = r.f64();
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos != buf.size())
        throw data_error("trailing bytes after tensor table in " + path);
    return ck;
}

inline Checkpoint snapshot_model(Model& model, const std::string& config_echo,
                                 std::uint32_t epoch) {
    Checkpoint ck;
    ck.descriptor = model.descriptor;
    ck.config_echo = config_echo;
    ck.epoch = epoch;
    for (const ParamRef& p : model.param_refs()) ck.tensors.emplace_back(p.name, *p.value);
    return ck;
}

inline void save_checkpoint(Model& model, const std::string& config_echo, std::uint32_t epoch,
                            const std::string& path) {
    atomic_write_file(path, encode_checkpoint(snapshot_model(model, config_echo, epoch)));
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf, path);
}

/// Rebuild the stored architecture and restore every parameter tensor,
/// rejecting name or shape mismatches against the descriptor.
inline Model load_checkpoint(const std::string& path, LossKind loss) {
    Checkpoint ck = read_checkpoint(path);
    Model model = parse_architecture(ck.descriptor, loss);
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : ck.tensors) stored[name] = &t;
    for (const ParamRef& p : model.param_refs()) {
        auto it = stored.find(p.name);
        if (it == stored.end())
            throw data_error("checkpoint " + path + " is missing tensor " + p.name +
                             " required by descriptor '" + ck.descriptor + "'");
        if (it->second->shape() != p.value->shape())
            throw data_error("checkpoint " + path + " tensor " + p.name + " has shape " +
                             Tensor::shape_str(it->second->shape()) + " but descriptor '" +
                             ck.descriptor + "' requires " + Tensor::shape_str(p.value->shape()));
        *p.value = *it->second;
        stored.erase(it);
    }
    if (!stored.empty())
        throw data_error("checkpoint " + path + " holds tensor " + stored.begin()->first +
                         " not present in descriptor '" + ck.descriptor + "'");
    return model;
}

/// Initialize a model from a checkpoint of a possibly plain twin
/// architecture: theta <- weight (and vice versa) by layer position, biases
/// copied, log sigma^2 kept at its initialization when the source has none.
inline void warm_start(Model& model, const Checkpoint& ck) {
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : ck.tensors) stored[name] = &t;
    auto lookup = [&](const std::string& name) -> const Tensor* {
        auto it = stored.find(name);
        return it == stored.end() ? nullptr : it->second;
    };
    for (const ParamRef& p : model.param_refs()) {
        const Tensor* src = lookup(p.name);
        if (!src && p.kind == ParamKind::weight) {
            // plain <-> variational twin naming
            std::string alt = p.name;
            if (auto pos = alt.rfind(".theta"); pos != std::string::npos)
                alt = alt.substr(0, pos) + ".weight";
            else if (auto pos2 = alt.rfind(".weight"); pos2 != std::string::npos)
                alt = alt.substr(0, pos2) + ".theta";
            src = lookup(alt);
        }
        if (!src) {
            if (p.kind == ParamKind::log_sigma2) continue; // keep fresh initialization
            throw data_error("pretrained checkpoint lacks tensor " + p.name +
                             " (descriptor '" + ck.descriptor + "' is not a compatible twin of '" +
                             model.descriptor + "')");
        }
        if (src->shape() != p.value->shape())
            throw data_error("pretrained tensor " + p.name + " has shape " +
                             Tensor::shape_str(src->shape()) + ", expected " +
                             Tensor::shape_str(p.value->shape()));
        *p.value = *src;
    }
}

} // namespace sparsevd
