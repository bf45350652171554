#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sparsevd/errors.hpp"
#include "sparsevd/train.hpp"

namespace sparsevd {

/// Parsed `key = value` run configuration with [data], [arch], [train] and
/// [sparsity] sections. Defaults applied in place of missing keys are
/// reported through `notices`.
struct RunConfig {
    // [data]
    std::string dataset = "mnist"; // mnist | synthreg
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t limit = 0, test_limit = 0; // 0: keep everything
    bool randomize_labels = false;
    std::uint64_t label_seed = 0;
    std::size_t n = 1000, d = 20, d_relevant = 5; // synthreg shape
    double noise_sd = 0.1;
    std::uint64_t data_seed = 0;
    // [arch] + [train] + [sparsity]
    TrainConfig train;

    std::vector<std::string> notices;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct KeyValues {
    std::map<std::string, std::string> kv; // "section.key" -> value
    std::vector<std::string>* notices;

    bool has(const std::string& key) const { return kv.count(key) != 0; }

    std::string take(const std::string& key, const std::string& fallback, bool notice = true) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            if (notice)
                notices->push_back("config: " + key + " not set, using default '" + fallback + "'");
            return fallback;
        }
        std::string v = it->second;
        kv.erase(it);
        return v;
    }

    std::string require(const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw config_error("config: required key " + key + " is missing");
        std::string v = it->second;
        kv.erase(it);
        return v;
    }
};

inline std::uint64_t parse_u64_cfg(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad unsigned integer '" + v + "' for " + key);
    }
}

inline long long parse_i64_cfg(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad integer '" + v + "' for " + key);
    }
}

inline double parse_real_cfg(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad real '" + v + "' for " + key);
    }
}

inline bool parse_bool_cfg(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: bad boolean '" + v + "' for " + key + " (use true/false/1/0)");
}

} // namespace detail

inline RunConfig parse_run_config(std::istream& in, bool require_arch = true) {
    static const std::map<std::string, std::vector<std::string>> kKnown = {
        {"data",
         {"dataset", "train_images", "train_labels", "test_images", "test_labels", "limit",
          "test_limit", "randomize_labels", "label_seed", "n", "d", "d_relevant", "noise_sd",
          "data_seed"}},
        {"arch", {"descriptor"}},
        {"train",
         {"epochs", "batch_size", "lr0", "lr_schedule", "warmup_start", "warmup_end", "seed",
          "mode", "pretrained"}},
        {"sparsity", {"threshold"}},
    };

    RunConfig rc;
    detail::KeyValues kvs{{}, &rc.notices};
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error("config line " + std::to_string(line_no) + ": malformed section '" +
                                   t + "'");
            section = t.substr(1, t.size() - 2);
            if (!kKnown.count(section))
                throw config_error("config line " + std::to_string(line_no) + ": unknown section [" +
                                   section + "]");
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) +
                               ": expected 'key = value', got '" + t + "'");
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty())
            throw config_error("config line " + std::to_string(line_no) + ": key '" + key +
                               "' before any [section]");
        const auto& allowed = kKnown.at(section);
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw config_error("config line " + std::to_string(line_no) + ": unknown key '" + key +
                               "' in [" + section + "]");
        std::string full = section + "." + key;
        if (!kvs.kv.emplace(full, value).second)
            throw config_error("config line " + std::to_string(line_no) + ": duplicate key " + full);
    }

    // [data]
    rc.dataset = kvs.take("data.dataset", "mnist");
    if (rc.dataset != "mnist" && rc.dataset != "synthreg")
        throw config_error("config: data.dataset must be mnist or synthreg, got '" + rc.dataset +
                           "'");
    if (rc.dataset == "mnist") {
        rc.train_images = kvs.require("data.train_images");
        rc.train_labels = kvs.require("data.train_labels");
        rc.test_images = kvs.take("data.test_images", "", false);
        rc.test_labels = kvs.take("data.test_labels", "", false);
        rc.limit = detail::parse_u64_cfg(kvs.take("data.limit", "0", false), "data.limit");
        rc.test_limit =
            detail::parse_u64_cfg(kvs.take("data.test_limit", "0", false), "data.test_limit");
        rc.randomize_labels = detail::parse_bool_cfg(
            kvs.take("data.randomize_labels", "false", false), "data.randomize_labels");
        rc.label_seed =
            detail::parse_u64_cfg(kvs.take("data.label_seed", "0", false), "data.label_seed");
    } else {
        rc.n = detail::parse_u64_cfg(kvs.take("data.n", "1000"), "data.n");
        rc.d = detail::parse_u64_cfg(kvs.take("data.d", "20"), "data.d");
        rc.d_relevant = detail::parse_u64_cfg(kvs.take("data.d_relevant", "5"), "data.d_relevant");
        rc.noise_sd = detail::parse_real_cfg(kvs.take("data.noise_sd", "0.1"), "data.noise_sd");
        rc.data_seed = detail::parse_u64_cfg(kvs.take("data.data_seed", "0", false), "data.data_seed");
    }

    // [arch]
    rc.train.architecture =
        require_arch ? kvs.require("arch.descriptor") : kvs.take("arch.descriptor", "", false);
    rc.train.dataset = rc.dataset;

    // [train]; mode picks the recipe defaults
    std::string mode = kvs.take("train.mode", "scratch");
    if (mode == "scratch")
        rc.train.mode = TrainMode::scratch;
    else if (mode == "finetune")
        rc.train.mode = TrainMode::finetune;
    else
        throw config_error("config: train.mode must be scratch or finetune, got '" + mode + "'");
    const bool scratch = rc.train.mode == TrainMode::scratch;
    rc.train.epochs = static_cast<int>(
        detail::parse_i64_cfg(kvs.take("train.epochs", scratch ? "200" : "30"), "train.epochs"));
    rc.train.batch_size = static_cast<int>(
        detail::parse_i64_cfg(kvs.take("train.batch_size", "100"), "train.batch_size"));
    rc.train.lr0 =
        detail::parse_real_cfg(kvs.take("train.lr0", scratch ? "1e-4" : "1e-5"), "train.lr0");
    std::string sched = kvs.take("train.lr_schedule", scratch ? "linear" : "constant");
    if (sched == "linear")
        rc.train.lr_schedule = LrScheduleKind::linear_decay;
    else if (sched == "constant")
        rc.train.lr_schedule = LrScheduleKind::constant;
    else
        throw config_error("config: train.lr_schedule must be linear or constant, got '" + sched +
                           "'");
    const int default_end = scratch ? std::min(100, rc.train.epochs) : 0;
    const int default_start = scratch ? std::min(10, default_end) : 0;
    rc.train.warmup_start = static_cast<int>(detail::parse_i64_cfg(
        kvs.take("train.warmup_start", std::to_string(default_start)), "train.warmup_start"));
    rc.train.warmup_end = static_cast<int>(detail::parse_i64_cfg(
        kvs.take("train.warmup_end", std::to_string(default_end)), "train.warmup_end"));
    rc.train.seed = detail::parse_u64_cfg(kvs.take("train.seed", "0"), "train.seed");
    rc.train.pretrained = kvs.take("train.pretrained", "", false);

    // [sparsity]
    rc.train.threshold =
        detail::parse_real_cfg(kvs.take("sparsity.threshold", "3.0"), "sparsity.threshold");

    if (!kvs.kv.empty())
        throw config_error("config: key " + kvs.kv.begin()->first + " does not apply to dataset '" +
                           rc.dataset + "'");
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path);
    return parse_run_config(in);
}

/// One-line summary echoed into checkpoints.
inline std::string config_echo(const RunConfig& rc) {
    std::ostringstream os;
    os << "dataset=" << rc.dataset << " mode="
       << (rc.train.mode == TrainMode::scratch ? "scratch" : "finetune")
       << " epochs=" << rc.train.epochs << " batch_size=" << rc.train.batch_size
       << " lr0=" << rc.train.lr0 << " lr_schedule="
       << (rc.train.lr_schedule == LrScheduleKind::linear_decay ? "linear" : "constant")
       << " warmup=" << rc.train.warmup_start << ".." << rc.train.warmup_end
       << " seed=" << rc.train.seed << " threshold=" << rc.train.threshold;
    return os.str();
}

} // namespace sparsevd
