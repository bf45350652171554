#pragma once

#include <string>

#include <json.hpp>

#include "sparsevd/vd_core.hpp"

namespace sparsevd {

inline nlohmann::json sparsity_report_json(const SparsityReport& rep) {
    nlohmann::json j;
    j["threshold"] = rep.threshold;
    j["total"] = rep.total;
    j["kept"] = rep.kept;
    j["sparsity_pct"] = rep.sparsity_pct;
    j["compression_defined"] = rep.compression_defined;
    if (rep.compression_defined)
        j["compression"] = rep.compression;
    else
        j["compression"] = nullptr;
    j["layers"] = nlohmann::json::array();
    for (const auto& ls : rep.layers) {
        nlohmann::json lj;
        lj["name"] = ls.name;
        lj["variational"] = ls.variational;
        lj["total"] = ls.total;
        lj["kept"] = ls.kept;
        lj["sparsity_pct"] = ls.sparsity_pct;
        lj["mean_dropout_rate"] = ls.mean_dropout_rate;
        j["layers"].push_back(lj);
    }
    return j;
}

inline std::string sparsity_report_text(const SparsityReport& rep) {
    return sparsity_report_json(rep).dump(2) + "\n";
}

} // namespace sparsevd
