#pragma once

#include <nlohmann/json.hpp>

#include "vmr/model/network.hpp"

namespace vmr {

// Per-module trainable-parameter counts plus the closed-form total the
// config implies. total and analytic_total must agree exactly.
inline nlohmann::json inspect_report(const Network& net) {
    const ParamSet& ps = net.params();
    nlohmann::json j;
    j["embed"] = ps.count_prefix("embed.");
    j["backbone"] = ps.count_prefix("backbone.");
    j["mlm_head"] = ps.count_prefix("mlm_head.");
    j["msa"] = ps.count_prefix("msa.");
    j["proposal_head"] = ps.count_prefix("proposal_head.");
    j["vtc"] = ps.count_prefix("vtc.");
    j["total"] = ps.total_count();
    j["analytic_total"] = net.analytic_param_count();
    return j;
}

}  // namespace vmr
