#pragma once

#include <iosfwd>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace mdpmpc {

struct RunOutcome {
    int exit_code = 0; // 0 checks pass, 1 checks fail
    nlohmann::json report;
};

/// Validates the config, runs the named experiment, writes report.json plus
/// the experiment's CSV series into output_dir and prints a summary to log.
/// Throws ConfigError before anything is written when the config is invalid;
/// solver failures propagate as exceptions.
RunOutcome run_experiment(const nlohmann::json& config, const std::string& output_dir,
                          std::ostream& log);

/// Field-by-field comparison of two reports; numeric leaves compare within
/// tol, everything else exactly. Structural differences throw SchemaMismatch.
std::string report_diff(const nlohmann::json& a, const nlohmann::json& b, double tol = 1e-9);

} // namespace mdpmpc
