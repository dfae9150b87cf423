#pragma once

#include "dpg/experiment/config.hpp"

#include <string>
#include <vector>

namespace dpg::experiment {

struct OracleCheckConfig {
    std::vector<std::string> suites;
    int instances = 100;
    std::uint64_t seed = 1;
    double lyapunov_perturbation = 0;  // added to P * I before the residual check; nonzero is a fault drill
    int estimator_instances = 3;
    int estimator_repetitions = 200;
    double estimator_delta = 0.01;
};

struct SuiteReport {
    std::string name;
    bool passed = true;
    int checked = 0;
    int failures = 0;
    double worst = 0;  // worst observed ratio to the suite tolerance (or failure fraction)
    std::string detail;
};

[[nodiscard]] const std::vector<std::string>& known_suites();

[[nodiscard]] OracleCheckConfig parse_oracle_check_config(const Json& doc);
[[nodiscard]] OracleCheckConfig load_oracle_check_config(const std::filesystem::path& path);

[[nodiscard]] SuiteReport run_suite(const std::string& name, const OracleCheckConfig& cfg);
[[nodiscard]] std::vector<SuiteReport> run_oracle_check(const OracleCheckConfig& cfg);
[[nodiscard]] Json report_json(const std::vector<SuiteReport>& reports);

} // namespace dpg::experiment
