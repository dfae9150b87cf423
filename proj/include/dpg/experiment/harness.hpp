#pragma once

#include "dpg/experiment/config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dpg::experiment {

struct TrialRecord {
    int trial = 0;
    std::uint64_t seed = 0;
    LinearSystem<double> system;
    RunResult<double> result;
    std::optional<double> final_rho;  // rho(A - B K_final); unset when not finite
};

[[nodiscard]] TrialRecord run_trial(const ExperimentConfig& cfg, int trial);

inline constexpr const char* kIterationsHeader = "i,gamma,alpha,j_hat,grad_norm,rho_closed_loop,j_exact,wall_ms";

void write_iterations_csv(std::ostream& out, const RunResult<double>& result, bool record_wall_time);
[[nodiscard]] Json summary_json(const TrialRecord& rec, const std::string& digest);

// iterations.csv, summary.json and system.txt under dir.
void write_trial_outputs(const std::filesystem::path& dir, const TrialRecord& rec, const ExperimentConfig& cfg);

struct BenchmarkResult {
    std::vector<TrialRecord> trials;
    Json aggregate;
    bool passed = false;  // success rate reached success_fraction
};

// Trials are independent (seeded by trial index), so results do not depend on
// the thread count.
[[nodiscard]] BenchmarkResult run_benchmark(const ExperimentConfig& cfg);

void write_aggregate_csv(std::ostream& out, const std::vector<TrialRecord>& trials);
[[nodiscard]] Json aggregate_json(const std::vector<TrialRecord>& trials, const ExperimentConfig& cfg);

[[nodiscard]] std::string format_number(double v);

} // namespace dpg::experiment
