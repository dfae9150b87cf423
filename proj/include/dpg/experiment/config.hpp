#pragma once

#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"
#include "dpg/stabilizer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace dpg::experiment {

using Json = nlohmann::json;

class ConfigError : public Error {
public:
    using Error::Error;
};

struct RandomSystemSpec {
    Index n = 20;
    Index m = 20;
    double a_std = 0.1;
    double b_std = 1.0;
    std::uint64_t seed = 0;
};

// Where the plant comes from: a fixed (A, B), or one random draw per trial.
struct SystemSource {
    std::optional<LinearSystem<double>> fixed;
    std::optional<RandomSystemSpec> random;

    [[nodiscard]] LinearSystem<double> system_for_trial(int trial) const;
};

enum class CostSpecKind { Explicit, Identity };

struct CostSpec {
    CostSpecKind q_kind = CostSpecKind::Identity;
    CostSpecKind r_kind = CostSpecKind::Identity;
    Matrix<double> Q;
    Matrix<double> R;

    [[nodiscard]] CostModel<double> for_dims(Index n, Index m) const;
};

struct ExperimentConfig {
    SystemSource system;
    CostSpec cost;
    StabilizerConfig<double> stabilizer;  // seed field holds the root seed
    std::optional<double> truncated_gaussian_bound;  // unset: unit sphere
    int trials = 1;
    double success_fraction = 1.0;
    int threads = 1;
    bool record_wall_time = true;
    std::string out_dir = "out";
    Json reference;  // free-form expectations copied into aggregate.json
    Json source;     // the parsed document after overrides, used for the digest
};

// Throws ConfigError with a message naming the offending key. Relative paths
// (system.file) resolve against base_dir.
[[nodiscard]] ExperimentConfig parse_config(const Json& doc, const std::filesystem::path& base_dir = {});
[[nodiscard]] Json load_config_document(const std::filesystem::path& path);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a 64 over the JSON dump (keys sorted, threads and out_dir dropped), as
// 16 hex digits.
[[nodiscard]] std::string config_digest(const Json& doc);

// Per-trial run seed and, for random ensembles, per-trial system seed.
[[nodiscard]] std::uint64_t trial_seed(std::uint64_t root, int trial);
[[nodiscard]] std::uint64_t trial_system_seed(std::uint64_t root, int trial);

[[nodiscard]] Json matrix_to_json(const Matrix<double>& M);
[[nodiscard]] Matrix<double> matrix_from_json(const Json& j, const std::string& key);

} // namespace dpg::experiment
