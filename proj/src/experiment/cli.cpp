#include "dpg/experiment/cli.hpp"

#include "dpg/experiment/config.hpp"
#include "dpg/experiment/harness.hpp"
#include "dpg/experiment/oracle_check.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

namespace dpg::experiment {

namespace {

struct GlobalFlags {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

ExperimentConfig load_with_overrides(const std::string& path, const GlobalFlags& flags) {
    Json doc = load_config_document(path);
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    if (flags.out_dir) {
        doc["out_dir"] = *flags.out_dir;
    }
    if (flags.seed) {
        doc["seed"] = *flags.seed;
    }
    if (flags.threads) {
        doc["threads"] = *flags.threads;
    }
    return parse_config(doc, std::filesystem::path(path).parent_path());
}

int cmd_stabilize(const std::string& path, const GlobalFlags& flags, std::ostream& out) {
    const ExperimentConfig cfg = load_with_overrides(path, flags);
    const TrialRecord rec = run_trial(cfg, 0);
    write_trial_outputs(cfg.out_dir, rec, cfg);
    const auto& res = rec.result;
    out << (res.stabilized() ? "Stabilized" : "Failed") << " after " << res.iterations_used() << " iterations, "
        << res.rollouts << " trajectories";
    if (rec.final_rho) {
        out << ", rho(A - BK) = " << *rec.final_rho;
    }
    if (!res.reason.empty()) {
        out << " (" << res.reason << ")";
    }
    out << "\n";
    return res.stabilized() ? 0 : 2;
}

int cmd_benchmark(const std::string& path, const GlobalFlags& flags, std::ostream& out) {
    const ExperimentConfig cfg = load_with_overrides(path, flags);
    const BenchmarkResult bench = run_benchmark(cfg);
    const std::filesystem::path root(cfg.out_dir);
    std::filesystem::create_directories(root);
    for (const auto& t : bench.trials) {
        char name[32];
        std::snprintf(name, sizeof name, "trial_%03d", t.trial);
        write_trial_outputs(root / name, t, cfg);
    }
    {
        std::ofstream csv(root / "aggregate.csv");
        write_aggregate_csv(csv, bench.trials);
    }
    std::ofstream(root / "aggregate.json") << bench.aggregate.dump(2) << "\n";
    out << bench.aggregate["stabilized"].get<int>() << " of " << bench.aggregate["trials"].get<int>()
        << " trials stabilized";
    if (!bench.aggregate["iterations"].is_null()) {
        out << ", median iterations " << bench.aggregate["iterations"]["median"].get<double>();
    }
    out << "\n";
    return bench.passed ? 0 : 2;
}

int cmd_oracle_check(const std::string& path, const GlobalFlags& flags, std::ostream& out) {
    OracleCheckConfig cfg = load_oracle_check_config(path);
    if (flags.seed) {
        cfg.seed = *flags.seed;
    }
    const auto reports = run_oracle_check(cfg);
    const Json report = report_json(reports);
    if (flags.out_dir) {
        std::filesystem::create_directories(*flags.out_dir);
        std::ofstream(std::filesystem::path(*flags.out_dir) / "oracle_check.json") << report.dump(2) << "\n";
    }
    for (const auto& r : reports) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    }
    return report["passed"].get<bool>() ? 0 : 2;
}

} // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stabilize unknown linear systems by discounted policy gradient"};
    app.require_subcommand(1);
    GlobalFlags flags;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
    auto* out_opt = app.add_option("--out-dir", out_dir, "Output directory (overrides the config)");
    auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the config)");
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads for benchmark trials")
                            ->check(CLI::PositiveNumber);

    std::string config_path;
    auto* stabilize = app.add_subcommand("stabilize", "Run one stabilization and write iterations.csv and summary.json");
    stabilize->add_option("config", config_path, "Experiment config (JSON)")->required();
    stabilize->fallthrough();
    auto* benchmark = app.add_subcommand("benchmark", "Run independent trials and aggregate them");
    benchmark->add_option("config", config_path, "Experiment config (JSON)")->required();
    benchmark->fallthrough();
    auto* oracle = app.add_subcommand("oracle-check", "Run model-based consistency suites");
    oracle->add_option("config", config_path, "Suite config (JSON)")->required();
    oracle->fallthrough();

    auto* gen = app.add_subcommand("gen-system", "Write a random (A, B) pair in the matrix file format");
    Index gn = 0;
    Index gm = 0;
    double a_std = 0;
    double b_std = 0;
    std::uint64_t gseed = 0;
    std::string gout;
    gen->add_option("--n", gn, "State dimension")->required()->check(CLI::PositiveNumber);
    gen->add_option("--m", gm, "Input dimension")->required()->check(CLI::PositiveNumber);
    gen->add_option("--a-std", a_std, "Standard deviation of A entries")->required()->check(CLI::PositiveNumber);
    gen->add_option("--b-std", b_std, "Standard deviation of B entries")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", gseed, "Seed")->required();
    gen->add_option("--out", gout, "Output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }
    if (*out_opt) {
        flags.out_dir = out_dir;
    }
    if (*seed_opt) {
        flags.seed = seed;
    }
    if (*threads_opt) {
        flags.threads = threads;
    }

    try {
        if (*stabilize) {
            return cmd_stabilize(config_path, flags, out);
        }
        if (*benchmark) {
            return cmd_benchmark(config_path, flags, out);
        }
        if (*oracle) {
            return cmd_oracle_check(config_path, flags, out);
        }
        const auto sys = random_system<double>(gn, gm, a_std, b_std, gseed);
        std::ofstream f(gout);
        if (!f) {
            err << "error: cannot write " << gout << "\n";
            return 1;
        }
        write_system(f, sys);
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace dpg::experiment
