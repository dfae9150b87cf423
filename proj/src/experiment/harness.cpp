#include "dpg/experiment/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

namespace dpg::experiment {

namespace {

std::string format_optional(const std::optional<double>& v) {
    return v ? format_number(*v) : std::string();
}

Json nullable(const std::optional<double>& v) {
    if (v && std::isfinite(*v)) {
        return *v;
    }
    return nullptr;
}

Json number_or_null(double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
}

struct Moments {
    double mean = 0;
    double std = 0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) {
        return m;
    }
    m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) {
        ss += (x - m.mean) * (x - m.mean);
    }
    m.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return m;
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t k = xs.size() / 2;
    return xs.size() % 2 ? xs[k] : 0.5 * (xs[k - 1] + xs[k]);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
}

} // namespace

std::string format_number(double v) {
    if (std::isnan(v)) {
        return "";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TrialRecord run_trial(const ExperimentConfig& cfg, int trial) {
    TrialRecord rec{trial, trial_seed(cfg.stabilizer.seed, trial), cfg.system.system_for_trial(trial), {}, {}};
    const CostModel<double> cost = cfg.cost.for_dims(rec.system.n(), rec.system.m());
    StabilizerConfig<double> st = cfg.stabilizer;
    st.seed = rec.seed;
    if (cfg.truncated_gaussian_bound) {
        st.dist = BoundedDistribution<double>::truncated_gaussian(rec.system.n(), *cfg.truncated_gaussian_bound);
    }
    rec.result = run(rec.system, cost, st);
    const double rho = spectral_radius<double>(rec.system.closed_loop(rec.result.K));
    if (std::isfinite(rho)) {
        rec.final_rho = rho;
    }
    return rec;
}

void write_iterations_csv(std::ostream& out, const RunResult<double>& result, bool record_wall_time) {
    out << kIterationsHeader << '\n';
    for (const auto& r : result.state.history) {
        out << r.i << ',' << format_number(r.gamma) << ',' << format_number(r.alpha) << ','
            << format_number(r.j_hat) << ',' << format_number(r.grad_norm) << ','
            << format_optional(r.rho_closed_loop) << ',' << format_optional(r.j_exact) << ','
            << (record_wall_time ? format_number(r.wall_ms) : std::string()) << '\n';
    }
}

Json summary_json(const TrialRecord& rec, const std::string& digest) {
    const auto& res = rec.result;
    Json j;
    j["outcome"] = res.stabilized() ? "Stabilized" : "Failed";
    j["reason"] = res.reason;
    j["iterations_used"] = res.iterations_used();
    j["total_trajectories"] = res.rollouts;
    j["trajectories_n_plus_m_convention"] = res.rollouts_n_plus_m;
    j["retries"] = res.retries;
    j["final_gamma"] = number_or_null(res.final_gamma);
    j["final_rho"] = nullable(rec.final_rho);
    j["jbar"] = number_or_null(res.jbar);
    j["final_K"] = matrix_to_json(res.K);
    j["config_digest"] = digest;
    j["seed"] = rec.seed;
    j["trial"] = rec.trial;
    return j;
}

void write_trial_outputs(const std::filesystem::path& dir, const TrialRecord& rec, const ExperimentConfig& cfg) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "iterations.csv");
        if (!out) {
            throw Error("cannot write " + (dir / "iterations.csv").string());
        }
        write_iterations_csv(out, rec.result, cfg.record_wall_time);
    }
    write_file(dir / "summary.json", summary_json(rec, config_digest(cfg.source)).dump(2) + "\n");
    std::ofstream sys(dir / "system.txt");
    write_system(sys, rec.system);
}

void write_aggregate_csv(std::ostream& out, const std::vector<TrialRecord>& trials) {
    out << "i,trials_running,gamma_mean,gamma_std,gamma_opt_mean,gamma_opt_std\n";
    std::size_t longest = 0;
    for (const auto& t : trials) {
        longest = std::max(longest, t.result.state.history.size());
    }
    for (std::size_t i = 0; i < longest; ++i) {
        std::vector<double> gammas;
        std::vector<double> gamma_opt;
        int running = 0;
        for (const auto& t : trials) {
            const auto& h = t.result.state.history;
            if (i < h.size()) {
                ++running;
                gammas.push_back(h[i].gamma);
                if (h[i].rho_closed_loop && *h[i].rho_closed_loop > 0) {
                    const double g = 1.0 / (*h[i].rho_closed_loop * *h[i].rho_closed_loop);
                    if (std::isfinite(g)) {
                        gamma_opt.push_back(g);
                    }
                }
            } else if (!h.empty()) {
                // finished trials hold their last discount, capped at 1
                gammas.push_back(std::min(1.0, t.result.stabilized() ? h.back().gamma_next : h.back().gamma));
            }
        }
        const Moments g = moments(gammas);
        out << i << ',' << running << ',' << format_number(g.mean) << ',' << format_number(g.std) << ',';
        if (gamma_opt.empty()) {
            out << ",\n";
        } else {
            const Moments o = moments(gamma_opt);
            out << format_number(o.mean) << ',' << format_number(o.std) << '\n';
        }
    }
}

Json aggregate_json(const std::vector<TrialRecord>& trials, const ExperimentConfig& cfg) {
    Json j;
    const auto total = static_cast<int>(trials.size());
    int stabilized = 0;
    std::vector<double> iterations;
    std::vector<double> iterations_stabilized;
    Index trajectories = 0;
    Index trajectories_n_plus_m = 0;
    for (const auto& t : trials) {
        const auto its = static_cast<double>(t.result.iterations_used());
        iterations.push_back(its);
        if (t.result.stabilized()) {
            ++stabilized;
            iterations_stabilized.push_back(its);
        }
        trajectories += t.result.rollouts;
        trajectories_n_plus_m += t.result.rollouts_n_plus_m;
    }
    j["trials"] = total;
    j["stabilized"] = stabilized;
    j["success_rate"] = total ? static_cast<double>(stabilized) / total : 0.0;
    j["success_fraction_required"] = cfg.success_fraction;
    auto stats = [](const std::vector<double>& xs) {
        Json s;
        if (xs.empty()) {
            return Json(nullptr);
        }
        const Moments m = moments(xs);
        s["mean"] = m.mean;
        s["std"] = m.std;
        s["median"] = median(xs);
        s["min"] = *std::min_element(xs.begin(), xs.end());
        s["max"] = *std::max_element(xs.begin(), xs.end());
        return s;
    };
    j["iterations"] = stats(iterations);
    j["iterations_stabilized"] = stats(iterations_stabilized);
    j["total_trajectories"] = trajectories;
    j["mean_trajectories"] = total ? static_cast<double>(trajectories) / total : 0.0;
    j["total_trajectories_n_plus_m_convention"] = trajectories_n_plus_m;
    j["config_digest"] = config_digest(cfg.source);
    j["seed"] = cfg.stabilizer.seed;
    if (!cfg.reference.is_null()) {
        j["reference"] = cfg.reference;
    }
    return j;
}

BenchmarkResult run_benchmark(const ExperimentConfig& cfg) {
    BenchmarkResult out;
    std::vector<std::optional<TrialRecord>> slots(static_cast<std::size_t>(cfg.trials));
    std::vector<std::string> errors(slots.size());
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int t = next++; t < cfg.trials; t = next++) {
            try {
                slots[static_cast<std::size_t>(t)] = run_trial(cfg, t);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(t)] = e.what();
            }
        }
    };
    const int workers = std::min(cfg.threads, cfg.trials);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    for (std::size_t t = 0; t < errors.size(); ++t) {
        if (!errors[t].empty()) {
            throw Error("trial " + std::to_string(t) + ": " + errors[t]);
        }
        out.trials.push_back(std::move(*slots[t]));
    }
    out.aggregate = aggregate_json(out.trials, cfg);
    out.passed = out.aggregate["success_rate"].get<double>() >= cfg.success_fraction;
    return out;
}

} // namespace dpg::experiment
