#include "dpg/experiment/oracle_check.hpp"

#include "dpg/discount.hpp"
#include "dpg/experiment/instances.hpp"
#include "dpg/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dpg::experiment {

namespace {

using SuiteFn = std::function<SuiteReport(const OracleCheckConfig&)>;

void note(SuiteReport& r, bool ok, double ratio) {
    ++r.checked;
    if (!ok) {
        ++r.failures;
    }
    if (std::isnan(ratio) || ratio > r.worst) {
        r.worst = std::isnan(ratio) ? std::numeric_limits<double>::infinity() : ratio;
    }
}

void finish(SuiteReport& r, const std::string& tolerance) {
    r.passed = r.failures == 0 && r.checked > 0;
    std::ostringstream msg;
    msg << r.failures << " of " << r.checked << " checks failed; worst ratio to tolerance " << r.worst << " ("
        << tolerance << ")";
    r.detail = msg.str();
}

SuiteReport lyapunov_residual_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "lyapunov_residual";
    Rng rng = make_rng(cfg.seed, {1});
    for (int k = 0; k < cfg.instances; ++k) {
        const auto inst = random_stable_instance(rng);
        auto cert = solve_discounted_lyapunov(inst.system, inst.cost, inst.K, inst.gamma);
        Matrix<double> P = cert.P;
        P.diagonal().array() += cfg.lyapunov_perturbation;
        const double res = lyapunov_residual(inst.system, inst.cost, inst.K, inst.gamma, P);
        const double tol = 1e-9 * P.norm();
        const bool pd = P.llt().info() == Eigen::Success;
        note(r, res <= tol && pd, res / tol);
    }
    finish(r, "residual <= 1e-9 ||P||_F and P positive definite");
    return r;
}

SuiteReport scaling_identity_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "scaling_identity";
    Rng rng = make_rng(cfg.seed, {2});
    for (int k = 0; k < cfg.instances; ++k) {
        const auto inst = random_stable_instance(rng);
        const double J = closed_form_cost(inst.system, inst.cost, inst.K, inst.gamma);
        const double gap = scaling_identity_check(inst.system, inst.cost, inst.K, inst.gamma);
        note(r, gap <= 1e-9 * J, gap / (1e-9 * J));
    }
    finish(r, "relative gap <= 1e-9");
    return r;
}

SuiteReport noise_relation_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "noise_relation";
    Rng rng = make_rng(cfg.seed, {3});
    for (int k = 0; k < cfg.instances; ++k) {
        auto inst = random_stable_instance(rng);
        if (!(inst.gamma < 1)) {
            inst.gamma = 0.99 / (inst.rho * inst.rho);
            inst.gamma = std::min(inst.gamma, 0.999);
        }
        const double J = closed_form_cost(inst.system, inst.cost, inst.K, inst.gamma);
        const double Jn = closed_form_cost_noise(inst.system, inst.cost, inst.K, inst.gamma);
        const double expect = inst.gamma / (1 - inst.gamma) * J;
        const double gap = std::abs(Jn - expect);
        note(r, gap <= 1e-12 * expect, gap / (1e-12 * expect));
        // the two update rules agree under exact costs
        const double s = inst.cost.min_stage_eigenvalue(inst.K);
        const double a = update_rate(J, s);
        const double b = update_rate_noise(Jn, s, inst.gamma);
        const double rate_gap = std::abs(a - b);
        note(r, rate_gap <= 1e-12 * a, rate_gap / (1e-12 * a));
    }
    finish(r, "relative gap <= 1e-12");
    return r;
}

SuiteReport jstar_monotonicity_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "jstar_monotonicity";
    Rng rng = make_rng(cfg.seed, {4});
    std::uniform_int_distribution<int> dim(2, 5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < cfg.instances; ++k) {
        const int n = dim(rng);
        const int m = std::uniform_int_distribution<int>(1, n)(rng);
        const auto sys = random_system_with_radius(rng, n, m, 0.5, 1.5);
        const CostModel<double> cost(Matrix<double>::Identity(n, n), Matrix<double>::Identity(m, m));
        const double g2 = 0.2 + 0.8 * unit(rng);
        const double g1 = g2 * (0.1 + 0.85 * unit(rng));
        const double j1 = optimal_discounted_cost(sys, cost, g1).value;
        const double j2 = optimal_discounted_cost(sys, cost, g2).value;
        const double margin = j2 - j1;
        const double tol = 1e-10 * j2;
        note(r, margin > tol, tol / margin);
    }
    finish(r, "J*(g1) < J*(g2) - 1e-10 J*(g2) for g1 < g2");
    return r;
}

SuiteReport discount_safety_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "discount_safety";
    Rng rng = make_rng(cfg.seed, {5});
    for (int k = 0; k < cfg.instances; ++k) {
        const auto inst = random_stable_instance(rng);
        const double J = closed_form_cost(inst.system, inst.cost, inst.K, inst.gamma);
        const double s = inst.cost.min_stage_eigenvalue(inst.K);
        for (double f : {0.5, 0.75, 1.0, 1.25, 1.5}) {
            const auto step = make_discount_step(std::min(inst.gamma, 1 - 1e-12), f * J, s);
            const double x = std::sqrt(step.gamma_new) * inst.rho;
            note(r, x < 1, x);
        }
        const double exact = exact_discount_step(inst.system, inst.cost, inst.K, inst.gamma) * (1 - 1e-3);
        const double x = std::sqrt(exact) * inst.rho;
        note(r, x < 1, x);
    }
    finish(r, "sqrt(gamma_new) rho(A - BK) < 1");
    return r;
}

SuiteReport estimator_consistency_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "estimator_consistency";
    Rng rng = make_rng(cfg.seed, {6});
    const int count = std::min(cfg.instances, cfg.estimator_instances);
    for (int k = 0; k < count; ++k) {
        const auto inst = random_stable_instance(rng, 2, 3, 0.3, 0.8);
        const double J = closed_form_cost(inst.system, inst.cost, inst.K, inst.gamma);
        const auto d = std::sqrt(double(inst.system.n()));
        const Simulator<double> sim(inst.system);
        const auto dist = BoundedDistribution<double>::unit_sphere(inst.system.n());
        Vector<double> x0 = Vector<double>::Zero(inst.system.n());
        x0(0) = d;
        const auto decay = probe_decay_rate(sim, inst.cost, inst.K, inst.gamma, x0);
        const double sigma_q = inst.cost.min_q_eigenvalue();
        const int tau = required_horizon(2 * J, d, sigma_q, J / 2, decay).tau;
        const Index N = required_samples(J, d, cfg.estimator_delta);
        int bad = 0;
        for (int rep = 0; rep < cfg.estimator_repetitions; ++rep) {
            EvalConfig<double> eval{N, tau, Setting::InitialState, dist,
                                    derive_seed(cfg.seed, {6, static_cast<std::uint64_t>(k),
                                                           static_cast<std::uint64_t>(rep)})};
            const auto est = estimate_cost(sim, inst.cost, inst.K, inst.gamma, eval);
            if (!(std::abs(est.mean - J) <= J / 2)) {
                ++bad;
            }
        }
        const double frac = double(bad) / cfg.estimator_repetitions;
        note(r, frac <= cfg.estimator_delta, frac / cfg.estimator_delta);
    }
    finish(r, "miss fraction <= delta");
    return r;
}

SuiteReport boundary_sharpness_suite(const OracleCheckConfig& cfg) {
    SuiteReport r;
    r.name = "boundary_sharpness";
    Rng rng = make_rng(cfg.seed, {7});
    for (int k = 0; k < cfg.instances; ++k) {
        auto inst = random_stable_instance(rng, 2, 5, 0.5, 1.5);
        const double x = std::sqrt(inst.gamma) * inst.rho;
        if (std::abs(x - 1) < 1e-6) {
            continue;
        }
        bool solved = true;
        try {
            (void)solve_discounted_lyapunov(inst.system, inst.cost, inst.K, inst.gamma);
        } catch (const UnstablePairError&) {
            solved = false;
        }
        note(r, solved == (x < 1), solved == (x < 1) ? 0.0 : 1.0);
    }
    finish(r, "solve succeeds iff sqrt(gamma) rho < 1");
    return r;
}

const std::map<std::string, SuiteFn>& registry() {
    static const std::map<std::string, SuiteFn> suites = {
        {"lyapunov_residual", lyapunov_residual_suite},
        {"scaling_identity", scaling_identity_suite},
        {"noise_relation", noise_relation_suite},
        {"jstar_monotonicity", jstar_monotonicity_suite},
        {"discount_safety", discount_safety_suite},
        {"estimator_consistency", estimator_consistency_suite},
        {"boundary_sharpness", boundary_sharpness_suite},
    };
    return suites;
}

} // namespace

const std::vector<std::string>& known_suites() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, fn] : registry()) {
            out.push_back(name);
        }
        return out;
    }();
    return names;
}

OracleCheckConfig parse_oracle_check_config(const Json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("oracle-check config must be a JSON object");
    }
    OracleCheckConfig cfg;
    try {
        if (!doc.contains("suites") || !doc.at("suites").is_array()) {
            throw ConfigError("oracle-check: 'suites' must be an array of suite names");
        }
        cfg.suites = doc.at("suites").get<std::vector<std::string>>();
        cfg.instances = doc.value("instances", cfg.instances);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.lyapunov_perturbation = doc.value("lyapunov_perturbation", cfg.lyapunov_perturbation);
        if (doc.contains("estimator")) {
            const Json& e = doc.at("estimator");
            cfg.estimator_instances = e.value("instances", cfg.estimator_instances);
            cfg.estimator_repetitions = e.value("repetitions", cfg.estimator_repetitions);
            cfg.estimator_delta = e.value("delta", cfg.estimator_delta);
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("oracle-check config: ") + e.what());
    }
    if (cfg.suites.empty()) {
        throw ConfigError("oracle-check: suite list is empty");
    }
    for (const auto& s : cfg.suites) {
        if (!registry().count(s)) {
            throw ConfigError("oracle-check: unknown suite '" + s + "'");
        }
    }
    if (cfg.instances < 1 || cfg.estimator_instances < 1 || cfg.estimator_repetitions < 1 ||
        !(cfg.estimator_delta > 0 && cfg.estimator_delta < 1)) {
        throw ConfigError("oracle-check: counts must be positive and delta in (0, 1)");
    }
    return cfg;
}

OracleCheckConfig load_oracle_check_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    try {
        return parse_oracle_check_config(Json::parse(in, nullptr, true, true));
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

SuiteReport run_suite(const std::string& name, const OracleCheckConfig& cfg) {
    const auto it = registry().find(name);
    if (it == registry().end()) {
        throw ConfigError("unknown suite '" + name + "'");
    }
    try {
        return it->second(cfg);
    } catch (const Error& e) {
        SuiteReport r;
    r.name = name;
        r.passed = false;
        r.failures = 1;
        r.detail = std::string("suite aborted: ") + e.what();
        return r;
    }
}

std::vector<SuiteReport> run_oracle_check(const OracleCheckConfig& cfg) {
    std::vector<SuiteReport> out;
    for (const auto& s : cfg.suites) {
        out.push_back(run_suite(s, cfg));
    }
    return out;
}

Json report_json(const std::vector<SuiteReport>& reports) {
    Json j;
    bool all = !reports.empty();
    j["suites"] = Json::array();
    for (const auto& r : reports) {
        all = all && r.passed;
        j["suites"].push_back({{"name", r.name},
                               {"passed", r.passed},
                               {"checked", r.checked},
                               {"failures", r.failures},
                               {"worst", std::isfinite(r.worst) ? Json(r.worst) : Json(nullptr)},
                               {"detail", r.detail}});
    }
    j["passed"] = all;
    return j;
}

} // namespace dpg::experiment
