#include "dpg/experiment/config.hpp"

#include "dpg/rng.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dpg::experiment {

namespace {

const std::set<std::string> kTopLevelKeys = {
    "system", "cost", "gamma0", "eta", "N", "tau", "r", "M", "tau_grad", "inner_steps", "early_exit",
    "jbar_policy", "setting", "mode", "model_based_rule", "step_control", "armijo", "rate_margin", "distribution",
    "max_outer_iterations", "max_retries", "snapshot_every", "trials", "success_fraction", "seed", "threads",
    "record_wall_time", "out_dir", "reference", "description"};

template <typename T>
T get_or(const Json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) {
        return fallback;
    }
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

CostSpecKind parse_weight(const Json& doc, const char* key, Matrix<double>& out) {
    if (!doc.contains(key)) {
        throw ConfigError(std::string("cost.") + key + " is required (a full matrix or \"identity\")");
    }
    const Json& v = doc.at(key);
    if (v.is_string()) {
        if (v.get<std::string>() != "identity") {
            throw ConfigError(std::string("cost.") + key + ": only the string \"identity\" is accepted");
        }
        return CostSpecKind::Identity;
    }
    out = matrix_from_json(v, std::string("cost.") + key);
    return CostSpecKind::Explicit;
}

} // namespace

Json matrix_to_json(const Matrix<double>& M) {
    Json rows = Json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < M.cols(); ++j) {
            row.push_back(M(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix<double> matrix_from_json(const Json& j, const std::string& key) {
    if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
        throw ConfigError(key + ": expected a non-empty array of rows");
    }
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j.front().size());
    Matrix<double> M(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const Json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
            throw ConfigError(key + ": rows must all have the same length");
        }
        for (Index c = 0; c < cols; ++c) {
            const Json& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) {
                throw ConfigError(key + ": entries must be numbers");
            }
            M(r, c) = v.get<double>();
        }
    }
    return M;
}

LinearSystem<double> SystemSource::system_for_trial(int trial) const {
    if (fixed) {
        return *fixed;
    }
    const RandomSystemSpec& spec = *random;
    return random_system<double>(spec.n, spec.m, spec.a_std, spec.b_std, trial_system_seed(spec.seed, trial));
}

CostModel<double> CostSpec::for_dims(Index n, Index m) const {
    Matrix<double> q = q_kind == CostSpecKind::Identity ? Matrix<double>::Identity(n, n) : Q;
    Matrix<double> r = r_kind == CostSpecKind::Identity ? Matrix<double>::Identity(m, m) : R;
    if (q.rows() != n || r.rows() != m) {
        throw ConfigError("cost: Q must be n x n and R must be m x m for the configured system");
    }
    return CostModel<double>(std::move(q), std::move(r));
}

std::uint64_t trial_seed(std::uint64_t root, int trial) {
    return derive_seed(root, {static_cast<std::uint64_t>(trial)});
}

std::uint64_t trial_system_seed(std::uint64_t root, int trial) {
    return derive_seed(root, {0x5157ULL, static_cast<std::uint64_t>(trial)});
}

std::string config_digest(const Json& doc) {
    Json canonical = doc;
    if (canonical.is_object()) {
        canonical.erase("threads");
        canonical.erase("out_dir");
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config(const Json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : doc.items()) {
        if (!kTopLevelKeys.count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    ExperimentConfig cfg;
    cfg.source = doc;

    if (!doc.contains("system") || !doc.at("system").is_object()) {
        throw ConfigError("'system' is required: {\"file\": ...}, {\"A\": ..., \"B\": ...} or {\"random\": {...}}");
    }
    const Json& sys = doc.at("system");
    try {
        if (sys.contains("file")) {
            std::filesystem::path p = sys.at("file").get<std::string>();
            if (p.is_relative()) {
                p = base_dir / p;
            }
            std::ifstream in(p);
            if (!in) {
                throw ConfigError("system.file: cannot open " + p.string());
            }
            cfg.system.fixed.emplace(read_system<double>(in));
        } else if (sys.contains("A") && sys.contains("B")) {
            cfg.system.fixed.emplace(matrix_from_json(sys.at("A"), "system.A"), matrix_from_json(sys.at("B"), "system.B"));
        } else if (sys.contains("random")) {
            const Json& r = sys.at("random");
            RandomSystemSpec spec;
            spec.n = get_or<Index>(r, "n", spec.n);
            spec.m = get_or<Index>(r, "m", spec.m);
            spec.a_std = get_or<double>(r, "a_std", spec.a_std);
            spec.b_std = get_or<double>(r, "b_std", spec.b_std);
            spec.seed = get_or<std::uint64_t>(r, "seed", spec.seed);
            if (spec.n < 1 || spec.m < 1 || !(spec.a_std > 0) || !(spec.b_std > 0)) {
                throw ConfigError("system.random: need n, m >= 1 and positive a_std, b_std");
            }
            cfg.system.random = spec;
        } else {
            throw ConfigError("system: expected 'file', 'A'/'B' or 'random'");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("system: ") + e.what());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("system: ") + e.what());
    }

    if (!doc.contains("cost") || !doc.at("cost").is_object()) {
        throw ConfigError("'cost' is required with explicit Q and R");
    }
    cfg.cost.q_kind = parse_weight(doc.at("cost"), "Q", cfg.cost.Q);
    cfg.cost.r_kind = parse_weight(doc.at("cost"), "R", cfg.cost.R);

    StabilizerConfig<double>& st = cfg.stabilizer;
    st.gamma0 = get_or<double>(doc, "gamma0", st.gamma0);
    st.eta = get_or<double>(doc, "eta", st.eta);
    st.N = get_or<Index>(doc, "N", st.N);
    st.tau = get_or<int>(doc, "tau", st.tau);
    st.grad.r = get_or<double>(doc, "r", st.grad.r);
    st.grad.M = get_or<Index>(doc, "M", st.grad.M);
    st.grad.tau = get_or<int>(doc, "tau_grad", st.tau);
    st.inner_steps = get_or<int>(doc, "inner_steps", st.inner_steps);
    st.early_exit = get_or<bool>(doc, "early_exit", st.early_exit);
    st.max_outer_iterations = get_or<int>(doc, "max_outer_iterations", st.max_outer_iterations);
    st.max_retries = get_or<int>(doc, "max_retries", st.max_retries);
    st.snapshot_every = get_or<int>(doc, "snapshot_every", st.snapshot_every);
    st.rate_margin = get_or<double>(doc, "rate_margin", st.rate_margin);
    st.armijo = get_or<double>(doc, "armijo", st.armijo);
    st.seed = get_or<std::uint64_t>(doc, "seed", 0);

    if (doc.contains("jbar_policy")) {
        const Json& jp = doc.at("jbar_policy");
        if (jp.contains("fixed")) {
            st.jbar = JbarPolicy<double>::fixed(get_or<double>(jp, "fixed", 0));
        } else if (jp.contains("auto")) {
            st.jbar = JbarPolicy<double>::auto_from_first(get_or<double>(jp, "auto", 2));
        } else {
            throw ConfigError("jbar_policy: expected {\"fixed\": value} or {\"auto\": multiplier}");
        }
    }

    const auto setting = get_or<std::string>(doc, "setting", "initial_state");
    if (setting == "initial_state") {
        st.setting = Setting::InitialState;
    } else if (setting == "additive_noise") {
        st.setting = Setting::AdditiveNoise;
    } else {
        throw ConfigError("setting: expected 'initial_state' or 'additive_noise'");
    }
    const auto mode = get_or<std::string>(doc, "mode", "model_free");
    if (mode == "model_free") {
        st.mode = Mode::ModelFree;
    } else if (mode == "model_based") {
        st.mode = Mode::ModelBased;
    } else {
        throw ConfigError("mode: expected 'model_free' or 'model_based'");
    }
    const auto rule = get_or<std::string>(doc, "model_based_rule", "exact_bound");
    if (rule == "exact_bound") {
        st.model_based_rule = ModelBasedRule::ExactBound;
    } else if (rule == "estimate_rule") {
        st.model_based_rule = ModelBasedRule::EstimateRule;
    } else {
        throw ConfigError("model_based_rule: expected 'exact_bound' or 'estimate_rule'");
    }
    const auto step = get_or<std::string>(doc, "step_control", "fixed");
    if (step == "fixed") {
        st.step_control = StepControl::Fixed;
    } else if (step == "backtracking") {
        st.step_control = StepControl::Backtracking;
    } else {
        throw ConfigError("step_control: expected 'fixed' or 'backtracking'");
    }

    if (doc.contains("distribution")) {
        const Json& d = doc.at("distribution");
        const auto kind = get_or<std::string>(d, "kind", "unit_sphere");
        if (kind == "truncated_gaussian") {
            if (!d.contains("bound")) {
                throw ConfigError("distribution: truncated_gaussian needs 'bound'");
            }
            cfg.truncated_gaussian_bound = get_or<double>(d, "bound", 0);
        } else if (kind != "unit_sphere") {
            throw ConfigError("distribution.kind: expected 'unit_sphere' or 'truncated_gaussian'");
        }
    }

    cfg.trials = get_or<int>(doc, "trials", cfg.trials);
    cfg.success_fraction = get_or<double>(doc, "success_fraction", cfg.success_fraction);
    cfg.threads = get_or<int>(doc, "threads", cfg.threads);
    cfg.record_wall_time = get_or<bool>(doc, "record_wall_time", cfg.record_wall_time);
    cfg.out_dir = get_or<std::string>(doc, "out_dir", cfg.out_dir);
    if (doc.contains("reference")) {
        cfg.reference = doc.at("reference");
    }
    if (cfg.trials < 1) {
        throw ConfigError("trials must be at least 1");
    }
    if (!(cfg.success_fraction >= 0) || cfg.success_fraction > 1) {
        throw ConfigError("success_fraction must lie in [0, 1]");
    }
    if (cfg.threads < 1) {
        throw ConfigError("threads must be at least 1");
    }

    try {
        st.validate();
        if (cfg.system.fixed) {
            (void)cfg.cost.for_dims(cfg.system.fixed->n(), cfg.system.fixed->m());
        } else {
            (void)cfg.cost.for_dims(cfg.system.random->n, cfg.system.random->m);
        }
        if (cfg.truncated_gaussian_bound) {
            const Index n = cfg.system.fixed ? cfg.system.fixed->n() : cfg.system.random->n;
            (void)BoundedDistribution<double>::truncated_gaussian(n, *cfg.truncated_gaussian_bound);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

Json load_config_document(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    try {
        return Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(load_config_document(path), path.parent_path());
}

} // namespace dpg::experiment
