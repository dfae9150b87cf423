#include "dpg/stabilizer.hpp"
#include "dpg/experiment/instances.hpp"

#include "doctest.h"
#include "fixtures.hpp"
#include "reference.hpp"

#include <cmath>

using namespace dpg;
using fx::Mat;
using fx::mat;

namespace {

StabilizerConfig<double> config_2d(std::uint64_t seed) {
    StabilizerConfig<double> cfg;
    cfg.gamma0 = 1e-3;
    cfg.eta = 1e-3;
    cfg.N = 50;
    cfg.tau = 100;
    cfg.grad = {2e-3, 10, 100};
    cfg.seed = seed;
    return cfg;
}

void check_history_shape(const RunResult<double>& res) {
    const auto& h = res.state.history;
    REQUIRE_FALSE(h.empty());
    CHECK(res.state.iteration == static_cast<int>(h.size()));
    for (std::size_t k = 0; k < h.size(); ++k) {
        CHECK(h[k].i == static_cast<int>(k));
        if (k > 0) {
            CHECK(h[k].gamma > h[k - 1].gamma);
            CHECK(h[k].gamma == h[k - 1].gamma_next);
        }
    }
    if (res.stabilized()) {
        for (std::size_t k = 0; k + 1 < h.size(); ++k) {
            CHECK(h[k].gamma_next < 1);
        }
        CHECK(h.back().gamma_next >= 1);
        CHECK(res.final_gamma >= 1);
        CHECK(std::isnan(h.back().grad_norm));
    }
}

} // namespace

TEST_SUITE("stabilizer") {

TEST_CASE("pg_step: zero gradient and zero step leave K alone") {
    const Mat K = mat({{0.3, -0.7}});
    CHECK(pg_step(K, Mat::Zero(1, 2).eval(), 0.1) == K);
    CHECK(pg_step(K, mat({{5, 5}}), 0.0) == K);
    CHECK_THROWS_AS((void)pg_step(K, Mat::Zero(2, 2).eval(), 0.1), DimensionError);

    const Simulator<double> sim(fx::plant_2d());
    const auto step = pg_step(sim, fx::cost_2d(), K, 1e-3, 0.0, GradientConfig<double>{2e-3, 10, 100},
                              BoundedDistribution<double>::unit_sphere(2), Setting::InitialState, 3);
    CHECK(step.K == K);
    CHECK(step.estimate.G.norm() > 0);
}

TEST_CASE("pg_step along the finite-difference gradient lowers the cost") {
    const auto sys = fx::scalar_plant();
    const auto cost = fx::scalar_cost();
    const Mat K = Mat::Zero(1, 1);
    const double gamma = 0.04;
    auto J = [&](const Mat& k) { return closed_form_cost(sys, cost, k, gamma); };
    const Mat G = ref::central_difference(J, K, 1e-5);
    const Mat next = pg_step(K, G, 0.05);
    CHECK(J(next) < J(K));
}

TEST_CASE("a failed inner estimate surfaces as an error") {
    const Simulator<double> sim(LinearSystem<double>(mat({{1e3}}), mat({{1}})));
    CHECK_THROWS_AS((void)pg_step(sim, fx::scalar_cost(), Mat::Zero(1, 1).eval(), 0.5, 1e-3,
                                  GradientConfig<double>{1e-3, 5, 100}, BoundedDistribution<double>::unit_sphere(1),
                                  Setting::InitialState, 1),
                    EstimateError);
}

TEST_CASE("model-free run on the 2-D plant") {
    const auto sys = fx::plant_2d();
    const auto res = run(sys, fx::cost_2d(), config_2d(2024));
    REQUIRE(res.stabilized());
    check_history_shape(res);
    CHECK(spectral_radius<double>(sys.closed_loop(res.K)) < 1);
    CHECK(ref::gelfand_radius(sys.closed_loop(res.K)) < 1);
    CHECK(res.iterations_used() <= 400);
    CHECK(res.retries == 0);
    for (const auto& rec : res.state.history) {
        CHECK(rec.rho_closed_loop.has_value());
    }

    // every evaluation is N rollouts, every gradient step 2M; the last iteration has no step
    const Index iters = res.iterations_used();
    CHECK(res.rollouts == (iters - 1) * (50 + 2 * 10) + 50);
    CHECK(res.rollouts_n_plus_m == (iters - 1) * (50 + 10) + 50);
}

TEST_CASE("runs are reproducible") {
    const auto sys = fx::plant_2d();
    const auto a = run(sys, fx::cost_2d(), config_2d(7));
    const auto b = run(sys, fx::cost_2d(), config_2d(7));
    REQUIRE(a.iterations_used() == b.iterations_used());
    CHECK(a.K == b.K);
    for (int i = 0; i < a.iterations_used(); ++i) {
        CHECK(a.state.history[i].j_hat == b.state.history[i].j_hat);
        CHECK(a.state.history[i].alpha == b.state.history[i].alpha);
    }
}

TEST_CASE("model-based run on the 2-D plant") {
    const auto sys = fx::plant_2d();
    const auto cost = fx::cost_2d();
    auto cfg = config_2d(0);
    cfg.mode = Mode::ModelBased;
    cfg.jbar = JbarPolicy<double>::fixed(20.0);
    CHECK(optimal_discounted_cost(sys, cost, 1.0).value < 20.0);
    const auto res = run(sys, cost, cfg);
    REQUIRE(res.stabilized());
    check_history_shape(res);
    CHECK(res.iterations_used() <= 50);
    CHECK(spectral_radius<double>(sys.closed_loop(res.K)) < 1);
    CHECK(res.rollouts == 0);

    // K^i stays stabilizable at the next discount on every iteration
    for (const auto& rec : res.state.history) {
        REQUIRE(rec.rho_closed_loop.has_value());
        if (rec.gamma_next < 1) {
            CHECK(std::sqrt(rec.gamma_next) * *rec.rho_closed_loop < 1);
        }
        CHECK(rec.j_exact.has_value());
    }

    auto slow = cfg;
    slow.model_based_rule = ModelBasedRule::EstimateRule;
    const auto res2 = run(sys, cost, slow);
    REQUIRE(res2.stabilized());
    CHECK(res2.iterations_used() > res.iterations_used());
}

TEST_CASE("dead-beat plant: iteration counts follow from the rate alone") {
    // A = 0, K = 0: J = Tr(Q) = 2, s = 1, and the gradient vanishes
    const LinearSystem<double> sys(Mat::Zero(2, 2), Mat::Identity(2, 1));
    const CostModel<double> cost(Mat::Identity(2, 2), mat({{1}}));
    auto cfg = config_2d(0);
    cfg.mode = Mode::ModelBased;

    auto count = [](double alpha) {
        double g = 1e-3;
        int k = 0;
        while (g < 1) {
            g *= 1 + alpha;
            ++k;
        }
        return k;
    };

    cfg.model_based_rule = ModelBasedRule::EstimateRule;
    const auto a = run(sys, cost, cfg);
    REQUIRE(a.stabilized());
    CHECK(a.iterations_used() == count(1.0 / 3.0));
    CHECK(a.iterations_used() == 25);
    CHECK(a.K.isZero(0));

    cfg.model_based_rule = ModelBasedRule::ExactBound;
    const auto b = run(sys, cost, cfg);
    REQUIRE(b.stabilized());
    CHECK(b.iterations_used() == count(0.999));
    CHECK(b.iterations_used() == 10);
}

TEST_CASE("gamma0 above 1 / rho(A)^2 is rejected before any rollout") {
    auto cfg = config_2d(1);
    cfg.gamma0 = 0.5;
    const auto res = run(fx::plant_2d(), fx::cost_2d(), cfg);
    CHECK_FALSE(res.stabilized());
    CHECK(res.reason.find("initial discount") != std::string::npos);
    CHECK(res.rollouts == 0);
    CHECK(res.iterations_used() == 0);
}

TEST_CASE("a diverging first estimate is retried once with doubled N, then reported") {
    const Simulator<double> sim(LinearSystem<double>(mat({{40}}), mat({{1}})));
    auto cfg = config_2d(1);
    cfg.gamma0 = 0.5;
    const auto res = run(sim, fx::scalar_cost(), cfg);
    CHECK_FALSE(res.stabilized());
    CHECK(res.retries == 1);
    CHECK(res.rollouts == 50 + 100);
    REQUIRE(res.iterations_used() == 1);
    CHECK(std::isinf(res.state.history[0].j_hat));
    CHECK(std::isnan(res.state.history[0].alpha));
    CHECK(res.reason.find("likely too large") != std::string::npos);
}

TEST_CASE("exceeding the outer iteration cap fails with the full history") {
    auto cfg = config_2d(3);
    cfg.max_outer_iterations = 5;
    const auto res = run(fx::plant_2d(), fx::cost_2d(), cfg);
    CHECK_FALSE(res.stabilized());
    CHECK(res.iterations_used() == 5);
    CHECK(res.reason.find("maximum outer iterations") != std::string::npos);
    check_history_shape(res);
}

TEST_CASE("descent pressure: the gradient step usually lowers the exact cost") {
    const auto sys = fx::plant_2d();
    const auto cost = fx::cost_2d();
    int steps = 0;
    int descents = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto cfg = config_2d(seed);
        cfg.snapshot_every = 1;
        const auto res = run(sys, cost, cfg);
        REQUIRE(res.stabilized());
        const auto& h = res.state.history;
        for (std::size_t k = 0; k + 1 < h.size(); ++k) {
            const double g = h[k].gamma_next;
            const double before = closed_form_cost(sys, cost, *h[k].K, g);
            const double after = closed_form_cost(sys, cost, *h[k + 1].K, g);
            ++steps;
            descents += after < before ? 1 : 0;
        }
    }
    MESSAGE("descent fraction " << double(descents) / steps);
    CHECK(descents >= 0.8 * steps);
}

TEST_CASE("model-based iteration counts stay within the budget") {
    Rng rng(61);
    for (int k = 0; k < 10; ++k) {
        const int n = 2 + k % 4;
        const auto sys = experiment::random_system_with_radius(rng, n, 1 + k % 2, 1.2, 4.0);
        const CostModel<double> cost(Mat::Identity(n, n), Mat::Identity(sys.m(), sys.m()));
        auto cfg = config_2d(0);
        cfg.mode = Mode::ModelBased;
        cfg.step_control = StepControl::Backtracking;
        cfg.max_outer_iterations = 100000;
        for (auto rule : {ModelBasedRule::ExactBound, ModelBasedRule::EstimateRule}) {
            cfg.model_based_rule = rule;
            const auto res = run(sys, cost, cfg);
            REQUIRE(res.stabilized());
            double max_j = 0;
            for (const auto& rec : res.state.history) {
                max_j = std::max(max_j, *rec.j_exact);
            }
            const auto budget = iteration_budget(1.0, 1.05 * max_j, cfg.gamma0);
            CHECK(res.iterations_used() <= budget.exact);
        }
    }
}

TEST_CASE("a fixed step overshoots where backtracking descends") {
    // k = 6 of the seed-61 draw: eta = 1e-3 leaves the stabilizing set
    Rng rng(61);
    LinearSystem<double> sys = experiment::random_system_with_radius(rng, 2, 1, 1.2, 4.0);
    for (int k = 1; k <= 6; ++k) {
        sys = experiment::random_system_with_radius(rng, 2 + k % 4, 1 + k % 2, 1.2, 4.0);
    }
    const CostModel<double> cost(Mat::Identity(sys.n(), sys.n()), Mat::Identity(sys.m(), sys.m()));
    auto cfg = config_2d(0);
    cfg.mode = Mode::ModelBased;
    cfg.max_outer_iterations = 100000;
    cfg.snapshot_every = 1;
    const auto fixed = run(sys, cost, cfg);
    CHECK_FALSE(fixed.stabilized());

    cfg.step_control = StepControl::Backtracking;
    const auto bt = run(sys, cost, cfg);
    REQUIRE(bt.stabilized());
    const auto& h = bt.state.history;
    for (std::size_t i = 0; i + 1 < h.size(); ++i) {
        const double before = closed_form_cost(sys, cost, *h[i].K, h[i].gamma_next);
        const double after = closed_form_cost(sys, cost, *h[i + 1].K, h[i].gamma_next);
        CHECK(after < before);
        CHECK(h[i].step <= cfg.eta);
        CHECK(h[i].step > 0);
    }
}

TEST_CASE("backtracking needs exact costs") {
    auto cfg = config_2d(0);
    cfg.step_control = StepControl::Backtracking;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg.mode = Mode::ModelBased;
    CHECK_NOTHROW(cfg.validate());
    cfg.armijo = 1;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("additive-noise setting stabilizes in both modes") {
    const auto sys = fx::plant_2d();
    auto cfg = config_2d(5);
    cfg.setting = Setting::AdditiveNoise;
    cfg.eta = 1e-4;
    const auto mf = run(sys, fx::cost_2d(), cfg);
    REQUIRE(mf.stabilized());
    check_history_shape(mf);
    CHECK(spectral_radius<double>(sys.closed_loop(mf.K)) < 1);

    cfg.mode = Mode::ModelBased;
    const auto mb = run(sys, fx::cost_2d(), cfg);
    REQUIRE(mb.stabilized());
    CHECK(spectral_radius<double>(sys.closed_loop(mb.K)) < 1);
    const auto& first = mb.state.history.front();
    CHECK(fx::rel_err(first.j_hat, closed_form_cost_noise(sys, fx::cost_2d(), Mat::Zero(1, 2).eval(), 1e-3)) <= 1e-12);
}

TEST_CASE("multiple inner steps are counted") {
    auto cfg = config_2d(9);
    cfg.inner_steps = 3;
    cfg.max_outer_iterations = 4;
    const auto res = run(fx::plant_2d(), fx::cost_2d(), cfg);
    REQUIRE(res.iterations_used() == 4);
    CHECK(res.rollouts == 4 * (50 + 3 * 2 * 10));
}

TEST_CASE("config validation") {
    auto cfg = config_2d(0);
    cfg.gamma0 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = config_2d(0);
    cfg.inner_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = config_2d(0);
    cfg.jbar = JbarPolicy<double>::auto_from_first(1.0);
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = config_2d(0);
    cfg.dist = BoundedDistribution<double>::unit_sphere(3);
    CHECK_THROWS_AS((void)run(fx::plant_2d(), fx::cost_2d(), cfg), DimensionError);
}

} // TEST_SUITE
