#include "dpg/zeroth_order.hpp"

#include "doctest.h"
#include "fixtures.hpp"
#include "reference.hpp"

#include <cmath>

using namespace dpg;
using fx::Mat;
using fx::Vec;
using fx::mat;

TEST_SUITE("zeroth_order") {

TEST_CASE("sphere perturbations have Frobenius norm sqrt(mn)") {
    Rng rng(1);
    for (auto [m, n] : {std::pair<Index, Index>{1, 1}, {1, 2}, {3, 4}, {20, 20}}) {
        for (int k = 0; k < 50; ++k) {
            const Mat U = sample_sphere_perturbation<double>(m, n, rng);
            CHECK(U.rows() == m);
            CHECK(U.cols() == n);
            CHECK(std::abs(U.norm() - std::sqrt(double(m * n))) <= 1e-12);
        }
    }
    CHECK_THROWS_AS((void)sample_sphere_perturbation<double>(0, 2, rng), DimensionError);
}

TEST_CASE("the 0-sphere is {+1, -1}") {
    Rng rng(2);
    int plus = 0;
    for (int k = 0; k < 1000; ++k) {
        const double u = sample_sphere_perturbation<double>(1, 1, rng)(0, 0);
        CHECK(std::abs(std::abs(u) - 1.0) <= 1e-15);
        plus += u > 0 ? 1 : 0;
    }
    CHECK(plus > 400);
    CHECK(plus < 600);
}

TEST_CASE("sphere perturbation moments") {
    Rng rng(3);
    Mat mean = Mat::Zero(1, 2);
    Mat second = Mat::Zero(1, 2);
    const int draws = 100000;
    for (int k = 0; k < draws; ++k) {
        const Mat U = sample_sphere_perturbation<double>(1, 2, rng);
        mean += U;
        second += U.cwiseProduct(U);
    }
    mean /= draws;
    second /= draws;
    CHECK(mean.norm() <= 0.02 * std::sqrt(2.0));
    CHECK(second(0, 0) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(second(0, 1) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("a cost that is even in the perturbation gives a zero gradient") {
    // B = 0: the state path ignores K, and u^T R u is even in K = +-rU
    const LinearSystem<double> sys(mat({{0.5, 0.1}, {0.0, 0.3}}), Mat::Zero(2, 1));
    const Simulator<double> sim(sys);
    const auto est = estimate_gradient(sim, fx::cost_2d(), Mat::Zero(1, 2).eval(), 0.9,
                                       GradientConfig<double>{1e-2, 25, 50},
                                       BoundedDistribution<double>::unit_sphere(2), Setting::InitialState, 4);
    REQUIRE(est.usable());
    CHECK(est.G.isZero(0));
}

TEST_CASE("scalar gradient estimate within 5% of the finite-difference gradient") {
    const auto sys = fx::scalar_plant();
    const auto cost = fx::scalar_cost();
    const Simulator<double> sim(sys);
    const Mat K = Mat::Zero(1, 1);
    const double gamma = 0.1;
    const double fd = ref::central_difference([&](const Mat& k) { return closed_form_cost(sys, cost, k, gamma); },
                                              K, 1e-5)(0, 0);
    // d/dk of (1 + k^2) / (1 - 0.1 (2 - k)^2) at 0
    CHECK(fd == doctest::Approx(-0.4 / 0.36).epsilon(1e-8));
    const auto est = estimate_gradient(sim, cost, K, gamma, GradientConfig<double>{1e-3, 10000, 200},
                                       BoundedDistribution<double>::unit_sphere(1), Setting::InitialState, 77);
    REQUIRE(est.usable());
    CHECK(fx::rel_err(est.G(0, 0), fd) <= 0.05);
}

TEST_CASE("negating every perturbation leaves the estimate unchanged") {
    const Simulator<double> sim(fx::plant_2d());
    const auto cost = fx::cost_2d();
    const Mat K = mat({{0.3, 0.2}});
    Rng rng(5);
    std::vector<Mat> Us;
    std::vector<Mat> neg;
    std::vector<std::uint64_t> seeds;
    for (int j = 0; j < 12; ++j) {
        Us.push_back(sample_sphere_perturbation<double>(1, 2, rng));
        neg.push_back(-Us.back());
        seeds.push_back(derive_seed(9, {std::uint64_t(j)}));
    }
    const auto dist = BoundedDistribution<double>::unit_sphere(2);
    const auto a = two_point_estimate<double>(sim, cost, K, 0.01, 2e-3, 100, Setting::InitialState, dist, Us, seeds);
    const auto b = two_point_estimate<double>(sim, cost, K, 0.01, 2e-3, 100, Setting::InitialState, dist, neg, seeds);
    REQUIRE(a.usable());
    REQUIRE(b.usable());
    CHECK((a.G - b.G).norm() <= 1e-12 * a.G.norm());
}

TEST_CASE("estimate scales linearly with the cost weights") {
    const Simulator<double> sim(fx::plant_2d());
    const auto cost = fx::cost_2d();
    const CostModel<double> tripled = cost.scaled(3.0);
    const Mat K = mat({{0.2, 0.1}});
    const GradientConfig<double> cfg{2e-3, 10, 100};
    const auto dist = BoundedDistribution<double>::unit_sphere(2);
    for (Setting setting : {Setting::InitialState, Setting::AdditiveNoise}) {
        const auto a = estimate_gradient(sim, cost, K, 0.01, cfg, dist, setting, 11);
        const auto b = estimate_gradient(sim, tripled, K, 0.01, cfg, dist, setting, 11);
        CHECK((b.G - 3.0 * a.G).norm() <= 1e-12 * b.G.norm());
    }
}

TEST_CASE("estimates are deterministic in the seed") {
    const Simulator<double> sim(fx::plant_2d());
    const GradientConfig<double> cfg{2e-3, 10, 100};
    const auto dist = BoundedDistribution<double>::unit_sphere(2);
    const Mat K = Mat::Zero(1, 2);
    const auto a = estimate_gradient(sim, fx::cost_2d(), K, 1e-3, cfg, dist, Setting::InitialState, 42);
    const auto b = estimate_gradient(sim, fx::cost_2d(), K, 1e-3, cfg, dist, Setting::InitialState, 42);
    const auto c = estimate_gradient(sim, fx::cost_2d(), K, 1e-3, cfg, dist, Setting::InitialState, 43);
    CHECK(a.G == b.G);
    CHECK(a.G != c.G);
    CHECK(a.G.allFinite());
    CHECK(a.M == 10);
    CHECK(a.seed == 42);
}

TEST_CASE("a diverged perturbed rollout flags the pair and sign") {
    const Simulator<double> sim(LinearSystem<double>(mat({{1e3}}), mat({{1}})));
    const auto est = estimate_gradient(sim, fx::scalar_cost(), Mat::Zero(1, 1).eval(), 0.5,
                                       GradientConfig<double>{1e-3, 5, 100},
                                       BoundedDistribution<double>::unit_sphere(1), Setting::InitialState, 1);
    CHECK_FALSE(est.usable());
    REQUIRE(est.divergence.has_value());
    CHECK(est.divergence->first == 0);
    CHECK(est.divergence->second == 1);
}

TEST_CASE("bad inputs") {
    const Simulator<double> sim(fx::plant_2d());
    const auto dist = BoundedDistribution<double>::unit_sphere(2);
    CHECK_THROWS_AS((void)estimate_gradient(sim, fx::cost_2d(), Mat::Zero(1, 2).eval(), 0.1,
                                            GradientConfig<double>{0.0, 10, 100}, dist, Setting::InitialState, 1),
                    DomainError);
    CHECK_THROWS_AS((void)estimate_gradient(sim, fx::cost_2d(), Mat::Zero(1, 2).eval(), 0.1,
                                            GradientConfig<double>{1e-3, 10, 100},
                                            BoundedDistribution<double>::unit_sphere(3), Setting::InitialState, 1),
                    DimensionError);
    std::vector<Mat> Us{Mat::Ones(2, 2)};
    std::vector<std::uint64_t> seeds{1};
    CHECK_THROWS_AS((void)two_point_estimate<double>(sim, fx::cost_2d(), Mat::Zero(1, 2).eval(), 0.1, 1e-3, 10,
                                                     Setting::InitialState, dist, Us, seeds),
                    DimensionError);
}

} // TEST_SUITE
