#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "drigm/envs.hpp"
#include "drigm/exact_solver.hpp"
#include "drigm/uncertainty.hpp"
#include "drigm/rng.hpp"
#include "oracles.hpp"

using namespace drigm;

namespace {

std::vector<double> random_simplex(Rng& rng, int n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) {
        x = -std::log(1.0 - rng.uniform());
        sum += x;
    }
    for (double& x : p) x /= sum;
    return p;
}

double plain_expectation(std::span<const double> v, std::span<const double> p) {
    double e = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) e += v[i] * p[i];
    return e;
}

}  // namespace

TEST_CASE("contamination worst case") {
    SUBCASE("rho = 0 reduces to the plain expectation") {
        const std::vector<double> v{1.0, 3.0, 2.0};
        const std::vector<double> p{0.2, 0.5, 0.3};
        CHECK(worst_case_expectation(v, p, Contamination{0.0}, 0.9) ==
              doctest::Approx(plain_expectation(v, p)).epsilon(1e-12));
    }

    SUBCASE("mass moves to the zero-value fail entry") {
        const std::vector<double> v{1.0, 3.0, 0.0};
        const std::vector<double> p{0.5, 0.5, 0.0};
        CHECK(worst_case_expectation(v, p, Contamination{0.2}, 0.9) ==
              doctest::Approx(1.6).epsilon(1e-12));
    }

    SUBCASE("simplified form rejects values without a vanishing minimum") {
        const std::vector<double> v{1.0, 3.0, 2.0};
        const std::vector<double> p{0.2, 0.5, 0.3};
        CHECK_THROWS_AS(worst_case_expectation(v, p, Contamination{0.2}, 0.9),
                        AssumptionViolation);
        // general form handles it and matches the enumeration oracle
        const double got = worst_case_expectation(v, p, Contamination{0.2}, 0.9, std::nullopt,
                                                  OperatorForm::General);
        CHECK(got == doctest::Approx(oracles::contamination_worst_case(v, p, 0.2))
                         .epsilon(1e-12));
    }
}

TEST_CASE("tv worst case agrees with the LP oracle") {
    SUBCASE("worked three-state instance") {
        const std::vector<double> v{0.0, 2.0, 3.0};
        const std::vector<double> p{0.5, 0.3, 0.2};
        const double lp = oracles::tv_worst_case_lp(v, p, 0.2);
        const double dual = worst_case_expectation(v, p, TotalVariation{0.2}, 0.9);
        CHECK(dual == doctest::Approx(lp).epsilon(1e-6));
        CHECK(dual == doctest::Approx(0.6).epsilon(1e-9));
    }

    SUBCASE("random instances, both forms") {
        Rng rng(5);
        for (int trial = 0; trial < 40; ++trial) {
            const int n = 2 + rng.uniform_int(5);
            std::vector<double> v(n);
            for (double& x : v) x = rng.uniform(0.0, 5.0);
            v[rng.uniform_int(n)] = 0.0;
            const std::vector<double> p = random_simplex(rng, n);
            const double rho = 0.02 + 0.95 * rng.uniform();
            const double lp = oracles::tv_worst_case_lp(v, p, rho);
            CHECK(worst_case_expectation(v, p, TotalVariation{rho}, 0.9) ==
                  doctest::Approx(lp).epsilon(1e-7));
            CHECK(worst_case_expectation(v, p, TotalVariation{rho}, 0.9, std::nullopt,
                                         OperatorForm::General) ==
                  doctest::Approx(lp).epsilon(1e-7));
        }
    }

    SUBCASE("general form stays exact for shifted values") {
        Rng rng(6);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 3 + rng.uniform_int(3);
            std::vector<double> v(n);
            for (double& x : v) x = rng.uniform(0.5, 4.0);  // min well above zero
            const std::vector<double> p = random_simplex(rng, n);
            const double rho = 0.05 + 0.8 * rng.uniform();
            const double lp = oracles::tv_worst_case_lp(v, p, rho);
            CHECK(worst_case_expectation(v, p, TotalVariation{rho}, 0.9, std::nullopt,
                                         OperatorForm::General) ==
                  doctest::Approx(lp).epsilon(1e-7));
        }
    }
}

TEST_CASE("tv dual minimization") {
    SUBCASE("interval upper bound formula") {
        CHECK(tv_dual_upper_bound(0.1, 0.9) == doctest::Approx(200.0));
    }

    SUBCASE("constant values pin the minimizer") {
        const std::vector<double> v{1.7, 1.7, 1.7};
        const std::vector<double> p{0.2, 0.3, 0.5};
        const DualSolveResult res = tv_dual_minimize(v, p, 0.3, 0.9);
        CHECK(res.eta_star == doctest::Approx(1.7).epsilon(1e-9));
        CHECK(res.value == doctest::Approx(-(1.0 - 0.3) * 1.7).epsilon(1e-9));
        CHECK(res.iterations == 200);
    }

    SUBCASE("matches the refined dense grid on random instances") {
        Rng rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> v(5);
            for (double& x : v) x = rng.uniform(0.0, 3.0);
            const std::vector<double> p = random_simplex(rng, 5);
            const double rho = 0.05 + 0.9 * rng.uniform();
            const DualSolveResult res = tv_dual_minimize(v, p, rho, 0.9);
            const double grid = oracles::grid_min_tv_dual(v, p, rho, 0.9);
            CHECK(res.value == doctest::Approx(grid).epsilon(1e-8));
            CHECK(res.eta_star >= 0.0);
            CHECK(res.eta_star <= tv_dual_upper_bound(rho, 0.9));
        }
    }

    SUBCASE("convexity witness: ternary and grid agree") {
        const std::vector<double> v{0.0, 1.0, 2.5, 0.7};
        const std::vector<double> p{0.1, 0.4, 0.3, 0.2};
        const DualSolveResult res = tv_dual_minimize(v, p, 0.25, 0.95);
        CHECK(res.value ==
              doctest::Approx(oracles::grid_min_tv_dual(v, p, 0.25, 0.95)).epsilon(1e-8));
    }
}

TEST_CASE("worst-case distributions lie in their sets and attain the value") {
    Rng rng(9);

    SUBCASE("contamination structure with smallest-id tie break") {
        const std::vector<double> v{0.0, 2.0, 0.0};
        const std::vector<double> p{0.3, 0.4, 0.3};
        const auto q = worst_case_distribution(v, p, Contamination{0.25}, 0.9);
        // tie between states 0 and 2 resolves to state 0
        CHECK(q[0] == doctest::Approx(0.75 * 0.3 + 0.25).epsilon(1e-12));
        CHECK(q[1] == doctest::Approx(0.75 * 0.4).epsilon(1e-12));
        CHECK(q[2] == doctest::Approx(0.75 * 0.3).epsilon(1e-12));
        CHECK(set_contains_row(q, p, Contamination{0.25}));
    }

    SUBCASE("tv transport matches the LP optimum and stays in the ball") {
        for (int trial = 0; trial < 30; ++trial) {
            const int n = 3 + rng.uniform_int(4);
            std::vector<double> v(n);
            for (double& x : v) x = rng.uniform(0.0, 4.0);
            v[rng.uniform_int(n)] = 0.0;
            const std::vector<double> p = random_simplex(rng, n);
            const double rho = 0.05 + 0.9 * rng.uniform();
            const UncertaintySet set{TotalVariation{rho}};
            const auto q = worst_case_distribution(v, p, set, 0.9);
            CHECK(set_contains_row(q, p, set));
            const double attained = plain_expectation(v, q);
            CHECK(attained ==
                  doctest::Approx(oracles::tv_worst_case_lp(v, p, rho)).epsilon(1e-9));
            CHECK(attained ==
                  doctest::Approx(worst_case_expectation(v, p, set, 0.9)).epsilon(1e-7));
        }
    }

    SUBCASE("finite set picks the minimizing kernel row") {
        const TabularDecPomdp p1 = example_b1_p1();
        const UncertaintySet set = example_b1_set();
        const JointQTable q = robust_value_iteration(p1, set, 1e-10);
        const std::vector<double> v = q.state_values();
        const Cell cell{0, p1.encode_action(std::vector<int>{1, 0}), 5, 4};
        const auto row = worst_case_distribution(v, p1.row(0, cell.joint_action), set,
                                                 p1.gamma, cell);
        const auto p2row = example_b1_p2().row(0, cell.joint_action);
        for (int i = 0; i < 5; ++i) CHECK(row[i] == doctest::Approx(p2row[i]).epsilon(1e-12));
    }
}

TEST_CASE("monotonicity and dominance in rho") {
    Rng rng(13);
    std::vector<double> v(6);
    for (double& x : v) x = rng.uniform(0.0, 3.0);
    v[2] = 0.0;
    const std::vector<double> p = random_simplex(rng, 6);
    const double base = plain_expectation(v, p);

    double prev_c = base, prev_t = base;
    for (double rho = 0.0; rho <= 0.5001; rho += 0.05) {
        const double c = worst_case_expectation(v, p, Contamination{rho}, 0.9);
        const double t = worst_case_expectation(v, p, TotalVariation{rho}, 0.9);
        CHECK(c <= prev_c + 1e-9);
        CHECK(t <= prev_t + 1e-9);
        CHECK(c <= base + 1e-9);
        CHECK(t <= base + 1e-9);
        prev_c = c;
        prev_t = t;
    }
    // equality at rho = 0
    CHECK(worst_case_expectation(v, p, TotalVariation{0.0}, 0.9) ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("membership predicate rejects rows outside the ball") {
    const std::vector<double> p{0.5, 0.3, 0.2};
    SUBCASE("tv") {
        const std::vector<double> inside{0.4, 0.4, 0.2};   // TV = 0.1
        const std::vector<double> outside{0.1, 0.7, 0.2};  // TV = 0.4
        CHECK(set_contains_row(inside, p, TotalVariation{0.1}));
        CHECK_FALSE(set_contains_row(outside, p, TotalVariation{0.1}));
    }
    SUBCASE("contamination") {
        const std::vector<double> inside{0.45, 0.27, 0.28};  // (1-.1)p + .1 delta_2
        std::vector<double> outside{0.38, 0.42, 0.20};       // state 0 below (1-rho)p0
        CHECK(set_contains_row(inside, p, Contamination{0.1}));
        CHECK_FALSE(set_contains_row(outside, p, Contamination{0.1}));
    }
    SUBCASE("malformed rows never pass") {
        CHECK_FALSE(set_contains_row(std::vector<double>{0.6, 0.6, -0.2}, p,
                                     TotalVariation{0.9}));
    }
}
