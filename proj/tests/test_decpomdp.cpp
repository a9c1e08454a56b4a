#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "drigm/decpomdp.hpp"
#include "drigm/envs.hpp"

using namespace drigm;

TEST_CASE("validate accepts the worked example and rejects constructed defects") {
    TabularDecPomdp m = example_b1_p1();
    CHECK(validate(m).ok);

    SUBCASE("kernel row summing to 0.9") {
        m.mutable_row(0, 3)[4] = 0.9;
        const ValidationReport rep = validate(m);
        CHECK_FALSE(rep.ok);
        CHECK(rep.violation.find("sums to 0.9") != std::string::npos);
        CHECK(rep.violation.find("s0") != std::string::npos);
    }

    SUBCASE("fail state with nonzero reward") {
        TabularDecPomdp r = random_decpomdp(1, 4, 1, 2);
        REQUIRE(validate(r).ok);
        r.reward[static_cast<std::size_t>(*r.fail_state) * r.n_joint_actions()] = 0.1;
        const ValidationReport rep = validate(r);
        CHECK_FALSE(rep.ok);
        CHECK(rep.violation.find("fail state") != std::string::npos);
    }

    SUBCASE("fail state that leaks mass") {
        TabularDecPomdp r = random_decpomdp(1, 4, 1, 2);
        auto row = r.mutable_row(*r.fail_state, 0);
        row[*r.fail_state] = 0.5;
        row[0] = 0.5;
        const ValidationReport rep = validate(r);
        CHECK_FALSE(rep.ok);
        CHECK(rep.violation.find("absorbing") != std::string::npos);
    }

    SUBCASE("colliding joint observations") {
        m.obs_map[0][1] = 0;
        m.obs_map[1][1] = 0;
        CHECK_FALSE(validate(m).ok);
    }
}

TEST_CASE("step follows the kernel and is reproducible") {
    const TabularDecPomdp p1 = example_b1_p1();

    SUBCASE("deterministic edge (paper action (2,1))") {
        Rng rng(0);
        for (int i = 0; i < 20; ++i) {
            const StepResult r = step(p1, 0, {1, 0}, rng);
            CHECK(r.next_state == 3);
            CHECK(r.reward == 0.0);
        }
    }

    SUBCASE("absorbing arm keeps paying its reward") {
        Rng rng(1);
        for (int a = 0; a < 4; ++a) {
            const StepResult r = step_indexed(p1, 3, a, rng);
            CHECK(r.next_state == 3);
            CHECK(r.reward == doctest::Approx(1.0));
        }
    }

    SUBCASE("mixed row frequency approximately 2/3") {
        const TabularDecPomdp p2 = example_b1_p2();
        Rng rng(12345);
        int hits = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i)
            if (step(p2, 0, {0, 1}, rng).next_state == 3) ++hits;
        CHECK(std::abs(hits / static_cast<double>(n) - 2.0 / 3.0) < 0.01);
    }

    SUBCASE("same seed, same trajectory") {
        const TabularDecPomdp m = random_decpomdp(9, 6, 2, 2);
        for (int trial = 0; trial < 2; ++trial) {
            Rng a(77), b(77);
            int sa = 0, sb = 0;
            for (int t = 0; t < 200; ++t) {
                const int act = t % m.n_joint_actions();
                sa = step_indexed(m, sa, act, a).next_state;
                sb = step_indexed(m, sb, act, b).next_state;
                CHECK(sa == sb);
            }
        }
    }

    SUBCASE("invalid ids are rejected") {
        Rng rng(0);
        CHECK_THROWS_AS(step_indexed(p1, 99, 0, rng), std::invalid_argument);
        CHECK_THROWS_AS(step(p1, 0, {5, 0}, rng), std::invalid_argument);
    }
}

TEST_CASE("joint observations decode back to the state") {
    SUBCASE("full observability identity") {
        const TabularDecPomdp m = example_b1_p1();
        const ObservationDecoder dec(m);
        for (int s = 0; s < m.n_states; ++s) {
            const std::vector<int> obs = observe(m, s);
            for (int i = 0; i < m.n_agents; ++i) CHECK(obs[i] == s);
            CHECK(dec.decode(obs) == s);
        }
    }

    SUBCASE("grid observations round-trip over every state") {
        EnvSpec spec;
        spec.kind = "coop_grid";
        spec.size = 3;
        const SimEnv env = make_env(spec);
        const ObservationDecoder dec(env.model);
        for (int s = 0; s < env.model.n_states; ++s)
            CHECK(dec.decode(observe(env.model, s)) == s);
    }

    SUBCASE("tuple outside the image") {
        const TabularDecPomdp m = example_b1_p1();
        const ObservationDecoder dec(m);
        CHECK_THROWS_AS(dec.decode({0, 1}), std::out_of_range);
    }
}

TEST_CASE("model files round-trip exactly") {
    const TabularDecPomdp m = example_b1_p2();
    const std::string path = (std::filesystem::temp_directory_path() / "b1p2_rt.json").string();
    save_model(m, path);
    const TabularDecPomdp back = load_model(path);
    CHECK(back.n_states == m.n_states);
    CHECK(back.actions_per_agent == m.actions_per_agent);
    CHECK(back.gamma == m.gamma);
    CHECK(back.kernel == m.kernel);  // bit-exact doubles, including 1/3
    CHECK(back.reward == m.reward);
    CHECK(back.obs_map == m.obs_map);
    std::filesystem::remove(path);
}

TEST_CASE("joint action encoding is lexicographic with agent 0 most significant") {
    const TabularDecPomdp m = example_b1_p1();
    CHECK(m.encode_action(std::vector<int>{0, 0}) == 0);
    CHECK(m.encode_action(std::vector<int>{0, 1}) == 1);
    CHECK(m.encode_action(std::vector<int>{1, 0}) == 2);
    CHECK(m.encode_action(std::vector<int>{1, 1}) == 3);
    for (int a = 0; a < 4; ++a)
        CHECK(m.encode_action(m.decode_action(a)) == a);
}
