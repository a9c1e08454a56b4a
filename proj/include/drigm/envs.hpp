#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drigm/decpomdp.hpp"
#include "drigm/uncertainty.hpp"

namespace drigm {

/// Kernel perturbation or observation noise applied to a nominal model.
struct Perturbation {
    std::string kind;  // kernel_contaminate | kernel_tv_shift | obs_noise
    double rho_test = 0.0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    /// "random": seeded per-row direction. "toward_fail": mass moves to the
    /// fail state on rows that already carry fail mass (collision rows).
    std::string direction = "random";
};

/// Declarative description of a benchmark environment.
struct EnvSpec {
    std::string kind;  // example_b1 | example_b2 | random_decpomdp | coop_grid
    std::uint64_t seed = 0;
    int n_states = 5;
    int n_agents = 2;
    int actions = 2;
    double gamma = 0.9;
    // coop_grid parameters
    int size = 5;
    int horizon = 50;
    double p_slip = 0.1;
    double p_fail = 0.05;
    std::optional<Perturbation> perturbation;

    std::string name() const;
};

/// Sparse observation featurization: per agent, obs id -> (index, value) list.
struct FeatureCodec {
    std::vector<int> obs_dims;  // feature dimension per agent
    int state_dim = 0;          // global state feature dimension (one-hot)
    std::vector<std::vector<std::vector<std::pair<int, double>>>> obs_sparse;

    void write_obs(int agent, int obs, std::span<double> out) const;
    void write_state(int state, std::span<double> out) const;
};

/// A simulatable environment: tabular model plus episode metadata and
/// feature encoding for the learning stack.
struct SimEnv {
    std::string name;
    TabularDecPomdp model;
    int start_state = 0;
    int horizon = 50;
    /// Episode ends early on entering one of these (zero-reward absorbing).
    std::vector<bool> terminal;
    FeatureCodec codec;
    double obs_noise_sigma = 0.0;  // evaluation-time Gaussian noise on obs features
};

/// Instantiates a spec. Example and random kinds build the tabular model
/// directly; coop_grid flattens the two-agent grid into a joint tabular MDP
/// so every learning result stays checkable by exact solves.
SimEnv make_env(const EnvSpec& spec);

/// Applies a kernel perturbation, preserving stochasticity, fail-state
/// absorption, and membership in the matching uncertainty ball.
TabularDecPomdp perturb(const TabularDecPomdp& model, const Perturbation& p);

/// The two kernels of the first worked example (deterministic P1, and P2
/// with mixed rows on the anti-diagonal joint actions).
TabularDecPomdp example_b1_p1();
TabularDecPomdp example_b1_p2();
/// Rectangular finite set {P1, P2} for the first example.
UncertaintySet example_b1_set();

TabularDecPomdp example_b2_p1();
TabularDecPomdp example_b2_p2();
UncertaintySet example_b2_set();

/// Random Dec-POMDP with full observability, rewards in [0,1], and a
/// zero-reward absorbing fail state as the last state id.
TabularDecPomdp random_decpomdp(std::uint64_t seed, int n_states, int n_agents, int actions,
                                double gamma = 0.9);

/// Marks s as terminal when it is absorbing with identically zero reward.
std::vector<bool> terminal_states(const TabularDecPomdp& model);

/// Mean undiscounted episode return of a fixed joint policy, by simulation.
double simulate_policy_return(const SimEnv& env, const std::vector<int>& policy, int episodes,
                              Rng& rng);

}  // namespace drigm
