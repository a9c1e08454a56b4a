#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drigm/rng.hpp"

namespace drigm {

/// Joint action as one id per agent.
using JointAction = std::vector<int>;

/// Finite cooperative Dec-POMDP with a dense tabular transition kernel.
///
/// States, per-agent actions and observations are integer ids. The kernel
/// and reward are indexed by (state, joint-action index) where joint actions
/// are enumerated lexicographically with agent 0 most significant. The joint
/// observation map must be injective so that the joint observation recovers
/// the state.
struct TabularDecPomdp {
    std::string name;
    int n_states = 0;
    int n_agents = 0;
    std::vector<int> actions_per_agent;
    double gamma = 0.99;
    std::optional<int> fail_state;
    double reward_bound = 1.0;  // B_r, used for dual-variable range sanity checks

    /// obs_map[agent][state] -> observation id
    std::vector<std::vector<int>> obs_map;
    /// reward[s * n_joint_actions + a]
    std::vector<double> reward;
    /// kernel[(s * n_joint_actions + a) * n_states + s']
    std::vector<double> kernel;

    int n_joint_actions() const {
        int n = 1;
        for (int k : actions_per_agent) n *= k;
        return n;
    }

    int encode_action(std::span<const int> per_agent) const;
    JointAction decode_action(int joint_index) const;

    double r(int state, int joint_index) const {
        return reward[static_cast<std::size_t>(state) * n_joint_actions() + joint_index];
    }
    std::span<const double> row(int state, int joint_index) const {
        const std::size_t off =
            (static_cast<std::size_t>(state) * n_joint_actions() + joint_index) * n_states;
        return {kernel.data() + off, static_cast<std::size_t>(n_states)};
    }
    std::span<double> mutable_row(int state, int joint_index) {
        const std::size_t off =
            (static_cast<std::size_t>(state) * n_joint_actions() + joint_index) * n_states;
        return {kernel.data() + off, static_cast<std::size_t>(n_states)};
    }

    /// True when every kernel row out of `state` keeps all mass on `state`.
    bool is_absorbing(int state) const;

    /// Largest |reward| actually present in the table.
    double max_abs_reward() const;
};

/// Result of model validation: ok, or the first violated invariant.
struct ValidationReport {
    bool ok = true;
    std::string violation;  // human-readable, includes the location
};

/// Checks stochasticity of every kernel row (sum 1 within 1e-12, no negative
/// entries), fail-state absorption with zero reward, and injectivity of the
/// joint observation map. Returns the first violation found.
ValidationReport validate(const TabularDecPomdp& model);

struct StepResult {
    int next_state = 0;
    double reward = 0.0;
};

/// Samples s' ~ kernel(state, joint_action) and returns the reward of the
/// (state, action) pair. Deterministic given the rng state.
StepResult step(const TabularDecPomdp& model, int state, const JointAction& joint_action,
                Rng& rng);
StepResult step_indexed(const TabularDecPomdp& model, int state, int joint_index, Rng& rng);

/// Per-agent observation ids for a state.
std::vector<int> observe(const TabularDecPomdp& model, int state);

/// Inverse of the joint observation map, precomputed for a validated model.
class ObservationDecoder {
public:
    explicit ObservationDecoder(const TabularDecPomdp& model);

    /// The state whose joint observation equals `joint_obs`.
    /// Throws std::out_of_range when the tuple is not in the image.
    int decode(const std::vector<int>& joint_obs) const;

private:
    std::map<std::vector<int>, int> inverse_;
};

/// JSON (de)serialization of the model file format.
std::string to_json(const TabularDecPomdp& model);
TabularDecPomdp model_from_json(const std::string& text);
void save_model(const TabularDecPomdp& model, const std::string& path);
TabularDecPomdp load_model(const std::string& path);

}  // namespace drigm
