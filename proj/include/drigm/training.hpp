#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drigm/envs.hpp"
#include "drigm/factorization.hpp"

namespace drigm {

/// One stored interaction with precomputed windowed history features.
struct Transition {
    std::vector<std::vector<double>> agent_inputs;       // per agent, at time t
    std::vector<std::vector<double>> next_agent_inputs;  // per agent, at time t+1
    int state = 0;
    int next_state = 0;
    std::vector<int> actions;  // per agent
    int joint_action = 0;
    double reward = 0.0;
    bool terminal = false;  // next state is zero-reward absorbing
};

/// Fixed-capacity FIFO ring buffer with uniform without-replacement batches.
class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity);

    void push(Transition t);
    int size() const { return static_cast<int>(filled_); }
    int capacity() const { return capacity_; }
    const Transition& at(int i) const { return storage_[i]; }

    /// Distinct indices, uniform over the current contents.
    std::vector<int> sample_indices(int batch, Rng& rng) const;

private:
    int capacity_;
    std::size_t filled_ = 0;
    std::size_t next_ = 0;
    std::vector<Transition> storage_;
};

/// Linear anneal from start to end over anneal_steps environment steps.
struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.01;
    long anneal_steps = 10000;

    double value(long step) const {
        if (step >= anneal_steps) return end;
        const double t = static_cast<double>(step) / static_cast<double>(anneal_steps);
        return start + (end - start) * t;
    }
};

struct TrainConfig {
    std::string algorithm = "vdn";     // vdn | qmix | qtran
    std::string uncertainty = "none";  // none | contamination | tv
    double rho = 0.0;
    double gamma = 0.0;  // 0: use the environment's discount
    int episodes = 500;
    int horizon = 0;  // 0: use the environment's horizon
    int batch_size = 64;
    int buffer_capacity = 10000;
    int target_sync = 200;   // updates between target refreshes
    int update_period = 2;   // environment steps between parameter updates
    int min_buffer = 300;    // warmup transitions before learning starts
    double lr_agents = 5e-4;  // RMSprop: agent nets and the QMIX mixer
    double lr_aux = 1e-3;     // Adam: QTRAN joint/value heads and the dual net
    int window = 4;
    int hidden = 64;
    int mix_embed = 32;
    double eps_start = 1.0;
    double eps_end = 0.01;
    long eps_anneal_steps = 10000;
    long eval_every = 2000;  // environment steps between evaluation points
    int eval_episodes = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CheckpointMetrics {
    long step = 0;
    double epsilon = 0.0;
    double td_loss = 0.0;
    double dual_loss = 0.0;
    double train_return = 0.0;
    std::map<std::string, double> eval_returns;  // env name -> mean greedy return
};

struct RunRecord {
    TrainConfig config;
    std::string train_env;
    std::vector<std::string> eval_envs;
    std::vector<CheckpointMetrics> checkpoints;
    double final_train_return = 0.0;
    std::map<std::string, double> final_eval_returns;
    std::string checkpoint_path;  // final parameters, when persisted

    std::string to_json() const;
    static RunRecord from_json(const std::string& text);
};

/// Maintains per-agent history windows and emits flattened network inputs
/// (window slots of observation features plus previous-action one-hot,
/// zero-padded before the episode start).
class HistoryWindow {
public:
    HistoryWindow(const SimEnv& env, int window);

    void reset();
    /// Appends the observation of `state`; prev_actions apply to the slot
    /// observed one step earlier (pass empty at episode start).
    void push(int state, const std::vector<int>& prev_actions, Rng* noise_rng,
              double noise_sigma);
    /// Number of pushes since reset.
    int length() const { return length_; }
    bool fully_populated() const { return length_ >= window_; }

    const std::vector<double>& agent_input(int agent) const { return inputs_[agent]; }

private:
    const SimEnv* env_;
    int window_;
    int length_ = 0;
    std::vector<int> slot_dims_;
    std::vector<std::vector<double>> inputs_;  // per agent, window * slot_dim
};

/// Escalates a non-finite loss; the diagnostic checkpoint is saved by the
/// caller that owns an output directory.
class TrainingDivergence : public std::runtime_error {
public:
    explicit TrainingDivergence(const std::string& what) : std::runtime_error(what) {}
};

/// Per-agent epsilon-greedy joint action from the current windows.
JointAction eps_greedy(const Networks& nets, const ad::ParamStore& store,
                       const HistoryWindow& window, double epsilon, Rng& rng);

/// Copies the online parameters into the snapshot when step is a multiple
/// of the sync frequency. Returns true when a sync happened.
bool target_sync(const ad::ParamStore& params, ad::ParamStore& snapshot, int frequency,
                 long step);

/// Runs the full episode/update loop for the configured algorithm and
/// uncertainty set, evaluating greedily on the training env and every
/// shifted env at each checkpoint.
RunRecord train_run(const TrainConfig& config, const SimEnv& env,
                    const std::vector<SimEnv>& eval_envs,
                    const std::string& checkpoint_dir = "");

/// Greedy (epsilon = 0) mean return over episodes.
double evaluate_greedy(const Networks& nets, const ad::ParamStore& store, const SimEnv& env,
                       int episodes, int horizon, Rng& rng);

/// Fraction of sampled buffer histories where the decentralized per-agent
/// greedy joint action equals the centralized argmax of the mixed Q_tot.
double decentralized_centralized_agreement(const Networks& nets, const ad::ParamStore& store,
                                           const SimEnv& env, const ReplayBuffer& buffer,
                                           int max_samples = 256);

}  // namespace drigm
