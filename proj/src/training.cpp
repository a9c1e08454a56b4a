#include "drigm/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace drigm {

using ad::ParamStore;
using ad::Tape;
using ad::Tensor;
using ad::Value;

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
    storage_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
    if (filled_ < static_cast<std::size_t>(capacity_)) {
        storage_.push_back(std::move(t));
        ++filled_;
    } else {
        storage_[next_] = std::move(t);  // strict FIFO overwrite
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<int> ReplayBuffer::sample_indices(int batch, Rng& rng) const {
    const int n = size();
    if (batch > n) throw std::invalid_argument("batch larger than buffer contents");
    // partial Fisher-Yates over [0, n)
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < batch; ++i) {
        const int j = i + rng.uniform_int(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(batch);
    return idx;
}

// ---------------------------------------------------------------------------
// TrainConfig / RunRecord

void TrainConfig::validate() const {
    if (algorithm != "vdn" && algorithm != "qmix" && algorithm != "qtran")
        throw std::invalid_argument("algorithm must be vdn, qmix, or qtran");
    if (uncertainty != "none" && uncertainty != "contamination" && uncertainty != "tv")
        throw std::invalid_argument("uncertainty must be none, contamination, or tv");
    if (uncertainty == "tv" && !(rho > 0.0 && rho <= 1.0))
        throw std::invalid_argument("tv uncertainty needs rho in (0,1]");
    if (uncertainty == "contamination" && !(rho >= 0.0 && rho <= 1.0))
        throw std::invalid_argument("contamination needs rho in [0,1]");
    if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0,1)");
    if (episodes <= 0 || batch_size <= 0 || buffer_capacity <= 0 || target_sync <= 0 ||
        update_period <= 0 || window <= 0 || hidden <= 0 || eval_episodes <= 0)
        throw std::invalid_argument("config counts must be positive");
    if (batch_size > buffer_capacity)
        throw std::invalid_argument("batch size exceeds buffer capacity");
}

namespace {

nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"algorithm", c.algorithm},
            {"uncertainty", c.uncertainty},
            {"rho", c.rho},
            {"gamma", c.gamma},
            {"episodes", c.episodes},
            {"horizon", c.horizon},
            {"batch_size", c.batch_size},
            {"buffer_capacity", c.buffer_capacity},
            {"target_sync", c.target_sync},
            {"update_period", c.update_period},
            {"min_buffer", c.min_buffer},
            {"lr_agents", c.lr_agents},
            {"lr_aux", c.lr_aux},
            {"window", c.window},
            {"hidden", c.hidden},
            {"mix_embed", c.mix_embed},
            {"eps_start", c.eps_start},
            {"eps_end", c.eps_end},
            {"eps_anneal_steps", c.eps_anneal_steps},
            {"eval_every", c.eval_every},
            {"eval_episodes", c.eval_episodes},
            {"seed", c.seed}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.algorithm = j.at("algorithm").get<std::string>();
    c.uncertainty = j.at("uncertainty").get<std::string>();
    c.rho = j.at("rho").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.episodes = j.at("episodes").get<int>();
    c.horizon = j.at("horizon").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.buffer_capacity = j.at("buffer_capacity").get<int>();
    c.target_sync = j.at("target_sync").get<int>();
    c.update_period = j.at("update_period").get<int>();
    c.min_buffer = j.at("min_buffer").get<int>();
    c.lr_agents = j.at("lr_agents").get<double>();
    c.lr_aux = j.at("lr_aux").get<double>();
    c.window = j.at("window").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.mix_embed = j.at("mix_embed").get<int>();
    c.eps_start = j.at("eps_start").get<double>();
    c.eps_end = j.at("eps_end").get<double>();
    c.eps_anneal_steps = j.at("eps_anneal_steps").get<long>();
    c.eval_every = j.at("eval_every").get<long>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

std::string RunRecord::to_json() const {
    nlohmann::json j;
    j["schema"] = "drigm-run-v1";
    j["config"] = config_to_json(config);
    j["train_env"] = train_env;
    j["eval_envs"] = eval_envs;
    nlohmann::json cps = nlohmann::json::array();
    for (const auto& c : checkpoints) {
        cps.push_back({{"step", c.step},
                       {"epsilon", c.epsilon},
                       {"td_loss", c.td_loss},
                       {"dual_loss", c.dual_loss},
                       {"train_return", c.train_return},
                       {"eval_returns", c.eval_returns}});
    }
    j["checkpoints"] = std::move(cps);
    j["final_train_return"] = final_train_return;
    j["final_eval_returns"] = final_eval_returns;
    j["checkpoint_path"] = checkpoint_path;
    return j.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "drigm-run-v1")
        throw std::runtime_error("unsupported run record schema");
    RunRecord r;
    r.config = config_from_json(j.at("config"));
    r.train_env = j.at("train_env").get<std::string>();
    r.eval_envs = j.at("eval_envs").get<std::vector<std::string>>();
    for (const auto& c : j.at("checkpoints")) {
        CheckpointMetrics m;
        m.step = c.at("step").get<long>();
        m.epsilon = c.at("epsilon").get<double>();
        m.td_loss = c.at("td_loss").get<double>();
        m.dual_loss = c.at("dual_loss").get<double>();
        m.train_return = c.at("train_return").get<double>();
        m.eval_returns = c.at("eval_returns").get<std::map<std::string, double>>();
        r.checkpoints.push_back(std::move(m));
    }
    r.final_train_return = j.at("final_train_return").get<double>();
    r.final_eval_returns = j.at("final_eval_returns").get<std::map<std::string, double>>();
    r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    return r;
}

// ---------------------------------------------------------------------------
// HistoryWindow

HistoryWindow::HistoryWindow(const SimEnv& env, int window) : env_(&env), window_(window) {
    const int n = env.model.n_agents;
    slot_dims_.resize(n);
    inputs_.resize(n);
    for (int i = 0; i < n; ++i) {
        slot_dims_[i] = env.codec.obs_dims[i] + env.model.actions_per_agent[i];
        inputs_[i].assign(static_cast<std::size_t>(window) * slot_dims_[i], 0.0);
    }
}

void HistoryWindow::reset() {
    for (auto& v : inputs_) std::fill(v.begin(), v.end(), 0.0);
    length_ = 0;
}

void HistoryWindow::push(int state, const std::vector<int>& prev_actions, Rng* noise_rng,
                         double noise_sigma) {
    for (int i = 0; i < env_->model.n_agents; ++i) {
        auto& buf = inputs_[i];
        const int slot = slot_dims_[i];
        std::copy(buf.begin() + slot, buf.end(), buf.begin());
        double* out = buf.data() + buf.size() - slot;
        const int obs = env_->model.obs_map[i][state];
        env_->codec.write_obs(i, obs, {out, static_cast<std::size_t>(env_->codec.obs_dims[i])});
        if (noise_rng && noise_sigma > 0.0)
            for (int k = 0; k < env_->codec.obs_dims[i]; ++k)
                out[k] += noise_rng->gaussian(0.0, noise_sigma);
        double* act = out + env_->codec.obs_dims[i];
        std::fill(act, act + env_->model.actions_per_agent[i], 0.0);
        if (!prev_actions.empty()) act[prev_actions[i]] = 1.0;
    }
    ++length_;
}

// ---------------------------------------------------------------------------
// Policies and synchronization

namespace {

int argmax_row(const Tensor& t, int row) {
    int best = 0;
    for (int j = 1; j < t.cols; ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

Tensor single_row(const std::vector<double>& v) {
    return Tensor(1, static_cast<int>(v.size()), v);
}

}  // namespace

JointAction eps_greedy(const Networks& nets, const ParamStore& store,
                       const HistoryWindow& window, double epsilon, Rng& rng) {
    const NetConfig& cfg = nets.config();
    JointAction a(cfg.n_agents);
    for (int i = 0; i < cfg.n_agents; ++i) {
        if (epsilon > 0.0 && rng.uniform() < epsilon) {
            a[i] = rng.uniform_int(cfg.n_actions[i]);
            continue;
        }
        Tape tape;
        const Value q =
            nets.agent_q(tape, store, i, tape.input(single_row(window.agent_input(i))), false);
        a[i] = argmax_row(tape.value(q), 0);
    }
    return a;
}

bool target_sync(const ParamStore& params, ParamStore& snapshot, int frequency, long step) {
    if (frequency < 1) throw std::invalid_argument("sync frequency must be >= 1");
    if (step % frequency != 0) return false;
    snapshot.assign_from(params);
    return true;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct Batch {
    int size = 0;
    std::vector<Tensor> inputs;       // per agent (B x in)
    std::vector<Tensor> next_inputs;  // per agent (B x in)
    std::vector<std::vector<int>> chosen;  // per agent, action per row
    std::vector<int> joint_actions;
    std::vector<double> rewards;
    std::vector<bool> terminals;
    Tensor state_feats;       // (B x state_dim)
    Tensor next_state_feats;  // (B x state_dim)
    Tensor action_onehots;    // (B x sum n_actions)
};

Batch assemble_batch(const ReplayBuffer& buffer, const std::vector<int>& indices,
                     const SimEnv& env, const NetConfig& cfg) {
    Batch b;
    b.size = static_cast<int>(indices.size());
    const int n = cfg.n_agents;
    b.inputs.reserve(n);
    b.next_inputs.reserve(n);
    for (int i = 0; i < n; ++i) {
        b.inputs.emplace_back(b.size, cfg.agent_input_dim(i));
        b.next_inputs.emplace_back(b.size, cfg.agent_input_dim(i));
    }
    b.chosen.assign(n, std::vector<int>(b.size));
    b.joint_actions.resize(b.size);
    b.rewards.resize(b.size);
    b.terminals.resize(b.size);
    b.state_feats = Tensor(b.size, cfg.state_dim);
    b.next_state_feats = Tensor(b.size, cfg.state_dim);
    b.action_onehots = Tensor(b.size, cfg.joint_action_onehot_dim());

    for (int row = 0; row < b.size; ++row) {
        const Transition& t = buffer.at(indices[row]);
        for (int i = 0; i < n; ++i) {
            std::copy(t.agent_inputs[i].begin(), t.agent_inputs[i].end(),
                      b.inputs[i].data.begin() + static_cast<std::size_t>(row) *
                                                     cfg.agent_input_dim(i));
            std::copy(t.next_agent_inputs[i].begin(), t.next_agent_inputs[i].end(),
                      b.next_inputs[i].data.begin() + static_cast<std::size_t>(row) *
                                                          cfg.agent_input_dim(i));
            b.chosen[i][row] = t.actions[i];
        }
        b.joint_actions[row] = t.joint_action;
        b.rewards[row] = t.reward;
        b.terminals[row] = t.terminal;
        env.codec.write_state(t.state,
                              {b.state_feats.data.data() +
                                   static_cast<std::size_t>(row) * cfg.state_dim,
                               static_cast<std::size_t>(cfg.state_dim)});
        env.codec.write_state(t.next_state,
                              {b.next_state_feats.data.data() +
                                   static_cast<std::size_t>(row) * cfg.state_dim,
                               static_cast<std::size_t>(cfg.state_dim)});
        int off = 0;
        for (int i = 0; i < n; ++i) {
            b.action_onehots.at(row, off + t.actions[i]) = 1.0;
            off += cfg.n_actions[i];
        }
    }
    return b;
}

Tensor greedy_onehots(const NetConfig& cfg, const std::vector<std::vector<int>>& greedy,
                      int batch) {
    Tensor t(batch, cfg.joint_action_onehot_dim());
    for (int row = 0; row < batch; ++row) {
        int off = 0;
        for (int i = 0; i < cfg.n_agents; ++i) {
            t.at(row, off + greedy[i][row]) = 1.0;
            off += cfg.n_actions[i];
        }
    }
    return t;
}

/// Q_tot(h', abar') under the target parameters, where abar' stacks the
/// per-agent greedy actions of the target utilities (the decentralized
/// argmax that DrIGM licenses).
std::vector<double> target_q_next(Tape& tape, const Networks& nets, const ParamStore& target,
                                  const Batch& b) {
    const NetConfig& cfg = nets.config();
    std::vector<std::vector<int>> greedy(cfg.n_agents, std::vector<int>(b.size));
    std::vector<Value> chosen_vals;
    std::vector<Value> feats;
    for (int i = 0; i < cfg.n_agents; ++i) {
        const Value f =
            nets.agent_features(tape, target, i, tape.input(b.next_inputs[i]), false);
        const Value q = nets.agent_head(tape, target, i, f, false);
        const Tensor& qv = tape.value(q);
        for (int row = 0; row < b.size; ++row) greedy[i][row] = argmax_row(qv, row);
        chosen_vals.push_back(tape.select_cols(q, greedy[i]));
        feats.push_back(f);
    }

    Value q_next{};
    if (cfg.mixer == MixerKind::VDN) {
        q_next = tape.sum_cols(tape.concat_cols(chosen_vals));
    } else if (cfg.mixer == MixerKind::QMIX) {
        q_next = nets.qmix_mix(tape, target, tape.concat_cols(chosen_vals),
                               tape.input(b.next_state_feats), false);
    } else {
        Value fsum = feats[0];
        for (int i = 1; i < cfg.n_agents; ++i) fsum = tape.add(fsum, feats[i]);
        q_next = nets.qtran_joint(tape, target, fsum,
                                  tape.input(greedy_onehots(cfg, greedy, b.size)), false);
    }
    const Tensor& qv = tape.value(q_next);
    return qv.data;
}

struct LossAccum {
    double sum = 0.0;
    long count = 0;
    void add(double v) {
        sum += v;
        ++count;
    }
    double mean_and_reset() {
        const double m = count ? sum / count : 0.0;
        sum = 0.0;
        count = 0;
        return m;
    }
};

}  // namespace

double evaluate_greedy(const Networks& nets, const ParamStore& store, const SimEnv& env,
                       int episodes, int horizon, Rng& rng) {
    HistoryWindow win(env, nets.config().window);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        int s = env.start_state;
        win.reset();
        win.push(s, {}, &rng, env.obs_noise_sigma);
        for (int t = 0; t < horizon; ++t) {
            if (env.terminal[s]) break;
            const JointAction a = eps_greedy(nets, store, win, 0.0, rng);
            const StepResult sr = step(env.model, s, a, rng);
            total += sr.reward;
            win.push(sr.next_state, a, &rng, env.obs_noise_sigma);
            s = sr.next_state;
        }
    }
    return total / episodes;
}

double decentralized_centralized_agreement(const Networks& nets, const ParamStore& store,
                                           const SimEnv& env, const ReplayBuffer& buffer,
                                           int max_samples) {
    const NetConfig& cfg = nets.config();
    const int n_joint = env.model.n_joint_actions();
    const int count = std::min(max_samples, buffer.size());
    if (count == 0) return 1.0;
    int agree = 0;
    for (int idx = 0; idx < count; ++idx) {
        const Transition& t = buffer.at(idx);
        Tape tape;
        std::vector<Tensor> qvals;
        std::vector<int> greedy(cfg.n_agents);
        for (int i = 0; i < cfg.n_agents; ++i) {
            const Value q =
                nets.agent_q(tape, store, i, tape.input(single_row(t.agent_inputs[i])), false);
            qvals.push_back(tape.value(q));
            greedy[i] = argmax_row(qvals.back(), 0);
        }
        const int decentralized = env.model.encode_action(greedy);

        int central = 0;
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> state_feats(cfg.state_dim);
        env.codec.write_state(t.state, state_feats);
        for (int a = 0; a < n_joint; ++a) {
            const JointAction ja = env.model.decode_action(a);
            double q_tot;
            if (cfg.mixer == MixerKind::QMIX) {
                Tensor qrow(1, cfg.n_agents);
                for (int i = 0; i < cfg.n_agents; ++i) qrow.at(0, i) = qvals[i].at(0, ja[i]);
                const Value mixed = nets.qmix_mix(tape, store, tape.input(qrow),
                                                  tape.input(single_row(state_feats)), false);
                q_tot = tape.value(mixed).data[0];
            } else {
                q_tot = 0.0;
                for (int i = 0; i < cfg.n_agents; ++i) q_tot += qvals[i].at(0, ja[i]);
            }
            if (q_tot > best) {
                best = q_tot;
                central = a;
            }
        }
        if (central == decentralized) ++agree;
    }
    return static_cast<double>(agree) / count;
}

RunRecord train_run(const TrainConfig& config, const SimEnv& env,
                    const std::vector<SimEnv>& eval_envs, const std::string& checkpoint_dir) {
    config.validate();
    const double gamma = config.gamma > 0.0 ? config.gamma : env.model.gamma;
    const int horizon = config.horizon > 0 ? config.horizon : env.horizon;
    const double rho = config.uncertainty == "none" ? 0.0 : config.rho;
    const bool tv = config.uncertainty == "tv";

    NetConfig netcfg;
    netcfg.n_agents = env.model.n_agents;
    netcfg.n_actions = env.model.actions_per_agent;
    netcfg.obs_dims = env.codec.obs_dims;
    netcfg.state_dim = env.codec.state_dim;
    netcfg.window = config.window;
    netcfg.hidden = config.hidden;
    netcfg.mix_embed = config.mix_embed;
    netcfg.mixer = mixer_from_string(config.algorithm);
    netcfg.dual_net = tv;
    if (tv) netcfg.eta_upper = tv_dual_upper_bound(rho, gamma);

    Rng master(config.seed);
    Rng rng_init = master.split();
    Rng rng_act = master.split();   // exploration and environment stepping
    Rng rng_sample = master.split();
    Rng rng_eval = master.split();

    Networks nets(netcfg, rng_init);
    ParamStore& theta = nets.params();
    ParamStore target = theta.snapshot();

    ad::Optimizer opt_main = ad::Optimizer::rmsprop({config.lr_agents, 0.99, 1e-8});
    ad::Optimizer opt_aux = ad::Optimizer::adam({config.lr_aux, 0.9, 0.999, 1e-8});
    ad::Optimizer opt_dual = ad::Optimizer::adam({config.lr_aux, 0.9, 0.999, 1e-8});

    ReplayBuffer buffer(config.buffer_capacity);
    HistoryWindow win(env, config.window);
    const EpsilonSchedule schedule{config.eps_start, config.eps_end, config.eps_anneal_steps};

    RunRecord rec;
    rec.config = config;
    rec.train_env = env.name;
    for (const SimEnv& e : eval_envs) rec.eval_envs.push_back(e.name);

    LossAccum td_acc, dual_acc;
    long env_steps = 0;
    long updates = 0;

    auto save_diagnostic = [&]() {
        if (checkpoint_dir.empty()) return std::string();
        std::filesystem::create_directories(checkpoint_dir);
        const std::string path = checkpoint_dir + "/diverged.json";
        theta.save(path);
        return path;
    };

    auto apply_split_grads = [&](const std::map<std::string, Tensor>& grads) {
        std::map<std::string, Tensor> main_g, aux_g, dual_g;
        for (const auto& [name, g] : grads) {
            if (name.rfind("dual.", 0) == 0)
                dual_g.emplace(name, g);
            else if (name.rfind("qtran.", 0) == 0)
                aux_g.emplace(name, g);
            else
                main_g.emplace(name, g);
        }
        if (!main_g.empty()) opt_main.step(theta, main_g);
        if (!aux_g.empty()) opt_aux.step(theta, aux_g);
        if (!dual_g.empty()) opt_dual.step(theta, dual_g);
    };

    auto dual_update = [&]() {
        const std::vector<int> indices = buffer.sample_indices(config.batch_size, rng_sample);
        const Batch b = assemble_batch(buffer, indices, env, netcfg);
        Tape tape;
        std::vector<double> q_max = target_q_next(tape, nets, target, b);
        for (int i = 0; i < b.size; ++i)
            if (b.terminals[i]) q_max[i] = 0.0;
        const Value eta = nets.dual_eta(tape, theta, tape.input(b.state_feats),
                                        tape.input(b.action_onehots), true);
        const Value loss = dual_loss(tape, eta, q_max, rho);
        const double lv = tape.value(loss).data[0];
        if (!std::isfinite(lv)) throw TrainingDivergence("dual loss diverged");
        dual_acc.add(lv);
        tape.backward(loss);
        apply_split_grads(tape.param_grads());
    };

    auto td_update = [&]() {
        const std::vector<int> indices = buffer.sample_indices(config.batch_size, rng_sample);
        const Batch b = assemble_batch(buffer, indices, env, netcfg);
        Tape tape;

        // target side
        const std::vector<double> q_next = target_q_next(tape, nets, target, b);
        std::vector<double> eta(b.size, 0.0);
        if (tv) {
            const Value e = nets.dual_eta(tape, theta, tape.input(b.state_feats),
                                          tape.input(b.action_onehots), false);
            eta = tape.value(e).data;
        }
        std::vector<double> y(b.size);
        for (int i = 0; i < b.size; ++i) {
            if (b.terminals[i]) {
                y[i] = b.rewards[i];
            } else if (tv) {
                y[i] = robust_td_target_tv(b.rewards[i], gamma, rho, eta[i], q_next[i]);
            } else {
                y[i] = robust_td_target_contamination(b.rewards[i], gamma, rho, q_next[i]);
            }
        }

        // online side
        std::vector<Value> feats, heads, chosen_vals;
        for (int i = 0; i < netcfg.n_agents; ++i) {
            const Value f = nets.agent_features(tape, theta, i, tape.input(b.inputs[i]), true);
            const Value q = nets.agent_head(tape, theta, i, f, true);
            feats.push_back(f);
            heads.push_back(q);
            chosen_vals.push_back(tape.select_cols(q, b.chosen[i]));
        }

        Value pred{};
        if (netcfg.mixer == MixerKind::VDN) {
            pred = tape.sum_cols(tape.concat_cols(chosen_vals));
        } else if (netcfg.mixer == MixerKind::QMIX) {
            pred = nets.qmix_mix(tape, theta, tape.concat_cols(chosen_vals),
                                 tape.input(b.state_feats), true);
        } else {
            Value fsum = feats[0];
            for (int i = 1; i < netcfg.n_agents; ++i) fsum = tape.add(fsum, feats[i]);
            pred = nets.qtran_joint(tape, theta, fsum, tape.input(b.action_onehots), true);
        }

        Value loss = td_loss(tape, pred, y);

        if (netcfg.mixer == MixerKind::QTRAN) {
            // online per-agent greedy actions define abar
            std::vector<std::vector<int>> greedy(netcfg.n_agents, std::vector<int>(b.size));
            std::vector<bool> taken_is_greedy(b.size, true);
            for (int i = 0; i < netcfg.n_agents; ++i) {
                const Tensor& qv = tape.value(heads[i]);
                for (int row = 0; row < b.size; ++row) {
                    greedy[i][row] = argmax_row(qv, row);
                    if (greedy[i][row] != b.chosen[i][row]) taken_is_greedy[row] = false;
                }
            }
            std::vector<Value> greedy_vals;
            for (int i = 0; i < netcfg.n_agents; ++i)
                greedy_vals.push_back(tape.select_cols(heads[i], greedy[i]));
            const Value sum_greedy = tape.sum_cols(tape.concat_cols(greedy_vals));
            const Value sum_taken = tape.sum_cols(tape.concat_cols(chosen_vals));

            Value fsum_ng = feats[0];
            for (int i = 1; i < netcfg.n_agents; ++i) fsum_ng = tape.add(fsum_ng, feats[i]);
            const Tensor greedy_oh = greedy_onehots(netcfg, greedy, b.size);
            const Value joint_greedy = tape.stop_gradient(
                nets.qtran_joint(tape, theta, fsum_ng, tape.input(greedy_oh), true));
            const Value joint_taken = tape.stop_gradient(pred);
            const Value v_tot = nets.qtran_v(tape, theta, fsum_ng,
                                             tape.input(b.state_feats), true);

            const std::vector<bool> all_greedy(b.size, true);
            const Value l_opt =
                qtran_losses(tape, sum_greedy, joint_greedy, v_tot, all_greedy).l_opt;
            const Value l_nopt =
                qtran_losses(tape, sum_taken, joint_taken, v_tot, taken_is_greedy).l_nopt;
            loss = tape.add(tape.add(loss, l_opt), l_nopt);
        }

        const double lv = tape.value(loss).data[0];
        if (!std::isfinite(lv)) throw TrainingDivergence("TD loss diverged");
        td_acc.add(lv);
        tape.backward(loss);
        apply_split_grads(tape.param_grads());
    };

    auto run_checkpoint = [&](long step) {
        CheckpointMetrics m;
        m.step = step;
        m.epsilon = schedule.value(step);
        m.td_loss = td_acc.mean_and_reset();
        m.dual_loss = dual_acc.mean_and_reset();
        m.train_return =
            evaluate_greedy(nets, theta, env, config.eval_episodes, horizon, rng_eval);
        for (const SimEnv& e : eval_envs)
            m.eval_returns[e.name] =
                evaluate_greedy(nets, theta, e, config.eval_episodes, e.horizon, rng_eval);
        rec.checkpoints.push_back(std::move(m));
    };

    try {
        for (int episode = 0; episode < config.episodes; ++episode) {
            int s = env.start_state;
            win.reset();
            win.push(s, {}, nullptr, 0.0);
            for (int t = 0; t < horizon; ++t) {
                if (env.terminal[s]) break;
                const double eps = schedule.value(env_steps);
                const JointAction a = eps_greedy(nets, theta, win, eps, rng_act);
                const int ja = env.model.encode_action(a);
                const StepResult sr = step_indexed(env.model, s, ja, rng_act);

                const bool trainable = win.fully_populated();
                Transition tr;
                if (trainable) {
                    tr.agent_inputs.resize(netcfg.n_agents);
                    for (int i = 0; i < netcfg.n_agents; ++i)
                        tr.agent_inputs[i] = win.agent_input(i);
                }
                win.push(sr.next_state, a, nullptr, 0.0);
                if (trainable) {
                    tr.next_agent_inputs.resize(netcfg.n_agents);
                    for (int i = 0; i < netcfg.n_agents; ++i)
                        tr.next_agent_inputs[i] = win.agent_input(i);
                    tr.state = s;
                    tr.next_state = sr.next_state;
                    tr.actions = a;
                    tr.joint_action = ja;
                    tr.reward = sr.reward;
                    tr.terminal = env.terminal[sr.next_state];
                    buffer.push(std::move(tr));
                }

                ++env_steps;
                if (buffer.size() >= std::max(config.min_buffer, config.batch_size) &&
                    env_steps % config.update_period == 0) {
                    if (tv) dual_update();
                    td_update();
                    ++updates;
                    target_sync(theta, target, config.target_sync, updates);
                }
                if (env_steps % config.eval_every == 0) run_checkpoint(env_steps);
                s = sr.next_state;
            }
        }
    } catch (const TrainingDivergence&) {
        save_diagnostic();
        throw;
    }

    run_checkpoint(env_steps);
    rec.final_train_return = rec.checkpoints.back().train_return;
    rec.final_eval_returns = rec.checkpoints.back().eval_returns;

    if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        std::ostringstream name;
        name << checkpoint_dir << "/params_seed" << config.seed << ".json";
        theta.save(name.str());
        rec.checkpoint_path = name.str();
    }
    return rec;
}

}  // namespace drigm
