#include "drigm/envs.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace drigm {

namespace {

/// Builds the shared 5-state structure of the worked examples: s0 with four
/// deterministic or mixed exits, four absorbing arms with fixed rewards.
TabularDecPomdp example_base(std::string name, const std::vector<double>& arm_rewards) {
    TabularDecPomdp m;
    m.name = std::move(name);
    m.n_states = 5;
    m.n_agents = 2;
    m.actions_per_agent = {2, 2};
    m.gamma = 0.9;
    m.reward_bound = 1.0;
    m.obs_map = {{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}};  // full observability

    const int na = 4;
    m.reward.assign(5 * na, 0.0);
    for (int s = 1; s <= 4; ++s)
        for (int a = 0; a < na; ++a) m.reward[s * na + a] = arm_rewards[s - 1];

    m.kernel.assign(5 * na * 5, 0.0);
    // absorbing arms
    for (int s = 1; s <= 4; ++s)
        for (int a = 0; a < na; ++a) m.mutable_row(s, a)[s] = 1.0;
    return m;
}

void deterministic_exit(TabularDecPomdp& m, int joint_action, int target) {
    auto row = m.mutable_row(0, joint_action);
    std::fill(row.begin(), row.end(), 0.0);
    row[target] = 1.0;
}

std::vector<double> random_distribution(Rng& rng, int n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) {
        x = -std::log(1.0 - rng.uniform());
        sum += x;
    }
    for (double& x : p) x /= sum;
    // renormalize exactly
    double s2 = 0.0;
    for (int i = 0; i < n - 1; ++i) s2 += p[i];
    p[n - 1] = 1.0 - s2;
    return p;
}

FeatureCodec one_hot_codec(const TabularDecPomdp& model) {
    FeatureCodec c;
    c.state_dim = model.n_states;
    c.obs_dims.resize(model.n_agents);
    c.obs_sparse.resize(model.n_agents);
    for (int i = 0; i < model.n_agents; ++i) {
        const int n_obs =
            1 + *std::max_element(model.obs_map[i].begin(), model.obs_map[i].end());
        c.obs_dims[i] = n_obs;
        c.obs_sparse[i].resize(n_obs);
        for (int o = 0; o < n_obs; ++o) c.obs_sparse[i][o] = {{o, 1.0}};
    }
    return c;
}

struct Grid {
    int n;
    int cells() const { return n * n; }
    int joint_states() const { return cells() * cells() + 2; }
    int done() const { return cells() * cells(); }
    int fail() const { return cells() * cells() + 1; }
    int pack(int p1, int p2) const { return p1 * cells() + p2; }

    /// Position after applying action a (0 stay, 1 up, 2 down, 3 left,
    /// 4 right); -1 when the move leaves the grid.
    int move(int p, int a) const {
        const int x = p % n;
        const int y = p / n;
        switch (a) {
            case 0: return p;
            case 1: return y + 1 < n ? p + n : -1;
            case 2: return y - 1 >= 0 ? p - n : -1;
            case 3: return x - 1 >= 0 ? p - 1 : -1;
            case 4: return x + 1 < n ? p + 1 : -1;
            default: throw std::invalid_argument("bad grid action");
        }
    }
};

SimEnv make_coop_grid(const EnvSpec& spec) {
    const Grid g{spec.size};
    const int cells = g.cells();
    const int S = g.joint_states();
    const int target1 = cells - 1;  // agent 0 crosses to the far corner
    const int target2 = 0;          // agent 1 crosses back
    const int goal = g.pack(target1, target2);

    TabularDecPomdp m;
    std::ostringstream nm;
    nm << "coop_grid" << spec.size << "x" << spec.size;
    m.name = nm.str();
    m.n_states = S;
    m.n_agents = 2;
    m.actions_per_agent = {5, 5};
    m.gamma = spec.gamma;
    m.fail_state = g.fail();
    m.reward_bound = 1.0;

    const int na = 25;
    m.reward.assign(static_cast<std::size_t>(S) * na, 0.0);
    m.kernel.assign(static_cast<std::size_t>(S) * na * S, 0.0);

    // observations: own position with a goal flag, sentinels for done/fail
    // obs id = position * 2 + flag; done = 2*cells, fail = 2*cells + 1
    m.obs_map.assign(2, std::vector<int>(S));
    for (int p1 = 0; p1 < cells; ++p1) {
        for (int p2 = 0; p2 < cells; ++p2) {
            const int s = g.pack(p1, p2);
            const int flag = (s == goal) ? 1 : 0;
            m.obs_map[0][s] = p1 * 2 + flag;
            m.obs_map[1][s] = p2 * 2 + flag;
        }
    }
    m.obs_map[0][g.done()] = 2 * cells;
    m.obs_map[1][g.done()] = 2 * cells;
    m.obs_map[0][g.fail()] = 2 * cells + 1;
    m.obs_map[1][g.fail()] = 2 * cells + 1;

    // absorbing done/fail
    for (int a = 0; a < na; ++a) {
        m.mutable_row(g.done(), a)[g.done()] = 1.0;
        m.mutable_row(g.fail(), a)[g.fail()] = 1.0;
    }

    const double slip_each = spec.p_slip / 5.0;
    for (int p1 = 0; p1 < cells; ++p1) {
        for (int p2 = 0; p2 < cells; ++p2) {
            const int s = g.pack(p1, p2);
            for (int a1 = 0; a1 < 5; ++a1) {
                for (int a2 = 0; a2 < 5; ++a2) {
                    const int a = a1 * 5 + a2;
                    if (s == goal) {
                        m.reward[static_cast<std::size_t>(s) * na + a] = 1.0;
                        m.mutable_row(s, a)[g.done()] = 1.0;
                        continue;
                    }
                    m.reward[static_cast<std::size_t>(s) * na + a] = -0.01;
                    auto row = m.mutable_row(s, a);
                    // realized-action distribution per agent: intended with
                    // the complement of the slip mass, uniform otherwise
                    for (int b1 = 0; b1 < 5; ++b1) {
                        const double q1 =
                            slip_each + (b1 == a1 ? 1.0 - spec.p_slip : 0.0);
                        for (int b2 = 0; b2 < 5; ++b2) {
                            const double q2 =
                                slip_each + (b2 == a2 ? 1.0 - spec.p_slip : 0.0);
                            const double pr = q1 * q2;
                            int n1 = g.move(p1, b1);
                            int n2 = g.move(p2, b2);
                            int collisions = 0;
                            if (n1 < 0) {
                                ++collisions;
                                n1 = p1;
                            }
                            if (n2 < 0) {
                                ++collisions;
                                n2 = p2;
                            }
                            if (collisions == 0) {
                                row[g.pack(n1, n2)] += pr;
                            } else {
                                const double pf =
                                    1.0 - std::pow(1.0 - spec.p_fail, collisions);
                                row[g.fail()] += pr * pf;
                                row[g.pack(n1, n2)] += pr * (1.0 - pf);
                            }
                        }
                    }
                    // exact renormalization of rounding dust
                    double sum = 0.0;
                    for (double v : row) sum += v;
                    for (double& v : row) v /= sum;
                }
            }
        }
    }

    SimEnv env;
    env.name = m.name;
    env.model = std::move(m);
    env.start_state = g.pack(0, cells - 1);
    env.horizon = spec.horizon;
    env.terminal = terminal_states(env.model);

    // compact features: own position one-hot, then goal flag, done, fail
    FeatureCodec codec;
    codec.state_dim = S;
    codec.obs_dims = {cells + 3, cells + 3};
    codec.obs_sparse.assign(2, std::vector<std::vector<std::pair<int, double>>>(2 * cells + 2));
    for (int agent = 0; agent < 2; ++agent) {
        for (int p = 0; p < cells; ++p) {
            codec.obs_sparse[agent][p * 2] = {{p, 1.0}};
            codec.obs_sparse[agent][p * 2 + 1] = {{p, 1.0}, {cells, 1.0}};
        }
        codec.obs_sparse[agent][2 * cells] = {{cells + 1, 1.0}};      // done
        codec.obs_sparse[agent][2 * cells + 1] = {{cells + 2, 1.0}};  // fail
    }
    env.codec = std::move(codec);
    return env;
}

}  // namespace

std::string EnvSpec::name() const {
    std::ostringstream os;
    os << kind;
    if (kind == "random_decpomdp")
        os << "(seed=" << seed << ",S=" << n_states << ",N=" << n_agents << ",A=" << actions
           << ")";
    if (kind == "coop_grid") os << "(" << size << "x" << size << ")";
    if (perturbation) {
        os << "+" << perturbation->kind;
        if (perturbation->kind == "obs_noise")
            os << "(sigma=" << perturbation->sigma << ")";
        else
            os << "(rho=" << perturbation->rho_test << "," << perturbation->direction << ")";
    }
    return os.str();
}

void FeatureCodec::write_obs(int agent, int obs, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& [idx, v] : obs_sparse[agent][obs]) out[idx] = v;
}

void FeatureCodec::write_state(int state, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    out[state] = 1.0;
}

TabularDecPomdp example_b1_p1() {
    TabularDecPomdp m = example_base("example_b1_p1", {0.7, 0.4, 1.0, 0.7});
    deterministic_exit(m, 0, 1);
    deterministic_exit(m, 1, 2);
    deterministic_exit(m, 2, 3);
    deterministic_exit(m, 3, 4);
    return m;
}

TabularDecPomdp example_b1_p2() {
    TabularDecPomdp m = example_base("example_b1_p2", {0.7, 0.4, 1.0, 0.7});
    deterministic_exit(m, 0, 1);
    deterministic_exit(m, 3, 4);
    auto row12 = m.mutable_row(0, 1);  // joint action (0,1)
    row12[2] = 1.0 / 3.0;
    row12[3] = 2.0 / 3.0;
    auto row21 = m.mutable_row(0, 2);  // joint action (1,0)
    row21[2] = 2.0 / 3.0;
    row21[3] = 1.0 / 3.0;
    return m;
}

UncertaintySet example_b1_set() {
    FiniteSet fs;
    fs.kernels.push_back(example_b1_p1().kernel);
    fs.kernels.push_back(example_b1_p2().kernel);
    return fs;
}

TabularDecPomdp example_b2_p1() {
    TabularDecPomdp m = example_base("example_b2_p1", {0.7, 0.4, 1.0, 0.5});
    deterministic_exit(m, 0, 1);
    deterministic_exit(m, 1, 2);
    deterministic_exit(m, 2, 3);
    deterministic_exit(m, 3, 4);
    return m;
}

TabularDecPomdp example_b2_p2() {
    // Every joint action exits to the 0.4-reward arm, which is why the
    // worst-case model regains an exact additive decomposition.
    TabularDecPomdp m = example_base("example_b2_p2", {0.7, 0.4, 1.0, 0.5});
    for (int a = 0; a < 4; ++a) deterministic_exit(m, a, 2);
    return m;
}

UncertaintySet example_b2_set() {
    FiniteSet fs;
    fs.kernels.push_back(example_b2_p1().kernel);
    fs.kernels.push_back(example_b2_p2().kernel);
    return fs;
}

TabularDecPomdp random_decpomdp(std::uint64_t seed, int n_states, int n_agents, int actions,
                                double gamma) {
    if (n_states < 2) throw std::invalid_argument("need at least two states");
    Rng rng(seed ^ 0xd1ce5bull);
    TabularDecPomdp m;
    std::ostringstream nm;
    nm << "random(seed=" << seed << ")";
    m.name = nm.str();
    m.n_states = n_states;
    m.n_agents = n_agents;
    m.actions_per_agent.assign(n_agents, actions);
    m.gamma = gamma;
    m.fail_state = n_states - 1;
    m.reward_bound = 1.0;
    m.obs_map.assign(n_agents, std::vector<int>(n_states));
    for (int i = 0; i < n_agents; ++i)
        for (int s = 0; s < n_states; ++s) m.obs_map[i][s] = s;

    const int na = m.n_joint_actions();
    m.reward.assign(static_cast<std::size_t>(n_states) * na, 0.0);
    m.kernel.assign(static_cast<std::size_t>(n_states) * na * n_states, 0.0);
    const int f = n_states - 1;
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            if (s == f) {
                m.mutable_row(s, a)[f] = 1.0;
                continue;
            }
            m.reward[static_cast<std::size_t>(s) * na + a] = rng.uniform();
            const std::vector<double> p = random_distribution(rng, n_states);
            std::copy(p.begin(), p.end(), m.mutable_row(s, a).begin());
        }
    }
    return m;
}

std::vector<bool> terminal_states(const TabularDecPomdp& model) {
    std::vector<bool> t(model.n_states, false);
    for (int s = 0; s < model.n_states; ++s) {
        if (!model.is_absorbing(s)) continue;
        bool zero = true;
        for (int a = 0; a < model.n_joint_actions(); ++a)
            if (model.r(s, a) != 0.0) zero = false;
        t[s] = zero;
    }
    return t;
}

TabularDecPomdp perturb(const TabularDecPomdp& model, const Perturbation& p) {
    if (p.kind == "obs_noise") return model;  // noise lives on features, not the kernel
    if (p.kind != "kernel_contaminate" && p.kind != "kernel_tv_shift")
        throw std::invalid_argument("unknown perturbation kind: " + p.kind);
    if (p.rho_test < 0.0 || p.rho_test > 1.0)
        throw std::invalid_argument("rho_test must lie in [0,1]");

    TabularDecPomdp out = model;
    if (p.rho_test == 0.0) return out;
    const bool toward_fail = p.direction == "toward_fail";
    if (toward_fail && !model.fail_state)
        throw std::invalid_argument("toward_fail perturbation needs a fail state");

    Rng rng(p.seed ^ 0x5eedull);
    const int na = model.n_joint_actions();
    for (int s = 0; s < model.n_states; ++s) {
        if (model.is_absorbing(s)) continue;  // keep terminal semantics intact
        for (int a = 0; a < na; ++a) {
            auto row = out.mutable_row(s, a);
            const auto nominal = model.row(s, a);
            if (p.kind == "kernel_contaminate") {
                std::vector<double> nu;
                if (toward_fail) {
                    if (nominal[*model.fail_state] <= 0.0) continue;
                    nu.assign(model.n_states, 0.0);
                    nu[*model.fail_state] = 1.0;
                } else {
                    nu = random_distribution(rng, model.n_states);
                }
                for (int i = 0; i < model.n_states; ++i)
                    row[i] = (1.0 - p.rho_test) * nominal[i] + p.rho_test * nu[i];
            } else {
                // TV shift: move exactly rho_test mass (capped by what the
                // receiver can absorb) onto one receiver state, taken
                // proportionally from the rest of the row.
                int recv;
                if (toward_fail) {
                    if (nominal[*model.fail_state] <= 0.0) continue;
                    recv = *model.fail_state;
                } else {
                    recv = rng.uniform_int(model.n_states);
                    for (int i = 0; i < model.n_states; ++i)
                        if (nominal[i] < nominal[recv]) recv = i;
                }
                const double capacity = 1.0 - nominal[recv];
                const double moved = std::min(p.rho_test, capacity);
                if (moved <= 0.0) continue;
                const double scale = 1.0 - moved / capacity;
                for (int i = 0; i < model.n_states; ++i)
                    row[i] = (i == recv) ? nominal[i] + moved : nominal[i] * scale;
            }
            double sum = 0.0;
            for (double v : row) sum += v;
            assert(std::abs(sum - 1.0) < 1e-9);
            row[model.n_states - 1] += 1.0 - sum;  // sweep rounding dust into the last entry
        }
    }
    std::ostringstream nm;
    nm << model.name << "+" << p.kind << "(" << p.rho_test << ")";
    out.name = nm.str();
    return out;
}

SimEnv make_env(const EnvSpec& spec) {
    SimEnv env;
    if (spec.kind == "example_b1") {
        env.model = example_b1_p1();
        env.start_state = 0;
        env.horizon = spec.horizon;
        env.codec = one_hot_codec(env.model);
    } else if (spec.kind == "example_b2") {
        env.model = example_b2_p1();
        env.start_state = 0;
        env.horizon = spec.horizon;
        env.codec = one_hot_codec(env.model);
    } else if (spec.kind == "random_decpomdp") {
        env.model = random_decpomdp(spec.seed, spec.n_states, spec.n_agents, spec.actions,
                                    spec.gamma);
        env.start_state = 0;
        env.horizon = spec.horizon;
        env.codec = one_hot_codec(env.model);
    } else if (spec.kind == "coop_grid") {
        env = make_coop_grid(spec);
    } else {
        throw std::invalid_argument("unknown env kind: " + spec.kind);
    }

    if (spec.perturbation) {
        if (spec.perturbation->kind == "obs_noise") {
            env.obs_noise_sigma = spec.perturbation->sigma;
        } else {
            env.model = perturb(env.model, *spec.perturbation);
        }
    }
    env.terminal = terminal_states(env.model);
    env.name = spec.name();
    const ValidationReport rep = validate(env.model);
    if (!rep.ok) throw std::logic_error("constructed env fails validation: " + rep.violation);
    return env;
}

double simulate_policy_return(const SimEnv& env, const std::vector<int>& policy, int episodes,
                              Rng& rng) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        int s = env.start_state;
        for (int t = 0; t < env.horizon; ++t) {
            if (env.terminal[s]) break;
            const StepResult r = step_indexed(env.model, s, policy[s], rng);
            total += r.reward;
            s = r.next_state;
        }
    }
    return total / episodes;
}

}  // namespace drigm
