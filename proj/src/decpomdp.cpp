#include "drigm/decpomdp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace drigm {

namespace {

std::string action_tuple_str(const TabularDecPomdp& model, int joint_index) {
    const JointAction a = model.decode_action(joint_index);
    std::string s = "(";
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(a[i]);
    }
    return s + ")";
}

}  // namespace

int TabularDecPomdp::encode_action(std::span<const int> per_agent) const {
    if (static_cast<int>(per_agent.size()) != n_agents)
        throw std::invalid_argument("joint action has wrong number of agents");
    int idx = 0;
    for (int i = 0; i < n_agents; ++i) {
        if (per_agent[i] < 0 || per_agent[i] >= actions_per_agent[i])
            throw std::invalid_argument("action id out of range for agent " + std::to_string(i));
        idx = idx * actions_per_agent[i] + per_agent[i];
    }
    return idx;
}

JointAction TabularDecPomdp::decode_action(int joint_index) const {
    JointAction a(n_agents);
    for (int i = n_agents - 1; i >= 0; --i) {
        a[i] = joint_index % actions_per_agent[i];
        joint_index /= actions_per_agent[i];
    }
    return a;
}

bool TabularDecPomdp::is_absorbing(int state) const {
    for (int a = 0; a < n_joint_actions(); ++a) {
        if (std::abs(row(state, a)[state] - 1.0) > 1e-12) return false;
    }
    return true;
}

double TabularDecPomdp::max_abs_reward() const {
    double m = 0.0;
    for (double r : reward) m = std::max(m, std::abs(r));
    return m;
}

ValidationReport validate(const TabularDecPomdp& model) {
    auto fail = [](std::string msg) { return ValidationReport{false, std::move(msg)}; };

    if (model.n_states <= 0) return fail("n_states must be positive");
    if (model.n_agents <= 0) return fail("n_agents must be positive");
    if (static_cast<int>(model.actions_per_agent.size()) != model.n_agents)
        return fail("actions_per_agent size mismatch");
    for (int i = 0; i < model.n_agents; ++i)
        if (model.actions_per_agent[i] <= 0)
            return fail("agent " + std::to_string(i) + " has no actions");
    if (!(model.gamma > 0.0 && model.gamma < 1.0)) return fail("gamma must lie in (0,1)");

    const int na = model.n_joint_actions();
    const std::size_t want_reward = static_cast<std::size_t>(model.n_states) * na;
    if (model.reward.size() != want_reward) return fail("reward table has wrong size");
    if (model.kernel.size() != want_reward * model.n_states)
        return fail("kernel table has wrong size");

    for (double r : model.reward) {
        if (!std::isfinite(r)) return fail("non-finite reward entry");
        if (std::abs(r) > model.reward_bound + 1e-12)
            return fail("reward exceeds declared reward_bound");
    }

    // kernel stochasticity
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            double sum = 0.0;
            for (double p : model.row(s, a)) {
                if (p < 0.0)
                    return fail("negative kernel entry at row (s" + std::to_string(s) + "," +
                                action_tuple_str(model, a) + ")");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-12) {
                std::ostringstream os;
                os << "row (s" << s << "," << action_tuple_str(model, a) << ") sums to " << sum;
                return fail(os.str());
            }
        }
    }

    // fail state: zero reward, absorbing under every action
    if (model.fail_state) {
        const int f = *model.fail_state;
        if (f < 0 || f >= model.n_states) return fail("fail_state id out of range");
        for (int a = 0; a < na; ++a) {
            if (model.r(f, a) != 0.0)
                return fail("fail state has nonzero reward under action " +
                            action_tuple_str(model, a));
            if (std::abs(model.row(f, a)[f] - 1.0) > 1e-12)
                return fail("fail state is not absorbing under action " +
                            action_tuple_str(model, a));
        }
    }

    // joint observation injectivity
    if (static_cast<int>(model.obs_map.size()) != model.n_agents)
        return fail("obs_map must have one entry per agent");
    for (int i = 0; i < model.n_agents; ++i)
        if (static_cast<int>(model.obs_map[i].size()) != model.n_states)
            return fail("obs_map for agent " + std::to_string(i) + " has wrong size");
    std::map<std::vector<int>, int> seen;
    for (int s = 0; s < model.n_states; ++s) {
        std::vector<int> joint(model.n_agents);
        for (int i = 0; i < model.n_agents; ++i) joint[i] = model.obs_map[i][s];
        auto [it, inserted] = seen.emplace(std::move(joint), s);
        if (!inserted)
            return fail("joint observation of s" + std::to_string(s) + " collides with s" +
                        std::to_string(it->second));
    }

    return {};
}

StepResult step_indexed(const TabularDecPomdp& model, int state, int joint_index, Rng& rng) {
    if (state < 0 || state >= model.n_states) throw std::invalid_argument("invalid state id");
    if (joint_index < 0 || joint_index >= model.n_joint_actions())
        throw std::invalid_argument("invalid joint action index");
    const int next = rng.categorical(model.row(state, joint_index));
    return {next, model.r(state, joint_index)};
}

StepResult step(const TabularDecPomdp& model, int state, const JointAction& joint_action,
                Rng& rng) {
    return step_indexed(model, state, model.encode_action(joint_action), rng);
}

std::vector<int> observe(const TabularDecPomdp& model, int state) {
    if (state < 0 || state >= model.n_states) throw std::invalid_argument("invalid state id");
    std::vector<int> obs(model.n_agents);
    for (int i = 0; i < model.n_agents; ++i) obs[i] = model.obs_map[i][state];
    return obs;
}

ObservationDecoder::ObservationDecoder(const TabularDecPomdp& model) {
    for (int s = 0; s < model.n_states; ++s) inverse_[observe(model, s)] = s;
}

int ObservationDecoder::decode(const std::vector<int>& joint_obs) const {
    auto it = inverse_.find(joint_obs);
    if (it == inverse_.end())
        throw std::out_of_range("joint observation is not in the image of the observation map");
    return it->second;
}

std::string to_json(const TabularDecPomdp& model) {
    nlohmann::json j;
    j["schema"] = "drigm-model-v1";
    j["name"] = model.name;
    j["n_states"] = model.n_states;
    j["n_agents"] = model.n_agents;
    j["actions_per_agent"] = model.actions_per_agent;
    j["gamma"] = model.gamma;
    if (model.fail_state)
        j["fail_state"] = *model.fail_state;
    else
        j["fail_state"] = nullptr;
    j["reward_bound"] = model.reward_bound;
    j["obs_map"] = model.obs_map;
    j["reward"] = model.reward;
    j["kernel"] = model.kernel;
    return j.dump(2);
}

TabularDecPomdp model_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("schema", "") != "drigm-model-v1")
        throw std::runtime_error("unsupported model schema");
    TabularDecPomdp m;
    m.name = j.value("name", "");
    m.n_states = j.at("n_states").get<int>();
    m.n_agents = j.at("n_agents").get<int>();
    m.actions_per_agent = j.at("actions_per_agent").get<std::vector<int>>();
    m.gamma = j.at("gamma").get<double>();
    if (!j.at("fail_state").is_null()) m.fail_state = j.at("fail_state").get<int>();
    m.reward_bound = j.at("reward_bound").get<double>();
    m.obs_map = j.at("obs_map").get<std::vector<std::vector<int>>>();
    m.reward = j.at("reward").get<std::vector<double>>();
    m.kernel = j.at("kernel").get<std::vector<double>>();
    return m;
}

void save_model(const TabularDecPomdp& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json(model) << "\n";
}

TabularDecPomdp load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

}  // namespace drigm
