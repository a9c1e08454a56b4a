#include "drigm/factorization.hpp"

#include <cmath>
#include <stdexcept>

namespace drigm {

using ad::Tape;
using ad::Tensor;
using ad::Value;

MixerKind mixer_from_string(const std::string& s) {
    if (s == "vdn") return MixerKind::VDN;
    if (s == "qmix") return MixerKind::QMIX;
    if (s == "qtran") return MixerKind::QTRAN;
    throw std::invalid_argument("unknown mixer: " + s);
}

std::string to_string(MixerKind k) {
    switch (k) {
        case MixerKind::VDN: return "vdn";
        case MixerKind::QMIX: return "qmix";
        default: return "qtran";
    }
}

void init_linear(ad::ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w(in, out);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    Tensor b(1, out);
    for (double& v : b.data) v = rng.uniform(-bound, bound);
    store.create(prefix + ".W", std::move(w));
    store.create(prefix + ".b", std::move(b));
}

Value linear(Tape& tape, const ad::ParamStore& store, const std::string& prefix, Value x,
             bool trainable) {
    const Value w = trainable ? tape.param(store, prefix + ".W")
                              : tape.input(store.get(prefix + ".W"));
    const Value b = trainable ? tape.param(store, prefix + ".b")
                              : tape.input(store.get(prefix + ".b"));
    return tape.add(tape.matmul(x, w), b);
}

Networks::Networks(NetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (static_cast<int>(cfg_.n_actions.size()) != cfg_.n_agents ||
        static_cast<int>(cfg_.obs_dims.size()) != cfg_.n_agents)
        throw std::invalid_argument("per-agent dimension lists must match n_agents");
    if (cfg_.share_agent_params) {
        for (int i = 1; i < cfg_.n_agents; ++i)
            if (cfg_.n_actions[i] != cfg_.n_actions[0] || cfg_.obs_dims[i] != cfg_.obs_dims[0])
                throw std::invalid_argument(
                    "shared agent parameters need identical per-agent shapes");
    }

    const int shared_count = cfg_.share_agent_params ? 1 : cfg_.n_agents;
    for (int i = 0; i < shared_count; ++i) {
        const std::string p = cfg_.share_agent_params ? "agent" : "agent" + std::to_string(i);
        init_linear(params_, p + ".enc", cfg_.agent_input_dim(i), cfg_.hidden, rng);
        init_linear(params_, p + ".core", cfg_.hidden, cfg_.hidden, rng);
        init_linear(params_, p + ".head", cfg_.hidden, cfg_.n_actions[i], rng);
    }

    if (cfg_.mixer == MixerKind::QMIX) {
        init_linear(params_, "qmix.hyper_w1", cfg_.state_dim, cfg_.n_agents * cfg_.mix_embed,
                    rng);
        init_linear(params_, "qmix.hyper_b1", cfg_.state_dim, cfg_.mix_embed, rng);
        init_linear(params_, "qmix.hyper_w2", cfg_.state_dim, cfg_.mix_embed, rng);
        init_linear(params_, "qmix.hyper_b2a", cfg_.state_dim, cfg_.mix_embed, rng);
        init_linear(params_, "qmix.hyper_b2b", cfg_.mix_embed, 1, rng);
    }

    if (cfg_.mixer == MixerKind::QTRAN) {
        init_linear(params_, "qtran.joint.act", cfg_.joint_action_onehot_dim(), cfg_.hidden,
                    rng);
        init_linear(params_, "qtran.joint.mix", cfg_.hidden, cfg_.hidden, rng);
        init_linear(params_, "qtran.joint.out", cfg_.hidden, 1, rng);
        init_linear(params_, "qtran.v.state", cfg_.state_dim, cfg_.hidden, rng);
        init_linear(params_, "qtran.v.feat", cfg_.hidden, cfg_.hidden, rng);
        init_linear(params_, "qtran.v.out", 2 * cfg_.hidden, 1, rng);
    }

    if (cfg_.dual_net) {
        init_linear(params_, "dual.state", cfg_.state_dim, cfg_.hidden, rng);
        init_linear(params_, "dual.act", cfg_.joint_action_onehot_dim(), cfg_.hidden, rng);
        init_linear(params_, "dual.mix", 2 * cfg_.hidden, cfg_.hidden, rng);
        init_linear(params_, "dual.out", cfg_.hidden, 1, rng);
    }
}

std::string Networks::agent_prefix(int agent) const {
    return cfg_.share_agent_params ? "agent" : "agent" + std::to_string(agent);
}

Value Networks::agent_features(Tape& tape, const ad::ParamStore& store, int agent, Value input,
                               bool trainable) const {
    const std::string p = agent_prefix(agent);
    Value h = tape.relu(linear(tape, store, p + ".enc", input, trainable));
    return tape.relu(linear(tape, store, p + ".core", h, trainable));
}

Value Networks::agent_head(Tape& tape, const ad::ParamStore& store, int agent, Value features,
                           bool trainable) const {
    return linear(tape, store, agent_prefix(agent) + ".head", features, trainable);
}

Value Networks::agent_q(Tape& tape, const ad::ParamStore& store, int agent, Value input,
                        bool trainable) const {
    return agent_head(tape, store, agent, agent_features(tape, store, agent, input, trainable),
                      trainable);
}

Value Networks::qmix_mix(Tape& tape, const ad::ParamStore& store, Value agent_q_mat,
                         Value state_feats, bool trainable) const {
    const int batch = tape.value(agent_q_mat).rows;
    const int n = cfg_.n_agents;
    const int m = cfg_.mix_embed;

    // Nonnegative mixing weights from the hypernetwork keep Q_tot monotone
    // in every agent utility; biases stay unconstrained.
    const Value w1 = tape.abs(linear(tape, store, "qmix.hyper_w1", state_feats, trainable));
    const Value b1 = linear(tape, store, "qmix.hyper_b1", state_feats, trainable);
    const Value w2 = tape.abs(linear(tape, store, "qmix.hyper_w2", state_feats, trainable));
    const Value b2h =
        tape.relu(linear(tape, store, "qmix.hyper_b2a", state_feats, trainable));
    const Value b2 = linear(tape, store, "qmix.hyper_b2b", b2h, trainable);

    std::vector<Value> rows;
    rows.reserve(batch);
    for (int i = 0; i < batch; ++i) {
        const Value q_row = tape.slice_row(agent_q_mat, i);             // (1,n)
        const Value w1_i = tape.reshape(tape.slice_row(w1, i), n, m);   // (n,m)
        const Value b1_i = tape.slice_row(b1, i);                       // (1,m)
        const Value hidden = tape.elu(tape.add(tape.matmul(q_row, w1_i), b1_i));
        const Value w2_i = tape.reshape(tape.slice_row(w2, i), m, 1);   // (m,1)
        const Value out = tape.add(tape.matmul(hidden, w2_i), tape.slice_row(b2, i));
        rows.push_back(out);  // (1,1)
    }
    return tape.concat_rows(rows);  // (batch,1)
}

Value Networks::qtran_joint(Tape& tape, const ad::ParamStore& store, Value feats_sum,
                            Value action_onehots, bool trainable) const {
    Value a = tape.relu(linear(tape, store, "qtran.joint.act", action_onehots, trainable));
    Value h = tape.relu(
        linear(tape, store, "qtran.joint.mix", tape.add(a, feats_sum), trainable));
    return linear(tape, store, "qtran.joint.out", h, trainable);
}

Value Networks::qtran_v(Tape& tape, const ad::ParamStore& store, Value feats_sum,
                        Value state_feats, bool trainable) const {
    Value s = tape.relu(linear(tape, store, "qtran.v.state", state_feats, trainable));
    Value f = tape.relu(linear(tape, store, "qtran.v.feat", feats_sum, trainable));
    return linear(tape, store, "qtran.v.out", tape.concat_cols({s, f}), trainable);
}

Value Networks::dual_eta(Tape& tape, const ad::ParamStore& store, Value state_feats,
                         Value action_onehots, bool trainable) const {
    Value s = tape.relu(linear(tape, store, "dual.state", state_feats, trainable));
    Value a = tape.relu(linear(tape, store, "dual.act", action_onehots, trainable));
    Value h = tape.relu(linear(tape, store, "dual.mix", tape.concat_cols({s, a}), trainable));
    Value z = linear(tape, store, "dual.out", h, trainable);
    if (cfg_.eta_sigmoid) return tape.scale(tape.sigmoid(z), cfg_.eta_upper);
    // clamp(z, 0, U) = U - relu(U - relu(z))
    Value lo = tape.relu(z);
    Value upper = tape.scale(tape.relu(tape.sub(tape.input(Tensor::scalar(cfg_.eta_upper)),
                                                lo)),
                             -1.0);
    return tape.add_const(upper, cfg_.eta_upper);
}

Value mix(Tape& tape, const Networks& nets, const ad::ParamStore& store, MixerKind kind,
          const std::vector<Value>& per_agent_q_chosen, std::optional<Value> state_feats,
          bool trainable) {
    if (kind == MixerKind::VDN) {
        return tape.sum_cols(tape.concat_cols(per_agent_q_chosen));
    }
    if (!state_feats)
        throw std::invalid_argument("state features required for state-conditioned mixers");
    if (kind == MixerKind::QMIX) {
        return nets.qmix_mix(tape, store, tape.concat_cols(per_agent_q_chosen), *state_feats,
                             trainable);
    }
    throw std::invalid_argument("QTRAN mixes through the joint network; call qtran_joint");
}

double robust_td_target_contamination(double r, double gamma, double rho, double q_next) {
    return r + gamma * (1.0 - rho) * q_next;
}

double robust_td_target_tv(double r, double gamma, double rho, double eta, double q_next) {
    return r + gamma * (1.0 - rho) * eta - gamma * std::max(0.0, eta - q_next);
}

Value td_loss(Tape& tape, Value q_tot_pred, const std::vector<double>& y_target) {
    const int batch = tape.value(q_tot_pred).rows;
    if (static_cast<int>(y_target.size()) != batch)
        throw std::invalid_argument("target size does not match prediction batch");
    Tensor y(batch, 1, y_target);
    return tape.mean_all(tape.square(tape.sub(q_tot_pred, tape.input(std::move(y)))));
}

Value dual_loss(Tape& tape, Value eta, const std::vector<double>& q_next_max, double rho) {
    const int batch = tape.value(eta).rows;
    if (batch == 0 || q_next_max.empty())
        throw std::invalid_argument("dual loss needs a nonempty batch");
    if (static_cast<int>(q_next_max.size()) != batch)
        throw std::invalid_argument("q_next_max size does not match eta batch");
    Tensor q(batch, 1, q_next_max);
    const Value hinge = tape.relu(tape.sub(eta, tape.input(std::move(q))));
    return tape.mean_all(tape.sub(hinge, tape.scale(eta, 1.0 - rho)));
}

QtranLossTerms qtran_losses(Tape& tape, Value vdn_sum, Value joint_q_detached, Value v_tot,
                            const std::vector<bool>& greedy_flag) {
    const int batch = tape.value(vdn_sum).rows;
    if (static_cast<int>(greedy_flag.size()) != batch)
        throw std::invalid_argument("greedy flags must match the batch");
    Tensor opt_mask(batch, 1);
    Tensor nopt_mask(batch, 1);
    for (int i = 0; i < batch; ++i) {
        opt_mask.at(i, 0) = greedy_flag[i] ? 1.0 : 0.0;
        nopt_mask.at(i, 0) = greedy_flag[i] ? 0.0 : 1.0;
    }
    const Value diff = tape.add(tape.sub(vdn_sum, joint_q_detached), v_tot);
    const Value l_opt = tape.mean_all(
        tape.mul(tape.square(diff), tape.input(std::move(opt_mask))));
    // min(x, 0) = -[(-x)]_+
    const Value neg_part = tape.scale(tape.relu(tape.scale(diff, -1.0)), -1.0);
    const Value l_nopt = tape.mean_all(
        tape.mul(tape.square(neg_part), tape.input(std::move(nopt_mask))));
    return {l_opt, l_nopt};
}

}  // namespace drigm
