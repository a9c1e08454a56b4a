#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drigm/autodiff.hpp"
#include "drigm/rng.hpp"

namespace drigm {

enum class MixerKind { VDN, QMIX, QTRAN };

MixerKind mixer_from_string(const std::string& s);
std::string to_string(MixerKind k);

/// Shapes and switches of the factorization network bundle.
struct NetConfig {
    int n_agents = 2;
    std::vector<int> n_actions;  // per agent
    std::vector<int> obs_dims;   // per-agent observation feature dims
    int state_dim = 0;
    int window = 4;
    int hidden = 64;
    int mix_embed = 32;  // QMIX mixing width
    MixerKind mixer = MixerKind::VDN;
    bool dual_net = false;    // TV uncertainty: state-action dual head
    double eta_upper = 1.0;   // dual output interval [0, eta_upper]
    bool eta_sigmoid = true;  // scaled sigmoid (default) or hard clamp
    bool share_agent_params = false;

    int agent_input_dim(int i) const { return window * (obs_dims[i] + n_actions[i]); }
    int joint_action_onehot_dim() const {
        int d = 0;
        for (int a : n_actions) d += a;
        return d;
    }
};

/// Per-agent utility networks plus the mixer and auxiliary heads.
///
/// Each agent maps its windowed history features through an encoder and a
/// core layer to per-action values. QMIX mixes chosen values through a
/// monotone hypernetwork-generated MLP; QTRAN adds a joint action-value
/// network (sharing the agent encoders) and a history-value baseline.
class Networks {
public:
    Networks(NetConfig cfg, Rng& rng);

    const NetConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

    /// Encoder + core features for one agent, (B x hidden).
    /// `store` selects online or target parameters; gradients flow only when
    /// `trainable` is set.
    ad::Value agent_features(ad::Tape& tape, const ad::ParamStore& store, int agent,
                             ad::Value input, bool trainable) const;
    /// Per-action values from features, (B x n_actions[agent]).
    ad::Value agent_head(ad::Tape& tape, const ad::ParamStore& store, int agent,
                         ad::Value features, bool trainable) const;
    /// Convenience: features + head from raw input.
    ad::Value agent_q(ad::Tape& tape, const ad::ParamStore& store, int agent, ad::Value input,
                      bool trainable) const;

    /// Monotone state-conditioned mixing of per-agent chosen values.
    /// `agent_q_mat` is (B x N); `state_feats` is (B x state_dim).
    ad::Value qmix_mix(ad::Tape& tape, const ad::ParamStore& store, ad::Value agent_q_mat,
                       ad::Value state_feats, bool trainable) const;

    /// Joint action-value over (history features, joint action one-hots).
    ad::Value qtran_joint(ad::Tape& tape, const ad::ParamStore& store, ad::Value feats_sum,
                          ad::Value action_onehots, bool trainable) const;
    /// History-value baseline V_tot.
    ad::Value qtran_v(ad::Tape& tape, const ad::ParamStore& store, ad::Value feats_sum,
                      ad::Value state_feats, bool trainable) const;

    /// Dual variable head, (B x 1), constrained to [0, eta_upper].
    ad::Value dual_eta(ad::Tape& tape, const ad::ParamStore& store, ad::Value state_feats,
                       ad::Value action_onehots, bool trainable) const;

private:
    std::string agent_prefix(int agent) const;
    NetConfig cfg_;
    ad::ParamStore params_;
};

/// Q_tot from per-agent chosen values: exact sum (VDN) or the monotone mixer
/// (QMIX). State features are required for QMIX. For QTRAN use qtran_joint.
ad::Value mix(ad::Tape& tape, const Networks& nets, const ad::ParamStore& store,
              MixerKind kind, const std::vector<ad::Value>& per_agent_q_chosen,
              std::optional<ad::Value> state_feats, bool trainable);

/// One-step robust TD target under contamination: r + gamma (1-rho) q_next.
double robust_td_target_contamination(double r, double gamma, double rho, double q_next);

/// One-step robust TD target under total variation:
/// r + gamma (1-rho) eta - gamma [eta - q_next]_+.
double robust_td_target_tv(double r, double gamma, double rho, double eta, double q_next);

/// Mean squared TD error; the target enters as a constant so gradients flow
/// only through the predictions.
ad::Value td_loss(ad::Tape& tape, ad::Value q_tot_pred, const std::vector<double>& y_target);

/// Empirical dual loss: mean of [eta - q_next_max]_+ - (1-rho) eta.
/// q_next_max is detached; gradients reach only the dual parameters.
ad::Value dual_loss(ad::Tape& tape, ad::Value eta, const std::vector<double>& q_next_max,
                    double rho);

struct QtranLossTerms {
    ad::Value l_opt;   // scalar
    ad::Value l_nopt;  // scalar
};

/// QTRAN consistency terms. All three value inputs are (B x 1);
/// greedy_flag[i] marks rows evaluated at the greedy joint action (those
/// contribute to l_opt, the rest to l_nopt). joint_q must be detached by the
/// caller.
QtranLossTerms qtran_losses(ad::Tape& tape, ad::Value vdn_sum, ad::Value joint_q_detached,
                            ad::Value v_tot, const std::vector<bool>& greedy_flag);

/// Linear layer and MLP initialization/forward helpers (uniform
/// +-1/sqrt(fan_in) init, matching the usual dense-layer default).
void init_linear(ad::ParamStore& store, const std::string& prefix, int in, int out, Rng& rng);
ad::Value linear(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix,
                 ad::Value x, bool trainable);

}  // namespace drigm
