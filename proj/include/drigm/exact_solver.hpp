#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drigm/decpomdp.hpp"
#include "drigm/uncertainty.hpp"

namespace drigm {

/// Dense joint action-value table over (state, joint action).
struct JointQTable {
    int n_states = 0;
    int n_joint_actions = 0;
    double gamma = 0.0;
    std::string provenance;
    std::vector<double> values;  // [s * n_joint_actions + a]

    double at(int s, int a) const { return values[static_cast<std::size_t>(s) * n_joint_actions + a]; }
    double& at(int s, int a) { return values[static_cast<std::size_t>(s) * n_joint_actions + a]; }
    std::span<const double> row(int s) const {
        return {values.data() + static_cast<std::size_t>(s) * n_joint_actions,
                static_cast<std::size_t>(n_joint_actions)};
    }

    /// Rescaled value (1-gamma)/gamma * Q, the convention used when quoting
    /// the value of a zero-reward state one step before absorbing rewards.
    double normalized(int s, int a) const { return at(s, a) * (1.0 - gamma) / gamma; }

    /// V(s) = max_a Q(s, a).
    std::vector<double> state_values() const;
    /// Lexicographically-smallest argmax per state.
    std::vector<int> greedy_policy() const;
};

/// Per-agent action-value tables indexed by state (the joint observation
/// recovers the state, so state ids double as joint-history ids here).
struct IndividualQTables {
    std::vector<int> actions_per_agent;
    /// values[agent][s * actions_per_agent[agent] + a]
    std::vector<std::vector<double>> values;

    int n_agents() const { return static_cast<int>(actions_per_agent.size()); }
    double at(int agent, int s, int a) const {
        return values[agent][static_cast<std::size_t>(s) * actions_per_agent[agent] + a];
    }
    double& at(int agent, int s, int a) {
        return values[agent][static_cast<std::size_t>(s) * actions_per_agent[agent] + a];
    }
    /// All actions within tol of the agent's max at state s.
    std::vector<int> argmax_set(int agent, int s, double tol = 1e-9) const;
    /// Smallest-id argmax.
    int greedy(int agent, int s) const;

    static IndividualQTables zeros(int n_states, const std::vector<int>& actions_per_agent);
};

/// One application of the robust Bellman operator to a Q table.
JointQTable apply_robust_bellman(const TabularDecPomdp& model, const UncertaintySet& set,
                                 const JointQTable& q,
                                 OperatorForm form = OperatorForm::FailStateSimplified);

/// Iterates the robust Bellman operator to its fixed point.
///
/// Stops when the sup-norm residual drops below tol*(1-gamma)/(2*gamma),
/// which bounds the distance to the fixed point by tol.
JointQTable robust_value_iteration(const TabularDecPomdp& model, const UncertaintySet& set,
                                   double tol = 1e-8,
                                   OperatorForm form = OperatorForm::FailStateSimplified);

/// Non-robust value iteration under the model's own kernel.
JointQTable nominal_value_iteration(const TabularDecPomdp& model, double tol = 1e-8);

/// Copy of the model with its kernel replaced.
TabularDecPomdp with_kernel(const TabularDecPomdp& model, std::vector<double> kernel);

/// Per-cell minimizing kernel stitched from the converged robust table.
/// Solving the stitched model exactly reproduces the robust fixed point.
std::vector<double> extract_worst_model(const JointQTable& q, const TabularDecPomdp& model,
                                        const UncertaintySet& set,
                                        OperatorForm form = OperatorForm::FailStateSimplified);

struct IgmResult {
    bool ok = true;
    /// A joint action produced by per-agent greedy choices that is not
    /// jointly greedy (set when ok is false).
    std::optional<int> witness_joint_action;
    int state = -1;
    std::string detail;
};

/// Individual-global-max check at one state: every combination of per-agent
/// argmax actions must be a joint argmax of q_row.
IgmResult check_igm_at(const std::vector<int>& actions_per_agent,
                       std::span<const double> q_row, const IndividualQTables& individual,
                       int state, double tol = 1e-9);

/// IGM over all states; returns the first failing state.
IgmResult check_igm(const JointQTable& q_tot, const IndividualQTables& individual,
                    double tol = 1e-9);

/// The distributionally robust IGM check is the same containment test,
/// stated against the robust joint table.
IgmResult check_drigm(const JointQTable& robust_q_tot, const IndividualQTables& individual,
                      double tol = 1e-9);

/// Entrywise minimum over models of per-agent tables: the single-agent-style
/// robustification that DrIGM exists to replace.
IndividualQTables naive_robust_tables(const std::vector<IndividualQTables>& per_model);

/// Valid IGM tables for any joint table: indicator of the greedy action.
IndividualQTables indicator_igm_tables(const JointQTable& q_tot,
                                       const std::vector<int>& actions_per_agent);

struct RobustIndividualBuild {
    IndividualQTables tables;
    /// Per state, how the tables were obtained: "worst-model" (the selected
    /// worst model's tables verified directly), "per-agent" (per-agent model
    /// selection aligned with the robust greedy action), or "indicator".
    std::vector<std::string> construction;
};

/// Builds robust individual action-value tables that satisfy DrIGM against
/// the robust joint table, anchored at the worst-case model of the robust
/// greedy action.
///
/// Preconditions: each per-model table set satisfies IGM for its model's
/// optimal joint table (checked; violations are reported with model and
/// state). Worst-model ties break toward the first kernel.
RobustIndividualBuild build_robust_individual_q(const std::vector<IndividualQTables>& per_model,
                                                const std::vector<JointQTable>& per_model_qtot,
                                                const JointQTable& robust_qtot,
                                                double tol = 1e-9);

/// Exact additive decomposition of one joint-action row, when one exists.
///
/// Fits per-agent main effects by least squares on the full action grid and
/// accepts only when the reconstruction is exact to 1e-9.
std::optional<std::vector<std::vector<double>>> fit_vdn_decomposition(
    std::span<const double> q_row, const std::vector<int>& actions_per_agent,
    double tol = 1e-9);

enum class FactorizationKind { VDN, QMIX, QTRAN };

struct FactorizationCheck {
    bool ok = true;
    std::string report;
    double max_residual = 0.0;
};

/// Verifies the structural factorization condition of the given kind at one
/// state: VDN additivity, QMIX monotone responsiveness of the joint table to
/// per-agent orderings, or the QTRAN consistency identity.
FactorizationCheck check_factorization_conditions(FactorizationKind kind,
                                                  const std::vector<int>& actions_per_agent,
                                                  std::span<const double> q_row,
                                                  const IndividualQTables& individual, int state,
                                                  std::optional<double> v_tot = std::nullopt,
                                                  double tol = 1e-9);

struct LowerBoundCheck {
    bool ok = true;
    double max_violation = 0.0;  // max over cells of robust - test
    int state = -1;
    int joint_action = -1;
};

/// Theorem-style robustness guarantee: if test_kernel is a member of the
/// set around the model's kernel (verified per cell), the robust table must
/// lower-bound the test model's exact table everywhere.
LowerBoundCheck lower_bound_check(const JointQTable& robust_q, const TabularDecPomdp& model,
                                  const std::vector<double>& test_kernel,
                                  const UncertaintySet& set, double tol = 1e-9);

}  // namespace drigm
