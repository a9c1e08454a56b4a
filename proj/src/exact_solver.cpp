#include "drigm/exact_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace drigm {

namespace {

/// Iterates over the Cartesian product of per-agent action sets.
/// `sets[i]` holds the candidate actions of agent i.
template <typename Fn>
void for_each_combination(const std::vector<std::vector<int>>& sets, Fn&& fn) {
    std::vector<std::size_t> idx(sets.size(), 0);
    while (true) {
        std::vector<int> combo(sets.size());
        for (std::size_t i = 0; i < sets.size(); ++i) combo[i] = sets[i][idx[i]];
        if (!fn(combo)) return;
        std::size_t i = sets.size();
        while (i > 0) {
            --i;
            if (++idx[i] < sets[i].size()) break;
            idx[i] = 0;
            if (i == 0) return;
        }
    }
}

int encode(const std::vector<int>& actions_per_agent, const std::vector<int>& a) {
    int idx = 0;
    for (std::size_t i = 0; i < a.size(); ++i) idx = idx * actions_per_agent[i] + a[i];
    return idx;
}

std::vector<int> joint_argmax_set(std::span<const double> row, double tol) {
    const double best = *std::max_element(row.begin(), row.end());
    std::vector<int> out;
    for (std::size_t a = 0; a < row.size(); ++a)
        if (row[a] >= best - tol) out.push_back(static_cast<int>(a));
    return out;
}

}  // namespace

std::vector<double> JointQTable::state_values() const {
    std::vector<double> v(n_states);
    for (int s = 0; s < n_states; ++s)
        v[s] = *std::max_element(row(s).begin(), row(s).end());
    return v;
}

std::vector<int> JointQTable::greedy_policy() const {
    std::vector<int> pi(n_states);
    for (int s = 0; s < n_states; ++s) {
        const auto r = row(s);
        pi[s] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return pi;
}

std::vector<int> IndividualQTables::argmax_set(int agent, int s, double tol) const {
    const int na = actions_per_agent[agent];
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < na; ++a) best = std::max(best, at(agent, s, a));
    std::vector<int> out;
    for (int a = 0; a < na; ++a)
        if (at(agent, s, a) >= best - tol) out.push_back(a);
    return out;
}

int IndividualQTables::greedy(int agent, int s) const {
    const int na = actions_per_agent[agent];
    int best = 0;
    for (int a = 1; a < na; ++a)
        if (at(agent, s, a) > at(agent, s, best)) best = a;
    return best;
}

IndividualQTables IndividualQTables::zeros(int n_states,
                                           const std::vector<int>& actions_per_agent) {
    IndividualQTables t;
    t.actions_per_agent = actions_per_agent;
    for (int na : actions_per_agent)
        t.values.emplace_back(static_cast<std::size_t>(n_states) * na, 0.0);
    return t;
}

JointQTable apply_robust_bellman(const TabularDecPomdp& model, const UncertaintySet& set,
                                 const JointQTable& q, OperatorForm form) {
    const int na = model.n_joint_actions();
    JointQTable out;
    out.n_states = model.n_states;
    out.n_joint_actions = na;
    out.gamma = model.gamma;
    out.provenance = q.provenance;
    out.values.resize(q.values.size());

    const std::vector<double> v = q.state_values();
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            const Cell cell{s, a, model.n_states, na};
            const double w = worst_case_expectation(v, model.row(s, a), set, model.gamma,
                                                    cell, form);
            out.at(s, a) = model.r(s, a) + model.gamma * w;
        }
    }
    return out;
}

JointQTable robust_value_iteration(const TabularDecPomdp& model, const UncertaintySet& set,
                                   double tol, OperatorForm form) {
    if (!(model.gamma > 0.0 && model.gamma < 1.0))
        throw std::invalid_argument("value iteration requires gamma in (0,1)");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");

    JointQTable q;
    q.n_states = model.n_states;
    q.n_joint_actions = model.n_joint_actions();
    q.gamma = model.gamma;
    q.provenance = "robust(" + describe(set) + ")";
    q.values.assign(static_cast<std::size_t>(q.n_states) * q.n_joint_actions, 0.0);

    const double stop = tol * (1.0 - model.gamma) / (2.0 * model.gamma);
    const int max_sweeps = 1000000;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        JointQTable next = apply_robust_bellman(model, set, q, form);
        double residual = 0.0;
        for (std::size_t i = 0; i < q.values.size(); ++i)
            residual = std::max(residual, std::abs(next.values[i] - q.values[i]));
        q.values.swap(next.values);
        if (residual <= stop) return q;
    }
    throw std::runtime_error("value iteration failed to converge");
}

JointQTable nominal_value_iteration(const TabularDecPomdp& model, double tol) {
    FiniteSet own;
    own.kernels.push_back(model.kernel);
    JointQTable q = robust_value_iteration(model, UncertaintySet{own}, tol);
    q.provenance = "nominal";
    return q;
}

TabularDecPomdp with_kernel(const TabularDecPomdp& model, std::vector<double> kernel) {
    if (kernel.size() != model.kernel.size())
        throw std::invalid_argument("replacement kernel has wrong size");
    TabularDecPomdp m = model;
    m.kernel = std::move(kernel);
    return m;
}

std::vector<double> extract_worst_model(const JointQTable& q, const TabularDecPomdp& model,
                                        const UncertaintySet& set, OperatorForm form) {
    const int na = model.n_joint_actions();
    const std::vector<double> v = q.state_values();
    std::vector<double> stitched(model.kernel.size());
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            const Cell cell{s, a, model.n_states, na};
            const std::vector<double> row =
                worst_case_distribution(v, model.row(s, a), set, model.gamma, cell, form);
            std::copy(row.begin(), row.end(),
                      stitched.begin() +
                          (static_cast<std::size_t>(s) * na + a) * model.n_states);
        }
    }
    return stitched;
}

IgmResult check_igm_at(const std::vector<int>& actions_per_agent,
                       std::span<const double> q_row, const IndividualQTables& individual,
                       int state, double tol) {
    const std::vector<int> joint = joint_argmax_set(q_row, tol);
    std::vector<std::vector<int>> per_agent;
    per_agent.reserve(actions_per_agent.size());
    for (int i = 0; i < static_cast<int>(actions_per_agent.size()); ++i)
        per_agent.push_back(individual.argmax_set(i, state, tol));

    IgmResult res;
    res.state = state;
    for_each_combination(per_agent, [&](const std::vector<int>& combo) {
        const int idx = encode(actions_per_agent, combo);
        if (std::find(joint.begin(), joint.end(), idx) == joint.end()) {
            res.ok = false;
            res.witness_joint_action = idx;
            std::ostringstream os;
            os << "individually greedy joint action " << idx
               << " is not a joint maximizer at state " << state;
            res.detail = os.str();
            return false;
        }
        return true;
    });
    return res;
}

IgmResult check_igm(const JointQTable& q_tot, const IndividualQTables& individual, double tol) {
    for (int s = 0; s < q_tot.n_states; ++s) {
        IgmResult r = check_igm_at(individual.actions_per_agent, q_tot.row(s), individual, s, tol);
        if (!r.ok) return r;
    }
    return {};
}

IgmResult check_drigm(const JointQTable& robust_q_tot, const IndividualQTables& individual,
                      double tol) {
    return check_igm(robust_q_tot, individual, tol);
}

IndividualQTables naive_robust_tables(const std::vector<IndividualQTables>& per_model) {
    if (per_model.empty()) throw std::invalid_argument("no per-model tables given");
    IndividualQTables out = per_model.front();
    for (std::size_t k = 1; k < per_model.size(); ++k)
        for (std::size_t i = 0; i < out.values.size(); ++i)
            for (std::size_t j = 0; j < out.values[i].size(); ++j)
                out.values[i][j] = std::min(out.values[i][j], per_model[k].values[i][j]);
    return out;
}

IndividualQTables indicator_igm_tables(const JointQTable& q_tot,
                                       const std::vector<int>& actions_per_agent) {
    IndividualQTables t = IndividualQTables::zeros(q_tot.n_states, actions_per_agent);
    const std::vector<int> greedy = q_tot.greedy_policy();
    for (int s = 0; s < q_tot.n_states; ++s) {
        int idx = greedy[s];
        for (int i = static_cast<int>(actions_per_agent.size()) - 1; i >= 0; --i) {
            t.at(i, s, idx % actions_per_agent[i]) = 1.0;
            idx /= actions_per_agent[i];
        }
    }
    return t;
}

RobustIndividualBuild build_robust_individual_q(const std::vector<IndividualQTables>& per_model,
                                                const std::vector<JointQTable>& per_model_qtot,
                                                const JointQTable& robust_qtot, double tol) {
    if (per_model.empty() || per_model.size() != per_model_qtot.size())
        throw std::invalid_argument("per-model tables and joint tables must align");
    const std::vector<int>& apa = per_model.front().actions_per_agent;
    const int n_agents = static_cast<int>(apa.size());
    const int n_states = robust_qtot.n_states;

    // IGM precondition for every member model.
    for (std::size_t k = 0; k < per_model.size(); ++k) {
        const IgmResult r = check_igm(per_model_qtot[k], per_model[k], tol);
        if (!r.ok) {
            std::ostringstream os;
            os << "per-model IGM precondition fails for model " << k << " at state " << r.state;
            throw std::invalid_argument(os.str());
        }
    }

    RobustIndividualBuild out;
    out.tables = IndividualQTables::zeros(n_states, apa);
    out.construction.resize(n_states);

    for (int s = 0; s < n_states; ++s) {
        const auto robust_row = robust_qtot.row(s);
        const std::vector<int> robust_greedy_set = joint_argmax_set(robust_row, tol);
        const int a_bar = robust_greedy_set.front();  // lexicographically smallest

        // Worst model at the robust greedy action, ties toward the first kernel.
        std::size_t worst = 0;
        for (std::size_t k = 1; k < per_model_qtot.size(); ++k)
            if (per_model_qtot[k].at(s, a_bar) < per_model_qtot[worst].at(s, a_bar) - 1e-12)
                worst = k;

        auto copy_agent_row = [&](int agent, const IndividualQTables& src) {
            for (int a = 0; a < apa[agent]; ++a)
                out.tables.at(agent, s, a) = src.at(agent, s, a);
        };

        // 1) The worst model's own tables, when they already align.
        {
            const IgmResult r =
                check_igm_at(apa, robust_row, per_model[worst], s, tol);
            if (r.ok) {
                for (int i = 0; i < n_agents; ++i) copy_agent_row(i, per_model[worst]);
                out.construction[s] = "worst-model";
                continue;
            }
        }

        // 2) Per-agent selection: for each agent pick a member model whose
        //    individual greedy action is exactly the robust greedy component.
        {
            JointAction target(n_agents);
            int idx = a_bar;
            for (int i = n_agents - 1; i >= 0; --i) {
                target[i] = idx % apa[i];
                idx /= apa[i];
            }
            bool all_found = true;
            std::vector<std::size_t> chosen(n_agents);
            for (int i = 0; i < n_agents && all_found; ++i) {
                bool found = false;
                std::vector<std::size_t> order;
                order.push_back(worst);
                for (std::size_t k = 0; k < per_model.size(); ++k)
                    if (k != worst) order.push_back(k);
                for (std::size_t k : order) {
                    const std::vector<int> am = per_model[k].argmax_set(i, s, tol);
                    if (am.size() == 1 && am.front() == target[i]) {
                        chosen[i] = k;
                        found = true;
                        break;
                    }
                }
                all_found = found;
            }
            if (all_found) {
                for (int i = 0; i < n_agents; ++i) copy_agent_row(i, per_model[chosen[i]]);
                out.construction[s] = "per-agent";
                continue;
            }
        }

        // 3) Indicator tables at the robust greedy action always satisfy the
        //    containment.
        {
            JointAction target(n_agents);
            int idx = a_bar;
            for (int i = n_agents - 1; i >= 0; --i) {
                target[i] = idx % apa[i];
                idx /= apa[i];
            }
            for (int i = 0; i < n_agents; ++i) out.tables.at(i, s, target[i]) = 1.0;
            out.construction[s] = "indicator";
        }
    }

    const IgmResult final_check = check_drigm(robust_qtot, out.tables, tol);
    if (!final_check.ok)
        throw std::logic_error("constructed robust individual tables fail the DrIGM check: " +
                               final_check.detail);
    return out;
}

std::optional<std::vector<std::vector<double>>> fit_vdn_decomposition(
    std::span<const double> q_row, const std::vector<int>& actions_per_agent, double tol) {
    const int n_agents = static_cast<int>(actions_per_agent.size());
    int na = 1;
    for (int k : actions_per_agent) na *= k;
    if (static_cast<int>(q_row.size()) != na)
        throw std::invalid_argument("row size does not match the action space");

    double grand = 0.0;
    for (double v : q_row) grand += v;
    grand /= na;

    // Least-squares additive fit on a full factorial grid: per-agent main
    // effects around the grand mean.
    std::vector<std::vector<double>> tables(n_agents);
    for (int i = 0; i < n_agents; ++i) tables[i].assign(actions_per_agent[i], 0.0);
    std::vector<std::vector<int>> counts(n_agents);
    for (int i = 0; i < n_agents; ++i) counts[i].assign(actions_per_agent[i], 0);

    for (int idx = 0; idx < na; ++idx) {
        int rem = idx;
        for (int i = n_agents - 1; i >= 0; --i) {
            const int a = rem % actions_per_agent[i];
            rem /= actions_per_agent[i];
            tables[i][a] += q_row[idx];
            counts[i][a] += 1;
        }
    }
    for (int i = 0; i < n_agents; ++i)
        for (int a = 0; a < actions_per_agent[i]; ++a)
            tables[i][a] = tables[i][a] / counts[i][a] - grand * (n_agents - 1.0) / n_agents;

    for (int idx = 0; idx < na; ++idx) {
        int rem = idx;
        double fitted = 0.0;
        for (int i = n_agents - 1; i >= 0; --i) {
            fitted += tables[i][rem % actions_per_agent[i]];
            rem /= actions_per_agent[i];
        }
        if (std::abs(fitted - q_row[idx]) > tol) return std::nullopt;
    }
    return tables;
}

FactorizationCheck check_factorization_conditions(FactorizationKind kind,
                                                  const std::vector<int>& actions_per_agent,
                                                  std::span<const double> q_row,
                                                  const IndividualQTables& individual, int state,
                                                  std::optional<double> v_tot, double tol) {
    const int n_agents = static_cast<int>(actions_per_agent.size());
    int na = 1;
    for (int k : actions_per_agent) na *= k;

    auto decode = [&](int idx) {
        std::vector<int> a(n_agents);
        for (int i = n_agents - 1; i >= 0; --i) {
            a[i] = idx % actions_per_agent[i];
            idx /= actions_per_agent[i];
        }
        return a;
    };
    auto sum_individual = [&](const std::vector<int>& a) {
        double s = 0.0;
        for (int i = 0; i < n_agents; ++i) s += individual.at(i, state, a[i]);
        return s;
    };

    FactorizationCheck res;
    if (kind == FactorizationKind::VDN) {
        for (int idx = 0; idx < na; ++idx) {
            const double resid = std::abs(sum_individual(decode(idx)) - q_row[idx]);
            if (resid > res.max_residual) {
                res.max_residual = resid;
                if (resid > tol) {
                    res.ok = false;
                    std::ostringstream os;
                    os << "additivity residual " << resid << " at state " << state
                       << " joint action " << idx;
                    res.report = os.str();
                }
            }
        }
        if (res.ok) res.report = "additive";
        return res;
    }

    if (kind == FactorizationKind::QMIX) {
        // Monotone responsiveness: swapping one agent's action for one with a
        // higher individual value must never lower the joint value.
        for (int idx = 0; idx < na; ++idx) {
            const std::vector<int> a = decode(idx);
            for (int i = 0; i < n_agents; ++i) {
                for (int alt = 0; alt < actions_per_agent[i]; ++alt) {
                    if (individual.at(i, state, alt) < individual.at(i, state, a[i])) continue;
                    std::vector<int> b = a;
                    b[i] = alt;
                    const int bidx = encode(actions_per_agent, b);
                    const double drop = q_row[idx] - q_row[bidx];
                    if (drop > res.max_residual) res.max_residual = drop;
                    if (drop > tol) {
                        res.ok = false;
                        std::ostringstream os;
                        os << "joint value decreases by " << drop << " at state " << state
                           << " when agent " << i << " switches " << a[i] << "->" << alt;
                        res.report = os.str();
                        return res;
                    }
                }
            }
        }
        res.report = "monotone";
        return res;
    }

    // QTRAN: sum_i Q_i - Q_tot + V_tot vanishes at the per-agent greedy joint
    // action and is nonnegative elsewhere.
    std::vector<int> greedy(n_agents);
    for (int i = 0; i < n_agents; ++i) greedy[i] = individual.greedy(i, state);
    const int greedy_idx = encode(actions_per_agent, greedy);
    const double q_max = *std::max_element(q_row.begin(), q_row.end());
    const double v = v_tot ? *v_tot : q_max - sum_individual(greedy);

    for (int idx = 0; idx < na; ++idx) {
        const double d = sum_individual(decode(idx)) - q_row[idx] + v;
        if (idx == greedy_idx) {
            if (std::abs(d) > res.max_residual) res.max_residual = std::abs(d);
            if (std::abs(d) > tol) {
                res.ok = false;
                std::ostringstream os;
                os << "consistency residual " << d << " at the greedy action, state " << state;
                res.report = os.str();
                return res;
            }
        } else if (d < -tol) {
            res.ok = false;
            res.max_residual = std::max(res.max_residual, -d);
            std::ostringstream os;
            os << "negative slack " << d << " at state " << state << " joint action " << idx;
            res.report = os.str();
            return res;
        }
    }
    res.report = "consistent";
    return res;
}

LowerBoundCheck lower_bound_check(const JointQTable& robust_q, const TabularDecPomdp& model,
                                  const std::vector<double>& test_kernel,
                                  const UncertaintySet& set, double tol) {
    const int na = model.n_joint_actions();
    // Membership is verified cell by cell (rectangular sets).
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            const Cell cell{s, a, model.n_states, na};
            const std::size_t off = (static_cast<std::size_t>(s) * na + a) * model.n_states;
            const std::span<const double> row{test_kernel.data() + off,
                                              static_cast<std::size_t>(model.n_states)};
            if (!set_contains_row(row, model.row(s, a), set, cell, 1e-9)) {
                std::ostringstream os;
                os << "test kernel row (s" << s << ",a" << a
                   << ") is not a member of the uncertainty set";
                throw std::invalid_argument(os.str());
            }
        }
    }

    const JointQTable test_q = nominal_value_iteration(with_kernel(model, test_kernel), 1e-10);
    LowerBoundCheck res;
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < na; ++a) {
            const double gap = robust_q.at(s, a) - test_q.at(s, a);
            if (gap > res.max_violation) {
                res.max_violation = gap;
                res.state = s;
                res.joint_action = a;
            }
        }
    }
    res.ok = res.max_violation <= tol;
    return res;
}

}  // namespace drigm
