#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace drigm {

/// Mixture ball {(1-rho) P0 + rho nu : nu arbitrary} around each nominal row.
struct Contamination {
    double rho = 0.0;
};

/// Total-variation ball {P : TV(P, P0) <= rho} around each nominal row,
/// with TV(p, q) = (1/2) ||p - q||_1.
struct TotalVariation {
    double rho = 0.0;
};

/// Finite family of full transition kernels. The set is read rectangularly:
/// each (state, joint action) cell independently picks any member's row, so
/// the effective uncertainty set is the per-cell product of candidate rows.
struct FiniteSet {
    /// Each kernel laid out like TabularDecPomdp::kernel.
    std::vector<std::vector<double>> kernels;
};

using UncertaintySet = std::variant<Contamination, TotalVariation, FiniteSet>;

/// Identifies the (state, joint-action) cell a row-level query refers to.
/// Required for FiniteSet, ignored by the ball-shaped sets.
struct Cell {
    int state = 0;
    int joint_action = 0;
    int n_states = 0;  // row width inside a flat kernel
    int n_joint_actions = 0;
};

/// Which form of the robust expectation to evaluate.
///
/// FailStateSimplified drops the min-value terms; it is exact when the
/// minimal achievable value is zero (a zero-reward absorbing fail state),
/// which is enforced as a checked precondition. General keeps those terms
/// and is exact for arbitrary value vectors.
enum class OperatorForm { FailStateSimplified, General };

/// Raised when the fail-state simplification is requested but min(values)
/// is not zero.
class AssumptionViolation : public std::runtime_error {
public:
    explicit AssumptionViolation(const std::string& what) : std::runtime_error(what) {}
};

struct DualSolveResult {
    double eta_star = 0.0;
    double value = 0.0;  // minimized objective g(eta_star)
    int iterations = 0;
};

/// Upper end of the dual search interval, 2 / (rho (1-gamma)).
double tv_dual_upper_bound(double rho, double gamma);

/// Minimizes g(eta) = E_nominal[[eta - values]_+] - (1-rho) eta over
/// eta in [0, 2/(rho(1-gamma))] by ternary search on the convex objective.
DualSolveResult tv_dual_minimize(std::span<const double> values,
                                 std::span<const double> nominal, double rho, double gamma,
                                 int iterations = 200);

/// inf over the uncertainty ball of E_q[values].
///
/// Contamination: (1-rho) E_nominal[values] (+ rho min values in General form).
/// TotalVariation: the negated dual minimum.
/// FiniteSet: min over member kernels of E over their row at `cell`.
double worst_case_expectation(std::span<const double> values,
                              std::span<const double> nominal, const UncertaintySet& set,
                              double gamma, std::optional<Cell> cell = std::nullopt,
                              OperatorForm form = OperatorForm::FailStateSimplified);

/// A distribution attaining the worst-case expectation. Ties break toward
/// the smallest state id (contamination/TV) or the first kernel (FiniteSet).
std::vector<double> worst_case_distribution(std::span<const double> values,
                                            std::span<const double> nominal,
                                            const UncertaintySet& set, double gamma,
                                            std::optional<Cell> cell = std::nullopt,
                                            OperatorForm form = OperatorForm::FailStateSimplified);

/// Exact membership predicate for a single row.
bool set_contains_row(std::span<const double> row, std::span<const double> nominal,
                      const UncertaintySet& set, std::optional<Cell> cell = std::nullopt,
                      double tol = 1e-12);

/// Total-variation distance (1/2) ||p - q||_1.
double tv_distance(std::span<const double> p, std::span<const double> q);

std::string describe(const UncertaintySet& set);

}  // namespace drigm
