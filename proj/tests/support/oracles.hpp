#pragma once

#include <optional>
#include <span>
#include <vector>

// Independent reference implementations used to cross-check the library.
// Everything here solves the same problems by a different route: a dense
// two-phase simplex for worst-case distributions, brute-force grids for the
// one-dimensional dual, and exhaustive enumeration for stitched kernels.
namespace drigm::oracles {

/// Generic small dense LP: min c.x subject to A x (<=|=) b, x >= 0.
/// Two-phase simplex with Bland's rule. Returns nullopt when infeasible.
class SimplexLP {
public:
    explicit SimplexLP(int n_vars);
    void add_le(std::vector<double> row, double rhs);
    void add_eq(std::vector<double> row, double rhs);
    std::optional<double> minimize(const std::vector<double>& objective);
    const std::vector<double>& solution() const { return solution_; }

private:
    int n_;
    std::vector<std::vector<double>> rows_;
    std::vector<double> rhs_;
    std::vector<bool> is_eq_;
    std::vector<double> solution_;
};

/// Exact minimum of E_q[values] over {q in simplex : TV(q, nominal) <= rho},
/// solved as a linear program.
double tv_worst_case_lp(std::span<const double> values, std::span<const double> nominal,
                        double rho);

/// Dense-grid minimum of g(eta) = E[[eta - values]_+] - (1-rho) eta over
/// [0, 2/(rho(1-gamma))]; the grid is refined with the hinge breakpoints so
/// the piecewise-linear minimum is hit exactly.
double grid_min_tv_dual(std::span<const double> values, std::span<const double> nominal,
                        double rho, double gamma, int points = 1000000);

/// Closed-form contamination minimum: (1-rho) E_nominal[values] + rho min(values).
double contamination_worst_case(std::span<const double> values,
                                std::span<const double> nominal, double rho);

}  // namespace drigm::oracles
