#include "drigm/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace drigm {

namespace {

constexpr double kAssumptionTol = 1e-9;

double expectation(std::span<const double> values, std::span<const double> probs) {
    double e = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (probs[i] != 0.0) e += probs[i] * values[i];
    return e;
}

double min_value(std::span<const double> values) {
    return *std::min_element(values.begin(), values.end());
}

int argmin_smallest_id(std::span<const double> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] < values[best]) best = static_cast<int>(i);
    return best;
}

void check_vanishing_min(std::span<const double> values) {
    const double m = min_value(values);
    if (std::abs(m) > kAssumptionTol) {
        std::ostringstream os;
        os << "fail-state simplification requires vanishing minimal value "
              "(min over next-state values must be 0), got min = "
           << m << "; use the general operator form for such models";
        throw AssumptionViolation(os.str());
    }
}

std::span<const double> kernel_row(const std::vector<double>& kernel, const Cell& cell) {
    const std::size_t off =
        (static_cast<std::size_t>(cell.state) * cell.n_joint_actions + cell.joint_action) *
        cell.n_states;
    return {kernel.data() + off, static_cast<std::size_t>(cell.n_states)};
}

const Cell& require_cell(const std::optional<Cell>& cell) {
    if (!cell)
        throw std::invalid_argument("FiniteSet queries need the (state, action) cell");
    return *cell;
}

/// Ternary search for the minimum of a convex function on [lo, hi].
template <typename F>
DualSolveResult minimize_convex(F&& g, double lo, double hi, int iterations) {
    for (int it = 0; it < iterations; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        const double g1 = g(m1);
        const double g2 = g(m2);
        if (g1 < g2) {
            hi = m2;
        } else if (g1 > g2) {
            lo = m1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    const double eta = 0.5 * (lo + hi);
    return {eta, g(eta), iterations};
}

double tv_worst_expectation(std::span<const double> values, std::span<const double> nominal,
                            double rho, double gamma, OperatorForm form) {
    const double upper = tv_dual_upper_bound(rho, gamma);
    if (form == OperatorForm::FailStateSimplified) {
        check_vanishing_min(values);
        return -tv_dual_minimize(values, nominal, rho, gamma).value;
    }
    // General form keeps the rho [eta - min values]_+ term.
    const double vmin = min_value(values);
    auto g = [&](double eta) {
        double e = rho * std::max(0.0, eta - vmin) - eta;
        for (std::size_t i = 0; i < nominal.size(); ++i)
            if (nominal[i] != 0.0) e += nominal[i] * std::max(0.0, eta - values[i]);
        return e;
    };
    return -minimize_convex(g, 0.0, upper, 200).value;
}

}  // namespace

double tv_distance(std::span<const double> p, std::span<const double> q) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
    return 0.5 * d;
}

double tv_dual_upper_bound(double rho, double gamma) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in (0,1]");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
    return 2.0 / (rho * (1.0 - gamma));
}

DualSolveResult tv_dual_minimize(std::span<const double> values,
                                 std::span<const double> nominal, double rho, double gamma,
                                 int iterations) {
    const double upper = tv_dual_upper_bound(rho, gamma);
    auto g = [&](double eta) {
        double e = -(1.0 - rho) * eta;
        for (std::size_t i = 0; i < nominal.size(); ++i)
            if (nominal[i] != 0.0) e += nominal[i] * std::max(0.0, eta - values[i]);
        return e;
    };
    return minimize_convex(g, 0.0, upper, iterations);
}

double worst_case_expectation(std::span<const double> values,
                              std::span<const double> nominal, const UncertaintySet& set,
                              double gamma, std::optional<Cell> cell, OperatorForm form) {
    if (const auto* c = std::get_if<Contamination>(&set)) {
        if (c->rho == 0.0) return expectation(values, nominal);
        if (form == OperatorForm::FailStateSimplified) {
            check_vanishing_min(values);
            return (1.0 - c->rho) * expectation(values, nominal);
        }
        return (1.0 - c->rho) * expectation(values, nominal) + c->rho * min_value(values);
    }
    if (const auto* tv = std::get_if<TotalVariation>(&set)) {
        if (tv->rho == 0.0) return expectation(values, nominal);
        return tv_worst_expectation(values, nominal, tv->rho, gamma, form);
    }
    const auto& fs = std::get<FiniteSet>(set);
    const Cell& at = require_cell(cell);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& kernel : fs.kernels)
        best = std::min(best, expectation(values, kernel_row(kernel, at)));
    return best;
}

std::vector<double> worst_case_distribution(std::span<const double> values,
                                            std::span<const double> nominal,
                                            const UncertaintySet& set, double gamma,
                                            std::optional<Cell> cell, OperatorForm form) {
    if (const auto* c = std::get_if<Contamination>(&set)) {
        std::vector<double> q(nominal.begin(), nominal.end());
        if (c->rho == 0.0) return q;
        if (form == OperatorForm::FailStateSimplified) check_vanishing_min(values);
        for (double& p : q) p *= 1.0 - c->rho;
        q[argmin_smallest_id(values)] += c->rho;
        return q;
    }
    if (const auto* tv = std::get_if<TotalVariation>(&set)) {
        std::vector<double> q(nominal.begin(), nominal.end());
        if (tv->rho == 0.0) return q;
        if (form == OperatorForm::FailStateSimplified) check_vanishing_min(values);
        // Move mass from the highest-value states to the minimum-value state
        // until the TV budget is spent.
        const int dest = argmin_smallest_id(values);
        std::vector<int> order(q.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (values[a] != values[b]) return values[a] > values[b];
            return a < b;
        });
        double budget = tv->rho;
        for (int src : order) {
            if (budget <= 0.0) break;
            if (src == dest || values[src] <= values[dest]) continue;
            const double moved = std::min(budget, q[src]);
            q[src] -= moved;
            q[dest] += moved;
            budget -= moved;
        }
        return q;
    }
    const auto& fs = std::get<FiniteSet>(set);
    const Cell& at = require_cell(cell);
    (void)gamma;
    int best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < fs.kernels.size(); ++k) {
        const double e = expectation(values, kernel_row(fs.kernels[k], at));
        if (e < best_value) {
            best_value = e;
            best = static_cast<int>(k);
        }
    }
    const auto row = kernel_row(fs.kernels[best], at);
    return {row.begin(), row.end()};
}

bool set_contains_row(std::span<const double> row, std::span<const double> nominal,
                      const UncertaintySet& set, std::optional<Cell> cell, double tol) {
    double sum = 0.0;
    for (double p : row) {
        if (p < -tol) return false;
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) return false;

    if (const auto* c = std::get_if<Contamination>(&set)) {
        // row = (1-rho) nominal + rho nu with nu a distribution, i.e. the
        // residual row - (1-rho) nominal must be nonnegative.
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i] - (1.0 - c->rho) * nominal[i] < -tol) return false;
        return true;
    }
    if (const auto* tv = std::get_if<TotalVariation>(&set)) {
        return tv_distance(row, nominal) <= tv->rho + tol;
    }
    const auto& fs = std::get<FiniteSet>(set);
    const Cell& at = require_cell(cell);
    for (const auto& kernel : fs.kernels) {
        const auto cand = kernel_row(kernel, at);
        bool match = true;
        for (std::size_t i = 0; i < row.size(); ++i)
            if (std::abs(row[i] - cand[i]) > tol) {
                match = false;
                break;
            }
        if (match) return true;
    }
    return false;
}

std::string describe(const UncertaintySet& set) {
    std::ostringstream os;
    if (const auto* c = std::get_if<Contamination>(&set)) {
        os << "contamination(rho=" << c->rho << ")";
    } else if (const auto* tv = std::get_if<TotalVariation>(&set)) {
        os << "tv(rho=" << tv->rho << ")";
    } else {
        os << "finite(" << std::get<FiniteSet>(set).kernels.size() << " kernels)";
    }
    return os.str();
}

}  // namespace drigm
