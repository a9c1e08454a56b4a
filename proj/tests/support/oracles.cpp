#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace drigm::oracles {

SimplexLP::SimplexLP(int n_vars) : n_(n_vars) {}

void SimplexLP::add_le(std::vector<double> row, double rhs) {
    if (static_cast<int>(row.size()) != n_) throw std::invalid_argument("bad LP row size");
    rows_.push_back(std::move(row));
    rhs_.push_back(rhs);
    is_eq_.push_back(false);
}

void SimplexLP::add_eq(std::vector<double> row, double rhs) {
    if (static_cast<int>(row.size()) != n_) throw std::invalid_argument("bad LP row size");
    rows_.push_back(std::move(row));
    rhs_.push_back(rhs);
    is_eq_.push_back(true);
}

std::optional<double> SimplexLP::minimize(const std::vector<double>& objective) {
    if (static_cast<int>(objective.size()) != n_)
        throw std::invalid_argument("bad LP objective size");
    const int m = static_cast<int>(rows_.size());

    // Standard form: slacks for <= rows, then one artificial per row.
    int n_slack = 0;
    for (bool eq : is_eq_)
        if (!eq) ++n_slack;
    const int total = n_ + n_slack + m;  // structural + slack + artificial
    const int art0 = n_ + n_slack;

    // tableau[m][total+1], last column = rhs
    std::vector<std::vector<double>> T(m, std::vector<double>(total + 1, 0.0));
    std::vector<int> basis(m);
    {
        int slack_idx = n_;
        for (int i = 0; i < m; ++i) {
            double sign = rhs_[i] < 0.0 ? -1.0 : 1.0;  // keep rhs nonnegative
            for (int j = 0; j < n_; ++j) T[i][j] = sign * rows_[i][j];
            T[i][total] = sign * rhs_[i];
            if (!is_eq_[i]) {
                T[i][slack_idx] = sign * 1.0;
                ++slack_idx;
            }
            T[i][art0 + i] = 1.0;
            basis[i] = art0 + i;
        }
    }

    auto pivot = [&](int prow, int pcol) {
        const double pv = T[prow][pcol];
        for (double& v : T[prow]) v /= pv;
        for (int i = 0; i < m; ++i) {
            if (i == prow) continue;
            const double f = T[i][pcol];
            if (f == 0.0) continue;
            for (int j = 0; j <= total; ++j) T[i][j] -= f * T[prow][j];
        }
        basis[prow] = pcol;
    };

    // Runs simplex on the current tableau for reduced costs of `cost`,
    // restricted to columns < limit. Bland's rule on both choices.
    auto run = [&](const std::vector<double>& cost, int limit) {
        while (true) {
            // reduced costs: c_j - c_B . B^{-1} A_j
            int enter = -1;
            for (int j = 0; j < limit; ++j) {
                double red = cost[j];
                for (int i = 0; i < m; ++i) red -= cost[basis[i]] * T[i][j];
                if (red < -1e-10) {
                    enter = j;
                    break;  // Bland: smallest index
                }
            }
            if (enter < 0) return true;
            int leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < m; ++i) {
                if (T[i][enter] > 1e-12) {
                    const double ratio = T[i][total] / T[i][enter];
                    if (ratio < best - 1e-12 ||
                        (ratio < best + 1e-12 && (leave < 0 || basis[i] < basis[leave]))) {
                        best = ratio;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return false;  // unbounded
            pivot(leave, enter);
        }
    };

    // Phase 1: drive artificials to zero.
    std::vector<double> phase1(total, 0.0);
    for (int j = art0; j < total; ++j) phase1[j] = 1.0;
    if (!run(phase1, total)) return std::nullopt;
    double art_value = 0.0;
    for (int i = 0; i < m; ++i)
        if (basis[i] >= art0) art_value += T[i][total];
    if (art_value > 1e-8) return std::nullopt;  // infeasible
    // pivot out any artificial still basic at zero level
    for (int i = 0; i < m; ++i) {
        if (basis[i] < art0) continue;
        for (int j = 0; j < art0; ++j) {
            if (std::abs(T[i][j]) > 1e-9) {
                pivot(i, j);
                break;
            }
        }
    }

    // Phase 2.
    std::vector<double> cost(total, 0.0);
    for (int j = 0; j < n_; ++j) cost[j] = objective[j];
    if (!run(cost, art0)) return std::nullopt;  // unbounded below

    solution_.assign(n_, 0.0);
    for (int i = 0; i < m; ++i)
        if (basis[i] < n_) solution_[basis[i]] = T[i][total];
    double value = 0.0;
    for (int j = 0; j < n_; ++j) value += objective[j] * solution_[j];
    return value;
}

double tv_worst_case_lp(std::span<const double> values, std::span<const double> nominal,
                        double rho) {
    const int n = static_cast<int>(values.size());
    // variables: q_0..q_{n-1}, u_0..u_{n-1} with |q - p| <= u elementwise
    SimplexLP lp(2 * n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> up(2 * n, 0.0), down(2 * n, 0.0);
        up[i] = 1.0;
        up[n + i] = -1.0;  // q_i - u_i <= p_i
        lp.add_le(std::move(up), nominal[i]);
        down[i] = -1.0;
        down[n + i] = -1.0;  // -q_i - u_i <= -p_i
        lp.add_le(std::move(down), -nominal[i]);
    }
    std::vector<double> tv_row(2 * n, 0.0);
    for (int i = 0; i < n; ++i) tv_row[n + i] = 1.0;  // sum u_i <= 2 rho
    lp.add_le(std::move(tv_row), 2.0 * rho);
    std::vector<double> simplex_row(2 * n, 0.0);
    for (int i = 0; i < n; ++i) simplex_row[i] = 1.0;
    lp.add_eq(std::move(simplex_row), 1.0);

    std::vector<double> obj(2 * n, 0.0);
    for (int i = 0; i < n; ++i) obj[i] = values[i];
    const auto result = lp.minimize(obj);
    if (!result) throw std::logic_error("TV worst-case LP must be feasible");
    return *result;
}

double grid_min_tv_dual(std::span<const double> values, std::span<const double> nominal,
                        double rho, double gamma, int points) {
    const double upper = 2.0 / (rho * (1.0 - gamma));
    auto g = [&](double eta) {
        double e = -(1.0 - rho) * eta;
        for (std::size_t i = 0; i < nominal.size(); ++i)
            if (nominal[i] != 0.0) e += nominal[i] * std::max(0.0, eta - values[i]);
        return e;
    };
    double best = g(0.0);
    for (int k = 1; k <= points; ++k)
        best = std::min(best, g(upper * k / points));
    // hinge breakpoints, where the piecewise-linear minimum actually sits
    for (double v : values)
        if (v >= 0.0 && v <= upper) best = std::min(best, g(v));
    return best;
}

double contamination_worst_case(std::span<const double> values,
                                std::span<const double> nominal, double rho) {
    double e = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) e += nominal[i] * values[i];
    return (1.0 - rho) * e + rho * *std::min_element(values.begin(), values.end());
}

}  // namespace drigm::oracles
