// Self-contained dense two-phase simplex. Small by design: the occupation
// measure programs it serves have a few hundred rows, so a tableau method
// with Dantzig pricing (Bland fallback against cycling) is plenty.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace covert {

struct LpRow {
    std::vector<double> coeffs;
    char relation = '='; // '<', '=', '>'
    double rhs = 0.0;
};

struct LpProblem {
    int num_vars = 0;
    std::vector<double> objective; // minimized
    std::vector<LpRow> rows;
};

struct LpSolution {
    enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };
    Status status = Status::Optimal;
    double objective = 0.0;
    std::vector<double> x;
};

namespace simplex_detail {

constexpr double kEps = 1e-9;
constexpr double kMinPivot = 1e-8; // entries below this never become pivots
constexpr double kTiny = 1e-12;

struct Tableau {
    int m = 0, cols = 0;
    std::vector<std::vector<double>> a; // m rows x (cols + 1), last column = rhs
    std::vector<int> basis;
    int artificial_begin = 0; // columns >= this are artificials

    void pivot(int row, int col) {
        auto& prow = a[row];
        const double inv = 1.0 / prow[col];
        for (double& v : prow) v *= inv;
        prow[col] = 1.0;
        for (int r = 0; r < m; ++r) {
            if (r == row) continue;
            const double f = a[r][col];
            if (std::abs(f) < kTiny) {
                a[r][col] = 0.0;
                continue;
            }
            for (int c = 0; c <= cols; ++c) a[r][c] -= f * prow[c];
            a[r][col] = 0.0;
        }
        basis[row] = col;
    }

    // Reduced-cost row for the cost vector `c` (zero-extended) over the basis.
    std::vector<double> reduced_costs(const std::vector<double>& c) const {
        std::vector<double> z(cols + 1, 0.0);
        for (int j = 0; j < static_cast<int>(c.size()); ++j) z[j] = c[j];
        for (int r = 0; r < m; ++r) {
            const int b = basis[r];
            const double cb = b < static_cast<int>(c.size()) ? c[b] : 0.0;
            if (cb == 0.0) continue;
            for (int ccol = 0; ccol <= cols; ++ccol) z[ccol] -= cb * a[r][ccol];
        }
        return z;
    }

    /// Min-ratio row for an entering column; among (near-)ties prefers the
    /// largest pivot element, which keeps the tableau numerically tame.
    int choose_leave(int enter) const {
        int leave = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        double best_pivot = 0.0;
        for (int r = 0; r < m; ++r) {
            const double col = a[r][enter];
            if (col < kMinPivot) continue;
            const double ratio = std::max(0.0, a[r][cols]) / col;
            if (ratio < best_ratio - kTiny - 1e-9 * best_ratio) {
                best_ratio = ratio;
                best_pivot = col;
                leave = r;
            } else if (ratio <= best_ratio + kTiny + 1e-9 * best_ratio && col > best_pivot) {
                best_ratio = std::min(best_ratio, ratio);
                best_pivot = col;
                leave = r;
            }
        }
        return leave;
    }
};

/// One simplex phase: minimizes c over the tableau. `allow` masks columns
/// permitted to enter the basis. Returns false for unbounded.
inline bool run_phase(Tableau& t, const std::vector<double>& c, const std::vector<bool>& allow,
                      long max_iter, long& used_iter) {
    auto z = t.reduced_costs(c);
    long stall = 0;
    double last_obj = -z[t.cols];
    bool bland = false;
    for (long it = 0; it < max_iter; ++it) {
        ++used_iter;
        // entering column: most negative reduced cost with a usable pivot
        // (Bland's rule after a stall: first such column)
        int enter = -1, leave = -1;
        double best = -kEps;
        bool any_negative = false;
        for (int j = 0; j < t.cols; ++j) {
            if (!allow[j] || z[j] >= (bland ? -kEps : best)) continue;
            any_negative = true;
            const int cand = t.choose_leave(j);
            if (cand < 0) continue; // no usable pivot in this column
            enter = j;
            leave = cand;
            if (bland) break;
            best = z[j];
        }
        if (enter < 0) {
            if (!any_negative) return true; // optimal
            // negative reduced costs remain but no column has a positive
            // entry: an improving ray
            return false;
        }

        t.pivot(leave, enter);
        z = t.reduced_costs(c);
        const double obj = -z[t.cols];
        if (obj < last_obj - kTiny) {
            stall = 0;
            last_obj = obj;
        } else if (++stall > 2L * t.m) {
            bland = true; // anti-cycling
        }
    }
    return true; // iteration cap; caller checks residual reduced costs
}

} // namespace simplex_detail

inline LpSolution solve_lp(const LpProblem& prob, long max_iter = 200000) {
    using namespace simplex_detail;
    const int n = prob.num_vars;
    const int m = static_cast<int>(prob.rows.size());
    if (static_cast<int>(prob.objective.size()) != n)
        throw std::invalid_argument("solve_lp: objective size mismatch");

    // count extra columns: slack/surplus per inequality, artificial per row
    // that lacks a natural basic column
    int n_slack = 0;
    for (const auto& row : prob.rows)
        if (row.relation != '=') ++n_slack;

    Tableau t;
    t.m = m;
    // worst case every row gets an artificial
    t.cols = n + n_slack + m;
    t.artificial_begin = n + n_slack;
    t.a.assign(m, std::vector<double>(t.cols + 1, 0.0));
    t.basis.assign(m, -1);

    int slack_at = n;
    int art_at = t.artificial_begin;
    int n_art = 0;
    for (int r = 0; r < m; ++r) {
        const auto& row = prob.rows[r];
        if (static_cast<int>(row.coeffs.size()) != n)
            throw std::invalid_argument("solve_lp: row size mismatch");
        double sign = 1.0;
        char rel = row.relation;
        if (row.rhs < 0.0) {
            sign = -1.0;
            rel = rel == '<' ? '>' : (rel == '>' ? '<' : '=');
        }
        for (int j = 0; j < n; ++j) t.a[r][j] = sign * row.coeffs[j];
        t.a[r][t.cols] = sign * row.rhs;
        if (rel == '<') {
            t.a[r][slack_at] = 1.0;
            t.basis[r] = slack_at++;
        } else if (rel == '>') {
            t.a[r][slack_at++] = -1.0;
        }
        if (t.basis[r] < 0) {
            t.a[r][art_at] = 1.0;
            t.basis[r] = art_at++;
            ++n_art;
        }
    }

    LpSolution sol;
    long used = 0;

    // phase 1: drive artificials to zero
    if (n_art > 0) {
        std::vector<double> c1(t.cols, 0.0);
        for (int j = t.artificial_begin; j < art_at; ++j) c1[j] = 1.0;
        std::vector<bool> allow(t.cols, false);
        for (int j = 0; j < art_at; ++j) allow[j] = true;
        if (!run_phase(t, c1, allow, max_iter, used)) {
            sol.status = LpSolution::Status::Unbounded; // cannot happen for phase 1
            return sol;
        }
        double art_sum = 0.0;
        for (int r = 0; r < m; ++r)
            if (t.basis[r] >= t.artificial_begin) art_sum += t.a[r][t.cols];
        if (art_sum > 1e-7) {
            sol.status = LpSolution::Status::Infeasible;
            return sol;
        }
        // pivot zero-level artificials out where possible (largest available
        // element); redundant rows keep them basic at zero and the columns
        // are barred from re-entering
        for (int r = 0; r < m; ++r) {
            if (t.basis[r] < t.artificial_begin) continue;
            int best_col = -1;
            double best_abs = kMinPivot;
            for (int j = 0; j < t.artificial_begin; ++j)
                if (std::abs(t.a[r][j]) > best_abs) {
                    best_abs = std::abs(t.a[r][j]);
                    best_col = j;
                }
            if (best_col >= 0) t.pivot(r, best_col);
        }
    }

    // phase 2: true objective, artificial columns barred
    std::vector<double> c2(t.cols, 0.0);
    for (int j = 0; j < n; ++j) c2[j] = prob.objective[j];
    std::vector<bool> allow(t.cols, false);
    for (int j = 0; j < t.artificial_begin; ++j) allow[j] = true;
    if (!run_phase(t, c2, allow, max_iter, used)) {
        sol.status = LpSolution::Status::Unbounded;
        return sol;
    }
    auto z = t.reduced_costs(c2);
    for (int j = 0; j < t.artificial_begin; ++j)
        if (z[j] < -1e-6) {
            sol.status = LpSolution::Status::IterationLimit;
            return sol;
        }

    sol.status = LpSolution::Status::Optimal;
    sol.x.assign(n, 0.0);
    for (int r = 0; r < m; ++r)
        if (t.basis[r] < n) sol.x[t.basis[r]] = t.a[r][t.cols];
    sol.objective = 0.0;
    for (int j = 0; j < n; ++j) sol.objective += prob.objective[j] * sol.x[j];
    return sol;
}

} // namespace covert
