// Occupation-measure linear program for the constrained average-cost MDP.
// This is the independent cross-check for solve_cmdp: same kernel and costs,
// entirely different solution route (exact LP over stationary state-action
// frequencies instead of value iteration plus multiplier bisection).

#pragma once

#include <stdexcept>
#include <vector>

#include "covert/cmdp.hpp"
#include "covert/simplex.hpp"

namespace covert {

struct OccupationSolution {
    double privacy = 0.0;  // optimal average privacy cost
    double learning = 0.0; // learning cost of the LP optimum (= Lambda when binding)
    std::vector<double> occupation;  // x(s,u), laid out [state][action]
    std::vector<double> prob_learn;  // randomized policy on recurrent states
};

inline OccupationSolution lp_occupation_oracle(const CmdpSpec& spec) {
    spec.validate();
    const int n = spec.num_states();
    const int nv = 2 * n;
    if (nv > 5000)
        throw std::invalid_argument("lp_occupation_oracle: instance too large (" +
                                    std::to_string(nv) + " state-action pairs > 5000)");

    LpProblem lp;
    lp.num_vars = nv;
    lp.objective.assign(nv, 0.0);
    const auto var = [n](int s, int u) { return 2 * s + u; };
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        for (int u = 0; u < 2; ++u) lp.objective[var(s, u)] = privacy_cost(spec, u, y);
    }

    // flow balance: outflow of s' equals inflow under the occupation measure;
    // the balance rows sum to zero, so one (the last) is dropped as redundant
    lp.rows.reserve(n + 1);
    for (int s2 = 0; s2 < n; ++s2) {
        LpRow row;
        row.coeffs.assign(nv, 0.0);
        row.coeffs[var(s2, 0)] += 1.0;
        row.coeffs[var(s2, 1)] += 1.0;
        row.relation = '=';
        row.rhs = 0.0;
        lp.rows.push_back(std::move(row));
    }
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        for (int u = 0; u < 2; ++u)
            for (const auto& [s2, p] : cmdp_transitions(spec, y, u))
                lp.rows[s2].coeffs[var(s, u)] -= p;
    }
    lp.rows.pop_back();
    {
        LpRow norm;
        norm.coeffs.assign(nv, 1.0);
        norm.relation = '=';
        norm.rhs = 1.0;
        lp.rows.push_back(std::move(norm));
    }
    {
        LpRow constraint;
        constraint.coeffs.assign(nv, 0.0);
        for (int s = 0; s < n; ++s) {
            const AugStateC y = spec.state_at(s);
            for (int u = 0; u < 2; ++u)
                constraint.coeffs[var(s, u)] = learning_cost(spec, u, y);
        }
        constraint.relation = '<';
        constraint.rhs = spec.constraint;
        lp.rows.push_back(std::move(constraint));
    }

    const auto lps = solve_lp(lp);
    switch (lps.status) {
        case LpSolution::Status::Optimal:
            break;
        case LpSolution::Status::Infeasible:
            throw std::runtime_error("lp_occupation_oracle: infeasible program");
        case LpSolution::Status::Unbounded:
            throw std::runtime_error("lp_occupation_oracle: unbounded program");
        default:
            throw std::runtime_error("lp_occupation_oracle: solver did not converge");
    }

    OccupationSolution out;
    out.occupation = lps.x;
    out.privacy = lps.objective;
    out.prob_learn.assign(n, 0.0);
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        const double x0 = lps.x[var(s, 0)], x1 = lps.x[var(s, 1)];
        out.learning += x0 * learning_cost(spec, 0, y) + x1 * learning_cost(spec, 1, y);
        if (x0 + x1 > 1e-12) out.prob_learn[s] = x1 / (x0 + x1);
    }
    return out;
}

} // namespace covert
