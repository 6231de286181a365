// Stochastic distributed oracle: a Markov chain over noise states, a success
// probability per state for learning queries, and noisy gradient responses
// whose reported noise statistic gates the learner's updates.
//
// States are indexed 0..W-1 throughout (also in serialized form); the highest
// index is the "best" state under the FOSD ordering.

#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covert/objective.hpp"
#include "covert/rng.hpp"

namespace covert {

struct OracleChain {
    std::vector<std::vector<double>> transition; // row-stochastic W x W
    std::vector<double> success_prob;            // per-state success probability of a learning query
    std::vector<double> noise_std;               // per-state response noise, >= 0

    int num_states() const { return static_cast<int>(transition.size()); }

    void validate() const {
        const std::size_t w = transition.size();
        if (w == 0) throw std::invalid_argument("OracleChain: empty transition matrix");
        if (success_prob.size() != w || noise_std.size() != w)
            throw std::invalid_argument("OracleChain: vector sizes do not match state count");
        for (std::size_t i = 0; i < w; ++i) {
            if (transition[i].size() != w)
                throw std::invalid_argument("OracleChain: transition matrix is not square");
            double row_sum = 0.0;
            for (double p : transition[i]) {
                if (p < 0.0) throw std::invalid_argument("OracleChain: negative transition entry");
                row_sum += p;
            }
            if (std::abs(row_sum - 1.0) > 1e-9)
                throw std::invalid_argument("OracleChain: row " + std::to_string(i) +
                                            " does not sum to 1");
            if (success_prob[i] < 0.0 || success_prob[i] > 1.0)
                throw std::invalid_argument("OracleChain: success_prob outside [0,1]");
            if (noise_std[i] < 0.0)
                throw std::invalid_argument("OracleChain: negative noise_std");
        }
    }
};

inline void to_json(nlohmann::json& j, const OracleChain& c) {
    j = nlohmann::json{{"transition", c.transition},
                       {"success_prob", c.success_prob},
                       {"noise_std", c.noise_std}};
}

inline void from_json(const nlohmann::json& j, OracleChain& c) {
    j.at("transition").get_to(c.transition);
    j.at("success_prob").get_to(c.success_prob);
    j.at("noise_std").get_to(c.noise_std);
}

struct GradientResponse {
    Vec gradient;
    double sigma_sq = 0.0; // reported noise statistic (bound on E||r||^2)
};

/// One FOSD violation: tail mass of row `hi` at `tail_from` is below row `lo`.
struct FosdViolation {
    int hi = 0;
    int lo = 0;
    int tail_from = 0;
};

struct FosdReport {
    bool pass = true;
    std::vector<FosdViolation> violations;
};

/// Checks first-order stochastic dominance of the transition rows: for every
/// pair i > j and every tail start l, sum_{k >= l} P(k|i) >= sum_{k >= l} P(k|j).
/// Violations are reported, never thrown; callers decide whether to proceed.
inline FosdReport validate_fosd(const OracleChain& chain) {
    chain.validate();
    const int w = chain.num_states();
    // tail[i][l] = sum_{k >= l} P(k | i)
    std::vector<std::vector<double>> tail(w, std::vector<double>(w, 0.0));
    for (int i = 0; i < w; ++i) {
        double s = 0.0;
        for (int l = w - 1; l >= 0; --l) {
            s += chain.transition[i][l];
            tail[i][l] = s;
        }
    }
    FosdReport report;
    for (int i = 1; i < w; ++i)
        for (int j = 0; j < i; ++j)
            for (int l = 0; l < w; ++l)
                if (tail[i][l] < tail[j][l] - 1e-12) {
                    report.pass = false;
                    report.violations.push_back({i, j, l});
                }
    return report;
}

/// Samples the next oracle state from the transition row of `state`.
inline int step_oracle(const OracleChain& chain, int state, Rng& rng) {
    if (state < 0 || state >= chain.num_states())
        throw std::out_of_range("step_oracle: state out of range");
    const auto& row = chain.transition[state];
    double r = rng.uniform();
    for (int k = 0; k + 1 < static_cast<int>(row.size()); ++k) {
        r -= row[k];
        if (r < 0.0) return k;
    }
    return chain.num_states() - 1;
}

/// Draws whether a learning query succeeds: probability g(state) when the
/// action is learn, never when obfuscating.
inline bool success_draw(const OracleChain& chain, int state, int action, Rng& rng) {
    if (state < 0 || state >= chain.num_states())
        throw std::out_of_range("success_draw: state out of range");
    if (action != 1) return false;
    return rng.bernoulli(chain.success_prob[state]);
}

/// Noisy gradient evaluation at `query` with the state's noise level. The
/// reported sigma_sq is the oracle's bound on E||r||^2: the exact gradient
/// norm plus the per-coordinate noise variance.
inline GradientResponse respond(const Objective& objective, const Vec& query, int state,
                                const OracleChain& chain, Rng& rng) {
    if (state < 0 || state >= chain.num_states())
        throw std::out_of_range("respond: state out of range");
    if (!objective.domain.contains(query))
        throw std::domain_error("respond: query outside objective domain");
    Vec g = objective.gradient(query);
    const double sd = chain.noise_std[state];
    GradientResponse resp;
    resp.sigma_sq = norm_sq(g) + static_cast<double>(g.size()) * sd * sd;
    if (sd > 0.0)
        for (double& gi : g) gi += rng.normal(0.0, sd);
    resp.gradient = std::move(g);
    return resp;
}

} // namespace covert
