// Coupled learn/obfuscate protocol: a controlled SGD whose updates are gated
// by the action and the reported noise statistic, a parallel obfuscating
// trajectory, weighted selection of the final estimate, and the eavesdropper's
// proportional-sampling estimator over the observed query sequence.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covert/io.hpp"
#include "covert/objective.hpp"
#include "covert/oracle.hpp"
#include "covert/rng.hpp"

namespace covert {

/// Successful updates needed to reach an epsilon-close critical point:
/// M = ceil(c * exp(L sigma^2 / (2 epsilon))).
inline int required_updates(double lipschitz, double sigma, double epsilon, double scale = 1.0) {
    if (lipschitz <= 0.0 || sigma <= 0.0 || epsilon <= 0.0 || scale <= 0.0)
        throw std::invalid_argument("required_updates: inputs must be positive");
    const double exponent = lipschitz * sigma * sigma / (2.0 * epsilon);
    if (exponent > 700.0)
        throw std::overflow_error(
            "required_updates: exponent overflows, choose a larger epsilon");
    // tiny slack so values at integers (epsilon -> inf gives exactly 1) do not
    // get bumped up by round-off
    const double m = std::ceil(scale * std::exp(exponent) - 1e-9);
    return static_cast<int>(m);
}

enum class ObfuscationMode { Mirror, RandomWalk, SubsetData };

struct LearnerState {
    Vec x_hat; // true iterate
    Vec z_hat; // obfuscating iterate
    int successes = 0;
    std::vector<long> success_times;
    std::vector<Vec> success_iterates; // query point of each successful update
    std::vector<double> success_steps; // step size used at each success
    double sigma_threshold_sq = 1.0;   // gate: accept responses with sigma_sq <= this
    double epsilon = 0.1;
    std::function<double(int)> step_rule = [](int m) { return 1.0 / m; };
    int obf_steps = 0; // separate step counter for the obfuscating trajectory
    DomainBox domain;
};

struct QueryRecord {
    long k = 0;
    Vec query;
    int action = 0;
    bool obfuscating = false; // trajectory tag
    bool success = false;
};

struct QueryLog {
    std::vector<QueryRecord> records;
};

/// The query the eavesdropper sees: the true iterate when learning, the
/// obfuscating iterate otherwise. Appends the tagged record.
inline const Vec& pose_query(const LearnerState& state, QueryLog& log, int u) {
    const Vec& q = u == 1 ? state.x_hat : state.z_hat;
    log.records.push_back({static_cast<long>(log.records.size()), q, u, u == 0, false});
    return q;
}

/// Controlled SGD update: the iterate moves only for a learning action whose
/// reported noise passes the gate. Returns whether the update was successful.
inline bool learn_step(LearnerState& state, const GradientResponse& response, int u, long time_k) {
    if (u != 1) return false;
    if (response.sigma_sq > state.sigma_threshold_sq) return false;
    if (response.gradient.size() != state.x_hat.size())
        throw std::invalid_argument("learn_step: gradient dimension mismatch");
    const double mu = state.step_rule(state.successes + 1);
    state.success_iterates.push_back(state.x_hat);
    state.success_steps.push_back(mu);
    state.success_times.push_back(time_k);
    state.x_hat = state.domain.project(axpy(-mu, response.gradient, state.x_hat));
    ++state.successes;
    return true;
}

/// Advances the obfuscating trajectory on obfuscating actions. Mirror mode
/// ascends the gradient evaluated at the reflection of z through the domain
/// midpoint, which makes z track the reflected descent path. Subset-data mode
/// descends the eavesdropper-visible sub-objective. Random-walk takes a
/// bounded uniform step.
inline void obfuscate_step(LearnerState& state, const GradientResponse& response, int u,
                           ObfuscationMode mode, Rng& rng, double walk_step = 0.1) {
    if (u != 0) return;
    const double mu = state.step_rule(state.obf_steps + 1);
    switch (mode) {
        case ObfuscationMode::Mirror:
            state.z_hat = state.domain.project(axpy(+mu, response.gradient, state.z_hat));
            break;
        case ObfuscationMode::SubsetData:
            state.z_hat = state.domain.project(axpy(-mu, response.gradient, state.z_hat));
            break;
        case ObfuscationMode::RandomWalk: {
            Vec step(state.z_hat.size());
            for (double& s : step) s = rng.uniform(-walk_step, walk_step);
            state.z_hat = state.domain.project(axpy(1.0, step, state.z_hat));
            break;
        }
    }
    ++state.obf_steps;
}

/// Final estimate: a success index sampled with probability proportional to
/// its step size, returning the iterate recorded there.
inline Vec pick_final_estimate(const LearnerState& state, Rng& rng) {
    if (state.successes < 1)
        throw std::runtime_error("pick_final_estimate: no successful updates");
    const auto idx = rng.categorical(state.success_steps);
    return state.success_iterates[idx];
}

// ---------------------------------------------------------------------------
// Eavesdropper: proportional sampling over two recovered trajectories
// ---------------------------------------------------------------------------

struct EavesdropperReport {
    double posterior_first = 1.0; // P of the trajectory seeded by the first query
    int chosen = 0;               // 0 = first-started trajectory
    Vec estimate;
    std::vector<int> assignment; // recovered trajectory index per query
    bool matches_tags = true;    // against ground-truth tags when supplied
    double separation_ratio = 0.0; // between-center distance over within spread
};

namespace detail {

inline double dist_sq(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

/// Core of the proportional-sampling estimate, for an already-partitioned
/// query sequence: posterior mass by query counts, the estimate is the last
/// query of the heavier trajectory (first-started wins ties).
inline EavesdropperReport estimate_from_partition(const std::vector<Vec>& queries,
                                                  const std::vector<int>& assignment) {
    if (queries.empty())
        throw std::invalid_argument("estimate_from_partition: empty query sequence");
    long count[2] = {0, 0};
    long last[2] = {-1, -1};
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const int a = assignment[i] ? 1 : 0;
        ++count[a];
        last[a] = static_cast<long>(i);
    }
    EavesdropperReport rep;
    rep.assignment = assignment;
    rep.posterior_first = double(count[0]) / double(count[0] + count[1]);
    const int first_started = assignment[0] ? 1 : 0;
    if (count[0] == count[1])
        rep.chosen = first_started;
    else
        rep.chosen = count[1] > count[0] ? 1 : 0;
    rep.estimate = queries[last[rep.chosen]];
    return rep;
}

/// Untagged estimator: re-partitions the sequence into two SGD trajectories
/// by two-center clustering seeded with the first query and the query
/// farthest from it, then applies the proportional-sampling rule. When
/// ground-truth tags are supplied the recovered partition is validated
/// against them (up to relabeling of the second cluster).
inline EavesdropperReport eavesdropper_estimate(const std::vector<Vec>& queries,
                                                const std::vector<int>* tags = nullptr) {
    if (queries.empty()) throw std::invalid_argument("eavesdropper_estimate: empty sequence");
    const std::size_t n = queries.size();
    std::vector<int> assignment(n, 0);

    std::size_t far = 0;
    double far_d = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        const double d = detail::dist_sq(queries[i], queries[0]);
        if (d > far_d) {
            far_d = d;
            far = i;
        }
    }
    if (far_d > 0.0) {
        Vec c0 = queries[0], c1 = queries[far];
        for (int round = 0; round < 4; ++round) {
            for (std::size_t i = 0; i < n; ++i)
                assignment[i] =
                    detail::dist_sq(queries[i], c1) < detail::dist_sq(queries[i], c0) ? 1 : 0;
            assignment[0] = 0; // cluster 0 is the first-started trajectory
            Vec sum0(queries[0].size(), 0.0), sum1(queries[0].size(), 0.0);
            long n0 = 0, n1 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                auto& sum = assignment[i] ? sum1 : sum0;
                (assignment[i] ? n1 : n0) += 1;
                for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += queries[i][d];
            }
            if (n0 > 0)
                for (double& v : sum0) v /= n0;
            if (n1 > 0)
                for (double& v : sum1) v /= n1;
            c0 = sum0;
            if (n1 > 0) c1 = sum1;
        }
        double within = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            within = std::max(within,
                              detail::dist_sq(queries[i], assignment[i] ? c1 : c0));
        auto rep = estimate_from_partition(queries, assignment);
        rep.separation_ratio =
            within > 0.0 ? std::sqrt(detail::dist_sq(c0, c1) / within) : 1e9;
        if (tags) {
            rep.matches_tags = true;
            for (std::size_t i = 0; i < n; ++i)
                if (((*tags)[i] != 0) != (rep.assignment[i] != 0)) rep.matches_tags = false;
        }
        return rep;
    }
    // all queries identical: one trajectory
    auto rep = estimate_from_partition(queries, assignment);
    rep.separation_ratio = 0.0;
    if (tags)
        for (std::size_t i = 0; i < n; ++i)
            if ((*tags)[i] != 0) rep.matches_tags = false;
    return rep;
}

inline EavesdropperReport eavesdropper_estimate(const QueryLog& log, bool validate_tags = true) {
    std::vector<Vec> queries;
    std::vector<int> tags;
    queries.reserve(log.records.size());
    for (const auto& r : log.records) {
        queries.push_back(r.query);
        tags.push_back(r.obfuscating ? 1 : 0);
    }
    return eavesdropper_estimate(queries, validate_tags ? &tags : nullptr);
}

/// Step-length distributions of the two tagged trajectories, for inspecting
/// how distinguishable their shapes are. Nothing is asserted on these; equal
/// priors over the trajectories are the eavesdropper's assumption, not
/// something the learner can enforce.
struct TrajectoryShape {
    std::vector<double> true_steps;
    std::vector<double> obfuscating_steps;
};

inline TrajectoryShape trajectory_step_lengths(const QueryLog& log) {
    TrajectoryShape shape;
    const Vec* last[2] = {nullptr, nullptr};
    for (const auto& r : log.records) {
        const int t = r.obfuscating ? 1 : 0;
        if (last[t]) {
            double d = 0.0;
            for (std::size_t i = 0; i < r.query.size(); ++i) {
                const double dx = r.query[i] - (*last[t])[i];
                d += dx * dx;
            }
            (t ? shape.obfuscating_steps : shape.true_steps).push_back(std::sqrt(d));
        }
        last[t] = &r.query;
    }
    return shape;
}

inline CsvWriter query_log_csv(const QueryLog& log) {
    std::vector<std::string> cols = {"k", "action", "trajectory_tag", "success"};
    const std::size_t dim = log.records.empty() ? 0 : log.records.front().query.size();
    for (std::size_t d = 0; d < dim; ++d) cols.push_back("q" + std::to_string(d));
    CsvWriter csv(cols);
    for (const auto& r : log.records) {
        std::vector<std::string> row = {std::to_string(r.k), std::to_string(r.action),
                                        r.obfuscating ? "obfuscating" : "true",
                                        r.success ? "1" : "0"};
        for (double q : r.query) row.push_back(fmt_double(q));
        csv.add_row(row);
    }
    return csv;
}

// ---------------------------------------------------------------------------
// Whole-protocol driver
// ---------------------------------------------------------------------------

struct ProtocolConfig {
    ObfuscationMode obf_mode = ObfuscationMode::Mirror;
    double walk_step = 0.1;
    // sub-objective visible to the eavesdropper (subset-data mode)
    const Objective* sub_objective = nullptr;
    double sub_noise_std = 0.0;
};

struct ProtocolResult {
    LearnerState state;
    QueryLog log;
    std::vector<int> oracle_states;
};

/// Runs the coupled protocol: each step asks the schedule for an action,
/// poses the query that action dictates, obtains the oracle response, and
/// advances whichever trajectory the action selects.
inline ProtocolResult run_protocol(const Objective& objective, const OracleChain& chain,
                                   LearnerState init, long num_queries,
                                   const std::function<int(long, const LearnerState&)>& schedule,
                                   const ProtocolConfig& cfg, int initial_oracle_state, Rng& rng) {
    ProtocolResult res;
    res.state = std::move(init);
    int o = initial_oracle_state;
    for (long k = 0; k < num_queries; ++k) {
        const int u = schedule(k, res.state);
        res.oracle_states.push_back(o);
        pose_query(res.state, res.log, u);
        if (u == 1) {
            const auto response = respond(objective, res.state.x_hat, o, chain, rng);
            if (learn_step(res.state, response, u, static_cast<long>(k)))
                res.log.records.back().success = true;
        } else {
            GradientResponse response;
            switch (cfg.obf_mode) {
                case ObfuscationMode::Mirror:
                    // the mirrored descent consumes the gradient at the
                    // reflection of the obfuscating iterate
                    response = respond(objective, objective.domain.reflect(res.state.z_hat), o,
                                       chain, rng);
                    break;
                case ObfuscationMode::SubsetData: {
                    if (!cfg.sub_objective)
                        throw std::invalid_argument(
                            "run_protocol: subset-data mode needs a sub-objective");
                    Vec g = cfg.sub_objective->gradient(res.state.z_hat);
                    if (cfg.sub_noise_std > 0.0)
                        for (double& gi : g) gi += rng.normal(0.0, cfg.sub_noise_std);
                    response.gradient = std::move(g);
                    break;
                }
                case ObfuscationMode::RandomWalk:
                    response.gradient.assign(res.state.z_hat.size(), 0.0);
                    break;
            }
            obfuscate_step(res.state, response, u, cfg.obf_mode, rng, cfg.walk_step);
        }
        o = step_oracle(chain, o, rng);
    }
    return res;
}

inline ProtocolResult run_protocol(const Objective& objective, const OracleChain& chain,
                                   LearnerState init, const std::vector<int>& actions,
                                   const ProtocolConfig& cfg, int initial_oracle_state, Rng& rng) {
    return run_protocol(
        objective, chain, std::move(init), static_cast<long>(actions.size()),
        [&actions](long k, const LearnerState&) { return actions[k]; }, cfg,
        initial_oracle_state, rng);
}

} // namespace covert
