// Infinite-horizon constrained MDP: minimize the average privacy cost subject
// to a bound on the average learning (delay) cost, over a queue of pending
// successful updates fed by batch arrivals. The Lagrangian relaxation is
// solved by relative value iteration on the capped chain; the constrained
// optimum is a randomized mixture of two threshold policies found by
// bisection on the multiplier.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covert/io.hpp"
#include "covert/oracle.hpp"
#include "covert/rng.hpp"

namespace covert {

struct AugStateC {
    int oracle = 0;  // 0..W-1
    int queue = 0;   // 0..queue_cap
    int arrival = 0; // pending arrival, 0 or arrival_batch
};

struct CmdpSpec {
    OracleChain chain;
    std::vector<double> privacy_cost_learn;      // privacy cost of a learning query, per oracle state
    std::vector<double> learning_cost_obfuscate; // delay cost per obfuscating step with work queued
    std::vector<double> learning_cost_learn;     // delay cost per learning step with work queued
    double constraint = 0.0;   // Lambda, bound on the average learning cost
    double arrival_prob = 0.0; // delta
    int arrival_batch = 1;     // updates added per arrival
    int queue_cap = 1;
    double overflow_cost = 0.0; // extra learning cost when arrivals hit a full queue

    int num_states() const { return chain.num_states() * (queue_cap + 1) * 2; }
    int state_index(int oracle, int queue, int arrival_flag) const {
        return (oracle * (queue_cap + 1) + queue) * 2 + arrival_flag;
    }
    int state_index(const AugStateC& y) const {
        return state_index(y.oracle, y.queue, y.arrival > 0 ? 1 : 0);
    }
    AugStateC state_at(int index) const {
        const int flag = index % 2;
        const int rest = index / 2;
        return {rest / (queue_cap + 1), rest % (queue_cap + 1), flag ? arrival_batch : 0};
    }

    void validate() const {
        chain.validate();
        const auto w = static_cast<std::size_t>(chain.num_states());
        if (privacy_cost_learn.size() != w || learning_cost_obfuscate.size() != w ||
            learning_cost_learn.size() != w)
            throw std::invalid_argument("CmdpSpec: cost table sizes do not match state count");
        for (std::size_t i = 0; i < w; ++i)
            if (privacy_cost_learn[i] < 0.0 || learning_cost_obfuscate[i] < 0.0 ||
                learning_cost_learn[i] < 0.0)
                throw std::invalid_argument("CmdpSpec: negative cost entry");
        if (constraint < 0.0) throw std::invalid_argument("CmdpSpec: negative constraint");
        if (arrival_prob < 0.0 || arrival_prob > 1.0)
            throw std::invalid_argument("CmdpSpec: arrival_prob outside [0,1]");
        if (arrival_batch <= 0) throw std::invalid_argument("CmdpSpec: arrival_batch must be positive");
        if (queue_cap < arrival_batch)
            throw std::invalid_argument("CmdpSpec: queue_cap must be >= arrival_batch");
        if (overflow_cost < 0.0) throw std::invalid_argument("CmdpSpec: negative overflow_cost");
    }
};

inline void to_json(nlohmann::json& j, const CmdpSpec& s) {
    j = nlohmann::json{{"oracle", s.chain},
                       {"privacy_cost_learn", s.privacy_cost_learn},
                       {"learning_cost_obfuscate", s.learning_cost_obfuscate},
                       {"learning_cost_learn", s.learning_cost_learn},
                       {"constraint", s.constraint},
                       {"arrival_prob", s.arrival_prob},
                       {"arrival_batch", s.arrival_batch},
                       {"queue_cap", s.queue_cap},
                       {"overflow_cost", s.overflow_cost}};
}

inline void from_json(const nlohmann::json& j, CmdpSpec& s) {
    j.at("oracle").get_to(s.chain);
    j.at("privacy_cost_learn").get_to(s.privacy_cost_learn);
    j.at("learning_cost_obfuscate").get_to(s.learning_cost_obfuscate);
    j.at("learning_cost_learn").get_to(s.learning_cost_learn);
    j.at("constraint").get_to(s.constraint);
    j.at("arrival_prob").get_to(s.arrival_prob);
    j.at("arrival_batch").get_to(s.arrival_batch);
    j.at("queue_cap").get_to(s.queue_cap);
    j.at("overflow_cost").get_to(s.overflow_cost);
}

// ---------------------------------------------------------------------------
// Instantaneous costs
// ---------------------------------------------------------------------------

inline double privacy_cost(const CmdpSpec& spec, int u, const AugStateC& y) {
    return u == 1 ? spec.privacy_cost_learn[y.oracle] : 0.0;
}

/// Learning (delay) cost with the empty-queue rule applied. This is the
/// quantity the CMDP constraint bounds.
inline double learning_cost(const CmdpSpec& spec, int u, const AugStateC& y) {
    if (y.queue == 0) return 0.0;
    return u == 1 ? spec.learning_cost_learn[y.oracle] : spec.learning_cost_obfuscate[y.oracle];
}

/// Extra learning cost charged when the queue is full and the pending arrival
/// is about to be dropped. A cap artifact: it reports and penalizes pressure
/// on the finite buffer but is not part of the constrained cost (counting it
/// there leaves no feasible policy once the load is heavy, since even
/// always-learn drops arrivals at a full queue).
inline double overflow_penalty(const CmdpSpec& spec, const AugStateC& y) {
    return (y.queue == spec.queue_cap && y.arrival > 0) ? spec.overflow_cost : 0.0;
}

inline double lagrangian_cost(const CmdpSpec& spec, int u, const AugStateC& y, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lagrangian_cost: negative multiplier");
    return privacy_cost(spec, u, y) +
           lambda * (learning_cost(spec, u, y) + overflow_penalty(spec, y));
}

// ---------------------------------------------------------------------------
// Transition kernel on the capped state space
// ---------------------------------------------------------------------------

/// Successors of (y, u): the pending arrival joins the queue, a successful
/// update removes one item, the oracle moves by its chain, and a fresh
/// arrival is drawn. Queue clamped to [0, queue_cap]; excess arrivals drop.
inline std::vector<std::pair<int, double>> cmdp_transitions(const CmdpSpec& spec,
                                                            const AugStateC& y, int u) {
    const int w = spec.chain.num_states();
    const double g = (u == 1) ? spec.chain.success_prob[y.oracle] : 0.0;
    const double delta = spec.arrival_prob;
    std::vector<std::pair<int, double>> out;
    out.reserve(w * 4);
    auto add = [&out](int s, double p) {
        if (p <= 0.0) return;
        for (auto& [s0, p0] : out)
            if (s0 == s) {
                p0 += p;
                return;
            }
        out.emplace_back(s, p);
    };
    for (int o2 = 0; o2 < w; ++o2) {
        const double po = spec.chain.transition[y.oracle][o2];
        if (po == 0.0) continue;
        for (int succ = 0; succ < 2; ++succ) {
            const double ps = succ ? g : 1.0 - g;
            if (ps == 0.0) continue;
            const int q2 = std::clamp(y.queue + y.arrival - succ, 0, spec.queue_cap);
            add(spec.state_index(o2, q2, 1), po * ps * delta);
            add(spec.state_index(o2, q2, 0), po * ps * (1.0 - delta));
        }
    }
    return out;
}

namespace detail {

/// Dense LU solve with partial pivoting; throws when the matrix is singular.
inline std::vector<double> solve_linear_system(std::vector<std::vector<double>> a,
                                               std::vector<double> b) {
    const int n = static_cast<int>(a.size());
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12)
            throw std::runtime_error("solve_linear_system: singular matrix (chain not unichain?)");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        const double inv = 1.0 / a[col][col];
        for (int r = col + 1; r < n; ++r) {
            const double f = a[r][col] * inv;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
        x[r] = s / a[r][r];
    }
    return x;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Exact stationary evaluation of a (possibly randomized) stationary policy
// ---------------------------------------------------------------------------

struct StationaryCosts {
    double privacy = 0.0;
    double learning = 0.0;
    std::vector<double> distribution;
};

/// Exact long-run average costs of a stationary policy given by its per-state
/// learn probability. Requires the induced chain to be unichain.
inline StationaryCosts evaluate_stationary(const CmdpSpec& spec,
                                           const std::function<double(const AugStateC&)>& prob_learn) {
    const int n = spec.num_states();
    // pi^T P = pi^T, sum pi = 1  ->  rows of (P^T - I), last row replaced by ones
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        const double pl = std::clamp(prob_learn(y), 0.0, 1.0);
        for (int u = 0; u < 2; ++u) {
            const double pu = u == 1 ? pl : 1.0 - pl;
            if (pu == 0.0) continue;
            for (const auto& [s2, p] : cmdp_transitions(spec, y, u)) a[s2][s] += pu * p;
        }
        a[s][s] -= 1.0;
    }
    std::vector<double> b(n, 0.0);
    for (int c = 0; c < n; ++c) a[n - 1][c] = 1.0;
    b[n - 1] = 1.0;

    StationaryCosts out;
    out.distribution = detail::solve_linear_system(std::move(a), std::move(b));
    for (double& p : out.distribution)
        if (p < 0.0 && p > -1e-12) p = 0.0; // wash out round-off
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        const double pl = std::clamp(prob_learn(y), 0.0, 1.0);
        const double pi = out.distribution[s];
        out.privacy += pi * (pl * privacy_cost(spec, 1, y) + (1.0 - pl) * privacy_cost(spec, 0, y));
        out.learning += pi * (pl * learning_cost(spec, 1, y) + (1.0 - pl) * learning_cost(spec, 0, y));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Average-cost Lagrangian solver (relative value iteration)
// ---------------------------------------------------------------------------

struct SliceThresholds {
    bool is_threshold = true;
    // threshold[oracle][arrival_flag]: smallest queue with action learn
    // (queue_cap + 1 when the slice never learns)
    std::vector<std::array<int, 2>> threshold;
};

/// Extracts per-(oracle, arrival) thresholds from a deterministic policy and
/// checks each slice is a 0 -> 1 step in the queue length.
inline SliceThresholds slice_thresholds(const CmdpSpec& spec, const std::vector<int>& policy) {
    SliceThresholds st;
    st.threshold.assign(spec.chain.num_states(), {spec.queue_cap + 1, spec.queue_cap + 1});
    for (int o = 0; o < spec.chain.num_states(); ++o)
        for (int af = 0; af < 2; ++af) {
            bool seen = false;
            for (int q = 0; q <= spec.queue_cap; ++q) {
                // states where the pending batch overshoots the cap are
                // exempt: the clamp absorbs a success there, so learning
                // cannot change the successor distribution and the optimal
                // action is trivially obfuscate regardless of threshold shape
                if (af == 1 && q + spec.arrival_batch - 1 >= spec.queue_cap) continue;
                const int u = policy[spec.state_index(o, q, af)];
                if (u == 1 && !seen) {
                    seen = true;
                    st.threshold[o][af] = q;
                } else if (u == 0 && seen) {
                    st.is_threshold = false;
                }
            }
        }
    return st;
}

struct AvgCostSolution {
    std::vector<int> policy; // deterministic, tie-break obfuscate
    double gain = 0.0;       // psi, accurate to final_span
    int iterations = 0;
    double final_span = 0.0; // achieved span; can sit above the target near a
                             // multiplier where two actions tie (the iteration
                             // then alternates between the tied optima)
    SliceThresholds structure;
};

struct RviOptions {
    double span_tol = 1e-9; // relative to max(1, |gain|, lambda): the cost scale
    long max_iterations = 1000000;
    double aperiodicity = 0.1;          // self-loop weight added to every action
    bool overflow_in_objective = false; // see overflow_penalty
};

/// Relative value iteration for the unconstrained Lagrangian MDP at a fixed
/// multiplier. The aperiodicity transform (a state-independent self-loop)
/// leaves the gain and the optimal policy unchanged.
inline AvgCostSolution solve_avg_lagrangian(const CmdpSpec& spec, double lambda,
                                            const RviOptions& opts = {}) {
    spec.validate();
    if (lambda < 0.0) throw std::invalid_argument("solve_avg_lagrangian: negative multiplier");
    const int n = spec.num_states();
    const double tau = opts.aperiodicity;

    std::vector<std::array<std::vector<std::pair<int, double>>, 2>> kernel(n);
    std::vector<std::array<double, 2>> cost(n);
    for (int s = 0; s < n; ++s) {
        const AugStateC y = spec.state_at(s);
        for (int u = 0; u < 2; ++u) {
            kernel[s][u] = cmdp_transitions(spec, y, u);
            cost[s][u] = privacy_cost(spec, u, y) + lambda * learning_cost(spec, u, y);
            if (opts.overflow_in_objective) cost[s][u] += lambda * overflow_penalty(spec, y);
        }
    }

    std::vector<double> h(n, 0.0), th(n, 0.0);
    AvgCostSolution sol;
    sol.policy.assign(n, 0);
    double span = std::numeric_limits<double>::infinity();
    double tol = opts.span_tol;
    // near a multiplier where two actions tie, the span bottoms out at the
    // indifference gap instead of contracting; accept a stalled span that is
    // still far below the cost scale
    double best_span = span;
    long since_improvement = 0;
    bool stalled_ok = false;
    long it = 0;
    for (; it < opts.max_iterations; ++it) {
        for (int s = 0; s < n; ++s) {
            std::array<double, 2> q;
            for (int u = 0; u < 2; ++u) {
                double acc = cost[s][u] + tau * h[s];
                for (const auto& [s2, p] : kernel[s][u]) acc += (1.0 - tau) * p * h[s2];
                q[u] = acc;
            }
            const int best_u = q[1] < q[0] ? 1 : 0; // ties keep obfuscate
            th[s] = q[best_u];
            sol.policy[s] = best_u;
        }
        double lo = th[0] - h[0], hi = lo;
        for (int s = 1; s < n; ++s) {
            const double d = th[s] - h[s];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        span = hi - lo;
        sol.gain = 0.5 * (hi + lo);
        tol = opts.span_tol * std::max({1.0, std::abs(sol.gain), lambda});
        if (span < tol) break;
        if (span < 0.99 * best_span) {
            best_span = span;
            since_improvement = 0;
        } else if (++since_improvement > 25000) {
            if (span <= 1e-3 * std::max({1.0, std::abs(sol.gain), lambda})) {
                stalled_ok = true; // flapping between tied optima; the policy
                break;             // is valid and callers evaluate it exactly
            }
            char msg[128];
            std::snprintf(msg, sizeof(msg),
                          "solve_avg_lagrangian: span stalled at %.3e (tol %.3e)", span, tol);
            throw std::runtime_error(msg);
        }
        const double offset = th[0];
        for (int s = 0; s < n; ++s) h[s] = th[s] - offset;
    }
    if (span >= tol && !stalled_ok) {
        char msg[128];
        std::snprintf(msg, sizeof(msg), "solve_avg_lagrangian: no convergence, span = %.3e",
                      span);
        throw std::runtime_error(msg);
    }
    sol.iterations = static_cast<int>(it) + 1;
    sol.final_span = span;
    sol.structure = slice_thresholds(spec, sol.policy);
    return sol;
}

/// Discounted counterpart, exposed for structural checks at a fixed beta.
inline std::pair<std::vector<double>, std::vector<int>> solve_discounted_lagrangian(
    const CmdpSpec& spec, double lambda, double beta, double tol = 1e-10) {
    spec.validate();
    if (beta <= 0.0 || beta >= 1.0)
        throw std::invalid_argument("solve_discounted_lagrangian: beta must be in (0,1)");
    const int n = spec.num_states();
    std::vector<double> v(n, 0.0), nv(n, 0.0);
    std::vector<int> policy(n, 0);
    const double stop = tol * (1.0 - beta) / (2.0 * beta);
    for (long it = 0; it < 1000000; ++it) {
        double diff = 0.0;
        for (int s = 0; s < n; ++s) {
            const AugStateC y = spec.state_at(s);
            double best = std::numeric_limits<double>::infinity();
            int best_u = 0;
            for (int u = 0; u < 2; ++u) {
                double q = privacy_cost(spec, u, y) + lambda * learning_cost(spec, u, y);
                for (const auto& [s2, p] : cmdp_transitions(spec, y, u)) q += beta * p * v[s2];
                if (q < best) {
                    best = q;
                    best_u = u;
                }
            }
            nv[s] = best;
            policy[s] = best_u;
            diff = std::max(diff, std::abs(nv[s] - v[s]));
        }
        v.swap(nv);
        if (diff < stop) break;
    }
    return {v, policy};
}

// ---------------------------------------------------------------------------
// Randomized two-threshold policy and the constrained solver
// ---------------------------------------------------------------------------

struct ThresholdRule {
    int phi1 = 0;   // below: obfuscate
    int phi2 = 0;   // at or above: learn
    double p = 1.0; // learn probability inside [phi1, phi2)
};

struct RandThresholdPolicy {
    int arrival_batch = 1;
    std::vector<std::array<ThresholdRule, 2>> rules; // [oracle][arrival_flag]

    double prob_learn(const AugStateC& y) const {
        const auto& r = rules[y.oracle][y.arrival > 0 ? 1 : 0];
        if (y.queue < r.phi1) return 0.0;
        if (y.queue >= r.phi2) return 1.0;
        return r.p;
    }
};

inline nlohmann::json policy_json(const RandThresholdPolicy& pol) {
    nlohmann::json rules = nlohmann::json::array();
    for (std::size_t o = 0; o < pol.rules.size(); ++o)
        for (int af = 0; af < 2; ++af)
            rules.push_back({{"oracle_state", o},
                             {"arrival_state", af ? pol.arrival_batch : 0},
                             {"phi1", pol.rules[o][af].phi1},
                             {"phi2", pol.rules[o][af].phi2},
                             {"p", pol.rules[o][af].p}});
    return nlohmann::json{{"arrival_batch", pol.arrival_batch}, {"rules", rules}};
}

struct CmdpSolution {
    RandThresholdPolicy policy;        // two-threshold summary of the mixture
    std::vector<double> mixture;       // exact per-state learn probability
    double lambda_lo = 0.0;
    double lambda_hi = 0.0;
    double mix_p_learn = 1.0; // learn probability where the brackets disagree
    double privacy = 0.0;     // exact stationary objective of the mixture
    double learning = 0.0;    // exact stationary constraint value
    bool constrained = false; // false when the multiplier-free optimum is feasible
    AvgCostSolution base_lo;  // bracket policy below the crossing (learns less)
    AvgCostSolution base_hi;  // bracket policy above the crossing (learns more)

    std::function<double(const AugStateC&)> mixture_fn(const CmdpSpec& spec) const {
        return [this, &spec](const AugStateC& y) { return mixture[spec.state_index(y)]; };
    }
};

namespace detail {

inline std::function<double(const AugStateC&)> deterministic_policy_fn(
    const CmdpSpec& spec, const std::vector<int>& policy) {
    return [&spec, policy](const AugStateC& y) {
        return static_cast<double>(policy[spec.state_index(y)]);
    };
}

/// State-wise mixture of two deterministic policies: the common action where
/// they agree, learn with probability p where they disagree.
inline std::vector<double> mix_policies(const std::vector<int>& less_learning,
                                        const std::vector<int>& more_learning, double p) {
    std::vector<double> probs(less_learning.size(), 0.0);
    for (std::size_t s = 0; s < probs.size(); ++s) {
        if (less_learning[s] == more_learning[s])
            probs[s] = less_learning[s];
        else
            probs[s] = more_learning[s] == 1 ? p : 1.0 - p;
    }
    return probs;
}

inline RandThresholdPolicy policy_from_thresholds(const CmdpSpec& spec,
                                                  const SliceThresholds& less_learning,
                                                  const SliceThresholds& more_learning, double p) {
    RandThresholdPolicy pol;
    pol.arrival_batch = spec.arrival_batch;
    pol.rules.assign(spec.chain.num_states(), {});
    for (int o = 0; o < spec.chain.num_states(); ++o)
        for (int af = 0; af < 2; ++af) {
            int t_low = more_learning.threshold[o][af];
            int t_high = less_learning.threshold[o][af];
            if (t_low > t_high) std::swap(t_low, t_high);
            pol.rules[o][af] = {t_low, t_high, p};
        }
    return pol;
}

} // namespace detail

/// Solves the constrained MDP. Bisects the multiplier until two adjacent
/// deterministic optima bracket the learning constraint, then fixes the
/// learn probability on their disagreement set so the exact stationary
/// learning cost meets the constraint (to eval_tol). The spec must be
/// feasible: always-learn has to satisfy the constraint.
///
/// The returned `mixture` is the exact policy; `policy` is its two-threshold
/// summary, which coincides with the mixture whenever both bracket policies
/// are threshold-shaped.
inline CmdpSolution solve_cmdp(const CmdpSpec& spec, double lambda_resolution = 1e-8,
                               double eval_tol = 1e-9) {
    spec.validate();

    // feasibility: the most aggressive learning policy must meet the constraint
    const auto always_learn = [](const AugStateC& y) { return y.queue > 0 ? 1.0 : 0.0; };
    const auto feas = evaluate_stationary(spec, always_learn);
    if (feas.learning > spec.constraint + 1e-12)
        throw std::runtime_error("solve_cmdp: infeasible, always-learn has learning cost " +
                                 std::to_string(feas.learning) + " > constraint " +
                                 std::to_string(spec.constraint));

    CmdpSolution sol;
    auto lo = solve_avg_lagrangian(spec, 0.0);
    const auto lo_costs = evaluate_stationary(spec, detail::deterministic_policy_fn(spec, lo.policy));
    if (lo_costs.learning <= spec.constraint + 1e-12) {
        // unconstrained optimum already feasible
        sol.policy = detail::policy_from_thresholds(spec, lo.structure, lo.structure, 1.0);
        sol.mixture = detail::mix_policies(lo.policy, lo.policy, 1.0);
        sol.mix_p_learn = 1.0;
        sol.privacy = lo_costs.privacy;
        sol.learning = lo_costs.learning;
        sol.base_lo = lo;
        sol.base_hi = lo;
        return sol;
    }
    sol.constrained = true;

    double max_c = 0.0, max_l = 0.0;
    for (double c : spec.privacy_cost_learn) max_c = std::max(max_c, c);
    for (double l : spec.learning_cost_obfuscate) max_l = std::max(max_l, l);
    for (double l : spec.learning_cost_learn) max_l = std::max(max_l, l);
    if (max_l <= 0.0)
        throw std::runtime_error("solve_cmdp: learning cost identically zero yet infeasible");
    const double lambda_max = 1e4 * std::max(max_c, 1.0) / max_l;

    auto hi = solve_avg_lagrangian(spec, lambda_max);
    auto hi_costs = evaluate_stationary(spec, detail::deterministic_policy_fn(spec, hi.policy));
    if (hi_costs.learning > spec.constraint + 1e-12)
        throw std::runtime_error("solve_cmdp: no bracket below lambda_max = " +
                                 std::to_string(lambda_max));

    double lam_lo = 0.0, lam_hi = lambda_max;
    while (lam_hi - lam_lo > lambda_resolution) {
        const double mid = 0.5 * (lam_lo + lam_hi);
        auto cand = solve_avg_lagrangian(spec, mid);
        const auto costs =
            evaluate_stationary(spec, detail::deterministic_policy_fn(spec, cand.policy));
        if (costs.learning > spec.constraint + 1e-12) {
            lam_lo = mid;
            lo = std::move(cand);
        } else {
            lam_hi = mid;
            hi = std::move(cand);
            hi_costs = costs;
        }
    }
    sol.lambda_lo = lam_lo;
    sol.lambda_hi = lam_hi;

    double p_star = 1.0;
    StationaryCosts mix_costs = hi_costs;
    if (std::abs(hi_costs.learning - spec.constraint) > eval_tol) {
        // bisect the learn probability on the disagreement set against the
        // exact stationary learning cost (state-wise randomization makes it
        // nonlinear in p)
        auto costs_at = [&](double p) {
            const auto probs = detail::mix_policies(lo.policy, hi.policy, p);
            return evaluate_stationary(
                spec, [&](const AugStateC& y) { return probs[spec.state_index(y)]; });
        };
        double p_lo = 0.0, p_hi = 1.0;
        for (int it = 0; it < 200 && p_hi - p_lo > 1e-15; ++it) {
            const double mid = 0.5 * (p_lo + p_hi);
            const auto costs = costs_at(mid);
            if (std::abs(costs.learning - spec.constraint) <= eval_tol) {
                p_lo = p_hi = mid;
                break;
            }
            if (costs.learning > spec.constraint)
                p_lo = mid; // not learning enough yet
            else
                p_hi = mid;
        }
        p_star = 0.5 * (p_lo + p_hi);
        mix_costs = costs_at(p_star);
        // degenerate objectives: when the pure more-learning bracket costs no
        // more privacy, prefer it over randomizing
        if (hi_costs.privacy <= mix_costs.privacy + 1e-12) {
            p_star = 1.0;
            mix_costs = hi_costs;
        }
    }

    sol.mixture = detail::mix_policies(lo.policy, hi.policy, p_star);
    sol.policy = p_star == 1.0
                     ? detail::policy_from_thresholds(spec, hi.structure, hi.structure, 1.0)
                     : detail::policy_from_thresholds(spec, lo.structure, hi.structure, p_star);
    sol.mix_p_learn = p_star;
    sol.privacy = mix_costs.privacy;
    sol.learning = mix_costs.learning;
    sol.base_lo = std::move(lo);
    sol.base_hi = std::move(hi);
    return sol;
}

// ---------------------------------------------------------------------------
// Queue stability (sufficient drift condition)
// ---------------------------------------------------------------------------

struct StabilityReport {
    bool stable_guaranteed = false;
    double lhs = 0.0; // delta * M / g_min
    double rhs = 0.0; // 1 - Lambda / l(0, best state)
    std::string note; // "sufficient, not necessary" caveats and guards
};

inline StabilityReport check_queue_stability(const CmdpSpec& spec) {
    spec.validate();
    StabilityReport rep;
    double g_min = 1.0;
    for (double g : spec.chain.success_prob) g_min = std::min(g_min, g);
    const double l_best = spec.learning_cost_obfuscate.back();
    rep.rhs = l_best > 0.0 ? 1.0 - spec.constraint / l_best
                           : -std::numeric_limits<double>::infinity();
    if (g_min <= 0.0) {
        rep.lhs = std::numeric_limits<double>::infinity();
        rep.stable_guaranteed = false;
        rep.note = "g_min = 0: drift condition cannot hold (divide-by-zero guard)";
        return rep;
    }
    rep.lhs = spec.arrival_prob * spec.arrival_batch / g_min;
    rep.stable_guaranteed = rep.lhs < rep.rhs;
    rep.note = "sufficient condition only; a failing check does not prove instability";
    return rep;
}

// ---------------------------------------------------------------------------
// Long-run simulator
// ---------------------------------------------------------------------------

struct SimTraceRow {
    long t = 0;
    int oracle = 0;
    int queue = 0;
    int arrival = 0;
    int action = 0;
    double privacy = 0.0;
    double learning = 0.0;
};

struct SimResult {
    double avg_privacy = 0.0;
    double avg_learning = 0.0;
    std::array<long, 2> action_counts = {0, 0};
    int max_queue = 0;
    long overflow_count = 0; // transitions that dropped arrivals at the cap
    std::vector<SimTraceRow> rows; // filled only when recording is requested
};

/// Simulates the queue dynamics under any stationary policy (given as a
/// per-state learn probability). Reproducible for a fixed seed.
inline SimResult simulate_cmdp(const CmdpSpec& spec,
                               const std::function<double(const AugStateC&)>& prob_learn, long horizon,
                               Rng& rng, AugStateC start = {}, bool record_rows = false) {
    spec.validate();
    if (horizon < 1) throw std::invalid_argument("simulate_cmdp: horizon must be >= 1");
    SimResult res;
    if (record_rows) res.rows.reserve(horizon);
    AugStateC y = start;
    for (long t = 0; t < horizon; ++t) {
        const double pl = std::clamp(prob_learn(y), 0.0, 1.0);
        const int u = rng.bernoulli(pl) ? 1 : 0;
        const double pc = privacy_cost(spec, u, y);
        const double lc = learning_cost(spec, u, y);
        res.avg_privacy += pc;
        res.avg_learning += lc;
        ++res.action_counts[u];
        res.max_queue = std::max(res.max_queue, y.queue);
        if (record_rows) res.rows.push_back({t, y.oracle, y.queue, y.arrival, u, pc, lc});

        const bool succ = (u == 1) && rng.bernoulli(spec.chain.success_prob[y.oracle]);
        const int raw_queue = y.queue + y.arrival - (succ ? 1 : 0);
        if (raw_queue > spec.queue_cap) ++res.overflow_count;
        y.queue = std::clamp(raw_queue, 0, spec.queue_cap);
        y.oracle = step_oracle(spec.chain, y.oracle, rng);
        y.arrival = rng.bernoulli(spec.arrival_prob) ? spec.arrival_batch : 0;
    }
    res.avg_privacy /= static_cast<double>(horizon);
    res.avg_learning /= static_cast<double>(horizon);
    return res;
}

inline CsvWriter sim_trace_csv(const SimResult& res) {
    CsvWriter csv({"t", "oracle_state", "queue", "arrival", "action", "privacy_cost",
                   "learning_cost"});
    for (const auto& r : res.rows)
        csv.add_row({std::to_string(r.t), std::to_string(r.oracle), std::to_string(r.queue),
                     std::to_string(r.arrival), std::to_string(r.action), fmt_double(r.privacy),
                     fmt_double(r.learning)});
    return csv;
}

} // namespace covert
