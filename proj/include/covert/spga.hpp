// Structured policy gradient search for the randomized threshold policy: a
// sigmoidal two-threshold parametrization per (oracle, arrival) pair, SPSA
// perturbation gradients estimated from short simulated rollouts, and a
// primal-dual update on the policy parameters and the constraint multiplier.
// Needs no knowledge of the transition probabilities.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covert/cmdp.hpp"
#include "covert/io.hpp"
#include "covert/parallel.hpp"
#include "covert/rng.hpp"

namespace covert {

struct SigmoidPolicyParams {
    struct Entry {
        double theta1 = 0.0;
        double theta2 = 0.0;
        double h = 0.5;
    };
    std::vector<std::array<Entry, 2>> entries; // [oracle][arrival_flag]
    double tau = 0.5;

    static SigmoidPolicyParams uniform(int num_oracle_states, double theta1, double theta2,
                                       double h, double tau) {
        SigmoidPolicyParams p;
        p.tau = tau;
        p.entries.assign(num_oracle_states, {Entry{theta1, theta2, h}, Entry{theta1, theta2, h}});
        return p;
    }

    int num_parameters() const { return 3 * static_cast<int>(entries.size()) * 2; }

    double* parameter(int flat) {
        auto& e = entries[flat / 6][(flat / 3) % 2];
        switch (flat % 3) {
            case 0: return &e.theta1;
            case 1: return &e.theta2;
            default: return &e.h;
        }
    }
    const double* parameter(int flat) const {
        return const_cast<SigmoidPolicyParams*>(this)->parameter(flat);
    }
    bool is_h_parameter(int flat) const { return flat % 3 == 2; }

    void clamp_h() {
        for (auto& pair : entries)
            for (auto& e : pair) e.h = std::clamp(e.h, 0.0, 1.0);
    }
};

/// Two-sigmoid learn probability: h-weighted step near theta1 plus
/// (1-h)-weighted step near theta2. Forced to 0 on an empty queue.
inline double policy_prob(const SigmoidPolicyParams& params, const AugStateC& y) {
    if (y.queue == 0) return 0.0;
    const auto& e = params.entries[y.oracle][y.arrival > 0 ? 1 : 0];
    const double t = params.tau;
    const double s1 = 1.0 / (1.0 + std::exp((-double(y.queue) + e.theta1) / t));
    const double s2 = 1.0 / (1.0 + std::exp((-double(y.queue) + e.theta2) / t));
    return std::clamp(e.h * s1 + (1.0 - e.h) * s2, 0.0, 1.0);
}

enum class PerturbationMode {
    Rademacher, // +/-1 signs, every parameter perturbed (default)
    Mask01      // 0/1 mask, unperturbed parameters get zero gradient
};

enum class UpdateRule {
    // per-coordinate SPSA gradient: difference / (2 omega gamma_i)
    NormalizedPerCoordinate,
    // the raw cost differences, multiplier applied, broadcast to every
    // perturbed coordinate; moves on the scale of the printed recursion
    RawBroadcast
};

enum class XiUpdateMode {
    DecayFloor,     // max[(1 - kappa/rho) xi, xi + kappa (l - Lambda)]
    PlainProjection // max[0, xi + kappa (l - Lambda)]
};

enum class RolloutMode {
    Continue, // cost estimates are consecutive segments of one system trajectory
    Reset     // every estimate restarts from the configured initial state
};

struct SpgaConfig {
    double omega = 1.0;  // perturbation size in queue units
    double kappa0 = 0.5; // step size scale; kappa_n = kappa0 / n when decreasing
    bool constant_step = false;
    double kappa_const = 0.05;
    double rho = 20.0;
    double xi0 = 10.0;
    int rollout_len = 100; // T
    int iterations = 1000; // K
    double tau = 0.5;
    double initial_theta1 = 10.0;
    double initial_theta2 = 20.0;
    double initial_h = 0.5;
    PerturbationMode perturbation = PerturbationMode::Rademacher;
    UpdateRule update_rule = UpdateRule::NormalizedPerCoordinate;
    XiUpdateMode xi_update = XiUpdateMode::DecayFloor;
    RolloutMode rollout_mode = RolloutMode::Continue;
    AugStateC initial_state{0, 0, 0};
    // tracking mode: replace the environment at given iteration indices
    std::vector<std::pair<int, CmdpSpec>> regime_switches;

    double kappa(int n) const { return constant_step ? kappa_const : kappa0 / n; }

    void validate() const {
        if (omega <= 0.0 || kappa0 <= 0.0 || kappa_const <= 0.0 || rho <= 0.0 || tau <= 0.0)
            throw std::invalid_argument("SpgaConfig: scale parameters must be positive");
        if (xi0 < 0.0) throw std::invalid_argument("SpgaConfig: xi0 must be nonnegative");
        if (rollout_len < 1) throw std::invalid_argument("SpgaConfig: rollout_len must be >= 1");
        if (iterations < 0) throw std::invalid_argument("SpgaConfig: negative iteration count");
    }
};

struct CostPair {
    double privacy = 0.0;
    double learning = 0.0;
};

/// Empirical average privacy and learning cost of the sigmoid policy over a
/// T-step rollout. The state is taken and left in `y`, so callers can either
/// chain evaluations along one system trajectory or reset between them.
inline CostPair rollout_costs(const CmdpSpec& spec, const SigmoidPolicyParams& params, int T,
                              AugStateC& y, Rng& rng) {
    CostPair acc;
    for (int t = 0; t < T; ++t) {
        const int u = rng.bernoulli(policy_prob(params, y)) ? 1 : 0;
        acc.privacy += privacy_cost(spec, u, y);
        acc.learning += learning_cost(spec, u, y);
        const bool succ = (u == 1) && rng.bernoulli(spec.chain.success_prob[y.oracle]);
        y.queue = std::clamp(y.queue + y.arrival - (succ ? 1 : 0), 0, spec.queue_cap);
        y.oracle = step_oracle(spec.chain, y.oracle, rng);
        y.arrival = rng.bernoulli(spec.arrival_prob) ? spec.arrival_batch : 0;
    }
    acc.privacy /= T;
    acc.learning /= T;
    return acc;
}

enum class CostSelector { Privacy, Learning };

inline double estimate_avg_cost(CostSelector which, const SigmoidPolicyParams& params,
                                const CmdpSpec& spec, int T, AugStateC start, Rng& rng) {
    AugStateC y = start;
    const auto costs = rollout_costs(spec, params, T, y, rng);
    return which == CostSelector::Privacy ? costs.privacy : costs.learning;
}

struct SpgaIterateDiag {
    double l_hat = 0.0;      // learning-cost estimate at the unperturbed parameters
    double c_hat = 0.0;      // privacy estimate at the unperturbed parameters
    double multiplier = 0.0; // max[0, xi + rho (l_hat - Lambda)]
    std::vector<double> gamma; // the perturbation draw, for diagnostics
};

/// One SPSA step. `evaluate` returns empirical (privacy, learning) averages
/// for a given parameter vector; the production evaluator is a CMDP rollout,
/// tests may substitute deterministic surrogates.
inline SpgaIterateDiag spga_iterate(
    SigmoidPolicyParams& params, double& xi, const SpgaConfig& cfg, double constraint,
    double kappa, const std::function<CostPair(const SigmoidPolicyParams&, Rng&)>& evaluate,
    Rng& rng) {
    const int n_params = params.num_parameters();
    std::vector<double> gamma(n_params, 0.0);
    for (int i = 0; i < n_params; ++i) {
        if (cfg.perturbation == PerturbationMode::Rademacher)
            gamma[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
        else
            gamma[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }

    SigmoidPolicyParams plus = params, minus = params;
    for (int i = 0; i < n_params; ++i) {
        *plus.parameter(i) += cfg.omega * gamma[i];
        *minus.parameter(i) -= cfg.omega * gamma[i];
    }

    const CostPair at_plus = evaluate(plus, rng);
    const CostPair at_minus = evaluate(minus, rng);
    const CostPair at_center = evaluate(params, rng);

    SpgaIterateDiag diag;
    diag.l_hat = at_center.learning;
    diag.c_hat = at_center.privacy;
    diag.multiplier = std::max(0.0, xi + cfg.rho * (at_center.learning - constraint));
    diag.gamma = gamma;

    const double dc = at_plus.privacy - at_minus.privacy;
    const double dl = at_plus.learning - at_minus.learning;
    for (int i = 0; i < n_params; ++i) {
        if (gamma[i] == 0.0) continue; // masked out: no gradient information
        double step;
        if (cfg.update_rule == UpdateRule::NormalizedPerCoordinate) {
            const double denom = 2.0 * cfg.omega * gamma[i];
            step = dc / denom + (dl / denom) * diag.multiplier;
        } else {
            step = (dc + dl * diag.multiplier) * gamma[i];
        }
        *params.parameter(i) -= kappa * step;
    }
    params.clamp_h();

    if (cfg.xi_update == XiUpdateMode::DecayFloor)
        xi = std::max((1.0 - kappa / cfg.rho) * xi, xi + kappa * (at_center.learning - constraint));
    else
        xi = std::max(0.0, xi + kappa * (at_center.learning - constraint));
    return diag;
}

struct SpgaTraceRow {
    int iteration = 0;
    int oracle = 0;
    int arrival_flag = 0;
    double theta1 = 0.0;
    double theta2 = 0.0;
    double h = 0.0;
    double xi = 0.0;
    double privacy_est = 0.0;
    double learning_est = 0.0;
};

struct SpgaResult {
    SigmoidPolicyParams params;
    double xi = 0.0;
    std::vector<SpgaTraceRow> trace;
};

/// K iterations of the SPSA update against live CMDP rollouts, with optional
/// mid-run environment switches (tracking mode).
inline SpgaResult run_spga(const SpgaConfig& cfg, CmdpSpec spec, Rng rng,
                           bool record_trace = true) {
    cfg.validate();
    spec.validate();
    SpgaResult res;
    res.params = SigmoidPolicyParams::uniform(spec.chain.num_states(), cfg.initial_theta1,
                                              cfg.initial_theta2, cfg.initial_h, cfg.tau);
    res.xi = cfg.xi0;

    auto record = [&](int iteration, const SpgaIterateDiag& diag) {
        if (!record_trace) return;
        for (int o = 0; o < spec.chain.num_states(); ++o)
            for (int af = 0; af < 2; ++af) {
                const auto& e = res.params.entries[o][af];
                res.trace.push_back({iteration, o, af, e.theta1, e.theta2, e.h, res.xi,
                                     diag.c_hat, diag.l_hat});
            }
    };
    record(0, {}); // initial parameters

    AugStateC system_state = cfg.initial_state;
    std::size_t switch_at = 0;
    for (int n = 1; n <= cfg.iterations; ++n) {
        while (switch_at < cfg.regime_switches.size() &&
               cfg.regime_switches[switch_at].first == n) {
            spec = cfg.regime_switches[switch_at].second;
            spec.validate();
            system_state.queue = std::min(system_state.queue, spec.queue_cap);
            system_state.arrival = system_state.arrival > 0 ? spec.arrival_batch : 0;
            ++switch_at;
        }
        auto evaluate = [&](const SigmoidPolicyParams& p, Rng& r) {
            if (cfg.rollout_mode == RolloutMode::Continue)
                return rollout_costs(spec, p, cfg.rollout_len, system_state, r);
            AugStateC y = cfg.initial_state;
            return rollout_costs(spec, p, cfg.rollout_len, y, r);
        };
        const auto diag =
            spga_iterate(res.params, res.xi, cfg, spec.constraint, cfg.kappa(n), evaluate, rng);
        record(n, diag);
    }
    return res;
}

struct SpgaAveraged {
    std::vector<SpgaTraceRow> mean_trace; // run_spga trace layout, averaged over runs
    SigmoidPolicyParams mean_final;       // parameter-wise mean of the final iterates
    double mean_xi = 0.0;
};

/// Averages `runs` independent SPGA runs (seed + run index). Runs execute in
/// fixed-size chunks whose results merge in run order, so the averages do not
/// depend on scheduling.
inline SpgaAveraged run_spga_averaged(const SpgaConfig& cfg, const CmdpSpec& spec, int runs,
                                      std::uint64_t base_seed) {
    if (runs < 1) throw std::invalid_argument("run_spga_averaged: need at least one run");
    SpgaAveraged out;
    out.mean_final = SigmoidPolicyParams::uniform(spec.chain.num_states(), 0.0, 0.0, 0.0, cfg.tau);

    const int chunk = 8;
    std::vector<SpgaResult> slot(chunk);
    bool first = true;
    for (int begin = 0; begin < runs; begin += chunk) {
        const int count = std::min(chunk, runs - begin);
        parallel_for(count, [&](int i) {
            slot[i] = run_spga(cfg, spec, Rng(base_seed + std::uint64_t(begin + i)));
        });
        for (int i = 0; i < count; ++i) {
            const auto& res = slot[i];
            if (first) {
                out.mean_trace = res.trace;
                for (auto& row : out.mean_trace) {
                    row.theta1 = row.theta2 = row.h = row.xi = 0.0;
                    row.privacy_est = row.learning_est = 0.0;
                }
                first = false;
            }
            for (std::size_t r = 0; r < res.trace.size(); ++r) {
                out.mean_trace[r].theta1 += res.trace[r].theta1;
                out.mean_trace[r].theta2 += res.trace[r].theta2;
                out.mean_trace[r].h += res.trace[r].h;
                out.mean_trace[r].xi += res.trace[r].xi;
                out.mean_trace[r].privacy_est += res.trace[r].privacy_est;
                out.mean_trace[r].learning_est += res.trace[r].learning_est;
            }
            for (int p = 0; p < out.mean_final.num_parameters(); ++p)
                *out.mean_final.parameter(p) += *res.params.parameter(p);
            out.mean_xi += res.xi;
        }
    }
    const double inv = 1.0 / double(runs);
    for (auto& row : out.mean_trace) {
        row.theta1 *= inv;
        row.theta2 *= inv;
        row.h *= inv;
        row.xi *= inv;
        row.privacy_est *= inv;
        row.learning_est *= inv;
    }
    for (int p = 0; p < out.mean_final.num_parameters(); ++p) *out.mean_final.parameter(p) *= inv;
    out.mean_xi *= inv;
    return out;
}

/// Hard thresholds from the sigmoid parameters: round to the nearest
/// nonnegative integer, mixing weight h becomes the in-band probability.
inline RandThresholdPolicy extract_thresholds(const SigmoidPolicyParams& params,
                                              int arrival_batch) {
    RandThresholdPolicy pol;
    pol.arrival_batch = arrival_batch;
    pol.rules.assign(params.entries.size(), {});
    for (std::size_t o = 0; o < params.entries.size(); ++o)
        for (int af = 0; af < 2; ++af) {
            const auto& e = params.entries[o][af];
            int phi1 = static_cast<int>(std::max<long>(0, std::lround(e.theta1)));
            int phi2 = static_cast<int>(std::max<long>(0, std::lround(e.theta2)));
            if (phi1 > phi2) phi1 = phi2;
            pol.rules[o][af] = {phi1, phi2, std::clamp(e.h, 0.0, 1.0)};
        }
    return pol;
}

inline CsvWriter spga_trace_csv(const SpgaResult& res) {
    CsvWriter csv({"iteration", "oracle_state", "arrival_state", "theta1", "theta2", "h", "xi",
                   "privacy_est", "learning_est"});
    for (const auto& r : res.trace)
        csv.add_row({std::to_string(r.iteration), std::to_string(r.oracle),
                     std::to_string(r.arrival_flag), fmt_double(r.theta1), fmt_double(r.theta2),
                     fmt_double(r.h), fmt_double(r.xi), fmt_double(r.privacy_est),
                     fmt_double(r.learning_est)});
    return csv;
}

} // namespace covert
