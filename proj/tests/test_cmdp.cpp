#include <doctest.h>

#include "covert/cmdp.hpp"
#include "test_helpers.hpp"

using namespace covert;
using covert::testing::experiment_cmdp;

namespace {

CmdpSpec small_cmdp() {
    CmdpSpec spec;
    spec.chain.transition = {{0.7, 0.3}, {0.2, 0.8}};
    spec.chain.success_prob = {0.3, 0.9};
    spec.chain.noise_std = {0.0, 0.0};
    spec.privacy_cost_learn = {0.5, 1.0};
    spec.learning_cost_obfuscate = {0.6, 0.6};
    spec.learning_cost_learn = {0.0, 0.0};
    spec.constraint = 0.2;
    spec.arrival_prob = 0.15;
    spec.arrival_batch = 2;
    spec.queue_cap = 8;
    spec.overflow_cost = 50.0;
    return spec;
}

} // namespace

TEST_CASE("lagrangian_cost: definition arithmetic") {
    const auto spec = experiment_cmdp();
    // lambda = 0 reduces to the privacy cost
    CHECK(lagrangian_cost(spec, 1, {2, 5, 0}, 0.0) == doctest::Approx(1.8));
    CHECK(lagrangian_cost(spec, 0, {2, 5, 0}, 0.0) == doctest::Approx(0.0));
    // empty queue kills the learning cost
    CHECK(lagrangian_cost(spec, 0, {1, 0, 0}, 5.0) == doctest::Approx(0.0));
    CHECK(lagrangian_cost(spec, 1, {1, 0, 0}, 5.0) == doctest::Approx(0.8));
    // c(1, state 1) = 0.8, l(0, state 1) = 0.6, lambda = 2, u = 0, queue > 0
    CHECK(lagrangian_cost(spec, 0, {1, 3, 0}, 2.0) == doctest::Approx(1.2));
    // overflow penalty applies when the queue is full and an arrival is
    // pending, scaled with the multiplier like any learning cost
    CHECK(lagrangian_cost(spec, 0, {1, 40, 4}, 1.0) == doctest::Approx(0.6 + 100.0));
    CHECK(lagrangian_cost(spec, 0, {1, 40, 4}, 0.0) == doctest::Approx(0.0));
    CHECK(overflow_penalty(spec, {1, 40, 4}) == doctest::Approx(100.0));
    CHECK(overflow_penalty(spec, {1, 39, 4}) == doctest::Approx(0.0));
    CHECK(overflow_penalty(spec, {1, 40, 0}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(lagrangian_cost(spec, 0, {0, 0, 0}, -1.0), std::invalid_argument);
}

TEST_CASE("cmdp transitions sum to one and respect the queue recursion") {
    const auto spec = small_cmdp();
    for (int s = 0; s < spec.num_states(); ++s)
        for (int u = 0; u < 2; ++u) {
            double mass = 0.0;
            for (const auto& [s2, p] : cmdp_transitions(spec, spec.state_at(s), u)) {
                mass += p;
                CHECK(p >= 0.0);
            }
            CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
        }
    // pending arrival joins the queue next step
    const auto dist = cmdp_transitions(spec, {0, 3, 2}, 0);
    for (const auto& [s2, p] : dist) CHECK(spec.state_at(s2).queue == 5);
}

TEST_CASE("solve_avg_lagrangian at lambda 0: always obfuscate, zero gain") {
    const auto spec = small_cmdp();
    const auto sol = solve_avg_lagrangian(spec, 0.0);
    CHECK(sol.gain == doctest::Approx(0.0).epsilon(1e-8));
    for (int u : sol.policy) CHECK(u == 0);
}

TEST_CASE("solve_avg_lagrangian at huge lambda: learn whenever the queue is nonempty") {
    const auto spec = small_cmdp();
    const auto sol = solve_avg_lagrangian(spec, 1e6);
    for (int s = 0; s < spec.num_states(); ++s)
        if (spec.state_at(s).queue > 0) CHECK(sol.policy[s] == 1);
    CHECK(sol.structure.is_threshold);
}

TEST_CASE("average learning cost is nonincreasing in lambda") {
    const auto spec = small_cmdp();
    double prev = std::numeric_limits<double>::infinity();
    for (double lam : {0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0}) {
        const auto sol = solve_avg_lagrangian(spec, lam);
        const auto costs = evaluate_stationary(
            spec, [&](const AugStateC& y) { return double(sol.policy[spec.state_index(y)]); });
        CHECK(costs.learning <= prev + 1e-9);
        prev = costs.learning;
    }
}

TEST_CASE("threshold structure of the lambda policies away from the kink regime") {
    // the empty-queue kink in the delay cost can reward learning only at
    // queue length one for small multipliers; outside that regime the
    // policies are clean 0 -> 1 steps per (oracle, arrival) slice
    const auto spec = small_cmdp();
    for (double lam : {0.0, 1.0, 3.0, 10.0, 100.0})
        CHECK(solve_avg_lagrangian(spec, lam).structure.is_threshold);
    // the kink regime itself: structure report flags the inversion
    CHECK_FALSE(solve_avg_lagrangian(spec, 0.3).structure.is_threshold);
}

TEST_CASE("overflow-in-objective option penalizes dwelling at the cap") {
    // with the penalty in the inner objective the solver works to keep the
    // queue off the cap; at the same multiplier the plain solver does not
    const auto spec = experiment_cmdp();
    RviOptions with;
    with.overflow_in_objective = true;
    const auto plain = solve_avg_lagrangian(spec, 1.0);
    const auto penalized = solve_avg_lagrangian(spec, 1.0, with);
    CHECK(penalized.gain >= plain.gain); // extra cost term cannot lower the gain
    const auto occupancy = [&](const AvgCostSolution& sol) {
        const auto costs = evaluate_stationary(
            spec, [&](const AugStateC& y) { return double(sol.policy[spec.state_index(y)]); });
        double at_cap = 0.0;
        for (int s = 0; s < spec.num_states(); ++s)
            if (spec.state_at(s).queue == spec.queue_cap) at_cap += costs.distribution[s];
        return at_cap;
    };
    CHECK(occupancy(penalized) <= occupancy(plain) + 1e-12);
}

TEST_CASE("threshold summary is consistent with the exact mixture") {
    CmdpSpec spec;
    spec.chain.transition = {{1.0}};
    spec.chain.success_prob = {0.6};
    spec.chain.noise_std = {0.0};
    spec.privacy_cost_learn = {1.0};
    spec.learning_cost_obfuscate = {0.6};
    spec.learning_cost_learn = {0.0};
    spec.constraint = 0.05;
    spec.arrival_prob = 0.25;
    spec.arrival_batch = 1;
    spec.queue_cap = 10;
    spec.overflow_cost = 100.0;
    const auto sol = solve_cmdp(spec);
    const auto exact = evaluate_stationary(spec, sol.mixture_fn(spec));
    CHECK(std::abs(exact.learning - spec.constraint) < 1e-6);
    int band = 0;
    for (int s = 0; s < spec.num_states(); ++s) {
        const auto y = spec.state_at(s);
        const auto& rule = sol.policy.rules[y.oracle][y.arrival > 0 ? 1 : 0];
        // below the lower summary threshold neither bracket learns
        if (y.queue < rule.phi1) CHECK(sol.mixture[s] == 0.0);
        if (sol.mixture[s] > 0.0 && sol.mixture[s] < 1.0) ++band;
        // when both brackets are clean steps the summary is exact
        if (sol.base_lo.structure.is_threshold && sol.base_hi.structure.is_threshold)
            CHECK(sol.policy.prob_learn(y) == doctest::Approx(sol.mixture[s]));
    }
    CHECK(band > 0);
}

TEST_CASE("discounted solver exposes the structural check at fixed beta") {
    const auto spec = small_cmdp();
    const auto [v, policy] = solve_discounted_lagrangian(spec, 5.0, 0.95);
    CHECK(slice_thresholds(spec, policy).is_threshold);
    // values are finite and nonnegative
    for (double x : v) {
        CHECK(x >= 0.0);
        CHECK(std::isfinite(x));
    }
}

TEST_CASE("evaluate_stationary: no arrivals drain the queue to empty") {
    auto spec = small_cmdp();
    spec.arrival_prob = 0.0;
    // always-learn: every queue level drains, so the chain is unichain with
    // all stationary mass at queue = 0 and zero long-run costs
    const auto costs =
        evaluate_stationary(spec, [](const AugStateC& y) { return y.queue > 0 ? 1.0 : 0.0; });
    CHECK(costs.privacy == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(costs.learning == doctest::Approx(0.0).epsilon(1e-9));
    double mass0 = 0.0;
    for (int s = 0; s < spec.num_states(); ++s)
        if (spec.state_at(s).queue == 0) mass0 += costs.distribution[s];
    CHECK(mass0 == doctest::Approx(1.0).epsilon(1e-9));

    // always-obfuscate with no arrivals freezes the queue: every level is its
    // own closed class, which the unichain solver must reject
    CHECK_THROWS_AS(evaluate_stationary(spec, [](const AugStateC&) { return 0.0; }),
                    std::runtime_error);
}

TEST_CASE("solve_cmdp: slack constraint returns the unconstrained optimum with p = 1") {
    auto spec = small_cmdp();
    spec.constraint = 100.0; // even always-obfuscate is feasible
    const auto sol = solve_cmdp(spec);
    CHECK_FALSE(sol.constrained);
    CHECK(sol.mix_p_learn == doctest::Approx(1.0));
    CHECK(sol.privacy == doctest::Approx(0.0).epsilon(1e-9));
    for (const auto& rules : sol.policy.rules)
        for (const auto& r : rules) CHECK(r.phi1 == r.phi2); // empty band
}

TEST_CASE("solve_cmdp: zero constraint forces always-learn") {
    auto spec = small_cmdp();
    spec.constraint = 0.0;
    const auto sol = solve_cmdp(spec);
    CHECK(sol.learning == doctest::Approx(0.0).epsilon(1e-9));
    // learning must happen whenever the queue is nonempty
    for (const auto& rules : sol.policy.rules)
        for (const auto& r : rules) CHECK(r.phi2 <= 1);
}

TEST_CASE("solve_cmdp: infeasible spec is rejected") {
    auto spec = small_cmdp();
    spec.learning_cost_learn = {0.5, 0.5}; // learning itself costs more than the bound
    spec.learning_cost_obfuscate = {0.6, 0.6};
    spec.constraint = 0.0;
    // queue is nonempty with positive probability, so L > 0 for every policy
    CHECK_THROWS_AS(solve_cmdp(spec), std::runtime_error);
}

TEST_CASE("experiment cmdp: constraint met exactly under stationary evaluation") {
    const auto spec = experiment_cmdp();
    const auto sol = solve_cmdp(spec);
    CHECK(sol.constrained);
    CHECK(std::abs(sol.learning - spec.constraint) < 1e-6);

    // exact stationary evaluation of the returned mixture reproduces the solution
    const auto costs = evaluate_stationary(spec, sol.mixture_fn(spec));
    CHECK(costs.learning == doctest::Approx(sol.learning).epsilon(1e-9));
    CHECK(costs.privacy == doctest::Approx(sol.privacy).epsilon(1e-9));

    // the mixture only randomizes where the bracket policies disagree
    int randomized = 0;
    for (double p : sol.mixture)
        if (p > 0.0 && p < 1.0) ++randomized;
    CHECK(randomized > 0);
}

TEST_CASE("check_queue_stability: arithmetic of the drift condition") {
    auto spec = experiment_cmdp();
    SUBCASE("no arrivals is always certified") {
        spec.arrival_prob = 0.0;
        const auto rep = check_queue_stability(spec);
        CHECK(rep.stable_guaranteed);
        CHECK(rep.lhs == doctest::Approx(0.0));
    }
    SUBCASE("experiment parameters are not certified by the sufficient condition") {
        const auto rep = check_queue_stability(spec);
        CHECK_FALSE(rep.stable_guaranteed);
        CHECK(rep.lhs == doctest::Approx(4.0));
        CHECK(rep.rhs == doctest::Approx(1.0 - 0.2 / 0.6));
    }
    SUBCASE("light arrivals with a strong oracle are certified") {
        spec.arrival_prob = 0.01;
        spec.arrival_batch = 2;
        spec.chain.success_prob = {0.5, 0.7, 0.9};
        const auto rep = check_queue_stability(spec);
        CHECK(rep.stable_guaranteed);
        CHECK(rep.lhs == doctest::Approx(0.04));
        CHECK(rep.rhs == doctest::Approx(1.0 - 0.2 / 0.6));
    }
    SUBCASE("zero success probability trips the guard") {
        spec.chain.success_prob = {0.0, 0.5, 0.9};
        const auto rep = check_queue_stability(spec);
        CHECK_FALSE(rep.stable_guaranteed);
        CHECK(rep.note.find("g_min") != std::string::npos);
    }
}

TEST_CASE("simulate_cmdp: empty system stays empty and costless") {
    auto spec = small_cmdp();
    spec.arrival_prob = 0.0;
    for (double threshold : {1.0, 3.0}) {
        Rng rng(9);
        const auto res = simulate_cmdp(
            spec, [&](const AugStateC& y) { return y.queue >= threshold ? 1.0 : 0.0; }, 2000,
            rng);
        CHECK(res.avg_privacy == doctest::Approx(0.0));
        CHECK(res.avg_learning == doctest::Approx(0.0));
        CHECK(res.max_queue == 0);
        CHECK(res.overflow_count == 0);
    }
}

TEST_CASE("simulate_cmdp: deterministic drain with certain successes") {
    auto spec = small_cmdp();
    spec.arrival_prob = 0.0;
    spec.chain.success_prob = {1.0, 1.0};
    Rng rng(10);
    const int k = 5;
    const auto res = simulate_cmdp(
        spec, [](const AugStateC& y) { return y.queue > 0 ? 1.0 : 0.0; }, 20, rng, {0, k, 0},
        true);
    for (long t = 0; t < 20; ++t)
        CHECK(res.rows[t].queue == std::max(0, k - int(t)));
}

TEST_CASE("simulate_cmdp: empirical learning cost approaches the constraint") {
    const auto spec = experiment_cmdp();
    const auto sol = solve_cmdp(spec);
    double mean = 0.0;
    const int seeds = 20;
    for (int i = 0; i < seeds; ++i) {
        Rng rng(1000 + i);
        const auto res = simulate_cmdp(spec, sol.mixture_fn(spec), 100000, rng);
        mean += res.avg_learning;
    }
    mean /= seeds;
    CHECK(std::abs(mean - spec.constraint) < 0.01);
}

TEST_CASE("simulation trace csv carries the documented columns") {
    auto spec = small_cmdp();
    Rng rng(31);
    const auto res = simulate_cmdp(
        spec, [](const AugStateC& y) { return y.queue > 0 ? 1.0 : 0.0; }, 50, rng, {0, 3, 0},
        true);
    REQUIRE(res.rows.size() == 50);
    const auto csv = sim_trace_csv(res).str();
    CHECK(csv.rfind("t,oracle_state,queue,arrival,action,privacy_cost,learning_cost", 0) == 0);
}

TEST_CASE("cmdp spec json round trip") {
    const auto spec = experiment_cmdp();
    nlohmann::json j = spec;
    const auto back = j.get<CmdpSpec>();
    CHECK(back.privacy_cost_learn == spec.privacy_cost_learn);
    CHECK(back.queue_cap == spec.queue_cap);
    CHECK(back.arrival_batch == spec.arrival_batch);
    CHECK(back.constraint == doctest::Approx(spec.constraint));
    CHECK(back.chain.transition == spec.chain.transition);
}

TEST_CASE("policy json lists one rule per oracle-arrival pair") {
    const auto spec = experiment_cmdp();
    const auto sol = solve_cmdp(spec);
    const auto j = policy_json(sol.policy);
    CHECK(j["rules"].size() == 6);
    CHECK(j["arrival_batch"] == 4);
}
