// Experiment runner for the covert optimization library. Every subcommand
// reads a JSON config, runs deterministically under --seed, and emits CSV and
// JSON files stamped with the seed and a hash of the config.
//
// Exit codes: 0 success, 1 runtime/solver error, 2 config error,
//             3 structure violation under --strict.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "covert/covert_sgd.hpp"
#include "covert/fedsim.hpp"
#include "covert/finite_mdp.hpp"
#include "covert/occupation_lp.hpp"
#include "covert/parallel.hpp"
#include "covert/spga.hpp"
#include "covert/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace covert;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    int runs = 1;
    std::string out_dir = ".";
    bool strict = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file")->required();
    cmd->add_option("--seed", opts.seed, "global random seed");
    cmd->add_option("--runs", opts.runs, "independent runs to average")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_flag("--strict", opts.strict, "nonzero exit on structure violations");
}

struct RunContext {
    json config;
    std::string hash;
    std::uint64_t seed;
    int runs;
    fs::path out;
    bool strict;
};

RunContext make_context(const CommonOpts& opts) {
    RunContext ctx;
    ctx.config = read_json(opts.config_path);
    ctx.hash = config_hash(ctx.config);
    ctx.seed = opts.seed;
    ctx.runs = opts.runs;
    ctx.out = opts.out_dir;
    ctx.strict = opts.strict;
    fs::create_directories(ctx.out);
    return ctx;
}

json stamped(const RunContext& ctx, json payload) {
    payload["seed"] = ctx.seed;
    payload["config_hash"] = ctx.hash;
    return payload;
}

void write_csv(const RunContext& ctx, CsvWriter csv, const std::string& name) {
    csv.stamp(ctx.seed, ctx.hash);
    csv.write(ctx.out / name);
}

Objective objective_from_json(const json& j) {
    const std::string type = j.value("type", "quadratic");
    if (type != "quadratic")
        throw std::invalid_argument("objective: unknown type '" + type + "'");
    return make_quadratic(j.at("center").get<Vec>(), j.value("box_halfwidth", 4.0));
}

ObfuscationMode obf_mode_from(const std::string& s) {
    if (s == "mirror") return ObfuscationMode::Mirror;
    if (s == "random-walk") return ObfuscationMode::RandomWalk;
    if (s == "subset-data") return ObfuscationMode::SubsetData;
    throw std::invalid_argument("unknown obfuscation mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// solve-mdp
// ---------------------------------------------------------------------------

int cmd_solve_mdp(const RunContext& ctx) {
    FiniteMdpSpec spec;
    spec.chain = ctx.config.at("oracle").get<OracleChain>();
    const auto& m = ctx.config.at("mdp");
    spec.horizon = m.at("horizon").get<int>();
    spec.updates_needed = m.at("updates_needed").get<int>();
    spec.learn_cost = m.at("learn_cost").get<std::vector<double>>();
    if (m.contains("terminal_cost"))
        spec.terminal_cost = m.at("terminal_cost").get<std::vector<double>>();
    else
        spec.terminal_cost = FiniteMdpSpec::default_terminal_cost(
            spec.updates_needed, m.value("terminal_cost_scale", 1.0));
    spec.validate();

    const auto sol = solve_backward_dp(spec);
    const auto thresholds = verify_threshold_structure(sol);
    const auto mono = verify_value_monotonicity(spec, sol);
    const auto sub = verify_submodularity(sol);

    write_csv(ctx, dp_solution_csv(sol), "solution.csv");
    write_json(ctx.out / "thresholds.json", stamped(ctx, thresholds_json(thresholds)));
    json report;
    report["threshold_structure_pass"] = thresholds.pass;
    report["threshold_violations"] = thresholds.violations.size();
    report["value_monotone_in_queries_left"] = mono.epoch_pass;
    report["value_monotone_in_learner_state"] = mono.learner_pass;
    report["value_monotone_in_oracle_state"] = mono.oracle_pass;
    report["oracle_cost_ordering_applicable"] = mono.oracle_ordering_applicable;
    report["submodular_pass"] = sub.pass;
    report["terminal_cost_integer_convex"] = spec.terminal_cost_integer_convex();
    report["fosd_pass"] = validate_fosd(spec.chain).pass;
    write_json(ctx.out / "structure_report.json", stamped(ctx, report));

    const bool structural_ok =
        thresholds.pass && mono.epoch_pass && mono.learner_pass && sub.pass &&
        (!mono.oracle_ordering_applicable || mono.oracle_pass);
    if (ctx.strict && !structural_ok) return 3;
    return 0;
}

// ---------------------------------------------------------------------------
// solve-cmdp
// ---------------------------------------------------------------------------

int cmd_solve_cmdp(const RunContext& ctx) {
    const auto spec = ctx.config.at("cmdp").get<CmdpSpec>();
    spec.validate();
    const auto sol = solve_cmdp(spec);
    const auto lp = lp_occupation_oracle(spec);
    const auto stability = check_queue_stability(spec);

    json out = policy_json(sol.policy);
    out["lambda_lo"] = sol.lambda_lo;
    out["lambda_hi"] = sol.lambda_hi;
    out["mix_p_learn"] = sol.mix_p_learn;
    out["privacy_cost"] = sol.privacy;
    out["learning_cost"] = sol.learning;
    out["constrained"] = sol.constrained;
    // exact per-state learn probabilities; the threshold rules above are a
    // summary that can be lossy when the bracket policies disagree away from
    // their first-learn points
    out["mixture_prob_learn"] = sol.mixture;
    write_json(ctx.out / "policy.json", stamped(ctx, out));

    json cross;
    cross["lp_privacy"] = lp.privacy;
    cross["lp_learning"] = lp.learning;
    cross["mixture_privacy"] = sol.privacy;
    cross["difference"] = std::abs(lp.privacy - sol.privacy);
    cross["agree_1e6"] = std::abs(lp.privacy - sol.privacy) < 1e-6;
    cross["constraint_met_1e6"] =
        !sol.constrained || std::abs(sol.learning - spec.constraint) < 1e-6;
    write_json(ctx.out / "lp_crosscheck.json", stamped(ctx, cross));

    json stab;
    stab["stable_guaranteed"] = stability.stable_guaranteed;
    stab["lhs"] = stability.lhs;
    stab["rhs"] = stability.rhs;
    stab["note"] = stability.note;
    write_json(ctx.out / "stability.json", stamped(ctx, stab));

    // a short seeded trajectory under the solved mixture
    Rng rng(ctx.seed);
    const auto sim = simulate_cmdp(spec, sol.mixture_fn(spec), 2000, rng, {}, true);
    write_csv(ctx, sim_trace_csv(sim), "trace.csv");

    const bool structural_ok =
        sol.base_lo.structure.is_threshold && sol.base_hi.structure.is_threshold;
    if (ctx.strict && !structural_ok) return 3;
    return 0;
}

// ---------------------------------------------------------------------------
// run-spga
// ---------------------------------------------------------------------------

SpgaConfig spga_config_from(const json& j) {
    SpgaConfig cfg;
    cfg.omega = j.value("omega", cfg.omega);
    cfg.kappa0 = j.value("kappa0", cfg.kappa0);
    cfg.constant_step = j.value("constant_step", cfg.constant_step);
    cfg.kappa_const = j.value("kappa_const", cfg.kappa_const);
    cfg.rho = j.value("rho", cfg.rho);
    cfg.xi0 = j.value("xi0", cfg.xi0);
    cfg.rollout_len = j.value("rollout_len", cfg.rollout_len);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.initial_theta1 = j.value("initial_theta1", cfg.initial_theta1);
    cfg.initial_theta2 = j.value("initial_theta2", cfg.initial_theta2);
    cfg.initial_h = j.value("initial_h", cfg.initial_h);
    if (j.contains("initial_state")) {
        const auto& s = j.at("initial_state");
        cfg.initial_state = {s.value("oracle", 0), s.value("queue", 0), s.value("arrival", 0)};
    }
    if (j.contains("perturbation"))
        cfg.perturbation = j.at("perturbation") == "mask01" ? PerturbationMode::Mask01
                                                            : PerturbationMode::Rademacher;
    if (j.contains("xi_update"))
        cfg.xi_update = j.at("xi_update") == "plain" ? XiUpdateMode::PlainProjection
                                                     : XiUpdateMode::DecayFloor;
    if (j.contains("switches"))
        for (const auto& sw : j.at("switches"))
            cfg.regime_switches.push_back(
                {sw.at("iteration").get<int>(), sw.at("cmdp").get<CmdpSpec>()});
    return cfg;
}

int cmd_run_spga(const RunContext& ctx) {
    const auto spec = ctx.config.at("cmdp").get<CmdpSpec>();
    spec.validate();
    const auto cfg = spga_config_from(ctx.config.at("spga"));

    const auto avg = run_spga_averaged(cfg, spec, ctx.runs, ctx.seed);
    SpgaResult printable;
    printable.trace = avg.mean_trace;
    write_csv(ctx, spga_trace_csv(printable), "trace.csv");

    const auto learned = extract_thresholds(avg.mean_final, spec.arrival_batch);
    write_json(ctx.out / "learned_policy.json", stamped(ctx, policy_json(learned)));

    // reference thresholds from the model-based solver
    json cmp;
    try {
        const auto ref = solve_cmdp(spec);
        cmp["reference"] = policy_json(ref.policy);
        json diffs = json::array();
        for (std::size_t o = 0; o < learned.rules.size(); ++o)
            for (int af = 0; af < 2; ++af)
                diffs.push_back({{"oracle_state", o},
                                 {"arrival_state", af ? spec.arrival_batch : 0},
                                 {"learned_phi2", learned.rules[o][af].phi2},
                                 {"reference_phi2", ref.policy.rules[o][af].phi2},
                                 {"abs_diff", std::abs(learned.rules[o][af].phi2 -
                                                       ref.policy.rules[o][af].phi2)}});
        cmp["phi2_comparison"] = diffs;
    } catch (const std::exception& e) {
        cmp["reference_error"] = e.what();
    }
    write_json(ctx.out / "comparison.json", stamped(ctx, cmp));
    return 0;
}

// ---------------------------------------------------------------------------
// run-covert
// ---------------------------------------------------------------------------

int cmd_run_covert(const RunContext& ctx) {
    const auto objective = objective_from_json(ctx.config.at("objective"));
    const auto chain = ctx.config.at("oracle").get<OracleChain>();
    chain.validate();
    const auto& p = ctx.config.at("protocol");

    LearnerState init;
    init.domain = objective.domain;
    init.x_hat = p.at("initial_point").get<Vec>();
    init.z_hat = p.contains("obf_initial_point") ? p.at("obf_initial_point").get<Vec>()
                                                 : objective.domain.reflect(init.x_hat);
    const double sigma = p.at("sigma_threshold").get<double>();
    init.sigma_threshold_sq = sigma * sigma;
    init.epsilon = p.value("epsilon", 0.05);

    const int M = required_updates(objective.lipschitz, sigma, init.epsilon,
                                   p.value("required_scale", 1.0));
    const long N = p.value("num_queries", 4 * M);

    ProtocolConfig pcfg;
    pcfg.obf_mode = obf_mode_from(p.value("obf_mode", "mirror"));
    pcfg.walk_step = p.value("walk_step", 0.1);
    Objective sub;
    if (pcfg.obf_mode == ObfuscationMode::SubsetData) {
        sub = make_quadratic(p.at("sub_center").get<Vec>(),
                             ctx.config.at("objective").value("box_halfwidth", 4.0));
        pcfg.sub_objective = &sub;
        pcfg.sub_noise_std = p.value("sub_noise_std", 0.0);
    }

    const std::string schedule_kind = p.value("schedule", "greedy");
    std::vector<int> fixed;
    if (schedule_kind == "fixed") fixed = p.at("fixed_actions").get<std::vector<int>>();
    Rng rng(ctx.seed);
    if (schedule_kind == "random") {
        fixed.assign(N, 0);
        std::vector<int> order(N);
        std::iota(order.begin(), order.end(), 0);
        for (long i = N - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, int(i))]);
        for (int i = 0; i < std::min<long>(M, N); ++i) fixed[order[i]] = 1;
    }

    std::function<int(long, const LearnerState&)> schedule;
    if (schedule_kind == "greedy")
        schedule = [M](long, const LearnerState& s) { return s.successes < M ? 1 : 0; };
    else if (schedule_kind == "random" || schedule_kind == "fixed")
        schedule = [&fixed](long k, const LearnerState&) { return fixed[k]; };
    else
        throw std::invalid_argument("unknown schedule '" + schedule_kind + "'");

    const auto res = run_protocol(objective, chain, std::move(init), N, schedule, pcfg,
                                  p.value("initial_oracle", 0), rng);
    write_csv(ctx, query_log_csv(res.log), "query_log.csv");

    json out;
    out["required_updates"] = M;
    out["num_queries"] = N;
    out["successes"] = res.state.successes;
    if (res.state.successes > 0) {
        const auto pick = pick_final_estimate(res.state, rng);
        out["final_estimate"] = pick;
        out["final_gradient_norm_sq"] = norm_sq(objective.gradient(pick));
        out["epsilon"] = res.state.epsilon;
    }
    const auto eaves = eavesdropper_estimate(res.log);
    out["eavesdropper"] = {
        {"posterior_first_trajectory", eaves.posterior_first},
        {"partition_matches_tags", eaves.matches_tags},
        {"estimate", eaves.estimate},
        {"estimate_gradient_norm_sq", norm_sq(objective.gradient(eaves.estimate))}};
    long n_obf = 0;
    for (const auto& r : res.log.records) n_obf += r.obfuscating ? 1 : 0;
    bool estimate_on_obf = false;
    for (auto it = res.log.records.rbegin(); it != res.log.records.rend(); ++it)
        if (it->query == eaves.estimate) {
            estimate_on_obf = it->obfuscating;
            break;
        }
    out["eavesdropper"]["estimate_on_obfuscating_trajectory"] = estimate_on_obf;
    out["obfuscating_queries"] = n_obf;
    const auto shape = trajectory_step_lengths(res.log);
    auto summarize = [](const std::vector<double>& v) {
        json j;
        j["count"] = v.size();
        if (!v.empty()) {
            j["mean_step"] = mean(v);
            j["stddev_step"] = sample_stddev(v);
        }
        return j;
    };
    out["trajectory_shape"] = {{"true", summarize(shape.true_steps)},
                               {"obfuscating", summarize(shape.obfuscating_steps)}};
    write_json(ctx.out / "result.json", stamped(ctx, out));
    return 0;
}

// ---------------------------------------------------------------------------
// cost-sweep
// ---------------------------------------------------------------------------

int cmd_cost_sweep(const RunContext& ctx) {
    const auto base = ctx.config.at("cmdp").get<CmdpSpec>();
    base.validate();
    const auto& sw = ctx.config.at("sweep");
    std::vector<double> scales;
    if (sw.contains("scales"))
        scales = sw.at("scales").get<std::vector<double>>();
    else {
        const double from = sw.at("from").get<double>();
        const double to = sw.at("to").get<double>();
        const int count = sw.at("count").get<int>();
        for (int i = 0; i < count; ++i)
            scales.push_back(count == 1 ? from : from + (to - from) * i / double(count - 1));
    }
    const long sim_steps = sw.value("sim_steps", 1000);

    CsvWriter csv({"cost_scale", "max_learn_cost", "learn_proportion_exact",
                   "learn_proportion_simulated"});
    for (std::size_t i = 0; i < scales.size(); ++i) {
        CmdpSpec spec = base;
        for (double& c : spec.privacy_cost_learn) c *= scales[i];
        const auto sol = solve_cmdp(spec);
        const auto stat = evaluate_stationary(spec, sol.mixture_fn(spec));
        double exact_learn = 0.0;
        for (int s = 0; s < spec.num_states(); ++s)
            exact_learn += stat.distribution[s] * sol.mixture[s];
        Rng rng(ctx.seed, i + 1);
        const auto sim = simulate_cmdp(spec, sol.mixture_fn(spec), sim_steps, rng);
        const double sim_prop =
            double(sim.action_counts[1]) / double(sim.action_counts[0] + sim.action_counts[1]);
        double max_c = 0.0;
        for (double c : spec.privacy_cost_learn) max_c = std::max(max_c, c);
        csv.add_row({fmt_double(scales[i]), fmt_double(max_c), fmt_double(exact_learn),
                     fmt_double(sim_prop)});
    }
    write_csv(ctx, std::move(csv), "sweep.csv");
    return 0;
}

// ---------------------------------------------------------------------------
// run-fedsim
// ---------------------------------------------------------------------------

FedConfig fed_config_from(const json& j) {
    FedConfig cfg;
    cfg.participation_chain = j.at("oracle").get<OracleChain>();
    cfg.participation_fraction = j.at("participation_fraction").get<std::vector<double>>();
    cfg.num_clients = j.value("num_clients", cfg.num_clients);
    cfg.data_threshold_fraction = j.value("data_threshold_fraction", cfg.data_threshold_fraction);
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.updates_needed = j.value("updates_needed", cfg.updates_needed);
    if (j.contains("aggregation"))
        cfg.aggregation = j.at("aggregation") == "weight-average" ? Aggregation::WeightAverage
                                                                  : Aggregation::GradientAverage;
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.samples_per_client = j.value("samples_per_client", cfg.samples_per_client);
    cfg.batches_per_client = j.value("batches_per_client", cfg.batches_per_client);
    cfg.class_separation = j.value("class_separation", cfg.class_separation);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.local_epochs = j.value("local_epochs", cfg.local_epochs);
    cfg.validation_size = j.value("validation_size", cfg.validation_size);
    if (j.contains("obf_mode")) cfg.obf_mode = obf_mode_from(j.at("obf_mode"));
    cfg.walk_step = j.value("walk_step", cfg.walk_step);
    cfg.weight_box = j.value("weight_box", cfg.weight_box);
    cfg.init_weight = j.value("init_weight", cfg.init_weight);
    if (j.contains("mdp_privacy_cost"))
        cfg.mdp_privacy_cost = j.at("mdp_privacy_cost").get<std::vector<double>>();
    cfg.terminal_cost_scale = j.value("terminal_cost_scale", cfg.terminal_cost_scale);
    return cfg;
}

EavesdropperConfig eaves_config_from(const json& j) {
    EavesdropperConfig cfg;
    if (j.contains("scenario"))
        cfg.scenario =
            j.at("scenario") == "subset-data" ? EavesScenario::SubsetData : EavesScenario::NoData;
    cfg.subset_fraction = j.value("subset_fraction", cfg.subset_fraction);
    cfg.positive_proportion = j.value("positive_proportion", cfg.positive_proportion);
    cfg.finetune_steps = j.value("finetune_steps", cfg.finetune_steps);
    return cfg;
}

PolicyKind policy_kind_from(const std::string& s) {
    if (s == "greedy") return PolicyKind::Greedy;
    if (s == "random") return PolicyKind::Random;
    if (s == "optimal") return PolicyKind::Optimal;
    throw std::invalid_argument("unknown policy '" + s + "'");
}

int cmd_run_fedsim(const RunContext& ctx) {
    FedConfig base = fed_config_from(ctx.config.at("fed"));
    auto ecfg = eaves_config_from(ctx.config.value("eavesdropper", json::object()));
    std::vector<std::string> policies = {"greedy", "random", "optimal"};
    if (ctx.config.contains("policies"))
        policies = ctx.config.at("policies").get<std::vector<std::string>>();

    CsvWriter runs_csv({"policy", "run", "learner_acc", "eavesdropper_acc", "learning_rounds",
                        "successes"});
    CsvWriter summary({"policy", "mean_learner_acc", "mean_eavesdropper_acc",
                       "mean_learning_rounds", "mean_successes"});
    bool wrote_trace = false;
    for (const auto& pol_name : policies) {
        const auto kind = policy_kind_from(pol_name);
        FedConfig cfg = base;
        if (ecfg.scenario == EavesScenario::SubsetData)
            cfg.obf_mode = ObfuscationMode::SubsetData;
        std::vector<ExperimentResult> results(ctx.runs);
        parallel_for(ctx.runs, [&](int i) {
            Rng rng(ctx.seed + std::uint64_t(i));
            results[i] = run_experiment(cfg, ecfg, kind, rng);
        });
        double sl = 0, se = 0, slr = 0, ss = 0;
        for (int i = 0; i < ctx.runs; ++i) {
            const auto& r = results[i];
            runs_csv.add_row({pol_name, std::to_string(i), fmt_double(r.final_learner_acc),
                              fmt_double(r.final_eavesdropper_acc),
                              std::to_string(r.learning_rounds), std::to_string(r.successes)});
            sl += r.final_learner_acc;
            se += r.final_eavesdropper_acc;
            slr += r.learning_rounds;
            ss += r.successes;
        }
        summary.add_row({pol_name, fmt_double(sl / ctx.runs), fmt_double(se / ctx.runs),
                         fmt_double(slr / ctx.runs), fmt_double(ss / ctx.runs)});
        if (!wrote_trace) {
            write_csv(ctx, experiment_csv(results[0]), "trace_" + pol_name + ".csv");
            wrote_trace = true;
        }
    }
    write_csv(ctx, std::move(runs_csv), "runs.csv");
    write_csv(ctx, std::move(summary), "comparison.csv");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"covert optimization experiment runner"};
    app.require_subcommand(1);

    CommonOpts solve_mdp_opts, solve_cmdp_opts, spga_opts, covert_opts, sweep_opts, fedsim_opts;
    auto* c1 = app.add_subcommand("solve-mdp", "backward DP for the finite-horizon MDP");
    add_common(c1, solve_mdp_opts);
    auto* c2 = app.add_subcommand("solve-cmdp", "constrained MDP mixture policy plus LP cross-check");
    add_common(c2, solve_cmdp_opts);
    auto* c3 = app.add_subcommand("run-spga", "policy gradient search for threshold parameters");
    add_common(c3, spga_opts);
    auto* c4 = app.add_subcommand("run-covert", "coupled SGD/obfuscation protocol run");
    add_common(c4, covert_opts);
    auto* c5 = app.add_subcommand("cost-sweep", "learning-cost sweep vs learning-action share");
    add_common(c5, sweep_opts);
    auto* c6 = app.add_subcommand("run-fedsim", "federated classification comparison");
    add_common(c6, fedsim_opts);

    CLI11_PARSE(app, argc, argv);

    const auto run = [&](const CommonOpts& opts, int (*fn)(const RunContext&)) {
        RunContext ctx;
        try {
            ctx = make_context(opts);
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
        try {
            return fn(ctx);
        } catch (const json::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const std::invalid_argument& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    };

    if (c1->parsed()) return run(solve_mdp_opts, cmd_solve_mdp);
    if (c2->parsed()) return run(solve_cmdp_opts, cmd_solve_cmdp);
    if (c3->parsed()) return run(spga_opts, cmd_run_spga);
    if (c4->parsed()) return run(covert_opts, cmd_run_covert);
    if (c5->parsed()) return run(sweep_opts, cmd_cost_sweep);
    if (c6->parsed()) return run(fedsim_opts, cmd_run_fedsim);
    return 2;
}
