// Desk-scale federated classification scenario: synthetic two-class Gaussian
// data split disjointly across simulated clients, Markovian participation,
// data-volume success gating, gradient- or weight-averaged aggregation, and
// the learner-vs-eavesdropper accuracy comparison under greedy / random /
// MDP-optimal query policies.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "covert/covert_sgd.hpp"
#include "covert/finite_mdp.hpp"
#include "covert/io.hpp"
#include "covert/oracle.hpp"
#include "covert/rng.hpp"

namespace covert {

struct Dataset {
    std::vector<Vec> x; // features, bias handled by the model
    std::vector<int> y; // labels in {-1, +1}

    std::size_t size() const { return x.size(); }
};

enum class Aggregation { GradientAverage, WeightAverage };

struct FedConfig {
    int num_clients = 20;
    OracleChain participation_chain;             // oracle states drive participation
    std::vector<double> participation_fraction;  // per oracle state, e.g. 1/4, 1/2, 1
    double data_threshold_fraction = 0.2;        // round succeeds above this data share
    int rounds = 45;                             // N
    int updates_needed = 16;                     // M
    Aggregation aggregation = Aggregation::GradientAverage;
    int feature_dim = 5;
    int samples_per_client = 60;
    int batches_per_client = 4;
    double class_separation = 3.0; // distance between class means (unit covariance)
    double learning_rate = 0.8;
    int local_epochs = 2; // weight-average mode
    int validation_size = 400;
    ObfuscationMode obf_mode = ObfuscationMode::RandomWalk; // no-data scenario
    double walk_step = 0.3;
    double weight_box = 6.0;
    double init_weight = 0.5; // learner starts at +init, obfuscator at -init
    // MDP costs used by the optimal policy
    std::vector<double> mdp_privacy_cost = {0.3, 0.8, 1.8};
    double terminal_cost_scale = 1.0;

    void validate() const {
        participation_chain.validate();
        if (static_cast<int>(participation_fraction.size()) != participation_chain.num_states())
            throw std::invalid_argument("FedConfig: one participation fraction per oracle state");
        for (double f : participation_fraction)
            if (f <= 0.0 || f > 1.0)
                throw std::invalid_argument("FedConfig: participation fraction outside (0,1]");
        if (data_threshold_fraction <= 0.0 || data_threshold_fraction > 1.0)
            throw std::invalid_argument("FedConfig: data threshold outside (0,1]");
        if (updates_needed <= 0 || updates_needed >= rounds)
            throw std::invalid_argument("FedConfig: need 0 < M < N");
        if (num_clients <= 0 || samples_per_client <= 0 || feature_dim <= 0)
            throw std::invalid_argument("FedConfig: sizes must be positive");
        if (samples_per_client % batches_per_client != 0)
            throw std::invalid_argument("FedConfig: batches must divide samples_per_client");
    }
};

enum class EavesScenario { NoData, SubsetData };

struct EavesdropperConfig {
    EavesScenario scenario = EavesScenario::NoData;
    double subset_fraction = 0.1;     // of the total training data
    double positive_proportion = 0.1; // class balance inside the subset
    int finetune_steps = 300;
};

struct Federation {
    std::vector<Dataset> clients;
    Dataset validation;
    Dataset eavesdropper_subset; // empty in the no-data scenario
    long total_samples = 0;
};

namespace fed_detail {

inline Vec sample_point(int label, int dim, double separation, Rng& rng) {
    // class means at +/- separation/2 along the normalized all-ones direction
    const double shift = 0.5 * separation / std::sqrt(double(dim));
    Vec x(dim);
    for (int d = 0; d < dim; ++d) x[d] = label * shift + rng.normal();
    return x;
}

} // namespace fed_detail

/// Disjoint client datasets plus a balanced held-out validation set; the
/// subset-data scenario also draws the eavesdropper's imbalanced sample.
inline Federation generate_federation(const FedConfig& cfg, const EavesdropperConfig& ecfg,
                                      Rng& rng) {
    cfg.validate();
    Federation fed;
    fed.clients.resize(cfg.num_clients);
    for (auto& client : fed.clients) {
        client.x.reserve(cfg.samples_per_client);
        for (int i = 0; i < cfg.samples_per_client; ++i) {
            const int label = rng.bernoulli(0.5) ? 1 : -1;
            client.x.push_back(
                fed_detail::sample_point(label, cfg.feature_dim, cfg.class_separation, rng));
            client.y.push_back(label);
        }
        fed.total_samples += client.size();
    }
    for (int i = 0; i < cfg.validation_size; ++i) {
        const int label = i % 2 == 0 ? 1 : -1; // exactly balanced
        fed.validation.x.push_back(
            fed_detail::sample_point(label, cfg.feature_dim, cfg.class_separation, rng));
        fed.validation.y.push_back(label);
    }
    if (ecfg.scenario == EavesScenario::SubsetData) {
        const auto n = static_cast<long>(std::lround(ecfg.subset_fraction * fed.total_samples));
        for (long i = 0; i < n; ++i) {
            const int label = rng.bernoulli(ecfg.positive_proportion) ? 1 : -1;
            fed.eavesdropper_subset.x.push_back(
                fed_detail::sample_point(label, cfg.feature_dim, cfg.class_separation, rng));
            fed.eavesdropper_subset.y.push_back(label);
        }
    }
    return fed;
}

// ---------------------------------------------------------------------------
// Linear logistic model (bias folded in as the last weight)
// ---------------------------------------------------------------------------

inline double model_score(const Vec& w, const Vec& x) {
    double s = w.back(); // bias
    for (std::size_t d = 0; d < x.size(); ++d) s += w[d] * x[d];
    return s;
}

inline double logistic_loss(const Vec& w, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("logistic_loss: empty dataset");
    double loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double margin = data.y[i] * model_score(w, data.x[i]);
        // stable log(1 + exp(-margin))
        loss += margin > 0 ? std::log1p(std::exp(-margin))
                           : -margin + std::log1p(std::exp(margin));
    }
    return loss / double(data.size());
}

inline Vec logistic_gradient(const Vec& w, const Dataset& data, const std::vector<long>& idx) {
    Vec g(w.size(), 0.0);
    if (idx.empty()) return g;
    for (long i : idx) {
        const double margin = data.y[i] * model_score(w, data.x[i]);
        const double coef = -double(data.y[i]) / (1.0 + std::exp(margin));
        for (std::size_t d = 0; d < data.x[i].size(); ++d) g[d] += coef * data.x[i][d];
        g[w.size() - 1] += coef;
    }
    for (double& v : g) v /= double(idx.size());
    return g;
}

inline Vec logistic_gradient(const Vec& w, const Dataset& data) {
    std::vector<long> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return logistic_gradient(w, data, all);
}

/// Fraction of correct sign predictions.
inline double evaluate_accuracy(const Vec& w, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
    long correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int pred = model_score(w, data.x[i]) >= 0.0 ? 1 : -1;
        if (pred == data.y[i]) ++correct;
    }
    return double(correct) / double(data.size());
}

inline Vec train_logistic(Vec w, const Dataset& data, double lr, int steps) {
    for (int s = 0; s < steps; ++s) w = axpy(-lr, logistic_gradient(w, data), w);
    return w;
}

// ---------------------------------------------------------------------------
// One communication round
// ---------------------------------------------------------------------------

struct RoundResult {
    int participants = 0;
    long contributed_samples = 0;
    bool success = false; // volume above threshold AND the action was learn
    Vec broadcast;        // weights the eavesdropper observes this round
};

namespace fed_detail {

inline void project_box(Vec& w, double box) {
    for (double& v : w) v = std::clamp(v, -box, box);
}

struct Contribution {
    int client = 0;
    std::vector<long> sample_idx;
};

/// Participation + per-client contribution draw. Each participant offers a
/// uniform number of its batches.
inline std::vector<Contribution> draw_contributions(const FedConfig& cfg, int oracle_state,
                                                    Rng& rng) {
    const int participants = std::max(
        1, static_cast<int>(std::lround(cfg.participation_fraction[oracle_state] * cfg.num_clients)));
    std::vector<int> order(cfg.num_clients);
    std::iota(order.begin(), order.end(), 0);
    for (int i = cfg.num_clients - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);

    const int batch_size = cfg.samples_per_client / cfg.batches_per_client;
    std::vector<Contribution> out;
    out.reserve(participants);
    for (int p = 0; p < participants; ++p) {
        Contribution c;
        c.client = order[p];
        const int batches = rng.uniform_int(0, cfg.batches_per_client);
        std::vector<long> sample_order(cfg.samples_per_client);
        std::iota(sample_order.begin(), sample_order.end(), 0);
        for (int i = cfg.samples_per_client - 1; i > 0; --i)
            std::swap(sample_order[i], sample_order[rng.uniform_int(0, i)]);
        c.sample_idx.assign(sample_order.begin(), sample_order.begin() + batches * batch_size);
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace fed_detail

/// One communication round. A learning round updates the learner's model only
/// when the contributed data volume clears the threshold; an obfuscating
/// round advances the decoy model instead. The broadcast weights are whatever
/// model the chosen action exposes.
inline RoundResult run_round(const Federation& fed, const FedConfig& cfg, int oracle_state,
                             int action, Vec& learner_w, Vec& obf_w, Rng& rng) {
    const auto contributions = fed_detail::draw_contributions(cfg, oracle_state, rng);
    RoundResult res;
    res.participants = static_cast<int>(contributions.size());
    for (const auto& c : contributions)
        res.contributed_samples += static_cast<long>(c.sample_idx.size());
    const bool volume_ok =
        res.contributed_samples >=
        static_cast<long>(std::ceil(cfg.data_threshold_fraction * double(fed.total_samples)));

    if (action == 1) {
        if (volume_ok) {
            res.success = true;
            if (cfg.aggregation == Aggregation::GradientAverage) {
                Vec g(learner_w.size(), 0.0);
                for (const auto& c : contributions) {
                    if (c.sample_idx.empty()) continue;
                    const Vec gi =
                        logistic_gradient(learner_w, fed.clients[c.client], c.sample_idx);
                    const double wgt =
                        double(c.sample_idx.size()) / double(res.contributed_samples);
                    for (std::size_t d = 0; d < g.size(); ++d) g[d] += wgt * gi[d];
                }
                learner_w = axpy(-cfg.learning_rate, g, learner_w);
            } else {
                Vec avg(learner_w.size(), 0.0);
                for (const auto& c : contributions) {
                    if (c.sample_idx.empty()) continue;
                    Vec wi = learner_w;
                    for (int e = 0; e < cfg.local_epochs; ++e)
                        wi = axpy(-cfg.learning_rate,
                                  logistic_gradient(wi, fed.clients[c.client], c.sample_idx), wi);
                    const double wgt =
                        double(c.sample_idx.size()) / double(res.contributed_samples);
                    for (std::size_t d = 0; d < avg.size(); ++d) avg[d] += wgt * wi[d];
                }
                learner_w = avg;
            }
            fed_detail::project_box(learner_w, cfg.weight_box);
        }
        res.broadcast = learner_w;
    } else {
        switch (cfg.obf_mode) {
            case ObfuscationMode::RandomWalk:
                for (double& v : obf_w) v += rng.uniform(-cfg.walk_step, cfg.walk_step);
                break;
            case ObfuscationMode::SubsetData: {
                if (fed.eavesdropper_subset.size() == 0)
                    throw std::invalid_argument("run_round: subset-data mode without a subset");
                Vec g = logistic_gradient(obf_w, fed.eavesdropper_subset);
                for (double& v : g) v += 0.05 * rng.normal();
                obf_w = axpy(-cfg.learning_rate, g, obf_w);
                break;
            }
            case ObfuscationMode::Mirror: {
                // gradient of the round's pooled data at the reflection of obf_w
                Vec reflected(obf_w.size());
                for (std::size_t d = 0; d < obf_w.size(); ++d) reflected[d] = -obf_w[d];
                Vec g(obf_w.size(), 0.0);
                long total = 0;
                for (const auto& c : contributions) {
                    if (c.sample_idx.empty()) continue;
                    const Vec gi = logistic_gradient(reflected, fed.clients[c.client], c.sample_idx);
                    for (std::size_t d = 0; d < g.size(); ++d)
                        g[d] += double(c.sample_idx.size()) * gi[d];
                    total += static_cast<long>(c.sample_idx.size());
                }
                if (total > 0)
                    for (double& v : g) v /= double(total);
                obf_w = axpy(+cfg.learning_rate, g, obf_w);
                break;
            }
        }
        fed_detail::project_box(obf_w, cfg.weight_box);
        res.broadcast = obf_w;
    }
    return res;
}

/// Monte-Carlo estimate of the per-state success probability of a learning
/// round, mirroring how the MDP's g is measured from the system.
inline std::vector<double> calibrate_success_probabilities(const Federation& fed,
                                                           const FedConfig& cfg, int trials,
                                                           Rng& rng) {
    std::vector<double> g(cfg.participation_chain.num_states(), 0.0);
    for (int o = 0; o < cfg.participation_chain.num_states(); ++o) {
        int hits = 0;
        for (int t = 0; t < trials; ++t) {
            const auto contributions = fed_detail::draw_contributions(cfg, o, rng);
            long volume = 0;
            for (const auto& c : contributions) volume += static_cast<long>(c.sample_idx.size());
            if (volume >=
                static_cast<long>(std::ceil(cfg.data_threshold_fraction * double(fed.total_samples))))
                ++hits;
        }
        g[o] = double(hits) / double(trials);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Whole-experiment driver
// ---------------------------------------------------------------------------

enum class PolicyKind { Greedy, Random, Optimal };

struct ExperimentRow {
    int round = 0;
    int oracle = 0;
    int action = 0;
    bool success = false;
    double learner_acc = 0.0;
    double eavesdropper_acc = 0.0;
};

struct ExperimentResult {
    std::vector<ExperimentRow> rows;
    double final_learner_acc = 0.0;
    double final_eavesdropper_acc = 0.0;
    double subset_model_acc = 0.0; // scenario 2: eavesdropper's own fine-tuned model
    int successes = 0;
    int learning_rounds = 0;
    bool eavesdropper_on_obfuscating = false; // final trajectory choice
    std::vector<double> calibrated_g;
};

inline ExperimentResult run_experiment(const FedConfig& cfg, const EavesdropperConfig& ecfg,
                                       PolicyKind policy, Rng& rng) {
    cfg.validate();
    Federation fed = generate_federation(cfg, ecfg, rng);

    // measured success function feeds the MDP that the optimal policy solves
    ExperimentResult result;
    Rng calib_rng = rng.substream(101);
    result.calibrated_g = calibrate_success_probabilities(fed, cfg, 2000, calib_rng);

    DpSolution dp;
    if (policy == PolicyKind::Optimal) {
        FiniteMdpSpec mdp;
        mdp.chain = cfg.participation_chain;
        mdp.chain.success_prob = result.calibrated_g;
        mdp.horizon = cfg.rounds;
        mdp.updates_needed = cfg.updates_needed;
        mdp.learn_cost = cfg.mdp_privacy_cost;
        mdp.terminal_cost =
            FiniteMdpSpec::default_terminal_cost(cfg.updates_needed, cfg.terminal_cost_scale);
        dp = solve_backward_dp(mdp);
    }

    std::vector<int> random_learn_rounds;
    if (policy == PolicyKind::Random) {
        std::vector<int> order(cfg.rounds);
        std::iota(order.begin(), order.end(), 0);
        for (int i = cfg.rounds - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
        random_learn_rounds.assign(order.begin(), order.begin() + cfg.updates_needed);
        std::sort(random_learn_rounds.begin(), random_learn_rounds.end());
    }

    Vec learner_w(cfg.feature_dim + 1, cfg.init_weight);
    Vec obf_w(cfg.feature_dim + 1, -cfg.init_weight);

    Vec subset_model;
    if (ecfg.scenario == EavesScenario::SubsetData) {
        subset_model = train_logistic(Vec(cfg.feature_dim + 1, 0.0), fed.eavesdropper_subset,
                                      cfg.learning_rate, ecfg.finetune_steps);
        result.subset_model_acc = evaluate_accuracy(subset_model, fed.validation);
    }

    std::vector<Vec> broadcasts;
    std::vector<int> broadcast_tags;
    int oracle = 0;
    int remaining = cfg.updates_needed;
    for (int round = 0; round < cfg.rounds; ++round) {
        int action = 0;
        switch (policy) {
            case PolicyKind::Greedy:
                action = remaining > 0 ? 1 : 0;
                break;
            case PolicyKind::Random:
                action = std::binary_search(random_learn_rounds.begin(),
                                            random_learn_rounds.end(), round)
                             ? 1
                             : 0;
                break;
            case PolicyKind::Optimal: {
                const int queries_left = cfg.rounds - round;
                action = dp.policy[queries_left][dp.state_index(oracle, remaining)];
                break;
            }
        }
        const auto rr = run_round(fed, cfg, oracle, action, learner_w, obf_w, rng);
        if (rr.success) {
            ++result.successes;
            remaining = std::max(0, remaining - 1);
        }
        result.learning_rounds += action;
        broadcasts.push_back(rr.broadcast);
        broadcast_tags.push_back(action == 0 ? 1 : 0);

        // eavesdropper re-estimates from everything broadcast so far
        auto eaves = eavesdropper_estimate(broadcasts, &broadcast_tags);
        Vec estimate = eaves.estimate;
        bool chose_obf = false;
        if (ecfg.scenario == EavesScenario::SubsetData && fed.eavesdropper_subset.size() > 0) {
            // with data in hand, test both trajectories and follow the lower loss
            Vec last[2];
            bool seen[2] = {false, false};
            for (std::size_t i = 0; i < broadcasts.size(); ++i) {
                last[eaves.assignment[i]] = broadcasts[i];
                seen[eaves.assignment[i]] = true;
            }
            if (seen[0] && seen[1]) {
                const double loss0 = logistic_loss(last[0], fed.eavesdropper_subset);
                const double loss1 = logistic_loss(last[1], fed.eavesdropper_subset);
                const int pick = loss1 < loss0 ? 1 : 0;
                estimate = last[pick];
                for (std::size_t i = broadcasts.size(); i-- > 0;)
                    if (eaves.assignment[i] == pick) {
                        chose_obf = broadcast_tags[i] == 1;
                        break;
                    }
            } else {
                chose_obf = broadcast_tags.back() == 1;
            }
        } else {
            // proportional sampling: last query of the heavier trajectory
            for (std::size_t i = broadcasts.size(); i-- > 0;)
                if (eaves.assignment[i] == eaves.chosen) {
                    chose_obf = broadcast_tags[i] == 1;
                    break;
                }
        }

        ExperimentRow row;
        row.round = round;
        row.oracle = oracle;
        row.action = action;
        row.success = rr.success;
        row.learner_acc = evaluate_accuracy(learner_w, fed.validation);
        row.eavesdropper_acc = evaluate_accuracy(estimate, fed.validation);
        result.rows.push_back(row);
        result.eavesdropper_on_obfuscating = chose_obf;

        oracle = step_oracle(cfg.participation_chain, oracle, rng);
    }
    result.final_learner_acc = result.rows.back().learner_acc;
    result.final_eavesdropper_acc = result.rows.back().eavesdropper_acc;
    return result;
}

inline CsvWriter experiment_csv(const ExperimentResult& res) {
    CsvWriter csv({"round", "oracle_state", "action", "success", "learner_acc",
                   "eavesdropper_acc"});
    for (const auto& r : res.rows)
        csv.add_row({std::to_string(r.round), std::to_string(r.oracle), std::to_string(r.action),
                     r.success ? "1" : "0", fmt_double(r.learner_acc),
                     fmt_double(r.eavesdropper_acc)});
    return csv;
}

} // namespace covert
