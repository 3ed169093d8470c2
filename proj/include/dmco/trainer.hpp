#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dmco/control.hpp"
#include "dmco/errors.hpp"
#include "dmco/gradient.hpp"
#include "dmco/mlp.hpp"
#include "dmco/rng.hpp"

namespace dmco {

struct NetConfig {
    std::vector<std::size_t> hidden_widths{10, 10, 10};
    bool per_time = true;  // false: one network shared by all decision times
    std::uint64_t seed = 0;
    InputMode input_mode = InputMode::StateAndNoise;
    bool center_output_bias = false;  // output biases start at the box center instead of zero

    void validate() const {
        if (hidden_widths.empty()) throw ConfigError("net config: hidden_widths must be non-empty");
        for (auto w : hidden_widths) {
            if (w == 0) throw ConfigError("net config: hidden widths must be positive");
        }
    }
};

/// Layer widths [input, hidden..., control_dim] of the networks for `problem`.
inline std::vector<std::size_t> network_widths(const ControlProblem& problem, const NetConfig& cfg) {
    std::vector<std::size_t> widths{network_input_dim(problem, cfg.input_mode)};
    widths.insert(widths.end(), cfg.hidden_widths.begin(), cfg.hidden_widths.end());
    widths.push_back(static_cast<std::size_t>(problem.control_dim));
    return widths;
}

/// Wraps given per-time networks as a feedback action after shape checks.
inline FeedbackAction network_action(const ControlProblem& problem, std::vector<MlpParams> nets, InputMode mode) {
    NetworkAction action{std::move(nets), mode};
    PathSimulator check(problem, FeedbackAction{action});
    return action;
}

/// Freshly initialized per-time networks; frozen decision times get none.
inline NetworkAction init_network_action(const ControlProblem& problem, const NetConfig& cfg) {
    cfg.validate();
    NetworkAction action;
    action.input_mode = cfg.input_mode;
    const auto widths = network_widths(problem, cfg);
    for (int t = 0; t < problem.horizon; ++t) {
        if (problem.is_frozen(t)) {
            action.nets.emplace_back();
        } else {
            const std::uint64_t seed = cfg.per_time ? derive_seed(cfg.seed, {static_cast<std::uint64_t>(t)})
                                                    : derive_seed(cfg.seed, {0});
            auto net = init_mlp(widths, seed);
            if (cfg.center_output_bias) {
                const auto& box = problem.control_box[static_cast<std::size_t>(t)];
                auto bias = net.biases(net.num_layers() - 1);
                for (std::size_t k = 0; k < bias.size(); ++k) {
                    if (!std::isfinite(box.lower[k]) || !std::isfinite(box.upper[k])) {
                        throw ConfigError("center_output_bias needs a finite control box");
                    }
                    bias[k] = 0.5 * (box.lower[k] + box.upper[k]);
                }
            }
            action.nets.push_back(std::move(net));
        }
    }
    return action;
}

struct Conservative {
    double tolerance = 1e-6;
    int patience = 1;
};

struct FixedEpochs {
    int count = 0;
};

using StopRule = std::variant<Conservative, FixedEpochs>;

struct TrainConfig {
    std::size_t batch_size = 32;
    int max_epochs = 1000;
    StopRule stop_rule = Conservative{};
    std::uint64_t shuffle_seed = 0;
    AdamHyper adam{};
    bool share_across_time = false;  // mirrors NetConfig::per_time == false

    void validate() const {
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (const auto* c = std::get_if<Conservative>(&stop_rule)) {
            if (!(c->tolerance >= 0.0)) throw ConfigError("train config: tolerance must be >= 0");
            if (c->patience < 1) throw ConfigError("train config: patience must be >= 1");
        } else if (std::get<FixedEpochs>(stop_rule).count < 0) {
            throw ConfigError("train config: epoch count must be >= 0");
        }
    }

    int epoch_limit() const {
        if (const auto* f = std::get_if<FixedEpochs>(&stop_rule)) return f->count;
        return max_epochs;
    }
};

enum class StopReason { ValidationWorsened, MaxEpochs, NumericError };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::ValidationWorsened: return "validation_worsened";
        case StopReason::MaxEpochs: return "max_epochs";
        case StopReason::NumericError: return "numeric_error";
    }
    return "?";
}

struct TrainReport {
    Vec train_loss;       // one entry per completed epoch
    Vec validation_loss;
    int stop_epoch = 0;   // number of completed epochs
    StopReason stop_reason = StopReason::MaxEpochs;
    int best_epoch = 0;   // 1-based argmin of validation_loss, 0 when no epoch ran
    double wall_time_seconds = 0.0;
    std::string message;
};

/// Adam state for each network slot (empty state for frozen times).
inline std::vector<AdamState> make_adam_states(const NetworkAction& action, const AdamHyper& hyper) {
    std::vector<AdamState> states;
    for (const auto& net : action.nets) states.emplace_back(net.size(), hyper);
    return states;
}

/// Seeded permutation of 0..n-1 for one epoch.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_seed(shuffle_seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/**
 * One pass of minibatch Adam over the training set.
 *
 * Each batch minimizes the batch mean of weight_i * cost_i (weight 1 when
 * `sample_weights` is empty). The last batch may be short. Returns the
 * epoch loss: the mean of batch losses weighted by batch size.
 */
inline double minibatch_epoch(const ControlProblem& problem, NetworkAction& action, const TrainingSet& set,
                              std::size_t batch_size, std::uint64_t shuffle_seed, std::uint64_t epoch,
                              std::vector<AdamState>& adam, std::span<const double> sample_weights = {},
                              bool share_across_time = false) {
    if (set.empty()) throw ConfigError("minibatch_epoch on an empty training set");
    if (batch_size < 1) throw ConfigError("minibatch_epoch: batch_size must be >= 1");
    if (!sample_weights.empty() && sample_weights.size() != set.size()) {
        throw ConfigError("minibatch_epoch: one weight per trajectory required");
    }
    PolicyGradient engine(problem, action);
    auto grads = engine.zero_gradients();
    const auto order = epoch_permutation(set.size(), shuffle_seed, epoch);
    CompensatedSum epoch_sum;
    const std::size_t T = action.nets.size();
    int first_trainable = -1;
    for (std::size_t t = 0; t < T; ++t) {
        if (!action.nets[t].empty() && !problem.is_frozen(static_cast<int>(t))) {
            first_trainable = static_cast<int>(t);
            break;
        }
    }
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t stop = std::min(set.size(), start + batch_size);
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
        CompensatedSum batch_sum;
        for (std::size_t k = start; k < stop; ++k) {
            const std::size_t i = order[k];
            const double w = sample_weights.empty() ? 1.0 : sample_weights[i];
            const double cost = engine.accumulate(set[i], w * inv, grads);
            batch_sum.add(w * cost);
        }
        const double batch_loss = batch_sum.value();
        if (!std::isfinite(batch_loss)) throw NumericError("non-finite minibatch loss");
        epoch_sum.add(batch_loss);
        if (share_across_time && first_trainable >= 0) {
            auto& shared = grads[first_trainable];
            for (std::size_t t = first_trainable + 1; t < T; ++t) {
                if (action.nets[t].empty()) continue;
                for (std::size_t j = 0; j < shared.size(); ++j) shared[j] += grads[t][j];
            }
            adam_step(action.nets[first_trainable].flat(), shared, adam[first_trainable]);
            for (std::size_t t = first_trainable + 1; t < T; ++t) {
                if (!action.nets[t].empty()) action.nets[t] = action.nets[first_trainable];
            }
        } else {
            for (std::size_t t = 0; t < T; ++t) {
                if (action.nets[t].empty() || problem.is_frozen(static_cast<int>(t))) continue;
                adam_step(action.nets[t].flat(), grads[t], adam[t]);
            }
        }
    }
    return epoch_sum.value() / static_cast<double>(set.size());
}

struct TrainResult {
    FeedbackAction action;
    TrainReport report;
};

/**
 * Deep Monte Carlo optimization: minibatch Adam on the empirical loss of the
 * training set, with the validation loss recorded after every epoch.
 *
 * Conservative stops once the validation loss exceeds its running minimum
 * plus tolerance for `patience` consecutive epochs and returns the networks
 * of the best validation epoch. FixedEpochs runs exactly `count` epochs and
 * returns the final networks. A numeric failure returns the best networks
 * seen so far.
 */
inline TrainResult train_from(const ControlProblem& problem, const TrainingSet& train_set,
                              const TrainingSet& validation_set, NetworkAction initial,
                              const TrainConfig& train_config, bool shared_network = false) {
    problem.validate();
    train_config.validate();
    if (train_set.empty() || validation_set.empty()) throw ConfigError("train: empty training or validation set");
    if (&train_set == &validation_set) throw ConfigError("train: training and validation sets must be distinct");

    const auto started = std::chrono::steady_clock::now();
    NetworkAction current = std::move(initial);
    PathSimulator check(problem, FeedbackAction{current});
    NetworkAction best = current;
    auto adam = make_adam_states(current, train_config.adam);
    const bool share = train_config.share_across_time || shared_network;

    TrainReport report;
    const auto* conservative = std::get_if<Conservative>(&train_config.stop_rule);
    const int limit = train_config.epoch_limit();
    double best_val = std::numeric_limits<double>::infinity();
    double running_min = std::numeric_limits<double>::infinity();
    int worse_streak = 0;
    report.stop_reason = StopReason::MaxEpochs;

    for (int epoch = 1; epoch <= limit; ++epoch) {
        double train_loss = 0.0;
        double val_loss = 0.0;
        try {
            train_loss = minibatch_epoch(problem, current, train_set, train_config.batch_size,
                                         train_config.shuffle_seed, static_cast<std::uint64_t>(epoch), adam, {},
                                         share);
            val_loss = empirical_loss(problem, FeedbackAction{current}, validation_set);
        } catch (const NumericError& e) {
            report.stop_reason = StopReason::NumericError;
            report.message = e.what();
            break;
        }
        report.train_loss.push_back(train_loss);
        report.validation_loss.push_back(val_loss);
        report.stop_epoch = epoch;
        if (val_loss < best_val) {
            best_val = val_loss;
            report.best_epoch = epoch;
            best = current;
        }
        if (conservative) {
            if (val_loss > running_min + conservative->tolerance) {
                ++worse_streak;
            } else {
                worse_streak = 0;
            }
            running_min = std::min(running_min, val_loss);
            if (worse_streak >= conservative->patience) {
                report.stop_reason = StopReason::ValidationWorsened;
                break;
            }
        }
    }
    const bool return_best = conservative != nullptr || report.stop_reason == StopReason::NumericError;
    NetworkAction chosen = return_best ? std::move(best) : std::move(current);
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {FeedbackAction{std::move(chosen)}, std::move(report)};
}

/// Trains freshly initialized networks; see train_from.
inline TrainResult train(const ControlProblem& problem, const TrainingSet& train_set,
                         const TrainingSet& validation_set, const NetConfig& net_config,
                         const TrainConfig& train_config) {
    net_config.validate();
    return train_from(problem, train_set, validation_set, init_network_action(problem, net_config), train_config,
                      !net_config.per_time);
}

}  // namespace dmco
