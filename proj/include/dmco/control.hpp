#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dmco/errors.hpp"
#include "dmco/mlp.hpp"

namespace dmco {

using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

/// Box constraint of the admissible controls at one decision time.
struct ControlBox {
    Vec lower;
    Vec upper;

    bool is_point() const { return lower == upper; }

    void clip(MutSpan a) const {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i], lower[i], upper[i]);
    }
    bool contains(ConstSpan a) const {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!(a[i] >= lower[i] && a[i] <= upper[i])) return false;
        }
        return true;
    }
};

inline ControlBox uniform_box(std::size_t dim, double lower, double upper) {
    return {Vec(dim, lower), Vec(dim, upper)};
}

struct PathwiseSolution {
    std::vector<Vec> alpha;
    double cost = 0.0;
};

class TrajectoryView;

/**
 * A discrete-time control problem in minimization form.
 *
 * State x_t in R^state_dim, disturbance z_t in R^noise_dim (z_0 = 0), control
 * a_t in control_box[t]. The gradient hooks are vector-Jacobian products used
 * by the training and pathwise optimizers; they must agree with the value
 * functions they accompany.
 */
struct ControlProblem {
    using Dynamics = std::function<void(int t, ConstSpan x, ConstSpan z_next, ConstSpan a, MutSpan x_next)>;
    // Writes (df/dx)^T adj into grad_x and (df/da)^T adj into grad_a.
    using DynamicsVjp = std::function<void(int t, ConstSpan x, ConstSpan z_next, ConstSpan a,
                                           ConstSpan adj, MutSpan grad_x, MutSpan grad_a)>;
    using RunningCost = std::function<double(int t, ConstSpan x, ConstSpan a)>;
    // Adds d psi/dx and d psi/da (scaled by `scale`) into the buffers.
    using RunningCostGrad = std::function<void(int t, ConstSpan x, ConstSpan a, double scale,
                                               MutSpan grad_x, MutSpan grad_a)>;
    using TerminalCost = std::function<double(ConstSpan x)>;
    using TerminalCostGrad = std::function<void(ConstSpan x, MutSpan grad_x)>;
    using ExactPathwise = std::function<std::optional<PathwiseSolution>(const TrajectoryView& z)>;

    std::string name;
    int horizon = 0;
    int state_dim = 0;
    int noise_dim = 0;
    int control_dim = 0;
    Dynamics dynamics;
    DynamicsVjp dynamics_vjp;
    RunningCost running_cost;          // empty means psi == 0
    RunningCostGrad running_cost_grad;
    TerminalCost terminal_cost;
    TerminalCostGrad terminal_cost_grad;
    std::vector<ControlBox> control_box;  // one per decision time
    Vec initial_state;
    double cost_bound = 0.0;              // uniform bound c* on |pathwise cost|
    ExactPathwise exact_pathwise;         // optional per-path solver over constant actions

    /// A decision time whose box is a single point carries no decision.
    bool is_frozen(int t) const { return control_box[static_cast<std::size_t>(t)].is_point(); }

    void validate() const {
        if (horizon < 1) throw ConfigError(name + ": horizon must be >= 1");
        if (state_dim < 1 || noise_dim < 1 || control_dim < 1) {
            throw ConfigError(name + ": dimensions must be >= 1");
        }
        if (!dynamics || !terminal_cost) throw ConfigError(name + ": dynamics and terminal cost are required");
        if (control_box.size() != static_cast<std::size_t>(horizon)) {
            throw ConfigError(name + ": need one control box per decision time");
        }
        for (const auto& box : control_box) {
            if (box.lower.size() != static_cast<std::size_t>(control_dim) ||
                box.upper.size() != static_cast<std::size_t>(control_dim)) {
                throw ConfigError(name + ": control box has wrong dimension");
            }
            for (int i = 0; i < control_dim; ++i) {
                if (!(box.lower[i] <= box.upper[i])) throw ConfigError(name + ": control box lower > upper");
            }
        }
        if (initial_state.size() != static_cast<std::size_t>(state_dim)) {
            throw ConfigError(name + ": initial state has wrong dimension");
        }
    }
};

/// Non-owning view of one disturbance path z_1..z_T.
class TrajectoryView {
public:
    TrajectoryView(ConstSpan data, int horizon, int noise_dim)
        : data_(data), horizon_(horizon), noise_dim_(noise_dim) {}

    int horizon() const noexcept { return horizon_; }
    int noise_dim() const noexcept { return noise_dim_; }
    ConstSpan data() const noexcept { return data_; }

    /// z_t for t in 1..T.
    ConstSpan point(int t) const {
        return data_.subspan(static_cast<std::size_t>(t - 1) * static_cast<std::size_t>(noise_dim_),
                             static_cast<std::size_t>(noise_dim_));
    }

private:
    ConstSpan data_;
    int horizon_;
    int noise_dim_;
};

/// Owning disturbance path.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(int horizon, int noise_dim)
        : data_(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(noise_dim), 0.0),
          horizon_(horizon), noise_dim_(noise_dim) {}
    Trajectory(std::vector<Vec> points) {
        horizon_ = static_cast<int>(points.size());
        noise_dim_ = points.empty() ? 0 : static_cast<int>(points.front().size());
        for (const auto& p : points) {
            if (static_cast<int>(p.size()) != noise_dim_) throw ConfigError("ragged trajectory");
            data_.insert(data_.end(), p.begin(), p.end());
        }
    }

    int horizon() const noexcept { return horizon_; }
    int noise_dim() const noexcept { return noise_dim_; }
    MutSpan point(int t) {
        return MutSpan(data_).subspan(static_cast<std::size_t>(t - 1) * noise_dim_, noise_dim_);
    }
    ConstSpan point(int t) const { return view().point(t); }
    TrajectoryView view() const { return {data_, horizon_, noise_dim_}; }
    operator TrajectoryView() const { return view(); }
    const Vec& data() const noexcept { return data_; }
    MutSpan mutable_data() noexcept { return data_; }
    bool operator==(const Trajectory&) const = default;

private:
    Vec data_;
    int horizon_ = 0;
    int noise_dim_ = 0;
};

/// n disturbance paths stored contiguously, with their generation lineage.
class TrainingSet {
public:
    TrainingSet() = default;
    TrainingSet(int horizon, int noise_dim, std::size_t n, std::uint64_t seed = 0, std::string sampler_id = {})
        : data_(n * static_cast<std::size_t>(horizon) * static_cast<std::size_t>(noise_dim), 0.0),
          n_(n), horizon_(horizon), noise_dim_(noise_dim), seed_(seed), sampler_id_(std::move(sampler_id)) {}

    static TrainingSet from_trajectories(const std::vector<Trajectory>& paths, std::uint64_t seed = 0,
                                         std::string sampler_id = "explicit") {
        if (paths.empty()) throw ConfigError("training set needs at least one trajectory");
        TrainingSet set(paths.front().horizon(), paths.front().noise_dim(), paths.size(), seed,
                        std::move(sampler_id));
        for (std::size_t i = 0; i < paths.size(); ++i) {
            if (paths[i].horizon() != set.horizon_ || paths[i].noise_dim() != set.noise_dim_) {
                throw ConfigError("trajectories in a training set must share shape");
            }
            std::copy(paths[i].data().begin(), paths[i].data().end(), set.slot(i).begin());
        }
        return set;
    }

    std::size_t size() const noexcept { return n_; }
    bool empty() const noexcept { return n_ == 0; }
    int horizon() const noexcept { return horizon_; }
    int noise_dim() const noexcept { return noise_dim_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::string& sampler_id() const noexcept { return sampler_id_; }

    TrajectoryView operator[](std::size_t i) const {
        return {ConstSpan(data_).subspan(i * stride(), stride()), horizon_, noise_dim_};
    }
    MutSpan slot(std::size_t i) { return MutSpan(data_).subspan(i * stride(), stride()); }

    /// Subset by index list (used for partition groups and subsampling).
    TrainingSet subset(std::span<const std::size_t> indices) const {
        TrainingSet out(horizon_, noise_dim_, indices.size(), seed_, sampler_id_);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            auto src = (*this)[indices[k]].data();
            std::copy(src.begin(), src.end(), out.slot(k).begin());
        }
        return out;
    }

    bool operator==(const TrainingSet&) const = default;

private:
    std::size_t stride() const { return static_cast<std::size_t>(horizon_) * static_cast<std::size_t>(noise_dim_); }

    Vec data_;
    std::size_t n_ = 0;
    int horizon_ = 0;
    int noise_dim_ = 0;
    std::uint64_t seed_ = 0;
    std::string sampler_id_;
};

// ---------------------------------------------------------------------------
// Feedback actions

/// Which quantities feed the per-time network.
enum class InputMode { State, Noise, StateAndNoise };

inline std::size_t network_input_dim(const ControlProblem& p, InputMode mode) {
    switch (mode) {
        case InputMode::State: return static_cast<std::size_t>(p.state_dim);
        case InputMode::Noise: return static_cast<std::size_t>(p.noise_dim);
        case InputMode::StateAndNoise: return static_cast<std::size_t>(p.state_dim + p.noise_dim);
    }
    return 0;
}

/// a(t, x, z) = alpha_t regardless of state and disturbance.
struct ConstantAction {
    std::vector<Vec> alpha;
};

/// a(t, x, z) = net_t(input) with one MLP per decision time.
/// Frozen decision times hold an empty MlpParams.
struct NetworkAction {
    std::vector<MlpParams> nets;
    InputMode input_mode = InputMode::StateAndNoise;
};

/// Problem-specific closed-form feedback.
struct ClosedFormAction {
    std::string tag;
    Vec parameters;
    std::function<void(int t, ConstSpan x, ConstSpan z, MutSpan a)> evaluate;
};

using FeedbackAction = std::variant<ConstantAction, NetworkAction, ClosedFormAction>;

/// Path of states x_0..x_T and applied controls a_0..a_{T-1}.
struct StatePath {
    std::vector<Vec> states;
    std::vector<Vec> controls;
};

/**
 * Evaluates one action on many trajectories while reusing scratch buffers.
 *
 * Not thread-safe: give each thread its own simulator. The problem and
 * action must outlive it.
 */
class PathSimulator {
public:
    PathSimulator(const ControlProblem& problem, const FeedbackAction& action)
        : problem_(problem), action_(action) {
        problem_.validate();
        const auto T = static_cast<std::size_t>(problem_.horizon);
        states_.assign(T + 1, Vec(problem_.state_dim, 0.0));
        controls_.assign(T, Vec(problem_.control_dim, 0.0));
        zero_noise_.assign(problem_.noise_dim, 0.0);
        check_action();
    }

    /// Simulates along z and returns the pathwise cost; the path is kept in states()/controls().
    double run(const TrajectoryView& z) {
        if (z.horizon() != problem_.horizon || z.noise_dim() != problem_.noise_dim) {
            throw ConfigError("trajectory shape does not match problem " + problem_.name);
        }
        const int T = problem_.horizon;
        std::copy(problem_.initial_state.begin(), problem_.initial_state.end(), states_[0].begin());
        double running = 0.0;
        for (int t = 0; t < T; ++t) {
            const ConstSpan z_t = t == 0 ? ConstSpan(zero_noise_) : z.point(t);
            Vec& a = controls_[t];
            evaluate_action(t, states_[t], z_t, a);
            problem_.control_box[t].clip(a);
            problem_.dynamics(t, states_[t], z.point(t + 1), a, states_[t + 1]);
            for (double v : states_[t + 1]) {
                if (!std::isfinite(v)) throw NumericError("non-finite state", t + 1);
            }
            if (problem_.running_cost) running += problem_.running_cost(t, states_[t], a);
        }
        const double cost = running + problem_.terminal_cost(states_[T]);
        if (!std::isfinite(cost)) throw NumericError("non-finite pathwise cost", T);
        return cost;
    }

    const std::vector<Vec>& states() const { return states_; }
    const std::vector<Vec>& controls() const { return controls_; }

private:
    void check_action() {
        const auto T = static_cast<std::size_t>(problem_.horizon);
        if (const auto* c = std::get_if<ConstantAction>(&action_)) {
            if (c->alpha.size() != T) throw ConfigError("constant action needs one control per decision time");
            for (const auto& a : c->alpha) {
                if (a.size() != static_cast<std::size_t>(problem_.control_dim)) {
                    throw ConfigError("constant action has wrong control dimension");
                }
            }
        } else if (const auto* n = std::get_if<NetworkAction>(&action_)) {
            if (n->nets.size() != T) throw ConfigError("network action needs one slot per decision time");
            caches_.resize(T);
            input_.resize(network_input_dim(problem_, n->input_mode));
            for (std::size_t t = 0; t < T; ++t) {
                if (problem_.is_frozen(static_cast<int>(t))) continue;
                const auto& net = n->nets[t];
                if (net.empty()) throw ConfigError("missing network for decision time " + std::to_string(t));
                if (net.input_dim() != input_.size() ||
                    net.output_dim() != static_cast<std::size_t>(problem_.control_dim)) {
                    throw ConfigError("network at time " + std::to_string(t) + " has wrong input/output width");
                }
            }
        } else if (!std::get<ClosedFormAction>(action_).evaluate) {
            throw ConfigError("closed-form action has no evaluator");
        }
    }

    void evaluate_action(int t, ConstSpan x, ConstSpan z_t, MutSpan a) {
        if (problem_.is_frozen(t)) {
            const auto& lo = problem_.control_box[t].lower;
            std::copy(lo.begin(), lo.end(), a.begin());
            return;
        }
        if (const auto* c = std::get_if<ConstantAction>(&action_)) {
            std::copy(c->alpha[t].begin(), c->alpha[t].end(), a.begin());
        } else if (const auto* n = std::get_if<NetworkAction>(&action_)) {
            fill_input(n->input_mode, x, z_t, input_);
            auto out = forward(n->nets[t], input_, caches_[t]);
            std::copy(out.begin(), out.end(), a.begin());
        } else {
            std::get<ClosedFormAction>(action_).evaluate(t, x, z_t, a);
        }
    }

public:
    static void fill_input(InputMode mode, ConstSpan x, ConstSpan z_t, MutSpan input) {
        switch (mode) {
            case InputMode::State: std::copy(x.begin(), x.end(), input.begin()); break;
            case InputMode::Noise: std::copy(z_t.begin(), z_t.end(), input.begin()); break;
            case InputMode::StateAndNoise:
                std::copy(x.begin(), x.end(), input.begin());
                std::copy(z_t.begin(), z_t.end(), input.begin() + static_cast<std::ptrdiff_t>(x.size()));
                break;
        }
    }

private:
    const ControlProblem& problem_;
    const FeedbackAction& action_;
    std::vector<Vec> states_;
    std::vector<Vec> controls_;
    Vec zero_noise_;
    Vec input_;
    std::vector<ForwardCache> caches_;
};

inline StatePath simulate_state(const ControlProblem& problem, const FeedbackAction& action,
                                const TrajectoryView& z) {
    PathSimulator sim(problem, action);
    sim.run(z);
    return {sim.states(), sim.controls()};
}

/// Sum of running costs plus terminal cost along the simulated path.
inline double pathwise_cost(const ControlProblem& problem, const FeedbackAction& action,
                            const TrajectoryView& z) {
    PathSimulator sim(problem, action);
    return sim.run(z);
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v)) {
            comp_ += (sum_ - t) + v;
        } else {
            comp_ += (v - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Pathwise cost of every trajectory in the set, in set order.
inline Vec pathwise_costs(const ControlProblem& problem, const FeedbackAction& action, const TrainingSet& set) {
    PathSimulator sim(problem, action);
    Vec costs(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) costs[i] = sim.run(set[i]);
    return costs;
}

/// Compensated mean of values reduced in canonical (ascending) order, so the
/// result does not depend on the order the values were produced in.
inline double canonical_mean(Vec values) {
    if (values.empty()) throw ConfigError("mean of an empty sample");
    std::sort(values.begin(), values.end());
    if (values.front() == values.back()) return values.front();
    CompensatedSum sum;
    for (double v : values) sum.add(v);
    return sum.value() / static_cast<double>(values.size());
}

/// Mean pathwise cost over the set.
inline double empirical_loss(const ControlProblem& problem, const FeedbackAction& action, const TrainingSet& set) {
    if (set.empty()) throw ConfigError("empirical_loss on an empty training set");
    return canonical_mean(pathwise_costs(problem, action, set));
}

/// Replays the realized controls of `action` along z as a constant action.
inline ConstantAction realized_constant_action(const ControlProblem& problem, const FeedbackAction& action,
                                               const TrajectoryView& z) {
    return {simulate_state(problem, action, z).controls};
}

}  // namespace dmco
