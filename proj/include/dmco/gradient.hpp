#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "dmco/control.hpp"
#include "dmco/mlp.hpp"

namespace dmco {

/**
 * Backward sweep of the adjoint recursion through the dynamics.
 *
 * Starting from adj_T = weight * grad(phi)(x_T), for t = T-1..0 computes
 * grad_a_t = (df/da)^T adj_{t+1} + weight * dpsi/da and
 * grad_x_t = (df/dx)^T adj_{t+1} + weight * dpsi/dx, hands grad_a_t to
 * `on_control(t, grad_a, grad_x)` (which may add the feedback term through
 * grad_x) and continues with adj_t = grad_x_t.
 */
class AdjointSweep {
public:
    explicit AdjointSweep(const ControlProblem& problem)
        : problem_(problem),
          adj_(problem.state_dim),
          grad_x_(problem.state_dim),
          grad_a_(problem.control_dim) {
        if (!problem.dynamics_vjp || !problem.terminal_cost_grad) {
            throw ConfigError(problem.name + ": gradient hooks are required for optimization");
        }
        if (problem.running_cost && !problem.running_cost_grad) {
            throw ConfigError(problem.name + ": running cost without gradient hook");
        }
    }

    template <class OnControl>
    void run(const std::vector<Vec>& states, const std::vector<Vec>& controls, const TrajectoryView& z,
             double weight, OnControl&& on_control) {
        const int T = problem_.horizon;
        problem_.terminal_cost_grad(states[T], adj_);
        for (double& v : adj_) v *= weight;
        for (int t = T - 1; t >= 0; --t) {
            std::fill(grad_x_.begin(), grad_x_.end(), 0.0);
            std::fill(grad_a_.begin(), grad_a_.end(), 0.0);
            problem_.dynamics_vjp(t, states[t], z.point(t + 1), controls[t], adj_, grad_x_, grad_a_);
            if (problem_.running_cost_grad) {
                problem_.running_cost_grad(t, states[t], controls[t], weight, grad_x_, grad_a_);
            }
            on_control(t, std::span<double>(grad_a_), std::span<double>(grad_x_));
            std::swap(adj_, grad_x_);
        }
    }

private:
    const ControlProblem& problem_;
    Vec adj_;
    Vec grad_x_;
    Vec grad_a_;
};

/**
 * Pathwise cost and its gradient with respect to the parameters of a
 * per-time network action, by reverse mode through the network and the
 * state recursion. Control components clipped by the box pass no gradient.
 */
class PolicyGradient {
public:
    PolicyGradient(const ControlProblem& problem, const NetworkAction& action)
        : problem_(problem), action_(action), sweep_(problem) {
        problem_.validate();
        const auto T = static_cast<std::size_t>(problem_.horizon);
        if (action_.nets.size() != T) throw ConfigError("network action needs one slot per decision time");
        states_.assign(T + 1, Vec(problem_.state_dim));
        controls_.assign(T, Vec(problem_.control_dim));
        passes_.assign(T, std::vector<char>(problem_.control_dim, 1));
        caches_.resize(T);
        input_.resize(network_input_dim(problem_, action_.input_mode));
        input_grad_.resize(input_.size());
        upstream_.resize(problem_.control_dim);
        zero_noise_.assign(problem_.noise_dim, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            if (problem_.is_frozen(static_cast<int>(t))) continue;
            const auto& net = action_.nets[t];
            if (net.empty()) throw ConfigError("missing network for decision time " + std::to_string(t));
            if (net.input_dim() != input_.size() ||
                net.output_dim() != static_cast<std::size_t>(problem_.control_dim)) {
                throw ConfigError("network at time " + std::to_string(t) + " has wrong input/output width");
            }
        }
    }

    /// Zeroed gradient buffers shaped like the action's networks.
    std::vector<Vec> zero_gradients() const {
        std::vector<Vec> g;
        for (const auto& net : action_.nets) g.emplace_back(net.size(), 0.0);
        return g;
    }

    /// Returns the pathwise cost on z and adds weight * d(cost)/d(theta) into grads.
    double accumulate(const TrajectoryView& z, double weight, std::vector<Vec>& grads) {
        const double cost = simulate(z);
        if (weight == 0.0) return cost;
        const bool feeds_state = action_.input_mode != InputMode::Noise;
        const auto sd = static_cast<std::size_t>(problem_.state_dim);
        sweep_.run(states_, controls_, z, weight, [&](int t, std::span<double> grad_a, std::span<double> grad_x) {
            if (problem_.is_frozen(t)) return;
            bool any = false;
            for (std::size_t i = 0; i < grad_a.size(); ++i) {
                upstream_[i] = passes_[t][i] ? grad_a[i] : 0.0;
                any = any || upstream_[i] != 0.0;
            }
            if (!any) return;
            auto in_grad = feeds_state ? std::span<double>(input_grad_) : std::span<double>();
            backward(action_.nets[t], caches_[t], upstream_, grads[t], in_grad, bw_);
            if (feeds_state) {
                for (std::size_t i = 0; i < sd; ++i) grad_x[i] += input_grad_[i];
            }
        });
        return cost;
    }

    /// Forward simulation retaining network caches; returns the pathwise cost.
    double simulate(const TrajectoryView& z) {
        if (z.horizon() != problem_.horizon || z.noise_dim() != problem_.noise_dim) {
            throw ConfigError("trajectory shape does not match problem " + problem_.name);
        }
        const int T = problem_.horizon;
        std::copy(problem_.initial_state.begin(), problem_.initial_state.end(), states_[0].begin());
        double running = 0.0;
        for (int t = 0; t < T; ++t) {
            Vec& a = controls_[t];
            const auto& box = problem_.control_box[t];
            if (problem_.is_frozen(t)) {
                std::copy(box.lower.begin(), box.lower.end(), a.begin());
            } else {
                const ConstSpan z_t = t == 0 ? ConstSpan(zero_noise_) : z.point(t);
                PathSimulator::fill_input(action_.input_mode, states_[t], z_t, input_);
                auto out = forward(action_.nets[t], input_, caches_[t]);
                for (std::size_t i = 0; i < a.size(); ++i) {
                    passes_[t][i] = out[i] >= box.lower[i] && out[i] <= box.upper[i];
                    a[i] = std::clamp(out[i], box.lower[i], box.upper[i]);
                }
            }
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
    const ControlProblem& problem_;
    const NetworkAction& action_;
    AdjointSweep sweep_;
    std::vector<Vec> states_;
    std::vector<Vec> controls_;
    std::vector<std::vector<char>> passes_;
    std::vector<ForwardCache> caches_;
    BackwardWorkspace bw_;
    Vec input_;
    Vec input_grad_;
    Vec upstream_;
    Vec zero_noise_;
};

/// Cost of the constant action alpha on z and its gradient d cost / d alpha
/// (zero at frozen decision times). alpha is used as given, without clipping.
inline double constant_action_cost_and_grad(const ControlProblem& problem, const std::vector<Vec>& alpha,
                                            const TrajectoryView& z, std::vector<Vec>& grad) {
    const int T = problem.horizon;
    std::vector<Vec> states(static_cast<std::size_t>(T) + 1, Vec(problem.state_dim));
    states[0] = problem.initial_state;
    double running = 0.0;
    for (int t = 0; t < T; ++t) {
        problem.dynamics(t, states[t], z.point(t + 1), alpha[t], states[t + 1]);
        if (problem.running_cost) running += problem.running_cost(t, states[t], alpha[t]);
    }
    const double cost = running + problem.terminal_cost(states[T]);
    grad.assign(static_cast<std::size_t>(T), Vec(problem.control_dim, 0.0));
    AdjointSweep sweep(problem);
    sweep.run(states, alpha, z, 1.0, [&](int t, std::span<double> grad_a, std::span<double>) {
        if (!problem.is_frozen(t)) std::copy(grad_a.begin(), grad_a.end(), grad[t].begin());
    });
    return cost;
}

}  // namespace dmco
