#pragma once

#include <cmath>
#include <string>

#include "dmco/control.hpp"
#include "dmco/sampler.hpp"

// A small nonlinear three-step problem with running costs, used where the
// built-in two-period problems would leave parts of the recursion untested.
namespace dmco::fixtures {

inline constexpr const char* kToySampler = "test:toy-uniform";

inline ControlProblem toy_problem() {
    ControlProblem p;
    p.name = "toy";
    p.horizon = 3;
    p.state_dim = 2;
    p.noise_dim = 2;
    p.control_dim = 2;
    p.initial_state = {0.3, -0.2};
    p.control_box.assign(3, uniform_box(2, -1.5, 1.5));
    p.dynamics = [](int, ConstSpan x, ConstSpan z, ConstSpan a, MutSpan out) {
        out[0] = 0.9 * x[0] + a[0] + z[0] * (1.0 + 0.1 * a[1]);
        out[1] = 0.9 * x[1] + a[1] + z[1] * (1.0 + 0.1 * a[0]);
    };
    p.dynamics_vjp = [](int, ConstSpan, ConstSpan z, ConstSpan, ConstSpan adj, MutSpan gx, MutSpan ga) {
        gx[0] = 0.9 * adj[0];
        gx[1] = 0.9 * adj[1];
        ga[0] = adj[0] + 0.1 * z[1] * adj[1];
        ga[1] = adj[1] + 0.1 * z[0] * adj[0];
    };
    p.running_cost = [](int, ConstSpan x, ConstSpan a) {
        return 0.5 * (a[0] * a[0] + a[1] * a[1]) + 0.1 * (x[0] * x[0] + x[1] * x[1]);
    };
    p.running_cost_grad = [](int, ConstSpan x, ConstSpan a, double s, MutSpan gx, MutSpan ga) {
        for (int i = 0; i < 2; ++i) {
            gx[i] += s * 0.2 * x[i];
            ga[i] += s * a[i];
        }
    };
    p.terminal_cost = [](ConstSpan x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.2 * x[0] * x[1]; };
    p.terminal_cost_grad = [](ConstSpan x, MutSpan g) {
        g[0] = x[0] + 0.2 * x[1];
        g[1] = x[1] + 0.2 * x[0];
    };
    // |x_{t+1,i}| <= 0.9 |x_{t,i}| + 1.5 + 1.15 with noise in [-1, 1].
    double bound = 0.3, running = 0.0;
    for (int t = 0; t < 3; ++t) {
        running += 0.5 * 2 * 1.5 * 1.5 + 0.1 * 2 * bound * bound;
        bound = 0.9 * bound + 2.65;
    }
    p.cost_bound = running + 0.7 * 2 * bound * bound;
    if (!SamplerRegistry::instance().contains(kToySampler)) {
        register_sampler({kToySampler, 3, 2, [](CounterRng& rng, MutSpan out) {
                              for (auto& v : out) v = rng.uniform(-1.0, 1.0);
                          }});
    }
    return p;
}

}  // namespace dmco::fixtures
