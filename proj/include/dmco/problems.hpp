#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <utility>

#include "dmco/control.hpp"
#include "dmco/errors.hpp"
#include "dmco/sampler.hpp"

namespace dmco {

/// u(x) = 1 - exp(-lambda x).
inline double exponential_utility(double x, double lambda) { return -std::expm1(-lambda * x); }

/// Cash amount whose utility is v: the inverse of exponential_utility.
inline double certainty_equivalent(double v, double lambda) {
    if (!(lambda > 0.0)) throw DomainError("certainty_equivalent: lambda must be positive");
    if (!(v < 1.0)) throw DomainError("certainty_equivalent: utility value must be < 1 (the supremum of u)");
    return -std::log1p(-v) / lambda;
}

struct ProblemSetup {
    ControlProblem problem;
    std::string sampler_id;
};

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Gaussian draw truncated to mean +- k sd by rejection (k <= 0 disables truncation).
inline double truncated_normal(CounterRng& rng, double mean, double sd, double k) {
    std::normal_distribution<double> normal(mean, sd);
    for (;;) {
        const double v = normal(rng);
        if (k <= 0.0 || std::abs(v - mean) <= k * sd) return v;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-period Merton problem with exponential utility

struct MertonParams {
    int d = 1;
    double lambda = 1.0;
    double r = 0.0;
    double m = 0.18;
    double s = 0.44;
    Vec eta;                   // unit direction of Z_2; empty means first basis vector
    double z1_low = -0.5;
    double z1_high = 0.5;
    double zeta_trunc_sd = 8.0;  // |zeta - m| <= k s keeps c* finite

    Vec direction() const {
        if (!eta.empty()) return eta;
        Vec e(static_cast<std::size_t>(d), 0.0);
        e[0] = 1.0;
        return e;
    }

    void validate() const {
        if (d < 1) throw ConfigError("merton: d must be >= 1");
        if (!(lambda > 0.0)) throw ConfigError("merton: lambda must be positive");
        if (!(s > 0.0)) throw ConfigError("merton: s must be positive");
        if (!(z1_low < z1_high)) throw ConfigError("merton: empty Z_1 support");
        const Vec e = direction();
        if (e.size() != static_cast<std::size_t>(d)) throw ConfigError("merton: eta has wrong dimension");
        double norm2 = 0.0;
        for (double v : e) norm2 += v * v;
        if (std::abs(std::sqrt(norm2) - 1.0) > 1e-12) throw ConfigError("merton: eta must be a unit vector");
    }

    std::string sampler_id() const {
        const Vec e = direction();
        const auto h = detail::fnv1a(e.data(), e.size() * sizeof(double));
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
        return "merton:d=" + std::to_string(d) + ":r=" + detail::fmt_double(r) + ":m=" + detail::fmt_double(m) +
               ":s=" + detail::fmt_double(s) + ":z1=" + detail::fmt_double(z1_low) + "," +
               detail::fmt_double(z1_high) + ":trunc=" + detail::fmt_double(zeta_trunc_sd) + ":eta=" + hex;
    }
};

/**
 * Wealth X_{t+1} = (1 + r) X_t + a_t . (Z_{t+1} - r 1), X_0 = 0, T = 2.
 *
 * The first portfolio is frozen at (1/d, ..., 1/d); the second lies in
 * `box`. Terminal cost is the negated utility exp(-lambda x) - 1. The
 * registered sampler draws Z_1 ~ U[z1_low, z1_high]^d and Z_2 = zeta eta
 * with zeta ~ N(m, s^2) independent of Z_1.
 */
inline ProblemSetup merton_problem(const MertonParams& p, const ControlBox& box) {
    p.validate();
    const auto d = static_cast<std::size_t>(p.d);
    if (box.lower.size() != d || box.upper.size() != d) throw ConfigError("merton: control box has wrong dimension");
    const double r = p.r;
    const double lambda = p.lambda;
    const Vec eta = p.direction();

    ControlProblem prob;
    prob.name = "merton";
    prob.horizon = 2;
    prob.state_dim = 1;
    prob.noise_dim = p.d;
    prob.control_dim = p.d;
    prob.initial_state = {0.0};
    prob.control_box = {ControlBox{Vec(d, 1.0 / p.d), Vec(d, 1.0 / p.d)}, box};
    prob.dynamics = [r](int, ConstSpan x, ConstSpan z, ConstSpan a, MutSpan out) {
        double gain = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) gain += a[i] * (z[i] - r);
        out[0] = (1.0 + r) * x[0] + gain;
    };
    prob.dynamics_vjp = [r](int, ConstSpan, ConstSpan z, ConstSpan, ConstSpan adj, MutSpan gx, MutSpan ga) {
        gx[0] = (1.0 + r) * adj[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = adj[0] * (z[i] - r);
    };
    prob.terminal_cost = [lambda](ConstSpan x) { return std::expm1(-lambda * x[0]); };
    prob.terminal_cost_grad = [lambda](ConstSpan x, MutSpan g) { g[0] = -lambda * std::exp(-lambda * x[0]); };

    // c*: the cost is decreasing in wealth and bounded below by -1.
    const double zeta_lo = p.m - p.zeta_trunc_sd * p.s;
    const double zeta_hi = p.m + p.zeta_trunc_sd * p.s;
    double worst = (1.0 + r) * std::max(std::abs(p.z1_low - r), std::abs(p.z1_high - r));
    for (std::size_t i = 0; i < d; ++i) {
        const double reach = std::max(std::abs(box.lower[i]), std::abs(box.upper[i]));
        const double excess = std::max(std::abs(zeta_lo * eta[i] - r), std::abs(zeta_hi * eta[i] - r));
        worst += reach * (p.zeta_trunc_sd > 0.0 ? excess : HUGE_VAL);
    }
    prob.cost_bound = 1.0 + std::exp(lambda * worst);

    prob.exact_pathwise = [r, lambda, box, d](const TrajectoryView& z) -> std::optional<PathwiseSolution> {
        PathwiseSolution sol;
        sol.alpha = {Vec(d, 1.0 / static_cast<double>(d)), Vec(d, 0.0)};
        double x1 = 0.0;
        for (std::size_t i = 0; i < d; ++i) x1 += (z.point(1)[i] - r) / static_cast<double>(d);
        double wealth = (1.0 + r) * x1;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = z.point(2)[i] - r;
            double a = std::clamp(0.0, box.lower[i], box.upper[i]);
            if (c > 0.0) a = box.upper[i];
            if (c < 0.0) a = box.lower[i];
            sol.alpha[1][i] = a;
            wealth += a * c;
        }
        sol.cost = std::expm1(-lambda * wealth);
        return sol;
    };

    const std::string id = p.sampler_id();
    if (!SamplerRegistry::instance().contains(id)) {
        register_sampler({id, 2, p.d, [p, eta](CounterRng& rng, MutSpan out) {
                              const auto dd = static_cast<std::size_t>(p.d);
                              for (std::size_t i = 0; i < dd; ++i) out[i] = rng.uniform(p.z1_low, p.z1_high);
                              const double zeta = detail::truncated_normal(rng, p.m, p.s, p.zeta_trunc_sd);
                              for (std::size_t i = 0; i < dd; ++i) out[dd + i] = zeta * eta[i];
                          }});
    }
    return {std::move(prob), id};
}

inline ProblemSetup merton_problem(const MertonParams& p, double box_bound = 20.0) {
    return merton_problem(p, uniform_box(static_cast<std::size_t>(p.d), -box_bound, box_bound));
}

struct MertonClosedForm {
    Vec a_star;
    double ce_star = 0.0;
};

/// a* = m / (lambda s^2) eta and ce* = -m^2 / (2 lambda s^2), valid for r = 0.
///
/// ce_star is the value of the textbook display. Measured with
/// certainty_equivalent (the inverse of u) the optimal second-period
/// position is worth +m^2 / (2 lambda s^2); see merton_optimal_certainty_equivalent.
inline MertonClosedForm merton_closed_form(const MertonParams& p) {
    p.validate();
    if (p.r != 0.0) throw UnsupportedRegimeError("merton closed form is only available for r = 0");
    MertonClosedForm out;
    out.a_star = p.direction();
    const double scale = p.m / (p.lambda * p.s * p.s);
    for (double& v : out.a_star) v *= scale;
    out.ce_star = -p.m * p.m / (2.0 * p.lambda * p.s * p.s);
    return out;
}

/// Exact certainty equivalent of E[u(X_2)] under the optimal action (r = 0,
/// untruncated zeta): m^2 / (2 lambda s^2) - ln E[exp(-lambda X_1)] / lambda.
inline double merton_optimal_certainty_equivalent(const MertonParams& p) {
    p.validate();
    if (p.r != 0.0) throw UnsupportedRegimeError("merton closed form is only available for r = 0");
    const double c = p.lambda / p.d;
    const double width = p.z1_high - p.z1_low;
    const double log_mgf_one = std::log((std::exp(-c * p.z1_low) - std::exp(-c * p.z1_high)) / (c * width));
    return p.m * p.m / (2.0 * p.lambda * p.s * p.s) - p.d * log_mgf_one / p.lambda;
}

/// Closed-form optimal feedback: a(1, x, z) = a* (constant in space).
inline ClosedFormAction merton_optimal_action(const MertonParams& p) {
    auto cf = merton_closed_form(p);
    ClosedFormAction a;
    a.tag = "merton_optimal";
    a.parameters = cf.a_star;
    a.evaluate = [a_star = cf.a_star](int, ConstSpan, ConstSpan, MutSpan out) {
        std::copy(a_star.begin(), a_star.end(), out.begin());
    };
    return a;
}

// ---------------------------------------------------------------------------
// Two-stage production planning

enum class Penalty { Quadratic, Quartic };

struct ProductionParams {
    Penalty penalty = Penalty::Quadratic;
    double z1_low = 1.0;
    double z1_high = 2.0;
    double z2_mean = 0.0;
    double z2_sd = 0.25;
    double z2_trunc_sd = 4.0;   // Z_2 is truncated to mean +- k sd
    double production_cap = 10.0;

    void validate() const {
        if (!(z1_low < z1_high)) throw ConfigError("production: empty Z_1 support");
        if (!(z2_sd > 0.0)) throw ConfigError("production: Z_2 sd must be positive");
        if (!(z2_trunc_sd > 0.0)) throw ConfigError("production: Z_2 must be truncated to keep costs bounded");
        if (!(production_cap > 0.0)) throw ConfigError("production: cap must be positive");
    }

    std::string sampler_id() const {
        return "production:z1=" + detail::fmt_double(z1_low) + "," + detail::fmt_double(z1_high) +
               ":z2=" + detail::fmt_double(z2_mean) + "," + detail::fmt_double(z2_sd) + ":trunc=" +
               detail::fmt_double(z2_trunc_sd);
    }
};

inline double production_penalty(Penalty p, double x) {
    return p == Penalty::Quadratic ? x * x : x * x * x * x;
}

inline double production_penalty_grad(Penalty p, double x) {
    return p == Penalty::Quadratic ? 2.0 * x : 4.0 * x * x * x;
}

/// Variance of the truncated Gaussian Z_2; the minimal expected quadratic
/// penalty, attained by a*(z_1) = z_1 + E[Z_2].
inline double production_z2_variance(const ProductionParams& p) {
    const double k = p.z2_trunc_sd;
    const double pdf = std::exp(-0.5 * k * k) / std::sqrt(2.0 * std::numbers::pi);
    const double mass = std::erf(k / std::numbers::sqrt2);
    return p.z2_sd * p.z2_sd * (1.0 - 2.0 * k * pdf / mass);
}

/**
 * Inventory X_{t+1} = X_t - a_t + Z_{t+1} with X_0 = 0. Nothing is produced
 * at t = 0; at t = 1 production lies in [0, production_cap]. The terminal
 * penalty phi(X_2) is zero only at the origin.
 */
inline ProblemSetup production_problem(const ProductionParams& p) {
    p.validate();
    ControlProblem prob;
    prob.name = "production";
    prob.horizon = 2;
    prob.state_dim = 1;
    prob.noise_dim = 1;
    prob.control_dim = 1;
    prob.initial_state = {0.0};
    prob.control_box = {ControlBox{{0.0}, {0.0}}, ControlBox{{0.0}, {p.production_cap}}};
    prob.dynamics = [](int, ConstSpan x, ConstSpan z, ConstSpan a, MutSpan out) { out[0] = x[0] - a[0] + z[0]; };
    prob.dynamics_vjp = [](int, ConstSpan, ConstSpan, ConstSpan, ConstSpan adj, MutSpan gx, MutSpan ga) {
        gx[0] = adj[0];
        ga[0] = -adj[0];
    };
    const Penalty pen = p.penalty;
    prob.terminal_cost = [pen](ConstSpan x) { return production_penalty(pen, x[0]); };
    prob.terminal_cost_grad = [pen](ConstSpan x, MutSpan g) { g[0] = production_penalty_grad(pen, x[0]); };

    const double z2_lo = p.z2_mean - p.z2_trunc_sd * p.z2_sd;
    const double z2_hi = p.z2_mean + p.z2_trunc_sd * p.z2_sd;
    const double worst = std::max(std::abs(p.z1_low + z2_lo - p.production_cap), std::abs(p.z1_high + z2_hi));
    prob.cost_bound = production_penalty(pen, worst);

    const double cap = p.production_cap;
    prob.exact_pathwise = [pen, cap](const TrajectoryView& z) -> std::optional<PathwiseSolution> {
        const double total = z.point(1)[0] + z.point(2)[0];
        const double a = std::clamp(total, 0.0, cap);
        return PathwiseSolution{{{0.0}, {a}}, production_penalty(pen, total - a)};
    };

    const std::string id = p.sampler_id();
    if (!SamplerRegistry::instance().contains(id)) {
        register_sampler({id, 2, 1, [p](CounterRng& rng, MutSpan out) {
                              out[0] = rng.uniform(p.z1_low, p.z1_high);
                              out[1] = detail::truncated_normal(rng, p.z2_mean, p.z2_sd, p.z2_trunc_sd);
                          }});
    }
    return {std::move(prob), id};
}

/// Optimal feedback for the quadratic penalty: a*(z_1) = z_1 + E[Z_2], clipped.
inline ClosedFormAction production_optimal_action(const ProductionParams& p) {
    ClosedFormAction a;
    a.tag = "production_conditional_mean";
    a.parameters = {p.z2_mean, p.production_cap};
    a.evaluate = [mu = p.z2_mean, cap = p.production_cap](int, ConstSpan, ConstSpan z, MutSpan out) {
        out[0] = std::clamp(z[0] + mu, 0.0, cap);
    };
    return a;
}

}  // namespace dmco
