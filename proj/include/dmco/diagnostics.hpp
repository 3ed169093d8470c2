#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmco/control.hpp"
#include "dmco/errors.hpp"
#include "dmco/gradient.hpp"
#include "dmco/problems.hpp"
#include "dmco/rng.hpp"
#include "dmco/trainer.hpp"

namespace dmco {

// ---------------------------------------------------------------------------
// Pathwise optimum over constant actions

struct PathwiseOptConfig {
    int iterations = 200;
    int random_starts = 8;
    int max_corner_bits = 10;
    double tolerance = 1e-8;
    bool use_exact = true;  // short-circuit through the problem's exact per-path solver
    std::uint64_t seed = 0;
};

struct PathwiseOptimum {
    std::vector<Vec> alpha_star;
    double cost = 0.0;
    bool converged = false;
    bool exact = false;
    int starts = 0;
    int iterations = 0;  // total over all starts
};

namespace detail {

inline void project(const ControlProblem& problem, std::vector<Vec>& alpha) {
    for (int t = 0; t < problem.horizon; ++t) problem.control_box[t].clip(alpha[t]);
}

/// Mean cost of a constant action over a group and its gradient.
inline double group_cost_and_grad(const ControlProblem& problem, std::span<const TrajectoryView> group,
                                  const std::vector<Vec>& alpha, std::vector<Vec>& grad) {
    grad.assign(static_cast<std::size_t>(problem.horizon), Vec(problem.control_dim, 0.0));
    std::vector<Vec> g;
    CompensatedSum sum;
    const double inv = 1.0 / static_cast<double>(group.size());
    for (const auto& z : group) {
        sum.add(constant_action_cost_and_grad(problem, alpha, z, g));
        for (std::size_t t = 0; t < grad.size(); ++t) {
            for (std::size_t i = 0; i < grad[t].size(); ++i) grad[t][i] += inv * g[t][i];
        }
    }
    return sum.value() * inv;
}

struct DescentResult {
    std::vector<Vec> alpha;
    double cost;
    bool converged;
    int iterations;
};

/// Projected gradient with Armijo backtracking from one start.
inline DescentResult projected_descent(const ControlProblem& problem, std::span<const TrajectoryView> group,
                                       std::vector<Vec> alpha, const PathwiseOptConfig& cfg) {
    project(problem, alpha);
    std::vector<Vec> grad;
    std::vector<Vec> grad_new;
    double cost = group_cost_and_grad(problem, group, alpha, grad);
    double step = 1.0;
    bool converged = false;
    int it = 0;
    for (; it < cfg.iterations; ++it) {
        bool accepted = false;
        std::vector<Vec> trial;
        double trial_cost = cost;
        double moved2 = 0.0;
        while (step > 1e-30) {
            trial = alpha;
            moved2 = 0.0;
            for (std::size_t t = 0; t < trial.size(); ++t) {
                for (std::size_t i = 0; i < trial[t].size(); ++i) trial[t][i] -= step * grad[t][i];
            }
            project(problem, trial);
            for (std::size_t t = 0; t < trial.size(); ++t) {
                for (std::size_t i = 0; i < trial[t].size(); ++i) {
                    const double dlt = trial[t][i] - alpha[t][i];
                    moved2 += dlt * dlt;
                }
            }
            if (moved2 == 0.0) break;
            trial_cost = group_cost_and_grad(problem, group, trial, grad_new);
            if (std::isfinite(trial_cost) && trial_cost <= cost - 1e-4 * moved2 / step) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            converged = true;  // stationary for the projected gradient map
            break;
        }
        const double decrease = cost - trial_cost;
        alpha = std::move(trial);
        cost = trial_cost;
        grad.swap(grad_new);
        step *= 2.0;
        if (decrease < cfg.tolerance) {
            converged = true;
            ++it;
            break;
        }
    }
    return {std::move(alpha), cost, converged, it};
}

/// Multi-start minimization of the group-mean cost over constant actions.
inline PathwiseOptimum minimize_constant_action(const ControlProblem& problem, std::span<const TrajectoryView> group,
                                                const PathwiseOptConfig& cfg) {
    const auto T = static_cast<std::size_t>(problem.horizon);
    const auto cd = static_cast<std::size_t>(problem.control_dim);
    std::vector<std::pair<std::size_t, std::size_t>> free;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < cd; ++i) {
            const auto& box = problem.control_box[t];
            if (!std::isfinite(box.lower[i]) || !std::isfinite(box.upper[i])) {
                throw ConfigError("pathwise optimum needs a finite control box");
            }
            if (box.lower[i] < box.upper[i]) free.emplace_back(t, i);
        }
    }
    std::vector<Vec> center(T, Vec(cd));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < cd; ++i) {
            center[t][i] = 0.5 * (problem.control_box[t].lower[i] + problem.control_box[t].upper[i]);
        }
    }
    std::vector<std::vector<Vec>> starts;
    const int bits = static_cast<int>(std::min<std::size_t>(free.size(), static_cast<std::size_t>(cfg.max_corner_bits)));
    for (std::uint64_t corner = 0; corner < (std::uint64_t{1} << bits); ++corner) {
        auto s = center;
        for (std::size_t k = 0; k < free.size(); ++k) {
            const auto [t, i] = free[k];
            const bool up = bits > 0 && ((corner >> (k % static_cast<std::size_t>(bits))) & 1U);
            s[t][i] = up ? problem.control_box[t].upper[i] : problem.control_box[t].lower[i];
        }
        starts.push_back(std::move(s));
        if (free.empty()) break;
    }
    starts.push_back(center);
    CounterRng rng(cfg.seed);
    for (int r = 0; r < cfg.random_starts && !free.empty(); ++r) {
        auto s = center;
        for (const auto& [t, i] : free) s[t][i] = rng.uniform(problem.control_box[t].lower[i], problem.control_box[t].upper[i]);
        starts.push_back(std::move(s));
    }

    PathwiseOptimum best;
    best.cost = std::numeric_limits<double>::infinity();
    for (auto& s : starts) {
        auto res = projected_descent(problem, group, std::move(s), cfg);
        ++best.starts;
        best.iterations += res.iterations;
        if (res.cost < best.cost) {
            best.cost = res.cost;
            best.alpha_star = std::move(res.alpha);
            best.converged = res.converged;
        }
    }
    return best;
}

}  // namespace detail

/// inf over constant actions alpha in the box of the pathwise cost on z.
inline PathwiseOptimum pathwise_optimum(const ControlProblem& problem, const TrajectoryView& z,
                                        const PathwiseOptConfig& cfg = {}) {
    problem.validate();
    if (cfg.use_exact && problem.exact_pathwise) {
        if (auto sol = problem.exact_pathwise(z)) {
            PathwiseOptimum out;
            out.alpha_star = std::move(sol->alpha);
            out.cost = sol->cost;
            out.converged = true;
            out.exact = true;
            return out;
        }
    }
    const TrajectoryView group[] = {z};
    return detail::minimize_constant_action(problem, group, cfg);
}

struct VStarResult {
    double value = 0.0;
    bool converged = true;  // false: value is only an upper bound on the average of the infima
    Vec per_path;
};

/// Average over the set of per-trajectory pathwise optima.
inline VStarResult v_star_empirical(const ControlProblem& problem, const TrainingSet& set,
                                    const PathwiseOptConfig& cfg = {}) {
    if (set.empty()) throw ConfigError("v_star_empirical on an empty set");
    VStarResult out;
    out.per_path.resize(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        PathwiseOptConfig c = cfg;
        c.seed = derive_seed(cfg.seed, {i});
        auto opt = pathwise_optimum(problem, set[i], c);
        out.per_path[i] = opt.cost;
        out.converged = out.converged && opt.converged;
    }
    out.value = canonical_mean(out.per_path);
    return out;
}

// ---------------------------------------------------------------------------
// Partitions of linked trajectories

struct Partition {
    std::vector<std::vector<std::size_t>> groups;
    double link_tolerance = 0.0;
};

namespace detail {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

inline bool points_linked(ConstSpan a, ConstSpan b, double tol) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(d2) <= tol;
}

struct SpanHash {
    std::size_t operator()(ConstSpan s) const {
        return static_cast<std::size_t>(fnv1a(s.data(), s.size_bytes()));
    }
};
struct SpanEq {
    bool operator()(ConstSpan a, ConstSpan b) const { return std::equal(a.begin(), a.end(), b.begin(), b.end()); }
};

}  // namespace detail

/**
 * Connected components of the graph linking trajectories i and j whenever
 * ||z_t^(i) - z_t^(j)|| <= link_tolerance for some t in 1..T: the finest
 * partition closed under "shares a point with".
 */
inline Partition partition_training_set(const TrainingSet& set, double link_tolerance = 0.0) {
    if (!(link_tolerance >= 0.0)) throw ConfigError("partition: link_tolerance must be >= 0");
    const std::size_t n = set.size();
    detail::DisjointSets dsu(n);
    for (int t = 1; t <= set.horizon(); ++t) {
        if (link_tolerance == 0.0) {
            std::unordered_map<ConstSpan, std::size_t, detail::SpanHash, detail::SpanEq> seen;
            for (std::size_t i = 0; i < n; ++i) {
                auto [it, inserted] = seen.emplace(set[i].point(t), i);
                if (!inserted) dsu.unite(it->second, i);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    if (detail::points_linked(set[i].point(t), set[j].point(t), link_tolerance)) dsu.unite(i, j);
                }
            }
        }
    }
    Partition out;
    out.link_tolerance = link_tolerance;
    std::vector<std::size_t> group_of(n, SIZE_MAX);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = dsu.find(i);
        if (group_of[root] == SIZE_MAX) {
            group_of[root] = out.groups.size();
            out.groups.emplace_back();
        }
        out.groups[group_of[root]].push_back(i);
    }
    return out;
}

/// Exhaustive check of disjointness, covering and closure.
inline bool partition_is_valid(const TrainingSet& set, const Partition& part) {
    std::vector<int> owner(set.size(), -1);
    for (std::size_t g = 0; g < part.groups.size(); ++g) {
        if (part.groups[g].empty()) return false;
        for (std::size_t i : part.groups[g]) {
            if (i >= set.size() || owner[i] != -1) return false;
            owner[i] = static_cast<int>(g);
        }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end()) return false;
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t j = i + 1; j < set.size(); ++j) {
            if (owner[i] == owner[j]) continue;
            for (int t = 1; t <= set.horizon(); ++t) {
                if (detail::points_linked(set[i].point(t), set[j].point(t), part.link_tolerance)) return false;
            }
        }
    }
    return true;
}

struct VBarStarResult {
    double value = 0.0;
    bool converged = true;
    Vec group_minima;
};

/// Per group, the minimal group-mean cost of one constant action; averaged
/// with weight 1/m per group, or by group size when size_weighted is set.
inline VBarStarResult v_bar_star(const ControlProblem& problem, const TrainingSet& set, const Partition& part,
                                 const PathwiseOptConfig& cfg = {}, bool size_weighted = false) {
    if (part.groups.empty()) throw ConfigError("v_bar_star: empty partition");
    VBarStarResult out;
    CompensatedSum sum;
    for (std::size_t g = 0; g < part.groups.size(); ++g) {
        const auto& idx = part.groups[g];
        PathwiseOptConfig c = cfg;
        c.seed = derive_seed(cfg.seed, {g});
        PathwiseOptimum opt;
        if (idx.size() == 1) {
            opt = pathwise_optimum(problem, set[idx[0]], c);
        } else {
            std::vector<TrajectoryView> views;
            for (std::size_t i : idx) views.push_back(set[i]);
            opt = detail::minimize_constant_action(problem, views, c);
        }
        out.group_minima.push_back(opt.cost);
        out.converged = out.converged && opt.converged;
        sum.add(size_weighted ? opt.cost * static_cast<double>(idx.size()) : opt.cost);
    }
    out.value = sum.value() / static_cast<double>(size_weighted ? set.size() : part.groups.size());
    return out;
}

// ---------------------------------------------------------------------------
// Empirical Rademacher complexity of the loss class

/// Signed: E sup_theta (1/n) sum sigma_i l_i. Absolute: E sup_theta |...|.
enum class RademacherVariant { Signed, Absolute };

struct RademacherConfig {
    int m_samples = 20;
    int epochs = 20;          // ascent epochs per start; 0 evaluates the initial networks only
    std::size_t batch_size = 32;
    int restarts = 1;
    AdamHyper adam{};
    RademacherVariant variant = RademacherVariant::Signed;
    std::uint64_t seed = 0;
};

struct RademacherEstimate {
    double r_hat = 0.0;
    int m_samples = 0;
    Vec per_draw;            // best value found for each sigma draw
    std::vector<int> best_restart;
    std::vector<int> best_epoch;
    double std_error = 0.0;
    bool is_lower_bound = true;
    int skipped = 0;
};

namespace detail {

inline double signed_correlation(const Vec& costs, const Vec& sigma) {
    CompensatedSum s;
    for (std::size_t i = 0; i < costs.size(); ++i) s.add(sigma[i] * costs[i]);
    return s.value() / static_cast<double>(costs.size());
}

}  // namespace detail

/**
 * Lower estimate of the empirical Rademacher complexity of
 * { z -> l(Phi(.; theta), z) } on the set: for each sign draw the
 * supremum over theta is approached by Adam ascent from `restarts`
 * initializations, and the best value seen at any epoch is kept.
 */
inline RademacherEstimate empirical_rademacher(const ControlProblem& problem, const NetConfig& net_config,
                                               const TrainingSet& set, const RademacherConfig& cfg) {
    if (cfg.m_samples < 1) throw ConfigError("empirical_rademacher: m_samples must be >= 1");
    if (cfg.restarts < 1) throw ConfigError("empirical_rademacher: restarts must be >= 1");
    if (set.empty()) throw ConfigError("empirical_rademacher: empty set");
    const std::size_t n = set.size();
    RademacherEstimate est;
    est.m_samples = cfg.m_samples;
    for (int draw = 0; draw < cfg.m_samples; ++draw) {
        CounterRng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(draw), 1}));
        Vec sigma(n);
        for (double& s : sigma) s = (rng() >> 63) ? 1.0 : -1.0;
        double best = -std::numeric_limits<double>::infinity();
        int best_restart = 0;
        int best_epoch = 0;
        bool failed = false;
        const int directions = cfg.variant == RademacherVariant::Absolute ? 2 : 1;
        try {
            for (int restart = 0; restart < cfg.restarts; ++restart) {
                for (int dir = 0; dir < directions; ++dir) {
                    const double sign = dir == 0 ? 1.0 : -1.0;
                    NetConfig nc = net_config;
                    nc.seed = derive_seed(net_config.seed, {static_cast<std::uint64_t>(draw),
                                                            static_cast<std::uint64_t>(restart)});
                    NetworkAction action = init_network_action(problem, nc);
                    auto adam = make_adam_states(action, cfg.adam);
                    Vec weights(n);
                    for (std::size_t i = 0; i < n; ++i) weights[i] = -sign * sigma[i];
                    const std::uint64_t shuffle = derive_seed(cfg.seed, {static_cast<std::uint64_t>(draw),
                                                                         static_cast<std::uint64_t>(restart), 2});
                    for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
                        if (epoch > 0) {
                            minibatch_epoch(problem, action, set, cfg.batch_size, shuffle,
                                            static_cast<std::uint64_t>(epoch), adam, weights, !nc.per_time);
                        }
                        const double value =
                            sign * detail::signed_correlation(pathwise_costs(problem, FeedbackAction{action}, set), sigma);
                        if (!std::isfinite(value)) throw NumericError("non-finite Rademacher objective");
                        if (value > best) {
                            best = value;
                            best_restart = restart;
                            best_epoch = epoch;
                        }
                    }
                }
            }
        } catch (const NumericError&) {
            failed = true;
        }
        if (failed) {
            ++est.skipped;
            continue;
        }
        est.per_draw.push_back(best);
        est.best_restart.push_back(best_restart);
        est.best_epoch.push_back(best_epoch);
    }
    if (est.per_draw.empty()) throw NumericError("empirical_rademacher: every draw failed");
    CompensatedSum sum;
    for (double v : est.per_draw) sum.add(v);
    const double m = static_cast<double>(est.per_draw.size());
    est.r_hat = sum.value() / m;
    if (est.per_draw.size() > 1) {
        CompensatedSum ss;
        for (double v : est.per_draw) ss.add((v - est.r_hat) * (v - est.r_hat));
        est.std_error = std::sqrt(ss.value() / (m - 1.0) / m);
    }
    return est;
}

struct ComplexityBounds {
    double c_nu = 0.0;
    double C_e = 0.0;
    bool from_lower_estimate = false;  // complexity input was a lower estimate, so are the bounds
};

/// c_nu = 2 r + 2 c* sqrt(ln(2/delta) / (2n)),  C_e = 2 R + 6 c* sqrt(ln(2/delta) / n).
inline ComplexityBounds complexity_bounds(double complexity, double c_star, std::size_t n, double delta,
                                          bool complexity_is_lower_estimate = false) {
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("complexity_bounds: delta must lie in (0, 1)");
    if (n < 1) throw DomainError("complexity_bounds: n must be >= 1");
    if (!(c_star > 0.0)) throw DomainError("complexity_bounds: c_star must be positive");
    if (!(complexity >= 0.0) || !std::isfinite(complexity)) {
        throw DomainError("complexity_bounds: complexity must be finite and non-negative");
    }
    const double log_term = std::log(2.0 / delta);
    const double nn = static_cast<double>(n);
    return {2.0 * complexity + 2.0 * c_star * std::sqrt(log_term / (2.0 * nn)),
            2.0 * complexity + 6.0 * c_star * std::sqrt(log_term / nn), complexity_is_lower_estimate};
}

// ---------------------------------------------------------------------------
// Relative performance against a known optimum

struct GapReport {
    double p_in = 0.0;   // percent
    double p_out = 0.0;  // percent
    double gap = 0.0;    // p_in - p_out
    double nn_in = 0.0;
    double nn_out = 0.0;
    double true_in = 0.0;
    double true_out = 0.0;
    double o_hat = 0.0;  // |L(trained; train) - L(trained; test)|
    bool utility_at_supremum = false;
};

/**
 * Certainty-equivalent comparison of a trained action with the optimal one
 * on the training set and an independent test set. Relative performances are
 * (nn - true) / |true| in percent. An empirical utility >= 1 yields an
 * infinite certainty equivalent and sets utility_at_supremum.
 */
inline GapReport relative_performance(const ControlProblem& problem, const FeedbackAction& trained,
                                      const FeedbackAction& oracle, const TrainingSet& train_set,
                                      const TrainingSet& test_set, double lambda) {
    const double l_nn_in = empirical_loss(problem, trained, train_set);
    const double l_nn_out = empirical_loss(problem, trained, test_set);
    const double l_true_in = empirical_loss(problem, oracle, train_set);
    const double l_true_out = empirical_loss(problem, oracle, test_set);
    GapReport g;
    auto ce = [&](double loss) {
        const double v = -loss;
        if (!(v < 1.0)) {
            g.utility_at_supremum = true;
            return std::numeric_limits<double>::infinity();
        }
        return certainty_equivalent(v, lambda);
    };
    g.nn_in = ce(l_nn_in);
    g.nn_out = ce(l_nn_out);
    g.true_in = ce(l_true_in);
    g.true_out = ce(l_true_out);
    g.p_in = 100.0 * (g.nn_in - g.true_in) / std::abs(g.true_in);
    g.p_out = 100.0 * (g.nn_out - g.true_out) / std::abs(g.true_out);
    g.gap = g.p_in - g.p_out;
    g.o_hat = std::abs(l_nn_in - l_nn_out);
    return g;
}

}  // namespace dmco
