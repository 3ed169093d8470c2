#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmco/diagnostics.hpp"
#include "dmco/problems.hpp"
#include "dmco/sampler.hpp"
#include "fixtures.hpp"

using namespace dmco;

namespace {

Trajectory traj(std::vector<Vec> pts) { return Trajectory(std::move(pts)); }

PathwiseOptConfig generic() {
    PathwiseOptConfig c;
    c.use_exact = false;
    return c;
}

// Brute-force connected components over the "shares a point" relation.
std::vector<int> component_labels(const TrainingSet& set, double tol) {
    const std::size_t n = set.size();
    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        std::vector<std::size_t> stack{s};
        label[s] = next;
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < n; ++j) {
                if (label[j] >= 0) continue;
                for (int t = 1; t <= set.horizon(); ++t) {
                    double d2 = 0.0;
                    for (std::size_t k = 0; k < set[i].point(t).size(); ++k) {
                        const double d = set[i].point(t)[k] - set[j].point(t)[k];
                        d2 += d * d;
                    }
                    if (std::sqrt(d2) <= tol) {
                        label[j] = label[s];
                        stack.push_back(j);
                        break;
                    }
                }
            }
        }
        ++next;
    }
    return label;
}

// Trajectories with coarse, frequently repeated values so that links occur.
TrainingSet coarse_set(std::size_t n, std::uint64_t seed, int levels) {
    TrainingSet set(3, 1, n, seed, "test:coarse");
    CounterRng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : set.slot(i)) v = static_cast<double>(rng() % static_cast<std::uint64_t>(levels)) * 0.1;
    }
    return set;
}

// Production totals z1 + z2 inside the production box.
TrainingSet production_set(const std::vector<std::pair<double, double>>& pts) {
    std::vector<Trajectory> paths;
    for (auto [a, b] : pts) paths.push_back(traj({{a}, {b}}));
    return TrainingSet::from_trajectories(paths);
}

double exact_abs_walk_mean(int n) {
    // E|sum of n signs| / n via the binomial distribution, in log space.
    double e = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double logp = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0);
        e += std::exp(logp) * std::abs(2.0 * k - n);
    }
    return e / n;
}

}  // namespace

TEST(PathwiseOptimum, ProductionExample) {
    auto s = production_problem({});
    const auto z = traj({{1.0}, {-0.3}});
    for (const auto& cfg : {PathwiseOptConfig{}, generic()}) {
        const auto opt = pathwise_optimum(s.problem, z, cfg);
        EXPECT_NEAR(opt.alpha_star[1][0], 0.7, 1e-6);
        EXPECT_NEAR(opt.cost, 0.0, 1e-12);
        EXPECT_EQ(opt.alpha_star[0][0], 0.0);
        EXPECT_TRUE(opt.converged);
    }
}

TEST(PathwiseOptimum, MertonCornerAgainstGridSearch) {
    MertonParams mp;
    auto s = merton_problem(mp);
    const auto z = traj({{0.1}, {0.05}});
    const auto opt = pathwise_optimum(s.problem, z, generic());
    EXPECT_NEAR(opt.alpha_star[1][0], 20.0, 1e-12);
    EXPECT_NEAR(opt.cost, std::expm1(-(0.1 + 20.0 * 0.05)), 1e-14);
    double grid_best = HUGE_VAL;
    for (int k = -20000; k <= 20000; ++k) {
        const double a = k * 1e-3;
        grid_best = std::min(grid_best, pathwise_cost(s.problem, ConstantAction{{{1.0}, {a}}}, z));
    }
    EXPECT_NEAR(opt.cost, grid_best, 1e-12);
    EXPECT_EQ(pathwise_optimum(s.problem, z).cost, opt.cost);
}

TEST(PathwiseOptimum, DegenerateBox) {
    MertonParams mp;
    auto s = merton_problem(mp, ControlBox{{0.0}, {0.0}});
    const auto z = traj({{0.3}, {-0.1}});
    const auto opt = pathwise_optimum(s.problem, z, generic());
    EXPECT_EQ(opt.alpha_star[1][0], 0.0);
    EXPECT_EQ(opt.cost, pathwise_cost(s.problem, ConstantAction{{{1.0}, {0.0}}}, z));
}

TEST(PathwiseOptimum, NeverWorseThanProbedConstants) {
    const auto p = fixtures::toy_problem();
    const auto set = sample_training_set(fixtures::kToySampler, 20, 8);
    CounterRng rng(3);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto opt = pathwise_optimum(p, set[i]);
        for (int t = 0; t < 3; ++t) EXPECT_TRUE(p.control_box[t].contains(opt.alpha_star[t]));
        EXPECT_NEAR(opt.cost, pathwise_cost(p, ConstantAction{opt.alpha_star}, set[i]), 1e-12);
        for (int k = 0; k < 200; ++k) {
            std::vector<Vec> alpha(3, Vec(2));
            for (auto& a : alpha) {
                for (auto& v : a) v = rng.uniform(-1.5, 1.5);
            }
            EXPECT_LE(opt.cost, pathwise_cost(p, ConstantAction{alpha}, set[i]) + 1e-9);
        }
    }
}

TEST(PathwiseOptimum, GenericMatchesExactSolvers) {
    MertonParams mp;
    std::vector<ProblemSetup> setups{merton_problem(mp), production_problem({})};
    for (const auto& s : setups) {
        const auto set = sample_training_set(s.sampler_id, 1000, 31);
        double worst = 0.0;
        for (std::size_t i = 0; i < set.size(); ++i) {
            const double exact = pathwise_optimum(s.problem, set[i]).cost;
            const double found = pathwise_optimum(s.problem, set[i], generic()).cost;
            worst = std::max(worst, std::abs(exact - found));
        }
        EXPECT_LT(worst, 1e-6) << s.problem.name;
    }
}

TEST(PathwiseOptimum, InfiniteBoxRejected) {
    auto p = fixtures::toy_problem();
    p.control_box[1].upper[0] = HUGE_VAL;
    EXPECT_THROW(pathwise_optimum(p, traj({{0, 0}, {0, 0}, {0, 0}})), ConfigError);
}

TEST(VStar, ProductionIsZero) {
    auto s = production_problem({});
    const auto set = sample_training_set(s.sampler_id, 500, 4);
    EXPECT_EQ(v_star_empirical(s.problem, set).value, 0.0);
    EXPECT_NEAR(v_star_empirical(s.problem, set, generic()).value, 0.0, 1e-12);
}

TEST(VStar, MertonBelowOptimalAction) {
    MertonParams mp;
    mp.d = 3;
    auto s = merton_problem(mp);
    const auto set = sample_training_set(s.sampler_id, 2000, 5);
    const double v = v_star_empirical(s.problem, set).value;
    EXPECT_LT(v, empirical_loss(s.problem, merton_optimal_action(mp), set));
}

TEST(VStar, SingleTrajectory) {
    const auto p = fixtures::toy_problem();
    const auto set = sample_training_set(fixtures::kToySampler, 1, 6);
    EXPECT_EQ(v_star_empirical(p, set).value, pathwise_optimum(p, set[0], PathwiseOptConfig{}).cost);
}

TEST(Partition, DistinctDataGivesSingletons) {
    auto s = merton_problem(MertonParams{});
    const auto set = sample_training_set(s.sampler_id, 1000, 1);
    const auto part = partition_training_set(set);
    EXPECT_EQ(part.groups.size(), set.size());
    EXPECT_TRUE(partition_is_valid(set, part));
}

TEST(Partition, SharedPointLinks) {
    const auto set = production_set({{1.0, 0.1}, {1.0, 0.2}, {1.5, 0.3}});
    const auto part = partition_training_set(set);
    ASSERT_EQ(part.groups.size(), 2u);
    EXPECT_EQ(part.groups[0], (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(part.groups[1], (std::vector<std::size_t>{2}));
}

TEST(Partition, ChainIsTransitive) {
    // a ~ b at t = 1, b ~ c at t = 2.
    const auto set = production_set({{1.0, 0.1}, {1.0, 0.2}, {1.7, 0.2}, {1.9, 0.4}});
    const auto part = partition_training_set(set);
    ASSERT_EQ(part.groups.size(), 2u);
    EXPECT_EQ(part.groups[0], (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_TRUE(partition_is_valid(set, part));
}

TEST(Partition, MatchesBruteForceComponents) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 50 + 45 * seed;
        const auto set = coarse_set(n, seed, static_cast<int>(n));
        for (double tol : {0.0, 0.05}) {
            const auto part = partition_training_set(set, tol);
            EXPECT_TRUE(partition_is_valid(set, part));
            const auto labels = component_labels(set, tol);
            for (const auto& g : part.groups) {
                for (std::size_t i : g) EXPECT_EQ(labels[i], labels[g.front()]);
            }
            EXPECT_EQ(part.groups.size(),
                      static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
        }
    }
}

TEST(Partition, ValidityCheckerRejectsBrokenPartitions) {
    const auto set = production_set({{1.0, 0.1}, {1.0, 0.2}, {1.5, 0.3}});
    Partition split{{{0}, {1}, {2}}, 0.0};
    EXPECT_FALSE(partition_is_valid(set, split));
    Partition missing{{{0, 1}}, 0.0};
    EXPECT_FALSE(partition_is_valid(set, missing));
    Partition overlap{{{0, 1}, {1, 2}}, 0.0};
    EXPECT_FALSE(partition_is_valid(set, overlap));
}

TEST(VBarStar, SingletonsEqualVStar) {
    const auto p = fixtures::toy_problem();
    const auto set = sample_training_set(fixtures::kToySampler, 30, 2);
    const auto part = partition_training_set(set);
    ASSERT_EQ(part.groups.size(), set.size());
    EXPECT_NEAR(v_bar_star(p, set, part).value, v_star_empirical(p, set).value, 1e-12);
}

TEST(VBarStar, WholeSetIsBestConstantAction) {
    auto s = production_problem({});
    const auto set = production_set({{1.2, 0.1}, {1.6, -0.2}, {1.1, 0.3}, {1.9, 0.05}});
    Partition whole{{{0, 1, 2, 3}}, 0.0};
    const double value = v_bar_star(s.problem, set, whole).value;
    double grid_best = HUGE_VAL;
    for (int k = 0; k <= 30000; ++k) {
        grid_best = std::min(grid_best, empirical_loss(s.problem, ConstantAction{{{0.0}, {k * 1e-4}}}, set));
    }
    EXPECT_LE(value, grid_best + 1e-12);
    EXPECT_NEAR(value, grid_best, 1e-7);
}

TEST(VBarStar, GroupVarianceOfTotals) {
    auto s = production_problem({});
    // Two groups, each linked at t = 1, with equal totals inside each group.
    auto set = production_set({{1.0, 0.3}, {1.0, 0.3}, {1.5, -0.1}, {1.5, -0.1}});
    auto part = partition_training_set(set);
    ASSERT_EQ(part.groups.size(), 2u);
    EXPECT_NEAR(v_bar_star(s.problem, set, part).value, 0.0, 1e-14);

    set = production_set({{1.0, 0.3}, {1.0, 0.5}, {1.5, -0.1}, {1.5, -0.1}});
    part = partition_training_set(set);
    // Group 1 totals {1.3, 1.5}: population variance 0.01; averaged over m = 2 groups.
    EXPECT_NEAR(v_bar_star(s.problem, set, part).value, 0.01 / 2.0, 1e-10);
    EXPECT_NEAR(v_bar_star(s.problem, set, part, {}, true).value, 0.01 * 2.0 / 4.0, 1e-10);
}

TEST(Sandwich, VStarBelowLossOfProbedActions) {
    MertonParams mp;
    mp.d = 2;
    std::vector<ProblemSetup> setups{merton_problem(mp), production_problem({})};
    setups.push_back({fixtures::toy_problem(), fixtures::kToySampler});
    for (const auto& s : setups) {
        const auto set = sample_training_set(s.sampler_id, 200, 3);
        const double v = v_star_empirical(s.problem, set).value;
        CounterRng rng(11);
        for (int k = 0; k < 20; ++k) {
            NetConfig nc;
            nc.seed = rng();
            nc.hidden_widths = {8};
            const FeedbackAction a = init_network_action(s.problem, nc);
            EXPECT_LE(v, empirical_loss(s.problem, a, set)) << s.problem.name;
        }
    }
}

TEST(Rademacher, FrozenClassAbsoluteMatchesWalkLaw) {
    // A problem whose cost is the constant c whatever the action.
    auto p = fixtures::toy_problem();
    const double c = 0.7;
    p.running_cost = nullptr;
    p.running_cost_grad = nullptr;
    p.terminal_cost = [c](ConstSpan) { return c; };
    p.terminal_cost_grad = [](ConstSpan, MutSpan g) { std::fill(g.begin(), g.end(), 0.0); };
    const auto set = sample_training_set(fixtures::kToySampler, 100, 1);
    NetConfig nc;
    RademacherConfig rc;
    rc.m_samples = 2000;
    rc.epochs = 0;
    rc.variant = RademacherVariant::Absolute;
    const auto est = empirical_rademacher(p, nc, set, rc);
    const double oracle = c * exact_abs_walk_mean(100);
    EXPECT_NEAR(est.r_hat, oracle, 3 * est.std_error);
    EXPECT_NEAR(oracle, c * std::sqrt(2.0 / (std::numbers::pi * 100)), 0.01 * oracle);
    EXPECT_EQ(est.per_draw.size(), 2000u);

    rc.variant = RademacherVariant::Signed;
    const auto signed_est = empirical_rademacher(p, nc, set, rc);
    EXPECT_NEAR(signed_est.r_hat, 0.0, 3 * signed_est.std_error);
}

TEST(Rademacher, AscentOnlyImproves) {
    auto s = production_problem({});
    const auto set = sample_training_set(s.sampler_id, 64, 2);
    NetConfig nc;
    RademacherConfig rc;
    rc.m_samples = 5;
    rc.epochs = 0;
    const auto frozen = empirical_rademacher(s.problem, nc, set, rc);
    rc.epochs = 10;
    const auto trained = empirical_rademacher(s.problem, nc, set, rc);
    for (std::size_t k = 0; k < frozen.per_draw.size(); ++k) EXPECT_GE(trained.per_draw[k], frozen.per_draw[k]);
    EXPECT_TRUE(trained.is_lower_bound);
    EXPECT_GE(trained.r_hat, 0.0);
}

TEST(ComplexityBounds, FormulaValues) {
    const auto b = complexity_bounds(0.0, 1.0, 10000, 0.05);
    const long double l = std::log(40.0L);
    EXPECT_NEAR(b.c_nu, static_cast<double>(2.0L * std::sqrt(l / 20000.0L)), 1e-15);
    EXPECT_NEAR(b.C_e, static_cast<double>(6.0L * std::sqrt(l / 10000.0L)), 1e-15);
    EXPECT_NEAR(b.c_nu, 0.0271620, 1e-7);

    const auto r = complexity_bounds(0.01, 2.0, 400, 0.1, true);
    EXPECT_NEAR(r.c_nu, 0.02 + 4.0 * std::sqrt(std::log(20.0) / 800.0), 1e-15);
    EXPECT_NEAR(r.C_e, 0.02 + 12.0 * std::sqrt(std::log(20.0) / 400.0), 1e-15);
    EXPECT_TRUE(r.from_lower_estimate);
}

TEST(ComplexityBounds, DeltaToOneLimit) {
    const auto b = complexity_bounds(0.0, 1.0, 500, 1.0 - 1e-15);
    EXPECT_NEAR(b.c_nu, 2.0 * std::sqrt(std::log(2.0) / 1000.0), 1e-12);
    EXPECT_NEAR(b.C_e, 6.0 * std::sqrt(std::log(2.0) / 500.0), 1e-12);
}

TEST(ComplexityBounds, InverseSqrtScaling) {
    const auto a = complexity_bounds(0.3, 1.5, 1000, 0.05);
    const auto b = complexity_bounds(0.3, 1.5, 2000, 0.05);
    EXPECT_NEAR((b.c_nu - 0.6) / (a.c_nu - 0.6), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR((b.C_e - 0.6) / (a.C_e - 0.6), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(ComplexityBounds, DomainErrors) {
    EXPECT_THROW(complexity_bounds(0.0, 1.0, 10, 0.0), DomainError);
    EXPECT_THROW(complexity_bounds(0.0, 1.0, 10, 1.0), DomainError);
    EXPECT_THROW(complexity_bounds(0.0, 1.0, 0, 0.5), DomainError);
    EXPECT_THROW(complexity_bounds(0.0, 0.0, 10, 0.5), DomainError);
    EXPECT_THROW(complexity_bounds(-0.1, 1.0, 10, 0.5), DomainError);
}

TEST(RelativePerformance, SelfComparison) {
    MertonParams mp;
    mp.d = 5;
    auto s = merton_problem(mp);
    const auto tr = sample_training_set(s.sampler_id, 5000, 1);
    const auto te = sample_training_set(s.sampler_id, 5000, 2);
    const FeedbackAction a = merton_optimal_action(mp);
    const auto g = relative_performance(s.problem, a, a, tr, te, mp.lambda);
    EXPECT_EQ(g.p_in, 0.0);
    EXPECT_EQ(g.p_out, 0.0);
    EXPECT_EQ(g.gap, 0.0);
    EXPECT_EQ(g.o_hat, std::abs(empirical_loss(s.problem, a, tr) - empirical_loss(s.problem, a, te)));
    EXPECT_GE(g.o_hat, 0.0);
}

TEST(RelativePerformance, GapIdentityAndSign) {
    MertonParams mp;
    mp.d = 2;
    auto s = merton_problem(mp);
    const auto tr = sample_training_set(s.sampler_id, 5000, 3);
    const auto te = sample_training_set(s.sampler_id, 5000, 4);
    const FeedbackAction oracle = merton_optimal_action(mp);
    const FeedbackAction worse = ConstantAction{{{0.5, 0.5}, {0.3, 0.0}}};
    const auto g = relative_performance(s.problem, worse, oracle, tr, te, mp.lambda);
    EXPECT_EQ(g.gap, g.p_in - g.p_out);
    EXPECT_LT(g.p_in, 0.0);
    EXPECT_LT(g.p_out, 0.0);
    const double ce_true = certainty_equivalent(-empirical_loss(s.problem, oracle, tr), mp.lambda);
    const double ce_nn = certainty_equivalent(-empirical_loss(s.problem, worse, tr), mp.lambda);
    EXPECT_NEAR(g.p_in, 100.0 * (ce_nn - ce_true) / std::abs(ce_true), 1e-12);
}

TEST(RelativePerformance, SupremumIsFlagged) {
    MertonParams mp;
    auto s = merton_problem(mp, 1e4);
    const auto z = traj({{0.0}, {0.5}});
    const auto set = TrainingSet::from_trajectories({z});
    const FeedbackAction huge = ConstantAction{{{1.0}, {1e4}}};
    const auto g = relative_performance(s.problem, huge, merton_optimal_action(mp), set, set, 1.0);
    EXPECT_TRUE(g.utility_at_supremum);
    EXPECT_TRUE(std::isinf(g.nn_in));
}
