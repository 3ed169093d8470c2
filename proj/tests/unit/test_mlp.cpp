#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dmco/mlp.hpp"
#include "dmco/rng.hpp"

using namespace dmco;

namespace {

Vec random_vec(CounterRng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    Vec v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

void randomize(MlpParams& p, CounterRng& rng) {
    for (auto& x : p.flat()) x = rng.uniform(-1.0, 1.0);
}

bool near_kink(const MlpParams& p, const Vec& x, double margin) {
    auto [out, cache] = forward(p, x);
    for (std::size_t l = 0; l + 1 < p.num_layers(); ++l) {
        for (double v : cache.pre[l]) {
            if (std::abs(v) < margin) return true;
        }
    }
    return false;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Relative error between two gradient vectors in the max norm.
double rel_error(const Vec& a, const Vec& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return scale == 0.0 ? diff : diff / scale;
}

const std::vector<std::vector<std::size_t>> kShapes = {
    {1, 1}, {3, 2}, {1, 4, 1}, {5, 10, 10, 10, 5}, {11, 10, 10, 10, 10}, {2, 64, 64, 64, 1}, {4, 7, 3, 2},
};

}  // namespace

TEST(MlpInit, HalfWidthIsInverseSqrtFanIn) {
    auto p = init_mlp({100, 100}, 42);
    double max_abs = 0.0;
    for (double w : p.weights(0)) max_abs = std::max(max_abs, std::abs(w));
    EXPECT_LE(max_abs, 0.1);
    EXPECT_GT(max_abs, 0.09);
    for (double b : p.biases(0)) EXPECT_EQ(b, 0.0);

    auto q = init_mlp({1, 5000}, 3);
    double qmax = 0.0;
    for (double w : q.weights(0)) qmax = std::max(qmax, std::abs(w));
    EXPECT_LE(qmax, 1.0);
    EXPECT_GT(qmax, 0.99);
}

TEST(MlpInit, SameSeedIsBitwiseIdentical) {
    EXPECT_EQ(init_mlp({5, 10, 10, 1}, 9), init_mlp({5, 10, 10, 1}, 9));
    EXPECT_FALSE(init_mlp({5, 10, 10, 1}, 9) == init_mlp({5, 10, 10, 1}, 10));
}

TEST(MlpInit, ParamCountFormula) {
    for (const auto& w : kShapes) {
        std::size_t expected = 0;
        for (std::size_t l = 1; l < w.size(); ++l) expected += w[l] * w[l - 1] + w[l];
        EXPECT_EQ(mlp_param_count(w), expected);
        EXPECT_EQ(MlpParams(w).size(), expected);
    }
    EXPECT_THROW(MlpParams({3}), ConfigError);
    EXPECT_THROW(MlpParams({3, 0, 1}), ConfigError);
}

TEST(MlpForward, ZeroParamsGiveZeroOutput) {
    MlpParams p({4, 8, 8, 3});
    auto [out, cache] = forward(p, Vec{1.0, -2.0, 3.0, 0.5});
    for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLinearLayer) {
    MlpParams p({3, 3});
    auto w = p.weights(0);
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    const Vec x{-1.5, 0.0, 2.0};
    auto [out, cache] = forward(p, x);
    EXPECT_EQ(out, x);
}

TEST(MlpForward, PositiveHomogeneityWithoutBiases) {
    CounterRng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        auto p = init_mlp({6, 10, 10, 10, 2}, 100 + rep);
        const Vec x = random_vec(rng, 6);
        Vec x2 = x;
        for (auto& v : x2) v *= 2.0;
        auto [y, c1] = forward(p, x);
        auto [y2, c2] = forward(p, x2);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y2[i], 2.0 * y[i]);
    }
}

TEST(MlpForward, ShapeMismatchThrows) {
    MlpParams p({3, 2});
    EXPECT_THROW(forward(p, Vec{1.0, 2.0}), ConfigError);
}

TEST(MlpBackward, MatchesCentralDifferences) {
    CounterRng rng(2024);
    const double h = 1e-5;
    int checked = 0;
    for (int rep = 0; checked < 100; ++rep) {
        const auto& widths = kShapes[static_cast<std::size_t>(rep) % kShapes.size()];
        MlpParams p(widths);
        randomize(p, rng);
        const Vec x = random_vec(rng, widths.front());
        if (near_kink(p, x, 1e-3)) continue;
        const Vec u = random_vec(rng, widths.back());
        auto [out, cache] = forward(p, x);
        const auto g = backward(p, cache, u);

        Vec fd(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) {
            MlpParams q = p;
            q.flat()[k] += h;
            const double up = dot(u, forward(q, x).first);
            q.flat()[k] -= 2 * h;
            const double dn = dot(u, forward(q, x).first);
            fd[k] = (up - dn) / (2 * h);
        }
        Vec fd_in(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) {
            Vec xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            fd_in[k] = (dot(u, forward(p, xp).first) - dot(u, forward(p, xm).first)) / (2 * h);
        }
        EXPECT_LT(rel_error(g.params, fd), 1e-4) << "shape index " << rep % kShapes.size();
        EXPECT_LT(rel_error(g.input, fd_in), 1e-4);
        ++checked;
    }
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
    auto p = init_mlp({4, 10, 3}, 5);
    auto [out, cache] = forward(p, Vec{0.3, -0.2, 0.9, 1.0});
    const auto g = backward(p, cache, Vec(3, 0.0));
    for (double v : g.params) EXPECT_EQ(v, 0.0);
    for (double v : g.input) EXPECT_EQ(v, 0.0);
}

TEST(MlpBackward, LinearNetworkOuterProduct) {
    auto p = init_mlp({3, 2}, 8);
    const Vec x{0.5, -1.25, 2.0};
    const Vec u{3.0, -0.5};
    auto [out, cache] = forward(p, x);
    const auto g = backward(p, cache, u);
    for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g.params[o * 3 + i], u[o] * x[i]);
        EXPECT_EQ(g.params[6 + o], u[o]);
    }
}

TEST(MlpBackward, MismatchedCacheThrows) {
    auto p = init_mlp({3, 4, 2}, 1);
    auto q = init_mlp({3, 4, 2}, 2);
    auto [out, cache] = forward(p, Vec{1.0, 2.0, 3.0});
    EXPECT_THROW(backward(q, cache, Vec{1.0, 1.0}), ConfigError);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
    AdamState st(1);
    Vec theta{0.0};
    const Vec g{2.5};
    double prev = 0.0;
    for (int i = 0; i < 1000; ++i) {
        prev = theta[0];
        adam_step(theta, g, st);
    }
    const double step = prev - theta[0];
    EXPECT_NEAR(step, 0.001, 0.01 * 0.001);
    EXPECT_EQ(st.step_count, 1000u);
}

TEST(Adam, ZeroGradientFirstStepLeavesParams) {
    AdamState st(3);
    Vec theta{1.0, -2.0, 0.5};
    const Vec before = theta;
    adam_step(theta, Vec(3, 0.0), st);
    EXPECT_EQ(theta, before);
}

TEST(Adam, QuadraticMatchesScalarOracle) {
    // Independent scalar transcription of the bias-corrected update.
    double th = 1.0, m = 0.0, v = 0.0;
    int oracle_hit = -1;
    for (int k = 1; k <= 2000; ++k) {
        const double g = 2.0 * th;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, k));
        const double vh = v / (1.0 - std::pow(0.999, k));
        th -= 0.001 * mh / (std::sqrt(vh) + 1e-8);
        if (oracle_hit < 0 && std::abs(th) < 0.1) oracle_hit = k;
    }
    ASSERT_GT(oracle_hit, 0);

    AdamState st(1);
    Vec theta{1.0};
    int hit = -1;
    for (int k = 1; k <= 2000; ++k) {
        const Vec g{2.0 * theta[0]};
        adam_step(theta, g, st);
        if (hit < 0 && std::abs(theta[0]) < 0.1) hit = k;
    }
    EXPECT_EQ(hit, oracle_hit);
    EXPECT_NEAR(theta[0], th, 1e-12);
}

TEST(Adam, NonFiniteGradientThrowsAndLeavesState) {
    AdamState st(2);
    Vec theta{1.0, 1.0};
    EXPECT_THROW(adam_step(theta, Vec{0.1, NAN}, st), NumericError);
    EXPECT_EQ(st.step_count, 0u);
    EXPECT_EQ(theta, (Vec{1.0, 1.0}));
}
