#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "dmco/control.hpp"
#include "dmco/errors.hpp"
#include "dmco/rng.hpp"

namespace dmco {

/**
 * Disturbance law addressed by (seed, index): the index-th trajectory of a
 * seeded stream is generated from its own counter-based RNG, so trajectories
 * can be produced in any order and on any thread.
 */
struct Sampler {
    std::string id;
    int horizon = 0;
    int noise_dim = 0;
    std::function<void(CounterRng& rng, MutSpan out)> draw;

    void generate(std::uint64_t seed, std::uint64_t index, MutSpan out) const {
        CounterRng rng(derive_seed(seed, {index}));
        draw(rng, out);
    }
};

/// Process-wide sampler table. Registration is idempotent per id.
class SamplerRegistry {
public:
    static SamplerRegistry& instance() {
        static SamplerRegistry registry;
        return registry;
    }

    void add(Sampler sampler) {
        std::lock_guard lock(mutex_);
        auto id = sampler.id;
        samplers_[id] = std::make_shared<const Sampler>(std::move(sampler));
    }

    std::shared_ptr<const Sampler> find(const std::string& id) const {
        std::lock_guard lock(mutex_);
        auto it = samplers_.find(id);
        if (it == samplers_.end()) throw UnknownSamplerError(id);
        return it->second;
    }

    bool contains(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return samplers_.count(id) != 0;
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const Sampler>> samplers_;
};

inline void register_sampler(Sampler sampler) { SamplerRegistry::instance().add(std::move(sampler)); }

/// Point mass at z: every draw returns the same trajectory.
inline std::string register_point_mass_sampler(const std::string& id, const Trajectory& z) {
    Vec data = z.data();
    register_sampler({id, z.horizon(), z.noise_dim(), [data](CounterRng&, MutSpan out) {
                          std::copy(data.begin(), data.end(), out.begin());
                      }});
    return id;
}

/// n i.i.d. trajectories; (sampler_id, seed, n) determines the contents.
inline TrainingSet sample_training_set(const std::string& sampler_id, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample_training_set: n must be >= 1");
    auto sampler = SamplerRegistry::instance().find(sampler_id);
    TrainingSet set(sampler->horizon, sampler->noise_dim, n, seed, sampler_id);
    for (std::size_t i = 0; i < n; ++i) sampler->generate(seed, i, set.slot(i));
    return set;
}

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo estimate of the expected cost on a fresh sample of size n_eval.
inline McEstimate mc_performance(const ControlProblem& problem, const FeedbackAction& action,
                                 const std::string& sampler_id, std::size_t n_eval, std::uint64_t seed) {
    if (n_eval < 2) throw ConfigError("mc_performance: n_eval must be >= 2");
    auto sampler = SamplerRegistry::instance().find(sampler_id);
    if (sampler->horizon != problem.horizon || sampler->noise_dim != problem.noise_dim) {
        throw ConfigError("sampler '" + sampler_id + "' does not match problem " + problem.name);
    }
    PathSimulator sim(problem, action);
    Trajectory z(sampler->horizon, sampler->noise_dim);
    Vec costs(n_eval);
    for (std::size_t i = 0; i < n_eval; ++i) {
        sampler->generate(seed, i, z.mutable_data());
        costs[i] = sim.run(z);
    }
    const double mean = canonical_mean(costs);
    CompensatedSum ss;
    for (double c : costs) ss.add((c - mean) * (c - mean));
    const double var = ss.value() / static_cast<double>(n_eval - 1);
    return {mean, std::sqrt(var / static_cast<double>(n_eval))};
}

}  // namespace dmco
