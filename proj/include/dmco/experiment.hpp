#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

#include "dmco/diagnostics.hpp"
#include "dmco/experiment_types.hpp"
#include "dmco/io.hpp"
#include "dmco/problems.hpp"
#include "dmco/sampler.hpp"
#include "dmco/trainer.hpp"

namespace dmco {

/// Trains and scores one run of one cell. Never throws; failures are recorded.
inline RunRecord run_cell(const ExperimentConfig& cfg, const ExperimentCell& cell, std::size_t cell_index, int run) {
    RunRecord rec;
    rec.cell = cell_index;
    rec.run = run;
    rec.seed = run_seed(cfg.base_seed, cell_index, run);
    try {
        MertonParams mp = cfg.merton;
        mp.d = cell.dim;
        mp.eta.clear();
        const auto setup = merton_problem(mp, cfg.box_bound);
        const auto train_set = sample_training_set(setup.sampler_id, cell.n, role_seed(rec.seed, SeedRole::TrainSample));
        const auto test_set = sample_training_set(setup.sampler_id, cell.n, role_seed(rec.seed, SeedRole::TestSample));
        NetConfig nc;
        nc.hidden_widths = cell.hidden_widths;
        nc.input_mode = cfg.input_mode;
        nc.seed = role_seed(rec.seed, SeedRole::Init);
        TrainConfig tc = cell.train;
        tc.shuffle_seed = role_seed(rec.seed, SeedRole::Shuffle);
        auto trained = train(setup.problem, train_set, test_set, nc, tc);
        rec.stop_epoch = trained.report.stop_epoch;
        rec.best_epoch = trained.report.best_epoch;
        rec.stop_reason = trained.report.stop_reason;
        rec.wall_time_seconds = trained.report.wall_time_seconds;
        if (trained.report.stop_reason == StopReason::NumericError) {
            rec.failed = true;
            rec.error = trained.report.message;
        }
        const FeedbackAction oracle{merton_optimal_action(mp)};
        if (cfg.independent_test_set) {
            const auto eval_set =
                sample_training_set(setup.sampler_id, cell.n, role_seed(rec.seed, SeedRole::EvalSample));
            rec.gap = relative_performance(setup.problem, trained.action, oracle, train_set, eval_set, mp.lambda);
        } else {
            rec.gap = relative_performance(setup.problem, trained.action, oracle, train_set, test_set, mp.lambda);
        }
        if (rec.gap.utility_at_supremum) {
            rec.failed = true;
            rec.error = "utility reached its supremum";
        }
    } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
    }
    return rec;
}

/// Thread count from DMCO_THREADS, else 1.
inline int default_thread_count() {
    if (const char* env = std::getenv("DMCO_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

/**
 * Runs every (cell, run) pair on a bounded worker pool. Each run owns its
 * RNG streams and parameters; records are stored by (cell, run) so the
 * result does not depend on scheduling.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    const auto started = std::chrono::steady_clock::now();
    const auto cells = expand_cells(cfg);
    ExperimentResult result;
    result.name = cfg.name;
    result.config_hash = experiment_config_hash(cfg);
    result.cells.resize(cells.size());
    std::vector<std::pair<std::size_t, int>> jobs;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        result.cells[c].cell = cells[c];
        result.cells[c].runs.resize(static_cast<std::size_t>(cfg.runs));
        for (int r = 0; r < cfg.runs; ++r) jobs.emplace_back(c, r);
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto [c, r] = jobs[j];
            result.cells[c].runs[static_cast<std::size_t>(r)] = run_cell(cfg, cells[c], c, r);
        }
    };
    const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(jobs.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& c : result.cells) aggregate_cell(c);
    result.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace dmco
