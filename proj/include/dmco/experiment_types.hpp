#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmco/diagnostics.hpp"
#include "dmco/problems.hpp"
#include "dmco/sampler.hpp"
#include "dmco/trainer.hpp"

namespace dmco {

inline constexpr const char* kLibraryVersion = "0.1.0";

enum class ExperimentKind { DimensionSweep, ParamsEquivalentSweep, AggressiveEpochs, SampleSizeSweep, Single };

/**
 * Sweep over Merton experiments. Which lists matter depends on the kind:
 *
 *   DimensionSweep         one cell per entry of dims, n = sample_sizes[0]
 *   ParamsEquivalentSweep  one cell per (reference, dim <= reference); the first
 *                          hidden width is solved so the parameter count matches
 *                          the reference-dimension network
 *   AggressiveEpochs       one cell per entry of epochs (FixedEpochs), d = dims[0]
 *   SampleSizeSweep        one cell per entry of sample_sizes, d = dims[0]
 *   Single                 d = dims[0], n = sample_sizes[0]
 */
struct ExperimentConfig {
    std::string name = "experiment";
    ExperimentKind kind = ExperimentKind::Single;
    std::vector<int> dims{10};
    std::vector<std::size_t> sample_sizes{100000};
    std::vector<int> epochs{100};
    std::vector<int> reference_dims{100};
    std::vector<std::size_t> hidden_widths{10, 10, 10};
    InputMode input_mode = InputMode::Noise;
    TrainConfig train{};
    MertonParams merton{};
    double box_bound = 20.0;
    bool independent_test_set = false;  // p_out on a third set instead of the validation set
    int runs = 5;
    std::uint64_t base_seed = 1;
    int threads = 1;
    std::string output_path;

    void validate() const {
        if (runs < 1) throw ConfigError("experiment: runs must be >= 1");
        if (dims.empty() || sample_sizes.empty()) throw ConfigError("experiment: dims and sample_sizes must be non-empty");
        for (int d : dims) {
            if (d < 1) throw ConfigError("experiment: dims must be >= 1");
        }
        for (auto n : sample_sizes) {
            if (n < 1) throw ConfigError("experiment: sample sizes must be >= 1");
        }
        if (hidden_widths.empty()) throw ConfigError("experiment: hidden_widths must be non-empty");
        if (kind == ExperimentKind::AggressiveEpochs && epochs.empty()) throw ConfigError("experiment: epochs list is empty");
        if (kind == ExperimentKind::ParamsEquivalentSweep && (reference_dims.empty() || hidden_widths.size() < 2)) {
            throw ConfigError("experiment: params-equivalent sweep needs reference_dims and >= 2 hidden layers");
        }
        train.validate();
    }
};

struct ExperimentCell {
    std::string label;
    int dim = 0;
    std::size_t n = 0;
    int reference_dim = 0;  // params-equivalent dimension, 0 when not applicable
    std::vector<std::size_t> hidden_widths;
    std::size_t param_count = 0;
    TrainConfig train;
};

/// Parameter count of the per-time Merton network for dimension d.
inline std::size_t merton_network_params(int d, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> widths{static_cast<std::size_t>(d)};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(static_cast<std::size_t>(d));
    return mlp_param_count(widths);
}

/**
 * First hidden width w for input/output dimension d such that the network
 * [d, w, hidden[1..], d] has (to the nearest integer w) `target` parameters.
 * The count is affine in w: w (d + 1 + hidden[1]) + rest.
 */
inline std::size_t solve_first_layer_width(int d, const std::vector<std::size_t>& hidden, std::size_t target) {
    if (hidden.size() < 2) throw ConfigError("solve_first_layer_width needs at least two hidden layers");
    std::vector<std::size_t> tail{hidden.begin() + 1, hidden.end()};
    tail.push_back(static_cast<std::size_t>(d));
    const double rest = static_cast<double>(hidden[1] + mlp_param_count(tail));
    const double slope = static_cast<double>(d) + 1.0 + static_cast<double>(hidden[1]);
    const double w = (static_cast<double>(target) - rest) / slope;
    return static_cast<std::size_t>(std::max(1.0, std::round(w)));
}

inline std::vector<ExperimentCell> expand_cells(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<ExperimentCell> cells;
    auto make = [&](int d, std::size_t n, std::vector<std::size_t> hidden, TrainConfig tc, int ref, std::string extra) {
        ExperimentCell c;
        c.dim = d;
        c.n = n;
        c.reference_dim = ref;
        c.param_count = merton_network_params(d, hidden);
        c.hidden_widths = std::move(hidden);
        c.train = tc;
        c.label = "d" + std::to_string(d) + "_n" + std::to_string(n) + extra;
        cells.push_back(std::move(c));
    };
    switch (cfg.kind) {
        case ExperimentKind::DimensionSweep:
            for (int d : cfg.dims) make(d, cfg.sample_sizes.front(), cfg.hidden_widths, cfg.train, 0, "");
            break;
        case ExperimentKind::ParamsEquivalentSweep:
            for (int ref : cfg.reference_dims) {
                const std::size_t target = merton_network_params(ref, cfg.hidden_widths);
                for (int d : cfg.dims) {
                    if (d > ref) continue;
                    auto hidden = cfg.hidden_widths;
                    hidden[0] = solve_first_layer_width(d, cfg.hidden_widths, target);
                    make(d, cfg.sample_sizes.front(), hidden, cfg.train, ref, "_ref" + std::to_string(ref));
                }
            }
            break;
        case ExperimentKind::AggressiveEpochs:
            for (int e : cfg.epochs) {
                TrainConfig tc = cfg.train;
                tc.stop_rule = FixedEpochs{e};
                make(cfg.dims.front(), cfg.sample_sizes.front(), cfg.hidden_widths, tc, 0, "_e" + std::to_string(e));
            }
            break;
        case ExperimentKind::SampleSizeSweep:
            for (auto n : cfg.sample_sizes) make(cfg.dims.front(), n, cfg.hidden_widths, cfg.train, 0, "");
            break;
        case ExperimentKind::Single:
            make(cfg.dims.front(), cfg.sample_sizes.front(), cfg.hidden_widths, cfg.train, 0, "");
            break;
    }
    return cells;
}

/// Seed roles of one run; each is derive_seed(run_seed, {role}).
enum class SeedRole : std::uint64_t { TrainSample = 1, TestSample = 2, Init = 3, Shuffle = 4, EvalSample = 5 };

inline std::uint64_t run_seed(std::uint64_t base, std::size_t cell, int run) {
    return derive_seed(base, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(run)});
}

inline std::uint64_t role_seed(std::uint64_t run, SeedRole role) {
    return derive_seed(run, {static_cast<std::uint64_t>(role)});
}

struct RunRecord {
    std::size_t cell = 0;
    int run = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    GapReport gap;
    int stop_epoch = 0;
    int best_epoch = 0;
    StopReason stop_reason = StopReason::MaxEpochs;
    double wall_time_seconds = 0.0;

    bool operator==(const RunRecord&) const = default;
};

struct Summary {
    int count = 0;
    double mean = 0.0;
    std::optional<double> sd;  // sample (n - 1) standard deviation; undefined for one run
    double median = 0.0;
    double iqr = 0.0;

    bool operator==(const Summary&) const = default;
};

/// Mean, sample standard deviation, median and interquartile range
/// (quantiles by linear interpolation between order statistics).
inline Summary summarize(Vec values) {
    Summary s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    CompensatedSum sum;
    for (double v : values) sum.add(v);
    s.mean = sum.value() / static_cast<double>(values.size());
    if (values.size() > 1) {
        CompensatedSum ss;
        for (double v : values) ss.add((v - s.mean) * (v - s.mean));
        s.sd = std::sqrt(ss.value() / static_cast<double>(values.size() - 1));
    }
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    s.median = quantile(0.5);
    s.iqr = quantile(0.75) - quantile(0.25);
    return s;
}

struct CellResult {
    ExperimentCell cell;
    std::vector<RunRecord> runs;
    int failures = 0;
    Summary p_in;
    Summary p_out;
    Summary gap;
    Summary o_hat;
};

struct ExperimentResult {
    std::string name;
    std::string library_version = kLibraryVersion;
    std::uint64_t config_hash = 0;
    double runtime_seconds = 0.0;
    std::vector<CellResult> cells;
};

/// Recomputes a cell's aggregates from its per-run records.
inline void aggregate_cell(CellResult& c) {
    Vec p_in, p_out, gap, o_hat;
    c.failures = 0;
    for (const auto& r : c.runs) {
        if (r.failed) {
            ++c.failures;
            continue;
        }
        p_in.push_back(r.gap.p_in);
        p_out.push_back(r.gap.p_out);
        gap.push_back(r.gap.gap);
        o_hat.push_back(r.gap.o_hat);
    }
    c.p_in = summarize(p_in);
    c.p_out = summarize(p_out);
    c.gap = summarize(gap);
    c.o_hat = summarize(o_hat);
}

}  // namespace dmco
