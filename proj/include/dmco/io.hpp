#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "dmco/diagnostics.hpp"
#include "dmco/errors.hpp"
#include "dmco/experiment_types.hpp"
#include "dmco/problems.hpp"
#include "dmco/trainer.hpp"

// JSON records for configs and results. Non-finite doubles are written as
// the strings "inf", "-inf" and "nan" so that every record round-trips.

namespace dmco {

using json = nlohmann::json;

namespace detail {

inline json number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline double number(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw ConfigError("expected a number, got '" + s + "'");
    }
    return j.get<double>();
}

inline json numbers(const Vec& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

inline Vec numbers(const json& j) {
    Vec v;
    for (const auto& x : j) v.push_back(number(x));
    return v;
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline double number_or(const json& j, const char* key, double fallback) {
    return j.contains(key) ? number(j.at(key)) : fallback;
}

}  // namespace detail

inline std::string to_string(InputMode m) {
    switch (m) {
        case InputMode::State: return "state";
        case InputMode::Noise: return "noise";
        case InputMode::StateAndNoise: return "state_and_noise";
    }
    return "?";
}

inline InputMode input_mode_from_string(const std::string& s) {
    if (s == "state") return InputMode::State;
    if (s == "noise") return InputMode::Noise;
    if (s == "state_and_noise") return InputMode::StateAndNoise;
    throw ConfigError("unknown input mode '" + s + "'");
}

inline StopReason stop_reason_from_string(const std::string& s) {
    if (s == "validation_worsened") return StopReason::ValidationWorsened;
    if (s == "max_epochs") return StopReason::MaxEpochs;
    if (s == "numeric_error") return StopReason::NumericError;
    throw ConfigError("unknown stop reason '" + s + "'");
}

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::DimensionSweep: return "dimension_sweep";
        case ExperimentKind::ParamsEquivalentSweep: return "params_equivalent_sweep";
        case ExperimentKind::AggressiveEpochs: return "aggressive_epochs";
        case ExperimentKind::SampleSizeSweep: return "sample_size_sweep";
        case ExperimentKind::Single: return "single";
    }
    return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    for (auto k : {ExperimentKind::DimensionSweep, ExperimentKind::ParamsEquivalentSweep,
                   ExperimentKind::AggressiveEpochs, ExperimentKind::SampleSizeSweep, ExperimentKind::Single}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown experiment kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configs

inline json to_json(const TrainConfig& c) {
    json j;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    if (const auto* cons = std::get_if<Conservative>(&c.stop_rule)) {
        j["stop"] = {{"rule", "conservative"}, {"tolerance", cons->tolerance}, {"patience", cons->patience}};
    } else {
        j["stop"] = {{"rule", "fixed"}, {"epochs", std::get<FixedEpochs>(c.stop_rule).count}};
    }
    j["shuffle_seed"] = c.shuffle_seed;
    j["adam"] = {{"learning_rate", c.adam.learning_rate},
                 {"beta1", c.adam.beta1},
                 {"beta2", c.adam.beta2},
                 {"epsilon", c.adam.epsilon}};
    return j;
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = detail::value_or<std::size_t>(j, "batch_size", c.batch_size);
    c.max_epochs = detail::value_or<int>(j, "max_epochs", c.max_epochs);
    c.shuffle_seed = detail::value_or<std::uint64_t>(j, "shuffle_seed", c.shuffle_seed);
    if (j.contains("stop")) {
        const auto& s = j.at("stop");
        const auto rule = s.at("rule").get<std::string>();
        if (rule == "conservative") {
            Conservative cons;
            cons.tolerance = detail::number_or(s, "tolerance", cons.tolerance);
            cons.patience = detail::value_or<int>(s, "patience", cons.patience);
            c.stop_rule = cons;
        } else if (rule == "fixed") {
            c.stop_rule = FixedEpochs{s.at("epochs").get<int>()};
        } else {
            throw ConfigError("unknown stop rule '" + rule + "'");
        }
    }
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam.learning_rate = detail::number_or(a, "learning_rate", c.adam.learning_rate);
        c.adam.beta1 = detail::number_or(a, "beta1", c.adam.beta1);
        c.adam.beta2 = detail::number_or(a, "beta2", c.adam.beta2);
        c.adam.epsilon = detail::number_or(a, "epsilon", c.adam.epsilon);
    }
    c.validate();
    return c;
}

inline json to_json(const NetConfig& c) {
    return {{"hidden_widths", c.hidden_widths},
            {"per_time", c.per_time},
            {"seed", c.seed},
            {"input_mode", to_string(c.input_mode)},
            {"center_output_bias", c.center_output_bias}};
}

inline NetConfig net_config_from_json(const json& j, InputMode default_mode = InputMode::StateAndNoise) {
    NetConfig c;
    c.input_mode = default_mode;
    c.hidden_widths = detail::value_or<std::vector<std::size_t>>(j, "hidden_widths", c.hidden_widths);
    c.per_time = detail::value_or<bool>(j, "per_time", c.per_time);
    c.seed = detail::value_or<std::uint64_t>(j, "seed", c.seed);
    c.center_output_bias = detail::value_or<bool>(j, "center_output_bias", c.center_output_bias);
    if (j.contains("input_mode")) c.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
    c.validate();
    return c;
}

inline json to_json(const MertonParams& p) {
    json j{{"d", p.d},           {"lambda", p.lambda},   {"r", p.r},
           {"m", p.m},           {"s", p.s},             {"z1_low", p.z1_low},
           {"z1_high", p.z1_high}, {"zeta_trunc_sd", p.zeta_trunc_sd}};
    if (!p.eta.empty()) j["eta"] = p.eta;
    return j;
}

inline MertonParams merton_params_from_json(const json& j) {
    MertonParams p;
    p.d = detail::value_or<int>(j, "d", p.d);
    p.lambda = detail::number_or(j, "lambda", p.lambda);
    p.r = detail::number_or(j, "r", p.r);
    p.m = detail::number_or(j, "m", p.m);
    p.s = detail::number_or(j, "s", p.s);
    p.z1_low = detail::number_or(j, "z1_low", p.z1_low);
    p.z1_high = detail::number_or(j, "z1_high", p.z1_high);
    p.zeta_trunc_sd = detail::number_or(j, "zeta_trunc_sd", p.zeta_trunc_sd);
    if (j.contains("eta")) p.eta = j.at("eta").get<Vec>();
    p.validate();
    return p;
}

inline json to_json(const ProductionParams& p) {
    return {{"penalty", p.penalty == Penalty::Quadratic ? "quadratic" : "quartic"},
            {"z1_low", p.z1_low},
            {"z1_high", p.z1_high},
            {"z2_mean", p.z2_mean},
            {"z2_sd", p.z2_sd},
            {"z2_trunc_sd", p.z2_trunc_sd},
            {"production_cap", p.production_cap}};
}

inline ProductionParams production_params_from_json(const json& j) {
    ProductionParams p;
    if (j.contains("penalty")) {
        const auto s = j.at("penalty").get<std::string>();
        if (s == "quadratic") {
            p.penalty = Penalty::Quadratic;
        } else if (s == "quartic") {
            p.penalty = Penalty::Quartic;
        } else {
            throw ConfigError("unknown penalty '" + s + "'");
        }
    }
    p.z1_low = detail::number_or(j, "z1_low", p.z1_low);
    p.z1_high = detail::number_or(j, "z1_high", p.z1_high);
    p.z2_mean = detail::number_or(j, "z2_mean", p.z2_mean);
    p.z2_sd = detail::number_or(j, "z2_sd", p.z2_sd);
    p.z2_trunc_sd = detail::number_or(j, "z2_trunc_sd", p.z2_trunc_sd);
    p.production_cap = detail::number_or(j, "production_cap", p.production_cap);
    p.validate();
    return p;
}

/// Problem record of a config file: {"kind": "merton", ...} or {"kind": "production", ...}.
struct ProblemSpec {
    std::variant<MertonParams, ProductionParams> params;
    double box_bound = 20.0;  // Merton only: second-period box [-b, b]^d
};

inline ProblemSpec problem_spec_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    ProblemSpec spec;
    if (kind == "merton") {
        spec.params = merton_params_from_json(j);
        spec.box_bound = detail::number_or(j, "box", spec.box_bound);
    } else if (kind == "production") {
        spec.params = production_params_from_json(j);
    } else {
        throw ConfigError("unknown problem kind '" + kind + "'");
    }
    return spec;
}

inline json to_json(const ProblemSpec& spec) {
    if (const auto* m = std::get_if<MertonParams>(&spec.params)) {
        json j = to_json(*m);
        j["kind"] = "merton";
        j["box"] = spec.box_bound;
        return j;
    }
    json j = to_json(std::get<ProductionParams>(spec.params));
    j["kind"] = "production";
    return j;
}

inline ProblemSetup build_problem(const ProblemSpec& spec) {
    if (const auto* m = std::get_if<MertonParams>(&spec.params)) return merton_problem(*m, spec.box_bound);
    return production_problem(std::get<ProductionParams>(spec.params));
}

/// Closed-form optimal action of the problem, when one is known.
inline std::optional<FeedbackAction> oracle_action(const ProblemSpec& spec) {
    if (const auto* m = std::get_if<MertonParams>(&spec.params)) {
        if (m->r != 0.0) return std::nullopt;
        return FeedbackAction{merton_optimal_action(*m)};
    }
    const auto& p = std::get<ProductionParams>(spec.params);
    if (p.penalty != Penalty::Quadratic) return std::nullopt;
    return FeedbackAction{production_optimal_action(p)};
}

inline json to_json(const ExperimentConfig& c, bool include_runtime_fields = true) {
    json j;
    j["name"] = c.name;
    j["kind"] = to_string(c.kind);
    j["dims"] = c.dims;
    j["sample_sizes"] = c.sample_sizes;
    j["epochs"] = c.epochs;
    j["reference_dims"] = c.reference_dims;
    j["hidden_widths"] = c.hidden_widths;
    j["input_mode"] = to_string(c.input_mode);
    j["train"] = to_json(c.train);
    j["merton"] = to_json(c.merton);
    j["box"] = c.box_bound;
    j["independent_test_set"] = c.independent_test_set;
    j["runs"] = c.runs;
    j["base_seed"] = c.base_seed;
    if (include_runtime_fields) {
        j["threads"] = c.threads;
        j["output_path"] = c.output_path;
    }
    return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig c;
    c.name = detail::value_or<std::string>(j, "name", c.name);
    c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    c.dims = detail::value_or<std::vector<int>>(j, "dims", c.dims);
    c.sample_sizes = detail::value_or<std::vector<std::size_t>>(j, "sample_sizes", c.sample_sizes);
    c.epochs = detail::value_or<std::vector<int>>(j, "epochs", c.epochs);
    c.reference_dims = detail::value_or<std::vector<int>>(j, "reference_dims", c.reference_dims);
    c.hidden_widths = detail::value_or<std::vector<std::size_t>>(j, "hidden_widths", c.hidden_widths);
    if (j.contains("input_mode")) c.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("merton")) c.merton = merton_params_from_json(j.at("merton"));
    c.box_bound = detail::number_or(j, "box", c.box_bound);
    c.independent_test_set = detail::value_or<bool>(j, "independent_test_set", c.independent_test_set);
    c.runs = detail::value_or<int>(j, "runs", c.runs);
    c.base_seed = detail::value_or<std::uint64_t>(j, "base_seed", c.base_seed);
    c.threads = detail::value_or<int>(j, "threads", c.threads);
    c.output_path = detail::value_or<std::string>(j, "output_path", c.output_path);
    c.validate();
    return c;
}

/// Hash of everything that influences results (threads and output path excluded).
inline std::uint64_t experiment_config_hash(const ExperimentConfig& cfg) {
    const auto text = to_json(cfg, false).dump();
    return detail::fnv1a(text.data(), text.size());
}

// ---------------------------------------------------------------------------
// Results

inline json to_json(const TrainReport& r) {
    return {{"train_loss", detail::numbers(r.train_loss)},
            {"validation_loss", detail::numbers(r.validation_loss)},
            {"stop_epoch", r.stop_epoch},
            {"stop_reason", to_string(r.stop_reason)},
            {"best_epoch", r.best_epoch},
            {"wall_time_seconds", r.wall_time_seconds},
            {"message", r.message}};
}

inline TrainReport train_report_from_json(const json& j) {
    TrainReport r;
    r.train_loss = detail::numbers(j.at("train_loss"));
    r.validation_loss = detail::numbers(j.at("validation_loss"));
    r.stop_epoch = j.at("stop_epoch").get<int>();
    r.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
    r.best_epoch = j.at("best_epoch").get<int>();
    r.wall_time_seconds = detail::number(j.at("wall_time_seconds"));
    r.message = j.at("message").get<std::string>();
    return r;
}

inline json to_json(const GapReport& g) {
    return {{"p_in", detail::number(g.p_in)},       {"p_out", detail::number(g.p_out)},
            {"gap", detail::number(g.gap)},         {"nn_in", detail::number(g.nn_in)},
            {"nn_out", detail::number(g.nn_out)},   {"true_in", detail::number(g.true_in)},
            {"true_out", detail::number(g.true_out)}, {"o_hat", detail::number(g.o_hat)},
            {"utility_at_supremum", g.utility_at_supremum}};
}

inline GapReport gap_report_from_json(const json& j) {
    GapReport g;
    g.p_in = detail::number(j.at("p_in"));
    g.p_out = detail::number(j.at("p_out"));
    g.gap = detail::number(j.at("gap"));
    g.nn_in = detail::number(j.at("nn_in"));
    g.nn_out = detail::number(j.at("nn_out"));
    g.true_in = detail::number(j.at("true_in"));
    g.true_out = detail::number(j.at("true_out"));
    g.o_hat = detail::number(j.at("o_hat"));
    g.utility_at_supremum = j.at("utility_at_supremum").get<bool>();
    return g;
}

inline json to_json(const RademacherEstimate& e) {
    return {{"r_hat", detail::number(e.r_hat)},
            {"m_samples", e.m_samples},
            {"per_draw", detail::numbers(e.per_draw)},
            {"best_restart", e.best_restart},
            {"best_epoch", e.best_epoch},
            {"std_error", detail::number(e.std_error)},
            {"is_lower_bound", e.is_lower_bound},
            {"skipped", e.skipped}};
}

inline json to_json(const Summary& s) {
    return {{"count", s.count},
            {"mean", detail::number(s.mean)},
            {"sd", s.sd ? detail::number(*s.sd) : json(nullptr)},
            {"median", detail::number(s.median)},
            {"iqr", detail::number(s.iqr)}};
}

inline Summary summary_from_json(const json& j) {
    Summary s;
    s.count = j.at("count").get<int>();
    s.mean = detail::number(j.at("mean"));
    if (!j.at("sd").is_null()) s.sd = detail::number(j.at("sd"));
    s.median = detail::number(j.at("median"));
    s.iqr = detail::number(j.at("iqr"));
    return s;
}

inline json to_json(const RunRecord& r) {
    return {{"cell", r.cell},
            {"run", r.run},
            {"seed", r.seed},
            {"failed", r.failed},
            {"error", r.error},
            {"gap", to_json(r.gap)},
            {"stop_epoch", r.stop_epoch},
            {"best_epoch", r.best_epoch},
            {"stop_reason", to_string(r.stop_reason)},
            {"wall_time_seconds", r.wall_time_seconds}};
}

inline RunRecord run_record_from_json(const json& j) {
    RunRecord r;
    r.cell = j.at("cell").get<std::size_t>();
    r.run = j.at("run").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.failed = j.at("failed").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.gap = gap_report_from_json(j.at("gap"));
    r.stop_epoch = j.at("stop_epoch").get<int>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
    r.wall_time_seconds = detail::number(j.at("wall_time_seconds"));
    return r;
}

inline json to_json(const ExperimentResult& res) {
    json cells = json::array();
    for (const auto& c : res.cells) {
        json runs = json::array();
        for (const auto& r : c.runs) runs.push_back(to_json(r));
        cells.push_back({{"label", c.cell.label},
                         {"dim", c.cell.dim},
                         {"n", c.cell.n},
                         {"reference_dim", c.cell.reference_dim},
                         {"hidden_widths", c.cell.hidden_widths},
                         {"param_count", c.cell.param_count},
                         {"train", to_json(c.cell.train)},
                         {"runs", runs},
                         {"failures", c.failures},
                         {"p_in", to_json(c.p_in)},
                         {"p_out", to_json(c.p_out)},
                         {"gap", to_json(c.gap)},
                         {"o_hat", to_json(c.o_hat)}});
    }
    return {{"format_version", 1},
            {"name", res.name},
            {"library_version", res.library_version},
            {"config_hash", res.config_hash},
            {"runtime_seconds", res.runtime_seconds},
            {"cells", cells}};
}

inline ExperimentResult experiment_result_from_json(const json& j) {
    ExperimentResult res;
    res.name = j.at("name").get<std::string>();
    res.library_version = j.at("library_version").get<std::string>();
    res.config_hash = j.at("config_hash").get<std::uint64_t>();
    res.runtime_seconds = detail::number(j.at("runtime_seconds"));
    for (const auto& jc : j.at("cells")) {
        CellResult c;
        c.cell.label = jc.at("label").get<std::string>();
        c.cell.dim = jc.at("dim").get<int>();
        c.cell.n = jc.at("n").get<std::size_t>();
        c.cell.reference_dim = jc.at("reference_dim").get<int>();
        c.cell.hidden_widths = jc.at("hidden_widths").get<std::vector<std::size_t>>();
        c.cell.param_count = jc.at("param_count").get<std::size_t>();
        c.cell.train = train_config_from_json(jc.at("train"));
        for (const auto& jr : jc.at("runs")) c.runs.push_back(run_record_from_json(jr));
        c.failures = jc.at("failures").get<int>();
        c.p_in = summary_from_json(jc.at("p_in"));
        c.p_out = summary_from_json(jc.at("p_out"));
        c.gap = summary_from_json(jc.at("gap"));
        c.o_hat = summary_from_json(jc.at("o_hat"));
        res.cells.push_back(std::move(c));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Files

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path + ": write failed");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline constexpr const char* kResultsCsvHeader = "cell,run,p_in,p_out,gap,o_hat,stop_epoch,seed";

namespace detail {

inline std::string pct(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5f", v);
    return buf;
}

inline std::string loss_units(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace detail

/**
 * Per-run CSV with header "cell,run,p_in,p_out,gap,o_hat,stop_epoch,seed".
 * Percentages carry 5 decimals, o_hat is in loss units. Failed runs keep
 * their row with empty metric fields. Each cell is followed by aggregate
 * rows whose run field is "mean", "sd", "median" or "iqr"; an undefined
 * sd (one successful run) is an empty field.
 */
inline std::string results_csv(const ExperimentResult& res) {
    std::ostringstream out;
    out << kResultsCsvHeader << '\n';
    for (const auto& c : res.cells) {
        for (const auto& r : c.runs) {
            out << c.cell.label << ',' << r.run << ',';
            if (r.failed) {
                out << ",,,,";
            } else {
                out << detail::pct(r.gap.p_in) << ',' << detail::pct(r.gap.p_out) << ',' << detail::pct(r.gap.gap)
                    << ',' << detail::loss_units(r.gap.o_hat) << ',';
            }
            out << r.stop_epoch << ',' << r.seed << '\n';
        }
        auto row = [&](const char* tag, auto pick, bool is_sd) {
            out << c.cell.label << ',' << tag;
            for (const Summary* s : {&c.p_in, &c.p_out, &c.gap, &c.o_hat}) {
                out << ',';
                if (s->count == 0 || (is_sd && !s->sd)) continue;
                const double v = pick(*s);
                out << (s == &c.o_hat ? detail::loss_units(v) : detail::pct(v));
            }
            out << ",,\n";
        };
        row("mean", [](const Summary& s) { return s.mean; }, false);
        row("sd", [](const Summary& s) { return s.sd.value_or(0.0); }, true);
        row("median", [](const Summary& s) { return s.median; }, false);
        row("iqr", [](const Summary& s) { return s.iqr; }, false);
    }
    return out.str();
}

/// One row per cell in the layout of the published tables.
inline std::string summary_csv(const ExperimentResult& res) {
    std::ostringstream out;
    out << "cell,dims,n,params_equiv,first_width,param_count,runs,failures,p_in_mu,p_in_sigma,gap_mu,gap_sigma,"
           "p_in_median,gap_median\n";
    for (const auto& c : res.cells) {
        out << c.cell.label << ',' << c.cell.dim << ',' << c.cell.n << ',' << c.cell.reference_dim << ','
            << c.cell.hidden_widths.front() << ',' << c.cell.param_count << ',' << c.runs.size() << ','
            << c.failures << ',';
        const bool any = c.p_in.count > 0;
        out << (any ? detail::pct(c.p_in.mean) : "") << ',' << (c.p_in.sd ? detail::pct(*c.p_in.sd) : "") << ','
            << (any ? detail::pct(c.gap.mean) : "") << ',' << (c.gap.sd ? detail::pct(*c.gap.sd) : "") << ','
            << (any ? detail::pct(c.p_in.median) : "") << ',' << (any ? detail::pct(c.gap.median) : "") << '\n';
    }
    return out.str();
}

enum class ResultFormat { Csv, Json };

inline void emit_results(const ExperimentResult& res, ResultFormat format, const std::string& path) {
    write_text_file(path, format == ResultFormat::Csv ? results_csv(res) : to_json(res).dump(2) + "\n");
}

}  // namespace dmco
