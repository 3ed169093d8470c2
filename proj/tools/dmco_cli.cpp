// dmco command line: sample, train, eval, diag, experiment.
//
// Every subcommand reads one JSON config file. --seed replaces the config's
// "seed" (or "base_seed" for experiments), --out names the output file and
// --threads sets the worker count (default: DMCO_THREADS, else 1).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dmco/checkpoint.hpp"
#include "dmco/diagnostics.hpp"
#include "dmco/experiment.hpp"
#include "dmco/io.hpp"
#include "dmco/problems.hpp"
#include "dmco/sampler.hpp"
#include "dmco/trainer.hpp"

using namespace dmco;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("config", args.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--out", args.out, "output path");
    sub->add_option("--threads", args.threads, "worker threads (default: DMCO_THREADS or 1)")->check(CLI::NonNegativeNumber);
}

int thread_count(const CommonArgs& a) { return a.threads > 0 ? a.threads : default_thread_count(); }

std::uint64_t seed_of(const CommonArgs& a, const json& cfg, const char* key = "seed") {
    if (a.seed) return *a.seed;
    return cfg.contains(key) ? cfg.at(key).get<std::uint64_t>() : 0;
}

std::size_t size_or(const json& j, const char* key, std::size_t fallback) {
    return j.contains(key) ? j.at(key).get<std::size_t>() : fallback;
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
    } else {
        write_text_file(path, text);
        std::cerr << "wrote " << path << '\n';
    }
}

double lambda_of(const ProblemSpec& spec) {
    if (const auto* m = std::get_if<MertonParams>(&spec.params)) return m->lambda;
    return 0.0;
}

/// {"problem": {...}, "n": 1000, "seed": 1}
int cmd_sample(const CommonArgs& a) {
    const json cfg = read_json_file(a.config);
    const auto spec = problem_spec_from_json(cfg.at("problem"));
    const auto setup = build_problem(spec);
    const auto set = sample_training_set(setup.sampler_id, size_or(cfg, "n", 1000), seed_of(a, cfg));
    std::ostringstream out;
    out << "path,t";
    for (int k = 0; k < set.noise_dim(); ++k) out << ",z" << k;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (int t = 1; t <= set.horizon(); ++t) {
            out << i << ',' << t;
            for (double v : set[i].point(t)) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    write_or_print(a.out, out.str());
    return 0;
}

/// {"problem", "n", "validation_n", "net": {...}, "train": {...}, "seed"}
int cmd_train(const CommonArgs& a) {
    const json cfg = read_json_file(a.config);
    const auto spec = problem_spec_from_json(cfg.at("problem"));
    const auto setup = build_problem(spec);
    const std::uint64_t seed = seed_of(a, cfg);
    const std::size_t n = size_or(cfg, "n", 100000);
    const auto train_set = sample_training_set(setup.sampler_id, n, role_seed(seed, SeedRole::TrainSample));
    const auto val_set =
        sample_training_set(setup.sampler_id, size_or(cfg, "validation_n", n), role_seed(seed, SeedRole::TestSample));
    NetConfig nc = net_config_from_json(cfg.value("net", json::object()));
    nc.seed = role_seed(seed, SeedRole::Init);
    TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
    tc.shuffle_seed = role_seed(seed, SeedRole::Shuffle);

    const auto result = train(setup.problem, train_set, val_set, nc, tc);
    json report{{"seed", seed}, {"net", to_json(nc)}, {"train", to_json(tc)}, {"report", to_json(result.report)}};
    if (auto oracle = oracle_action(spec)) {
        report["oracle_train_loss"] = detail::number(empirical_loss(setup.problem, *oracle, train_set));
        report["oracle_validation_loss"] = detail::number(empirical_loss(setup.problem, *oracle, val_set));
    }
    if (a.out.empty()) {
        std::cout << report.dump(2) << '\n';
    } else {
        save_checkpoint(result.action, a.out, seed);
        write_text_file(a.out + ".json", report.dump(2) + "\n");
        std::cerr << "wrote " << a.out << " and " << a.out << ".json\n";
    }
    return result.report.stop_reason == StopReason::NumericError ? 3 : 0;
}

/// {"problem", "checkpoint", "n_eval", "seed"}
int cmd_eval(const CommonArgs& a) {
    const json cfg = read_json_file(a.config);
    const auto spec = problem_spec_from_json(cfg.at("problem"));
    const auto setup = build_problem(spec);
    const auto action = load_checkpoint(cfg.at("checkpoint").get<std::string>());
    const std::size_t n_eval = size_or(cfg, "n_eval", 100000);
    const std::uint64_t seed = seed_of(a, cfg);
    const auto est = mc_performance(setup.problem, action, setup.sampler_id, n_eval, seed);
    json out{{"n_eval", n_eval}, {"seed", seed}, {"loss", detail::number(est.mean)},
             {"std_error", detail::number(est.std_error)}};
    if (auto oracle = oracle_action(spec)) {
        const auto ref = mc_performance(setup.problem, *oracle, setup.sampler_id, n_eval, seed);
        out["oracle_loss"] = detail::number(ref.mean);
        out["oracle_std_error"] = detail::number(ref.std_error);
        if (const double lambda = lambda_of(spec); lambda > 0.0 && -est.mean < 1.0 && -ref.mean < 1.0) {
            const double ce = certainty_equivalent(-est.mean, lambda);
            const double ce_ref = certainty_equivalent(-ref.mean, lambda);
            out["certainty_equivalent"] = ce;
            out["oracle_certainty_equivalent"] = ce_ref;
            out["relative_performance_pct"] = 100.0 * (ce - ce_ref) / std::abs(ce_ref);
        }
    }
    write_or_print(a.out, out.dump(2) + "\n");
    return 0;
}

/// {"problem", "n", "seed", "delta", "link_tolerance", "net": {...},
///  "rademacher": {"m_samples", "epochs", "batch_size", "restarts", "variant"}, "checkpoint"?}
int cmd_diag(const CommonArgs& a) {
    const json cfg = read_json_file(a.config);
    const auto spec = problem_spec_from_json(cfg.at("problem"));
    const auto setup = build_problem(spec);
    const std::uint64_t seed = seed_of(a, cfg);
    const auto set = sample_training_set(setup.sampler_id, size_or(cfg, "n", 1000), role_seed(seed, SeedRole::TrainSample));

    const auto vstar = v_star_empirical(setup.problem, set);
    const auto part = partition_training_set(set, cfg.value("link_tolerance", 0.0));
    const auto vbar = v_bar_star(setup.problem, set, part);
    json out{{"n", set.size()},
             {"seed", seed},
             {"v_star", detail::number(vstar.value)},
             {"v_star_converged", vstar.converged},
             {"groups", part.groups.size()},
             {"v_bar_star", detail::number(vbar.value)},
             {"c_star", detail::number(setup.problem.cost_bound)}};
    if (auto oracle = oracle_action(spec)) out["oracle_loss"] = detail::number(empirical_loss(setup.problem, *oracle, set));
    if (cfg.contains("checkpoint")) {
        const auto action = load_checkpoint(cfg.at("checkpoint").get<std::string>());
        out["action_loss"] = detail::number(empirical_loss(setup.problem, action, set));
    }
    if (cfg.contains("rademacher")) {
        const auto& r = cfg.at("rademacher");
        RademacherConfig rc;
        rc.m_samples = r.value("m_samples", rc.m_samples);
        rc.epochs = r.value("epochs", rc.epochs);
        rc.batch_size = r.value("batch_size", rc.batch_size);
        rc.restarts = r.value("restarts", rc.restarts);
        rc.variant = r.value("variant", std::string("signed")) == "absolute" ? RademacherVariant::Absolute
                                                                              : RademacherVariant::Signed;
        rc.seed = derive_seed(seed, {5});
        const NetConfig nc = net_config_from_json(cfg.value("net", json::object()));
        const auto est = empirical_rademacher(setup.problem, nc, set, rc);
        const auto bounds = complexity_bounds(std::max(est.r_hat, 0.0), setup.problem.cost_bound, set.size(),
                                              cfg.value("delta", 0.05), est.is_lower_bound);
        out["rademacher"] = to_json(est);
        out["bounds"] = {{"c_nu", bounds.c_nu}, {"C_e", bounds.C_e}, {"from_lower_estimate", bounds.from_lower_estimate}};
    }
    write_or_print(a.out, out.dump(2) + "\n");
    return 0;
}

/// ExperimentConfig JSON; the output format follows the --out extension (.json or CSV).
int cmd_experiment(const CommonArgs& a) {
    auto cfg = experiment_config_from_json(read_json_file(a.config));
    if (a.seed) cfg.base_seed = *a.seed;
    cfg.threads = thread_count(a);
    if (!a.out.empty()) cfg.output_path = a.out;
    const auto res = run_experiment(cfg);
    if (cfg.output_path.empty()) {
        std::cout << results_csv(res);
    } else {
        const bool as_json = cfg.output_path.size() >= 5 && cfg.output_path.ends_with(".json");
        emit_results(res, as_json ? ResultFormat::Json : ResultFormat::Csv, cfg.output_path);
        std::cerr << "wrote " << cfg.output_path << '\n';
    }
    std::cerr << summary_csv(res);
    int failures = 0;
    for (const auto& c : res.cells) failures += c.failures;
    return failures > 0 ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep Monte Carlo optimization of feedback actions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kLibraryVersion));

    CommonArgs args;
    struct Entry {
        const char* name;
        const char* help;
        int (*run)(const CommonArgs&);
    };
    const Entry entries[] = {
        {"sample", "draw a training set and write it as CSV", cmd_sample},
        {"train", "train a network action and save a checkpoint", cmd_train},
        {"eval", "Monte Carlo performance of a checkpoint", cmd_eval},
        {"diag", "pathwise optimum, partition bound and Rademacher estimate", cmd_diag},
        {"experiment", "run a Merton experiment sweep", cmd_experiment},
    };
    std::vector<std::pair<CLI::App*, const Entry*>> subs;
    for (const auto& e : entries) {
        auto* sub = app.add_subcommand(e.name, e.help);
        add_common(sub, args);
        subs.emplace_back(sub, &e);
    }
    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [sub, entry] : subs) {
            if (sub->parsed()) return entry->run(args);
        }
    } catch (const UnsupportedVersionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
