#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "telem/errors.hpp"
#include "telem/evaluate.hpp"
#include "telem/pipeline.hpp"
#include "telem/regress.hpp"
#include "telem/simulate.hpp"

namespace {

using namespace telem;

struct GlobalFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    int threads = 0;
};

pipeline::PipelineConfig effective_config(const GlobalFlags& flags) {
    if (flags.config_path.empty()) throw ConfigError("--config is required");
    auto cfg = pipeline::load_config(flags.config_path);
    if (flags.seed) {
        cfg.sim.seed = *flags.seed;
        cfg.cv_seed = *flags.seed;
    }
    if (flags.out_dir) cfg.out_dir = *flags.out_dir;
    return cfg;
}

std::string out_path(const pipeline::PipelineConfig& cfg, const std::string& name) {
    return cfg.out_dir + "/" + name;
}

int cmd_simulate(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    if (!cfg.use_simulation) throw ConfigError("simulate: config has no [simulate] block");
    const auto portfolio = simulate::simulate_portfolio(cfg.sim);
    pipeline::write_text_file(out_path(cfg, "raw_records.txt"),
                              simulate::raw_records_text(portfolio.records));
    pipeline::write_text_file(out_path(cfg, "trip_list.txt"),
                              simulate::trip_list_text(portfolio.trips));
    pipeline::write_text_file(out_path(cfg, "policy_table.csv"),
                              simulate::policy_table_text(portfolio.policies));
    pipeline::write_text_file(out_path(cfg, "ground_truth.json"),
                              simulate::ground_truth_json(cfg.sim, portfolio.truth));
    std::cout << "simulate: " << portfolio.policies.size() << " policies, "
              << portfolio.records.size() << " records, " << portfolio.trips.size()
              << " trips -> " << cfg.out_dir << "\n";
    return 0;
}

int cmd_ingest(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    std::size_t retained_trips = 0;
    for (const auto& p : result.policies) retained_trips += p.trips.size();
    std::cout << "ingest: " << result.policies.size() << " policies retained ("
              << result.policies_rejected << " rejected), " << retained_trips
              << " trips kept, " << result.tally.rejected << " trips filtered, "
              << result.record_counters.malformed_rows << " malformed rows\n";
    return 0;
}

int cmd_features(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    const auto features = pipeline::build_features(result, cfg.bin_width, cfg.pca_components);
    features.table.write_csv(out_path(cfg, "features.csv"));
    std::cout << "features: " << features.table.n_rows() << " policies x "
              << features.table.column_order().size() << " columns -> "
              << out_path(cfg, "features.csv") << "\n";
    return 0;
}

int cmd_fit(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    const auto features = pipeline::build_features(result, cfg.bin_width, cfg.pca_components);
    const auto spec = pipeline::make_model_spec(features.table, cfg.family,
                                                cfg.exposure_as_offset);
    const auto design = regress::build_design(features.table, spec);
    const auto model = regress::fit(design, spec.family);
    pipeline::write_text_file(out_path(cfg, "model.json"), regress::model_to_json(model));
    std::cout << "fit: ll=" << model.log_likelihood << " aic=" << regress::aic(model)
              << (model.theta_diverged ? " (theta diverged)" : "") << " -> "
              << out_path(cfg, "model.json") << "\n";
    return 0;
}

int cmd_cv(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    const auto features = pipeline::build_features(result, cfg.bin_width, cfg.pca_components);
    const auto spec = pipeline::make_model_spec(features.table, cfg.family,
                                                cfg.exposure_as_offset);
    const auto plan =
        evaluate::kfold_partition(features.table.numeric("claims"), cfg.cv_k, cfg.cv_seed);
    const auto cv = evaluate::majority_vote_select(features.table, spec, plan,
                                                   cfg.vote_threshold);
    pipeline::write_text_file(out_path(cfg, "cv_report.json"), evaluate::cv_report_json(cv));
    std::cout << "cv: " << cv.ledger.final_terms.size() << " of " << spec.terms.size()
              << " terms selected, deviance=" << cv.metrics.deviance << " -> "
              << out_path(cfg, "cv_report.json") << "\n";
    return 0;
}

int cmd_learning(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    pipeline::write_text_file(out_path(cfg, "learning_report.csv"),
                              pipeline::run_learning(result));
    std::cout << "learning: report -> " << out_path(cfg, "learning_report.csv") << "\n";
    return 0;
}

int cmd_robustness(const GlobalFlags& flags) {
    const auto cfg = effective_config(flags);
    const auto result = pipeline::run_ingest(cfg);
    pipeline::write_text_file(out_path(cfg, "robustness.csv"),
                              pipeline::robustness_sweep(result, cfg));
    std::cout << "robustness: h=2..30 table -> " << out_path(cfg, "robustness.csv") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"telematics claims analytics pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    GlobalFlags flags;
    app.add_option("--config", flags.config_path, "pipeline config file");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override simulation and CV seeds");
    std::string out_value;
    auto* out_opt = app.add_option("--out", out_value, "override the output directory");
    app.add_option("--threads", flags.threads, "worker thread cap (0 = auto)");

    int (*handler)(const GlobalFlags&) = nullptr;
    using Entry = std::tuple<const char*, const char*, int (*)(const GlobalFlags&)>;
    for (const auto& [name, blurb, fn] : {
             Entry{"simulate", "write a synthetic portfolio and its ground truth", &cmd_simulate},
             Entry{"ingest", "parse, clean, match and filter the input streams", &cmd_ingest},
             Entry{"features", "emit the per-policy feature table", &cmd_features},
             Entry{"fit", "fit the claim-count model on all policies", &cmd_fit},
             Entry{"cv", "majority-vote feature selection with k-fold metrics", &cmd_cv},
             Entry{"learning", "power-law learning-effect report", &cmd_learning},
             Entry{"robustness", "metric sweep over speed-bin widths", &cmd_robustness},
         }) {
        auto* sub = app.add_subcommand(name, blurb);
        auto fn_copy = fn;
        sub->callback([&handler, fn_copy]() { handler = fn_copy; });
    }

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) flags.seed = seed_value;
    if (out_opt->count() > 0) flags.out_dir = out_value;

    try {
        return handler ? handler(flags) : 2;
    } catch (const telem::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const telem::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
