// Batch CLI for the panelsynth library: config-driven end-to-end runs plus
// verbs for the individual pipeline stages.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "panelsynth/config.hpp"
#include "panelsynth/pipeline.hpp"

namespace {

using namespace panelsynth;

struct CommonArgs {
    std::string config_path;
    std::string outcome;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "path to the run config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--outcome", args.outcome, "restrict to one configured outcome");
    cmd->add_option("--out", args.out_dir, "override the output directory");
    cmd->add_option("--seed", args.seed, "override the datagen seed");
    cmd->add_option("--threads", args.threads, "worker threads for placebo fits");
}

RunConfig load_with_overrides(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (!args.out_dir.empty()) cfg.output.directory = args.out_dir;
    if (args.seed) cfg.data.datagen.seed = *args.seed;
    if (args.threads) cfg.fit.threads = *args.threads;
    if (!args.outcome.empty()) {
        if (!cfg.outcome_block_len.count(args.outcome))
            throw Error("--outcome '" + args.outcome + "' is not configured");
        std::map<std::string, int> keep;
        keep[args.outcome] = cfg.outcome_block_len.at(args.outcome);
        cfg.outcome_block_len = std::move(keep);
    }
    return cfg;
}

int cmd_run(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    return run_pipeline(cfg, std::cout).exit_code();
}

int cmd_ingest(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    if (cfg.data.source != DataConfig::Source::Incidents &&
        cfg.data.source != DataConfig::Source::Datagen)
        throw Error("ingest needs an incidents or datagen data source");
    LoadedData data = pipeline_detail::load_data(cfg);
    std::filesystem::create_directories(cfg.output.directory);

    csv::Writer w(cfg.output.directory + "/daily_counts.csv");
    w.write_row({"city", "category", "date", "count"});
    for (const auto& [outcome, by_city] : data.daily)
        for (const auto& [city, series] : by_city)
            for (std::size_t i = 0; i < series.counts.size(); ++i)
                w.write_row({city, outcome, to_iso(series.start.plus_days(static_cast<int>(i))),
                             std::to_string(series.counts[i])});
    w.close();
    std::cout << "wrote " << cfg.output.directory << "/daily_counts.csv\n";

    if (data.has_audit) {
        std::ofstream audit(cfg.output.directory + "/audit.txt");
        audit << data.audit.to_text();
        std::cout << "wrote " << cfg.output.directory << "/audit.txt\n";
    }
    return 0;
}

int cmd_panel(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    LoadedData data = pipeline_detail::load_data(cfg);
    if (!data.has_daily) throw Error("panel export needs daily data (incidents/daily/datagen)");
    std::filesystem::create_directories(cfg.output.directory);
    for (const auto& [outcome, block_len] : cfg.outcome_block_len) {
        (void)block_len;
        StudyDesign design = cfg.design_for(outcome);
        OutcomeDaily daily = pipeline_detail::outcome_slice(data, cfg, outcome, design);
        Panel panel = build_panel_from_daily(daily, design);
        write_panel(panel, cfg.output.directory + "/panel_" + outcome);
        std::cout << "wrote " << cfg.output.directory << "/panel_" << outcome << ".csv (T0="
                  << panel.t0 << ", T=" << panel.total_blocks() << ", units="
                  << panel.n_units() << ")\n";
    }
    return 0;
}

Panel panel_for_outcome(const RunConfig& cfg, const LoadedData& data, const std::string& outcome) {
    StudyDesign design = cfg.design_for(outcome);
    if (cfg.data.source == DataConfig::Source::Panels) return data.panels.at(outcome);
    OutcomeDaily daily = pipeline_detail::outcome_slice(data, cfg, outcome, design);
    return build_panel_from_daily(daily, design);
}

int cmd_fit(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    LoadedData data = pipeline_detail::load_data(cfg);
    std::filesystem::create_directories(cfg.output.directory);
    for (const auto& [outcome, block_len] : cfg.outcome_block_len) {
        (void)block_len;
        Panel panel = panel_for_outcome(cfg, data, outcome);
        UnitFit fit = fit_unit(panel, cfg.fit.options(),
                               cfg.design.population_of(cfg.design.treated_unit));
        report::write_counterfactual(cfg.output.directory + "/counterfactual_" + outcome + ".csv",
                                     panel, fit.series);
        std::cout << "[" << outcome << "] lambda = "
                  << detail::format_double(fit.solution.lambda)
                  << ", pre RMSE = " << detail::format_double(fit.solution.pre_rmse)
                  << ", ATE/1000 = " << report::fixed(fit.effect.ate_per_1000, 4) << "\n";
        for (int j = 0; j < panel.n_donors(); ++j)
            std::cout << "  " << panel.units[static_cast<std::size_t>(j + 1)] << " "
                      << report::fixed(fit.solution.weights(j), 2) << "\n";
        std::cout << "  intercept " << report::fixed(fit.solution.intercept, 2) << "\n";
    }
    return 0;
}

int cmd_placebo(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    LoadedData data = pipeline_detail::load_data(cfg);
    std::filesystem::create_directories(cfg.output.directory);
    for (const auto& [outcome, block_len] : cfg.outcome_block_len) {
        (void)block_len;
        Panel panel = panel_for_outcome(cfg, data, outcome);
        double pop = cfg.design.population_of(cfg.design.treated_unit);
        TestReport rep = analyze_panel(panel, cfg.fit.options(), pop);
        std::cout << "[" << outcome << "] p(ATE) = " << report::fixed(rep.p_ate, 2)
                  << ", p(RMSE) = " << report::fixed(rep.p_rmse, 2) << ", retained "
                  << rep.n_retained << "/" << panel.n_donors() << " placebos\n";
        std::map<std::string, const TestReport*> reports{{outcome, &rep}};
        report::write_placebo_units_table(
            cfg.output.directory + "/placebo_units_" + outcome + ".csv", {outcome}, reports);
    }
    return 0;
}

int cmd_its(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    cfg.its.enabled = true;
    if (cfg.its.arima_outcomes.empty() && cfg.its.poisson_outcomes.empty())
        for (const auto& [outcome, len] : cfg.outcome_block_len) {
            (void)len;
            cfg.its.arima_outcomes.push_back(outcome);
        }
    // A datagen source must generate the ITS outcomes even when the config had
    // the its section disabled.
    if (cfg.data.source == DataConfig::Source::Datagen) {
        auto ensure = [&](const std::string& outcome) {
            auto& list = cfg.data.datagen.outcomes;
            if (std::find(list.begin(), list.end(), outcome) == list.end())
                list.push_back(outcome);
        };
        for (const auto& o : cfg.its.arima_outcomes) ensure(o);
        for (const auto& o : cfg.its.poisson_outcomes) ensure(o);
        std::sort(cfg.data.datagen.outcomes.begin(), cfg.data.datagen.outcomes.end());
    }
    cfg.outcome_block_len.clear(); // its only
    PipelineResult res = run_pipeline(cfg, std::cout);
    return res.outcome_status.count("its") && res.outcome_status.at("its") == "ok" ? 0 : 1;
}

int cmd_gen(const CommonArgs& args, const std::string& kind, int n_rows) {
    RunConfig cfg = load_with_overrides(args);
    std::filesystem::create_directories(cfg.output.directory);
    if (kind == "daily") {
        LoadedData data = pipeline_detail::load_datagen(cfg);
        csv::Writer w(cfg.output.directory + "/daily_counts.csv");
        w.write_row({"city", "category", "date", "count"});
        for (const auto& [outcome, by_city] : data.daily)
            for (const auto& [city, series] : by_city)
                for (std::size_t i = 0; i < series.counts.size(); ++i)
                    w.write_row({city, outcome,
                                 to_iso(series.start.plus_days(static_cast<int>(i))),
                                 std::to_string(series.counts[i])});
        std::cout << "wrote " << cfg.output.directory << "/daily_counts.csv\n";
    } else if (kind == "panel") {
        LoadedData data = pipeline_detail::load_datagen(cfg);
        for (const auto& [outcome, len] : cfg.outcome_block_len) {
            (void)len;
            StudyDesign design = cfg.design_for(outcome);
            OutcomeDaily daily = pipeline_detail::outcome_slice(data, cfg, outcome, design);
            Panel panel = build_panel_from_daily(daily, design);
            write_panel(panel, cfg.output.directory + "/panel_" + outcome);
            std::cout << "wrote " << cfg.output.directory << "/panel_" << outcome << ".csv\n";
        }
    } else if (kind == "incidents") {
        IncidentFixtureSpec spec;
        spec.n_rows = n_rows;
        spec.cities = cfg.data.datagen.units;
        if (spec.cities.empty())
            throw Error("gen incidents needs datagen units in the config");
        spec.window_start = cfg.design.window_start;
        spec.window_end = cfg.design.window_end;
        spec.seed = cfg.data.datagen.seed;
        write_incident_fixture(cfg.output.directory + "/incidents.csv", spec);
        std::cout << "wrote " << cfg.output.directory << "/incidents.csv\n";
    } else {
        throw Error("gen --kind must be daily, panel, or incidents");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"panel-data synthetic control and interrupted time series toolkit"};
    app.require_subcommand(1);

    CommonArgs run_args, ingest_args, panel_args, fit_args, placebo_args, its_args, gen_args;
    std::string gen_kind = "daily";
    int gen_rows = 10000;

    auto* run = app.add_subcommand("run", "full pipeline: data -> fits -> report bundle");
    add_common(run, run_args);
    auto* ingest = app.add_subcommand("ingest", "incident files -> daily counts + audit");
    add_common(ingest, ingest_args);
    auto* panel = app.add_subcommand("panel", "daily counts -> panel CSV + metadata");
    add_common(panel, panel_args);
    auto* fit = app.add_subcommand("fit", "panel -> weights and counterfactual");
    add_common(fit, fit_args);
    auto* placebo = app.add_subcommand("placebo", "panel -> unit placebo distribution");
    add_common(placebo, placebo_args);
    auto* its = app.add_subcommand("its", "treated-city interrupted time series");
    add_common(its, its_args);
    auto* gen = app.add_subcommand("gen", "synthetic data generator");
    add_common(gen, gen_args);
    gen->add_option("--kind", gen_kind, "daily | panel | incidents");
    gen->add_option("--rows", gen_rows, "row count for incident fixtures");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (ingest->parsed()) return cmd_ingest(ingest_args);
        if (panel->parsed()) return cmd_panel(panel_args);
        if (fit->parsed()) return cmd_fit(fit_args);
        if (placebo->parsed()) return cmd_placebo(placebo_args);
        if (its->parsed()) return cmd_its(its_args);
        if (gen->parsed()) return cmd_gen(gen_args, gen_kind, gen_rows);
    } catch (const panelsynth::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
