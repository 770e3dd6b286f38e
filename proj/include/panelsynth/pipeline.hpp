#ifndef PANELSYNTH_PIPELINE_HPP
#define PANELSYNTH_PIPELINE_HPP

#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "panelsynth/config.hpp"
#include "panelsynth/report.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

struct LoadedData {
    std::map<std::string, OutcomeDaily> daily; // outcome -> city -> series
    std::map<std::string, Panel> panels;       // when the source is prebuilt panels
    bool has_daily = false;
    IngestAudit audit;
    bool has_audit = false;
};

namespace pipeline_detail {

inline DailyCountSeries slice_series(const DailyCountSeries& s, Date lo, Date hi) {
    if (lo < s.start || s.end() < hi)
        throw Error("daily series for " + s.city_id + " does not cover " + to_iso(lo) + ".." +
                    to_iso(hi));
    DailyCountSeries out;
    out.city_id = s.city_id;
    out.category = s.category;
    out.start = lo;
    int offset = s.start.days_until(lo);
    int n = lo.days_until(hi) + 1;
    out.counts.assign(s.counts.begin() + offset, s.counts.begin() + offset + n);
    return out;
}

inline std::pair<Date, Date> needed_window(const RunConfig& cfg) {
    Date lo = cfg.design.window_start;
    Date hi = cfg.design.window_end;
    if (cfg.its.enabled) {
        lo = std::min(lo, cfg.its.window_start);
        hi = std::max(hi, cfg.its.window_end);
    }
    return {lo, hi};
}

inline LoadedData load_incidents(const RunConfig& cfg) {
    auto [lo, hi] = needed_window(cfg);
    CategoryMap map = CategoryMap::load_file(cfg.data.category_map_path);

    std::vector<IncidentRecord> records;
    LoadedData out;
    out.has_audit = true;
    for (const auto& file : cfg.data.incident_files) {
        ParseResult parsed = parse_incidents(file.path, file.schema);
        out.audit.rows_read +=
            static_cast<long long>(parsed.records.size() + parsed.issues.size());
        out.audit.rows_malformed += static_cast<long long>(parsed.issues.size());
        for (const auto& issue : parsed.issues) out.audit.issues.push_back(issue);
        for (auto& r : parsed.records) records.push_back(std::move(r));
    }

    DailyCountsResult counted = build_daily_counts(records, map, lo, hi);
    out.audit.records_in_window = counted.in_window_records;
    out.audit.records_out_of_window = counted.out_of_window_records;
    out.audit.unmapped_descriptors = counted.unmapped_descriptor_counts;

    std::set<std::string> excluded(cfg.data.exclude_cities.begin(),
                                   cfg.data.exclude_cities.end());
    if (excluded.count(cfg.design.treated_unit))
        throw Error("exclude_cities must not contain the treated unit");

    for (auto& [key, series] : counted.series) {
        const auto& [city, category] = key;
        if (excluded.count(city)) continue;
        bool drop = false;
        if (series.counts.size() >= 120) {
            DiscontinuityFlag flag =
                detect_reporting_discontinuity(series, cfg.data.discontinuity_threshold);
            if (flag.flagged) {
                out.audit.discontinuities.push_back(
                    {city, category, flag.changepoint, flag.ratio});
                if (cfg.data.exclude_flagged && city != cfg.design.treated_unit) drop = true;
            }
        }
        if (!drop) out.daily[to_string(category)][city] = series;
    }
    out.has_daily = true;
    return out;
}

inline LoadedData load_daily_counts(const RunConfig& cfg) {
    auto [lo, hi] = needed_window(cfg);
    const int n_days = lo.days_until(hi) + 1;
    LoadedData out;
    out.has_daily = true;
    for (const auto& path : cfg.data.daily_count_paths) {
        csv::Table table = csv::Table::read_file(path);
        for (std::size_t i = 0; i < table.n_rows(); ++i) {
            std::string city = detail::trim(table.cell(i, "city"));
            std::string category = detail::trim(table.cell(i, "category"));
            Date date = parse_iso_date(table.cell(i, "date"));
            long long count = detail::parse_int(table.cell(i, "count"), path);
            if (count < 0) throw Error("negative count in " + path);
            if (date < lo || hi < date) continue;
            DailyCountSeries& series = out.daily[category][city];
            if (series.counts.empty()) {
                series.city_id = city;
                series.category = level2_from_string(category);
                series.start = lo;
                series.counts.assign(static_cast<std::size_t>(n_days), 0);
            }
            series.counts[static_cast<std::size_t>(lo.days_until(date))] += count;
        }
    }
    return out;
}

inline LoadedData load_panels(const RunConfig& cfg) {
    LoadedData out;
    for (const auto& [outcome, base] : cfg.data.panel_paths) {
        if (!cfg.outcome_block_len.count(outcome))
            throw Error("data.panels names outcome '" + outcome + "' not in outcomes");
        out.panels[outcome] = read_panel(base);
    }
    return out;
}

inline LoadedData load_datagen(const RunConfig& cfg) {
    auto [lo, hi] = needed_window(cfg);
    DailyCountSpec spec = cfg.data.datagen;
    spec.window_start = std::min(spec.window_start, lo);
    spec.window_end = std::max(spec.window_end, hi);
    LoadedData out;
    out.daily = generate_daily_counts(spec);
    out.has_daily = true;
    return out;
}

inline LoadedData load_data(const RunConfig& cfg) {
    switch (cfg.data.source) {
    case DataConfig::Source::Incidents: return load_incidents(cfg);
    case DataConfig::Source::DailyCounts: return load_daily_counts(cfg);
    case DataConfig::Source::Panels: return load_panels(cfg);
    case DataConfig::Source::Datagen: return load_datagen(cfg);
    }
    throw Error("unreachable data source");
}

/// The daily slice for one outcome restricted to the design window; donors
/// without data for this outcome simply stay out of its panel.
inline OutcomeDaily outcome_slice(const LoadedData& data, const RunConfig& cfg,
                                  const std::string& outcome, const StudyDesign& design) {
    auto it = data.daily.find(outcome);
    if (it == data.daily.end()) throw Error("no daily data for outcome '" + outcome + "'");
    OutcomeDaily out;
    for (const auto& [city, series] : it->second) {
        if (!cfg.design.populations.count(city)) continue; // units need populations
        out[city] = slice_series(series, design.window_start, design.window_end);
    }
    if (!out.count(design.treated_unit))
        throw Error("outcome '" + outcome + "' has no data for treated unit " +
                    design.treated_unit);
    return out;
}

} // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct OutcomeAnalysis {
    std::string outcome;
    Panel panel;
    TestReport main;
    std::vector<std::pair<Date, TestReport>> in_time;
    std::vector<std::pair<Date, TestReport>> early;
};

struct PipelineResult {
    bool complete = true;
    std::string out_dir;
    std::vector<std::string> files;
    std::map<std::string, std::string> outcome_status;

    int exit_code() const { return complete ? 0 : 1; }
};

/// End-to-end batch run: data -> panels -> fits -> placebo inference -> report
/// bundle. A failing outcome is recorded in the manifest and does not stop the
/// others; the exit status is nonzero unless everything completed.
inline PipelineResult run_pipeline(const RunConfig& cfg, std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    PipelineResult result;
    result.out_dir = cfg.output.directory;
    fs::create_directories(result.out_dir);

    auto out_path = [&](const std::string& name) { return result.out_dir + "/" + name; };
    auto add_file = [&](const std::string& name) { result.files.push_back(name); };

    LoadedData data = pipeline_detail::load_data(cfg);
    if (data.has_audit) {
        std::ofstream audit_out(out_path("audit.txt"));
        audit_out << data.audit.to_text();
        audit_out.close();
        add_file("audit.txt");
    }

    const FitOptions opts = cfg.fit.options();
    std::vector<OutcomeAnalysis> analyses;
    for (const auto& [outcome, block_len] : cfg.outcome_block_len) {
        (void)block_len;
        try {
            StudyDesign design = cfg.design_for(outcome);
            OutcomeAnalysis a;
            a.outcome = outcome;
            double treated_pop = cfg.design.population_of(cfg.design.treated_unit);

            OutcomeDaily daily;
            if (cfg.data.source == DataConfig::Source::Panels) {
                a.panel = data.panels.at(outcome);
            } else {
                daily = pipeline_detail::outcome_slice(data, cfg, outcome, design);
                a.panel = build_panel_from_daily(daily, design);
            }
            a.main = analyze_panel(a.panel, opts, treated_pop);

            if (data.has_daily) {
                for (Date d : cfg.in_time_dates)
                    a.in_time.emplace_back(d, in_time_placebo(daily, design, d, opts, treated_pop));
                for (Date d : cfg.early_rollin_dates)
                    a.early.emplace_back(d, early_rollin(daily, design, d, opts, treated_pop));
            }

            report::write_counterfactual(out_path("counterfactual_" + outcome + ".csv"), a.panel,
                                         a.main.treated_series);
            add_file("counterfactual_" + outcome + ".csv");
            if (cfg.output.emit_smoothed) {
                report::write_smoothed_series(out_path("smoothed_" + outcome + ".csv"), a.panel,
                                              a.main.treated_series, cfg.output.loess_span);
                add_file("smoothed_" + outcome + ".csv");
            }

            result.outcome_status[outcome] = "ok";
            analyses.push_back(std::move(a));
            const TestReport& done = analyses.back().main;
            log << "[outcome " << outcome << "] ATE/1000 = "
                << report::fixed(done.treated.ate_per_1000, 4)
                << " (" << report::fixed(done.treated.ate_events, 1) << " events/block)"
                << ", p(ATE) = " << report::fixed(done.p_ate, 2)
                << ", p(RMSE) = " << report::fixed(done.p_rmse, 2) << "\n";
        } catch (const Error& e) {
            result.outcome_status[outcome] = std::string("error: ") + e.what();
            result.complete = false;
            log << "[outcome " << outcome << "] failed: " << e.what() << "\n";
        }
    }

    if (!analyses.empty()) {
        std::vector<std::string> outcomes;
        std::vector<report::MainRow> rows;
        std::map<std::string, const TestReport*> reports;
        std::map<std::string, std::vector<std::string>> donor_lists;
        std::map<std::string, double> p_ate, p_rmse;
        for (const auto& a : analyses) {
            outcomes.push_back(a.outcome);
            rows.push_back({a.outcome, &a.main});
            reports[a.outcome] = &a.main;
            donor_lists[a.outcome] =
                std::vector<std::string>(a.panel.units.begin() + 1, a.panel.units.end());
            p_ate[a.outcome] = a.main.p_ate;
            p_rmse[a.outcome] = a.main.p_rmse;
        }

        report::write_main_table(out_path("main_results.csv"), rows);
        add_file("main_results.csv");
        report::write_bounds_table(out_path("effect_bounds.csv"), rows);
        add_file("effect_bounds.csv");
        report::write_adjusted_p_table(out_path("adjusted_p.csv"),
                                       holm_sidak(p_ate, cfg.fit.alpha),
                                       holm_sidak(p_rmse, cfg.fit.alpha));
        add_file("adjusted_p.csv");
        report::write_weight_table(out_path("weights.csv"), outcomes, reports, donor_lists, true);
        add_file("weights.csv");
        report::write_weight_table(out_path("weights_full.csv"), outcomes, reports, donor_lists,
                                   false);
        add_file("weights_full.csv");
        report::write_placebo_units_table(out_path("placebo_units.csv"), outcomes, reports);
        add_file("placebo_units.csv");

        if (data.has_daily) {
            std::vector<report::DatedReportRow> in_time_rows, early_rows;
            for (const auto& a : analyses) {
                for (const auto& [date, rep] : a.in_time)
                    in_time_rows.push_back({a.outcome, date, &rep});
                for (const auto& [date, rep] : a.early)
                    early_rows.push_back({a.outcome, date, &rep});
            }
            report::write_dated_report_table(out_path("placebo_in_time.csv"), in_time_rows);
            add_file("placebo_in_time.csv");
            report::write_dated_report_table(out_path("placebo_early_rollin.csv"), early_rows);
            add_file("placebo_early_rollin.csv");
        }
    }

    // Interrupted time series on the treated city's daily counts.
    if (cfg.its.enabled) {
        try {
            if (!data.has_daily) throw Error("ITS needs incident, daily-count, or datagen data");
            std::map<std::string, ItsFit> arima_fits;
            for (const auto& outcome : cfg.its.arima_outcomes) {
                auto oit = data.daily.find(outcome);
                if (oit == data.daily.end() || !oit->second.count(cfg.its.city))
                    throw Error("ITS outcome '" + outcome + "' has no data for " + cfg.its.city);
                DailyCountSeries series = pipeline_detail::slice_series(
                    oit->second.at(cfg.its.city), cfg.its.window_start, cfg.its.window_end);
                std::vector<Date> dates;
                Eigen::VectorXd y(static_cast<Eigen::Index>(series.counts.size()));
                for (std::size_t i = 0; i < series.counts.size(); ++i) {
                    dates.push_back(series.start.plus_days(static_cast<int>(i)));
                    y(static_cast<Eigen::Index>(i)) = static_cast<double>(series.counts[i]);
                }
                DesignOptions dopts;
                dopts.treatment = cfg.its.treatment;
                ItsDesignMatrix X =
                    build_design_matrix(dates, cfg.design.intervention_date.plus_days(-1), dopts);
                ArimaOrder order =
                    select_orders(y, X.X, X.names, cfg.its.max_p, cfg.its.max_q, cfg.its.max_d);
                ItsFit fit = fit_arima_regression(y, X, order);
                report::write_its_coefficients(out_path("its_coefficients_" + outcome + ".csv"),
                                               fit);
                add_file("its_coefficients_" + outcome + ".csv");
                arima_fits[outcome] = fit;
                log << "[its " << outcome << "] ARIMA(" << order.p << "," << order.d << ","
                    << order.q << ") treatment p = " << report::fixed(fit.treatment_p, 4) << "\n";
            }
            if (!arima_fits.empty()) {
                report::write_its_treatment_table(out_path("its_treatment.csv"),
                                                  its_report(arima_fits, cfg.fit.alpha));
                add_file("its_treatment.csv");
            }
            for (const auto& outcome : cfg.its.poisson_outcomes) {
                auto oit = data.daily.find(outcome);
                if (oit == data.daily.end() || !oit->second.count(cfg.its.city))
                    throw Error("ITS outcome '" + outcome + "' has no data for " + cfg.its.city);
                DailyCountSeries series = pipeline_detail::slice_series(
                    oit->second.at(cfg.its.city), cfg.its.window_start, cfg.its.window_end);
                StudyDesign weekly;
                weekly.window_start = cfg.its.window_start;
                weekly.intervention_date = cfg.design.intervention_date;
                weekly.window_end = cfg.its.window_end;
                weekly.block_len_days = 7;
                weekly.treated_unit = cfg.its.city;
                weekly.populations[cfg.its.city] = 1.0;
                BlockSeries blocks = aggregate_blocks(series, weekly);
                Eigen::VectorXd y(static_cast<Eigen::Index>(blocks.values.size()));
                for (std::size_t i = 0; i < blocks.values.size(); ++i)
                    y(static_cast<Eigen::Index>(i)) = blocks.values[i];
                WeeklyDesignMatrix X = build_weekly_design_matrix(
                    blocks.block_starts, cfg.design.intervention_date.plus_days(-1),
                    cfg.its.treatment);
                ItsFit fit = fit_poisson_ar(y, X.X, X.names, cfg.its.poisson_ar_lags);
                report::write_its_coefficients(out_path("its_poisson_" + outcome + ".csv"), fit);
                add_file("its_poisson_" + outcome + ".csv");
                log << "[its " << outcome << "] Poisson AR treatment p = "
                    << report::fixed(fit.treatment_p, 4) << "\n";
            }
            result.outcome_status["its"] = "ok";
        } catch (const Error& e) {
            result.outcome_status["its"] = std::string("error: ") + e.what();
            result.complete = false;
            log << "[its] failed: " << e.what() << "\n";
        }
    }

    if (analyses.empty() && !cfg.outcome_block_len.empty()) result.complete = false;
    report::write_manifest(out_path("manifest.json"), result.out_dir, result.files,
                           result.outcome_status, result.complete);
    log << (result.complete ? "run complete" : "run INCOMPLETE") << ": " << result.out_dir
        << "/manifest.json\n";
    return result;
}

} // namespace panelsynth

#endif
