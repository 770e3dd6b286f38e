#ifndef PANELSYNTH_REPORT_HPP
#define PANELSYNTH_REPORT_HPP

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelsynth/csv.hpp"
#include "panelsynth/inference.hpp"
#include "panelsynth/its.hpp"
#include "panelsynth/loess.hpp"

namespace panelsynth {
namespace report {

inline std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string decision_text(Decision d) {
    return d == Decision::Reject ? "Reject" : "Fail to Reject";
}

struct MainRow {
    std::string outcome;
    const TestReport* report = nullptr;
};

/// Main results table, one row per outcome: ATE (/1000), both p-values, fit
/// diagnostics, and the retained placebo count.
inline void write_main_table(const std::string& path, const std::vector<MainRow>& rows) {
    csv::Writer w(path);
    w.write_row({"outcome", "ATE (/1000)", "p (ATE)", "p (RMSE)", "Pre R2", "Pre RMSE",
                 "Plac. RMSE", "Num. plac."});
    for (const auto& r : rows) {
        const TestReport& t = *r.report;
        w.write_row({r.outcome, detail::format_double(t.treated.ate_per_1000),
                     detail::format_double(t.p_ate), detail::format_double(t.p_rmse),
                     detail::format_double(t.pre_r2),
                     detail::format_double(t.treated.pre_rmse),
                     detail::format_double(t.avg_placebo_pre_rmse),
                     std::to_string(t.n_retained)});
    }
}

inline void write_bounds_table(const std::string& path, const std::vector<MainRow>& rows) {
    csv::Writer w(path);
    w.write_row({"outcome", "lower_5pct", "upper_95pct"});
    for (const auto& r : rows)
        w.write_row({r.outcome, detail::format_double(r.report->bounds_5_95.first),
                     detail::format_double(r.report->bounds_5_95.second)});
}

inline void write_adjusted_p_table(const std::string& path, const AdjustedPValues& ate,
                                   const AdjustedPValues& rmse) {
    csv::Writer w(path);
    w.write_row({"statistic", "outcome", "raw_p", "adjusted_p", "decision"});
    for (const auto& [outcome, p] : ate.raw)
        w.write_row({"ate", outcome, detail::format_double(p),
                     detail::format_double(ate.adjusted.at(outcome)),
                     decision_text(ate.decisions.at(outcome))});
    for (const auto& [outcome, p] : rmse.raw)
        w.write_row({"rmse", outcome, detail::format_double(p),
                     detail::format_double(rmse.adjusted.at(outcome)),
                     decision_text(rmse.decisions.at(outcome))});
}

/// Weight table mirroring the donors-by-outcomes layout: donor rows sorted by
/// unit id, intercept last, "--" where a donor is not in that outcome's pool.
/// `display` selects fixed 2-decimal rendering; otherwise full precision.
inline void write_weight_table(const std::string& path,
                               const std::vector<std::string>& outcomes,
                               const std::map<std::string, const TestReport*>& reports,
                               const std::map<std::string, std::vector<std::string>>& donor_lists,
                               bool display) {
    std::set<std::string> all_donors;
    for (const auto& [outcome, donors] : donor_lists) {
        (void)outcome;
        for (const auto& d : donors) all_donors.insert(d);
    }

    csv::Writer w(path);
    std::vector<std::string> header = {"unit"};
    for (const auto& o : outcomes) header.push_back(o);
    w.write_row(header);

    auto cell = [&](const std::string& outcome, const std::string& donor) -> std::string {
        const auto& donors = donor_lists.at(outcome);
        for (std::size_t i = 0; i < donors.size(); ++i) {
            if (donors[i] != donor) continue;
            double v = reports.at(outcome)->treated_solution.weights(static_cast<Eigen::Index>(i));
            return display ? fixed(v, 2) : detail::format_double(v);
        }
        return "--";
    };

    for (const auto& donor : all_donors) {
        std::vector<std::string> row = {donor};
        for (const auto& o : outcomes) row.push_back(cell(o, donor));
        w.write_row(row);
    }
    std::vector<std::string> intercept_row = {"intercept"};
    for (const auto& o : outcomes) {
        double c = reports.at(o)->treated_solution.intercept;
        intercept_row.push_back(display ? fixed(c, 2) : detail::format_double(c));
    }
    w.write_row(intercept_row);
}

inline void write_placebo_units_table(const std::string& path,
                                      const std::vector<std::string>& outcomes,
                                      const std::map<std::string, const TestReport*>& reports) {
    csv::Writer w(path);
    w.write_row({"outcome", "unit", "pre_rmse", "ate_per_capita", "rmse_ratio", "screened"});
    for (const auto& o : outcomes) {
        for (const auto& e : reports.at(o)->placebos.entries)
            w.write_row({o, e.unit, detail::format_double(e.pre_rmse),
                         detail::format_double(e.ate),
                         e.rmse_ratio_defined ? detail::format_double(e.rmse_ratio) : "inf",
                         e.screened ? "yes" : "no"});
    }
}

struct DatedReportRow {
    std::string outcome;
    Date start;
    const TestReport* report = nullptr;
};

/// In-time placebo and early roll-in tables share this shape.
inline void write_dated_report_table(const std::string& path,
                                     const std::vector<DatedReportRow>& rows) {
    csv::Writer w(path);
    w.write_row({"outcome", "start_date", "ATE (/1000)", "p (ATE)", "p (RMSE)",
                 "Avg. Placebo RMSE", "Num. plac."});
    for (const auto& r : rows)
        w.write_row({r.outcome, to_iso(r.start),
                     detail::format_double(r.report->treated.ate_per_1000),
                     detail::format_double(r.report->p_ate),
                     detail::format_double(r.report->p_rmse),
                     detail::format_double(r.report->avg_placebo_pre_rmse),
                     std::to_string(r.report->n_retained)});
}

inline void write_counterfactual(const std::string& path, const Panel& panel,
                                 const CounterfactualSeries& series) {
    csv::Writer w(path);
    w.write_row({"block_start", "observed", "predicted", "gap"});
    for (int t = 0; t < panel.total_blocks(); ++t) {
        double obs = series.observed[static_cast<std::size_t>(t)];
        double pred = series.predicted[static_cast<std::size_t>(t)];
        w.write_row({to_iso(panel.block_starts[static_cast<std::size_t>(t)]),
                     detail::format_double(obs), detail::format_double(pred),
                     detail::format_double(obs - pred)});
    }
}

inline void write_smoothed_series(const std::string& path, const Panel& panel,
                                  const CounterfactualSeries& series, double span) {
    std::vector<double> obs_smooth = loess_smooth(series.observed, span);
    std::vector<double> pred_smooth = loess_smooth(series.predicted, span);
    csv::Writer w(path);
    w.write_row({"block_start", "observed_smoothed", "predicted_smoothed"});
    for (int t = 0; t < panel.total_blocks(); ++t)
        w.write_row({to_iso(panel.block_starts[static_cast<std::size_t>(t)]),
                     detail::format_double(obs_smooth[static_cast<std::size_t>(t)]),
                     detail::format_double(pred_smooth[static_cast<std::size_t>(t)])});
}

inline void write_its_treatment_table(const std::string& path,
                                      const std::vector<ItsTreatmentRow>& rows) {
    csv::Writer w(path);
    w.write_row({"outcome", "treatment_coef", "se", "p", "adjusted_p", "decision"});
    for (const auto& r : rows)
        w.write_row({r.outcome, detail::format_double(r.coef), detail::format_double(r.se),
                     detail::format_double(r.p), detail::format_double(r.adjusted_p),
                     decision_text(r.decision)});
}

inline void write_its_coefficients(const std::string& path, const ItsFit& fit) {
    csv::Writer w(path);
    w.write_row({"term", "estimate", "se"});
    w.write_row({"order", "(" + std::to_string(fit.order.p) + "," + std::to_string(fit.order.d) +
                              "," + std::to_string(fit.order.q) + ")",
                 ""});
    for (int i = 0; i < fit.ar.size(); ++i)
        w.write_row({"AR(" + std::to_string(i + 1) + ")", detail::format_double(fit.ar(i)),
                     detail::format_double(fit.ar_se(i))});
    for (int i = 0; i < fit.ma.size(); ++i)
        w.write_row({"MA(" + std::to_string(i + 1) + ")", detail::format_double(fit.ma(i)),
                     detail::format_double(fit.ma_se(i))});
    for (std::size_t i = 0; i < fit.coef_names.size(); ++i)
        w.write_row({fit.coef_names[i],
                     detail::format_double(fit.coef(static_cast<Eigen::Index>(i))),
                     detail::format_double(fit.coef_se(static_cast<Eigen::Index>(i)))});
    w.write_row({"sigma2", detail::format_double(fit.sigma2), ""});
    w.write_row({"aic", detail::format_double(fit.aic), ""});
    w.write_row({"r2", detail::format_double(fit.r2), ""});
    w.write_row({"adj_r2", detail::format_double(fit.adj_r2), ""});
    w.write_row({"near_unit_root", fit.near_unit_root ? "yes" : "no", ""});
}

/// Hash manifest written last; `complete` records whether every configured
/// outcome finished.
inline void write_manifest(const std::string& path, const std::string& out_dir,
                           const std::vector<std::string>& file_names,
                           const std::map<std::string, std::string>& outcome_status,
                           bool complete) {
    nlohmann::json manifest;
    manifest["complete"] = complete;
    nlohmann::json status = nlohmann::json::object();
    for (const auto& [outcome, s] : outcome_status) status[outcome] = s;
    manifest["outcome_status"] = status;
    nlohmann::json files = nlohmann::json::array();
    std::vector<std::string> sorted = file_names;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& name : sorted) {
        std::ifstream in(out_dir + "/" + name, std::ios::binary);
        if (!in) throw Error("manifest: missing output file " + name);
        std::ostringstream buf;
        buf << in.rdbuf();
        nlohmann::json entry;
        entry["name"] = name;
        entry["fnv1a64"] = detail::hex64(detail::fnv1a64(buf.str()));
        files.push_back(entry);
    }
    manifest["files"] = files;
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path);
    out << manifest.dump(2) << "\n";
}

} // namespace report
} // namespace panelsynth

#endif
