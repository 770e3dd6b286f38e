#ifndef PANELSYNTH_CONFIG_HPP
#define PANELSYNTH_CONFIG_HPP

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelsynth/datagen.hpp"
#include "panelsynth/inference.hpp"
#include "panelsynth/its.hpp"
#include "panelsynth/panel.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Run configuration: one JSON document drives the whole batch pipeline.
// Unknown keys are rejected; nothing is read from the environment.
// ---------------------------------------------------------------------------

struct IncidentFileConfig {
    std::string path;
    IncidentSchema schema;
};

struct DataConfig {
    enum class Source { Incidents, DailyCounts, Panels, Datagen };
    Source source = Source::Datagen;

    std::vector<IncidentFileConfig> incident_files;
    std::string category_map_path;
    std::vector<std::string> exclude_cities;
    double discontinuity_threshold = 3.0;
    bool exclude_flagged = false;

    std::vector<std::string> daily_count_paths;
    std::map<std::string, std::string> panel_paths; // outcome -> base path
    DailyCountSpec datagen;
};

struct FitConfig {
    LambdaGrid grid{};
    std::optional<double> fixed_lambda;
    double screening_factor = 7.5;
    Sidedness sidedness = Sidedness::OneSidedUpper;
    double alpha = 0.1;
    bool include_original_treated_in_pools = false;
    int threads = 1;

    FitOptions options() const {
        FitOptions o;
        o.grid = grid;
        o.fixed_lambda = fixed_lambda;
        o.screening_factor = screening_factor;
        o.sidedness = sidedness;
        o.alpha = alpha;
        o.include_original_treated_in_pools = include_original_treated_in_pools;
        o.threads = threads;
        return o;
    }
};

struct ItsConfig {
    bool enabled = false;
    std::string city; // defaults to the treated unit
    Date window_start = make_date(2017, 1, 1);
    Date window_end = make_date(2020, 3, 15);
    std::vector<std::string> arima_outcomes;
    std::vector<std::string> poisson_outcomes;
    std::vector<int> poisson_ar_lags = {1, 2};
    TreatmentSpec treatment = TreatmentSpec::LevelOnly;
    int max_p = 5;
    int max_q = 5;
    int max_d = 2;
};

struct OutputConfig {
    std::string directory = "out";
    bool emit_smoothed = true;
    double loess_span = 0.07;
};

struct RunConfig {
    StudyDesign design; // block_len_days unused here; outcomes carry their own
    std::map<std::string, int> outcome_block_len;
    DataConfig data;
    FitConfig fit;
    std::vector<Date> in_time_dates;
    std::vector<Date> early_rollin_dates;
    ItsConfig its;
    OutputConfig output;

    StudyDesign design_for(const std::string& outcome) const {
        StudyDesign d = design;
        d.block_len_days = outcome_block_len.at(outcome);
        return d;
    }
};

/// Default temporal aggregation per outcome: weekly for assault and theft,
/// bi-weekly for drug, tri-weekly for robbery and burglary.
inline int default_block_len(const std::string& outcome) {
    if (outcome == "drug") return 14;
    if (outcome == "robbery" || outcome == "burglary") return 21;
    return 7;
}

namespace config_detail {

inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw Error("config: '" + path + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw Error("config: unknown key '" + path + "." + it.key() + "'");
}

inline Date get_date(const nlohmann::json& obj, const std::string& key, const std::string& path) {
    if (!obj.contains(key)) throw Error("config: missing '" + path + "." + key + "'");
    return parse_iso_date(obj.at(key).get<std::string>());
}

inline Sidedness parse_sidedness(const std::string& s) {
    if (s == "one_sided_upper") return Sidedness::OneSidedUpper;
    if (s == "two_sided") return Sidedness::TwoSided;
    throw Error("config: sidedness must be 'one_sided_upper' or 'two_sided'");
}

inline DateFormat parse_date_format(const std::string& s) {
    if (s == "iso") return DateFormat::Iso;
    if (s == "mdy") return DateFormat::MonthDayYear;
    throw Error("config: date_format must be 'iso' or 'mdy'");
}

inline std::vector<Date> parse_date_list(const nlohmann::json& arr, const std::string& path) {
    if (!arr.is_array()) throw Error("config: '" + path + "' must be an array of dates");
    std::vector<Date> out;
    for (const auto& v : arr) out.push_back(parse_iso_date(v.get<std::string>()));
    return out;
}

} // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using namespace config_detail;
    check_keys(j, "",
               {"design", "outcomes", "data", "fit", "placebo_dates", "its", "output"});

    RunConfig cfg;

    // design
    if (!j.contains("design")) throw Error("config: missing 'design'");
    const auto& dj = j.at("design");
    check_keys(dj, "design",
               {"window_start", "intervention_date", "window_end", "treated_unit", "populations"});
    cfg.design.window_start = get_date(dj, "window_start", "design");
    cfg.design.intervention_date = get_date(dj, "intervention_date", "design");
    cfg.design.window_end = get_date(dj, "window_end", "design");
    cfg.design.treated_unit = dj.at("treated_unit").get<std::string>();
    if (!dj.contains("populations")) throw Error("config: missing 'design.populations'");
    for (auto it = dj.at("populations").begin(); it != dj.at("populations").end(); ++it)
        cfg.design.populations[it.key()] = it.value().get<double>();
    cfg.design.block_len_days = 7;
    cfg.design.validate();

    // outcomes
    if (!j.contains("outcomes") || !j.at("outcomes").is_object() || j.at("outcomes").empty())
        throw Error("config: 'outcomes' must name at least one outcome");
    for (auto it = j.at("outcomes").begin(); it != j.at("outcomes").end(); ++it) {
        check_keys(it.value(), "outcomes." + it.key(), {"block_len_days"});
        int len = it.value().contains("block_len_days")
                      ? it.value().at("block_len_days").get<int>()
                      : default_block_len(it.key());
        if (len < 1) throw Error("config: outcomes." + it.key() + ".block_len_days must be >= 1");
        cfg.outcome_block_len[it.key()] = len;
    }

    // data
    if (!j.contains("data")) throw Error("config: missing 'data'");
    const auto& dataj = j.at("data");
    check_keys(dataj, "data",
               {"incidents", "daily_counts", "panels", "datagen", "exclude_cities",
                "discontinuity_threshold", "exclude_flagged"});
    int sources = static_cast<int>(dataj.contains("incidents")) +
                  static_cast<int>(dataj.contains("daily_counts")) +
                  static_cast<int>(dataj.contains("panels")) +
                  static_cast<int>(dataj.contains("datagen"));
    if (sources != 1)
        throw Error("config: data must declare exactly one of incidents/daily_counts/panels/datagen");
    if (dataj.contains("exclude_cities"))
        cfg.data.exclude_cities = dataj.at("exclude_cities").get<std::vector<std::string>>();
    if (dataj.contains("discontinuity_threshold"))
        cfg.data.discontinuity_threshold = dataj.at("discontinuity_threshold").get<double>();
    if (dataj.contains("exclude_flagged"))
        cfg.data.exclude_flagged = dataj.at("exclude_flagged").get<bool>();

    if (dataj.contains("incidents")) {
        cfg.data.source = DataConfig::Source::Incidents;
        const auto& inc = dataj.at("incidents");
        check_keys(inc, "data.incidents", {"files", "category_map"});
        if (!inc.contains("files") || !inc.at("files").is_array() || inc.at("files").empty())
            throw Error("config: data.incidents.files must list at least one file");
        cfg.data.category_map_path = inc.at("category_map").get<std::string>();
        for (const auto& fj : inc.at("files")) {
            check_keys(fj, "data.incidents.files[]",
                       {"path", "city", "city_column", "date_column", "descriptor_columns",
                        "agency_code_column", "date_format"});
            IncidentFileConfig f;
            f.path = fj.at("path").get<std::string>();
            f.schema.date_column = fj.at("date_column").get<std::string>();
            f.schema.descriptor_columns =
                fj.at("descriptor_columns").get<std::vector<std::string>>();
            if (fj.contains("city")) f.schema.fixed_city = fj.at("city").get<std::string>();
            if (fj.contains("city_column"))
                f.schema.city_column = fj.at("city_column").get<std::string>();
            if (f.schema.fixed_city.empty() && f.schema.city_column.empty())
                throw Error("config: each incident file needs 'city' or 'city_column'");
            if (fj.contains("agency_code_column"))
                f.schema.agency_code_column = fj.at("agency_code_column").get<std::string>();
            if (fj.contains("date_format"))
                f.schema.date_format = parse_date_format(fj.at("date_format").get<std::string>());
            cfg.data.incident_files.push_back(std::move(f));
        }
    } else if (dataj.contains("daily_counts")) {
        cfg.data.source = DataConfig::Source::DailyCounts;
        const auto& dc = dataj.at("daily_counts");
        if (dc.is_string()) cfg.data.daily_count_paths.push_back(dc.get<std::string>());
        else cfg.data.daily_count_paths = dc.get<std::vector<std::string>>();
    } else if (dataj.contains("panels")) {
        cfg.data.source = DataConfig::Source::Panels;
        for (auto it = dataj.at("panels").begin(); it != dataj.at("panels").end(); ++it)
            cfg.data.panel_paths[it.key()] = it.value().get<std::string>();
    } else {
        cfg.data.source = DataConfig::Source::Datagen;
        const auto& gj = dataj.at("datagen");
        check_keys(gj, "data.datagen",
                   {"units", "base_daily_rate", "shared_trend_sd", "city_effect_sd", "seed",
                    "window_start", "window_end"});
        DailyCountSpec& spec = cfg.data.datagen;
        if (gj.contains("units")) spec.units = gj.at("units").get<std::vector<std::string>>();
        else {
            spec.units.push_back(cfg.design.treated_unit);
            for (const auto& [city, pop] : cfg.design.populations) {
                (void)pop;
                if (city != cfg.design.treated_unit) spec.units.push_back(city);
            }
        }
        spec.window_start = gj.contains("window_start")
                                ? parse_iso_date(gj.at("window_start").get<std::string>())
                                : cfg.design.window_start;
        spec.window_end = gj.contains("window_end")
                              ? parse_iso_date(gj.at("window_end").get<std::string>())
                              : cfg.design.window_end;
        if (gj.contains("base_daily_rate"))
            spec.base_daily_rate = gj.at("base_daily_rate").get<double>();
        if (gj.contains("shared_trend_sd"))
            spec.shared_trend_sd = gj.at("shared_trend_sd").get<double>();
        if (gj.contains("city_effect_sd"))
            spec.city_effect_sd = gj.at("city_effect_sd").get<double>();
        if (gj.contains("seed")) spec.seed = gj.at("seed").get<std::uint64_t>();
    }

    // fit
    if (j.contains("fit")) {
        const auto& fj = j.at("fit");
        check_keys(fj, "fit",
                   {"lambda_grid", "fixed_lambda", "screening_factor", "sidedness", "alpha",
                    "include_original_treated_in_pools", "threads"});
        if (fj.contains("lambda_grid")) {
            const auto& gj = fj.at("lambda_grid");
            check_keys(gj, "fit.lambda_grid", {"min", "max", "count"});
            if (gj.contains("min")) cfg.fit.grid.min = gj.at("min").get<double>();
            if (gj.contains("max")) cfg.fit.grid.max = gj.at("max").get<double>();
            if (gj.contains("count")) cfg.fit.grid.count = gj.at("count").get<int>();
        }
        if (fj.contains("fixed_lambda")) cfg.fit.fixed_lambda = fj.at("fixed_lambda").get<double>();
        if (fj.contains("screening_factor"))
            cfg.fit.screening_factor = fj.at("screening_factor").get<double>();
        if (fj.contains("sidedness"))
            cfg.fit.sidedness = parse_sidedness(fj.at("sidedness").get<std::string>());
        if (fj.contains("alpha")) cfg.fit.alpha = fj.at("alpha").get<double>();
        if (fj.contains("include_original_treated_in_pools"))
            cfg.fit.include_original_treated_in_pools =
                fj.at("include_original_treated_in_pools").get<bool>();
        if (fj.contains("threads")) cfg.fit.threads = fj.at("threads").get<int>();
        if (cfg.fit.alpha <= 0.0 || cfg.fit.alpha >= 1.0)
            throw Error("config: fit.alpha must lie in (0,1)");
        if (cfg.fit.screening_factor <= 0.0)
            throw Error("config: fit.screening_factor must be positive");
    }

    // placebo dates
    cfg.in_time_dates = {make_date(2019, 1, 1), make_date(2019, 3, 1), make_date(2019, 6, 1)};
    cfg.early_rollin_dates = {make_date(2019, 9, 1), make_date(2019, 10, 1),
                              make_date(2019, 11, 1)};
    if (j.contains("placebo_dates")) {
        const auto& pj = j.at("placebo_dates");
        check_keys(pj, "placebo_dates", {"in_time", "early_rollin"});
        if (pj.contains("in_time"))
            cfg.in_time_dates = config_detail::parse_date_list(pj.at("in_time"), "placebo_dates.in_time");
        if (pj.contains("early_rollin"))
            cfg.early_rollin_dates =
                config_detail::parse_date_list(pj.at("early_rollin"), "placebo_dates.early_rollin");
    }

    // its
    if (j.contains("its")) {
        const auto& ij = j.at("its");
        check_keys(ij, "its",
                   {"enabled", "city", "window_start", "window_end", "arima_outcomes",
                    "poisson_outcomes", "poisson_ar_lags", "treatment_spec", "max_p", "max_q",
                    "max_d"});
        if (ij.contains("enabled")) cfg.its.enabled = ij.at("enabled").get<bool>();
        cfg.its.city = ij.contains("city") ? ij.at("city").get<std::string>()
                                           : cfg.design.treated_unit;
        if (ij.contains("window_start"))
            cfg.its.window_start = parse_iso_date(ij.at("window_start").get<std::string>());
        if (ij.contains("window_end"))
            cfg.its.window_end = parse_iso_date(ij.at("window_end").get<std::string>());
        if (ij.contains("arima_outcomes"))
            cfg.its.arima_outcomes = ij.at("arima_outcomes").get<std::vector<std::string>>();
        if (ij.contains("poisson_outcomes"))
            cfg.its.poisson_outcomes = ij.at("poisson_outcomes").get<std::vector<std::string>>();
        if (ij.contains("poisson_ar_lags"))
            cfg.its.poisson_ar_lags = ij.at("poisson_ar_lags").get<std::vector<int>>();
        if (ij.contains("treatment_spec")) {
            std::string t = ij.at("treatment_spec").get<std::string>();
            if (t == "level_only") cfg.its.treatment = TreatmentSpec::LevelOnly;
            else if (t == "level_and_slope") cfg.its.treatment = TreatmentSpec::LevelAndSlope;
            else throw Error("config: its.treatment_spec must be level_only or level_and_slope");
        }
        if (ij.contains("max_p")) cfg.its.max_p = ij.at("max_p").get<int>();
        if (ij.contains("max_q")) cfg.its.max_q = ij.at("max_q").get<int>();
        if (ij.contains("max_d")) cfg.its.max_d = ij.at("max_d").get<int>();
    } else {
        cfg.its.city = cfg.design.treated_unit;
    }

    // output
    if (j.contains("output")) {
        const auto& oj = j.at("output");
        check_keys(oj, "output", {"directory", "emit_smoothed", "loess_span"});
        if (oj.contains("directory")) cfg.output.directory = oj.at("directory").get<std::string>();
        if (oj.contains("emit_smoothed"))
            cfg.output.emit_smoothed = oj.at("emit_smoothed").get<bool>();
        if (oj.contains("loess_span")) cfg.output.loess_span = oj.at("loess_span").get<double>();
        if (cfg.output.loess_span <= 0.0 || cfg.output.loess_span > 1.0)
            throw Error("config: output.loess_span must lie in (0,1]");
    }

    // The datagen source must produce every category the run touches,
    // including ITS-only outcomes such as a sparse homicide series.
    if (cfg.data.source == DataConfig::Source::Datagen) {
        std::set<std::string> wanted;
        for (const auto& [outcome, len] : cfg.outcome_block_len) {
            (void)len;
            wanted.insert(outcome);
        }
        if (cfg.its.enabled) {
            for (const auto& o : cfg.its.arima_outcomes) wanted.insert(o);
            for (const auto& o : cfg.its.poisson_outcomes) wanted.insert(o);
        }
        cfg.data.datagen.outcomes.assign(wanted.begin(), wanted.end());
    }

    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("config parse error in " + path + ": " + e.what());
    }
    try {
        return parse_run_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw Error("config error in " + path + ": " + e.what());
    }
}

} // namespace panelsynth

#endif
