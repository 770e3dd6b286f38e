#ifndef PANELSYNTH_PANEL_HPP
#define PANELSYNTH_PANEL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "panelsynth/calendar.hpp"
#include "panelsynth/common.hpp"
#include "panelsynth/csv.hpp"
#include "panelsynth/ingest.hpp"

#include <json.hpp>

namespace panelsynth {

// ---------------------------------------------------------------------------
// Study design
// ---------------------------------------------------------------------------

struct StudyDesign {
    Date window_start;
    Date intervention_date;
    Date window_end;
    int block_len_days = 7;
    std::string treated_unit;
    std::map<std::string, double> populations;

    void validate() const {
        if (!(window_start < intervention_date))
            throw Error("study design: window_start must precede intervention_date");
        if (window_end < intervention_date)
            throw Error("study design: intervention_date must not exceed window_end");
        if (block_len_days < 1) throw Error("study design: block_len_days must be >= 1");
        if (treated_unit.empty()) throw Error("study design: treated_unit is empty");
        for (const auto& [city, pop] : populations)
            if (pop <= 0.0) throw Error("study design: nonpositive population for " + city);
    }

    double population_of(const std::string& city) const {
        auto it = populations.find(city);
        if (it == populations.end()) throw Error("no population configured for unit " + city);
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Block aggregation
// ---------------------------------------------------------------------------

struct BlockSeries {
    std::vector<Date> block_starts; // first pre block first; intervention_date starts block T0
    std::vector<double> values;
    int t0 = 0; // number of pre-intervention blocks

    int total_blocks() const { return static_cast<int>(values.size()); }
};

/// Sums daily counts into blocks of `design.block_len_days`, anchored so that
/// the intervention date begins the first post block. Partial blocks at either
/// end of the window are dropped, never padded.
///
/// `min_pre_blocks`/`min_post_blocks` guard against panels too short to fit;
/// the pipeline default of 8 pre blocks can be relaxed for small experiments.
inline BlockSeries aggregate_blocks(const DailyCountSeries& daily, const StudyDesign& design,
                                    int min_pre_blocks = 8, int min_post_blocks = 1) {
    design.validate();
    if (design.window_start < daily.start || daily.end() < design.window_end)
        throw Error("daily series for " + daily.city_id + " does not cover the study window");

    const int len = design.block_len_days;
    const int pre_days = design.window_start.days_until(design.intervention_date);
    const int post_days = design.intervention_date.days_until(design.window_end) + 1;
    const int n_pre = pre_days / len;
    const int n_post = post_days / len;
    if (n_pre < min_pre_blocks)
        throw Error("only " + std::to_string(n_pre) + " complete pre blocks (need " +
                    std::to_string(min_pre_blocks) + ") for " + daily.city_id);
    if (n_post < min_post_blocks)
        throw Error("only " + std::to_string(n_post) + " complete post blocks (need " +
                    std::to_string(min_post_blocks) + ") for " + daily.city_id);

    BlockSeries out;
    out.t0 = n_pre;
    Date first_block = design.intervention_date.plus_days(-n_pre * len);
    for (int b = 0; b < n_pre + n_post; ++b) {
        Date bs = first_block.plus_days(b * len);
        double sum = 0.0;
        for (int i = 0; i < len; ++i) {
            int idx = daily.start.days_until(bs.plus_days(i));
            sum += static_cast<double>(daily.counts[static_cast<std::size_t>(idx)]);
        }
        out.block_starts.push_back(bs);
        out.values.push_back(sum);
    }
    return out;
}

/// Events per person per block.
inline std::vector<double> per_capita(std::span<const double> counts, double population) {
    if (population <= 0.0) throw Error("per-capita normalization needs population > 0");
    std::vector<double> out(counts.begin(), counts.end());
    for (double& v : out) v /= population;
    return out;
}

/// Subtracts the pre-period mean (first t0 entries) from the whole series.
inline std::vector<double> demean_pre(std::span<const double> values, int t0) {
    if (t0 < 1 || static_cast<std::size_t>(t0) > values.size())
        throw Error("demean_pre: t0 out of range");
    double m = 0.0;
    for (int t = 0; t < t0; ++t) m += values[static_cast<std::size_t>(t)];
    m /= static_cast<double>(t0);
    std::vector<double> out(values.begin(), values.end());
    for (double& v : out) v -= m;
    return out;
}

// ---------------------------------------------------------------------------
// Panel
// ---------------------------------------------------------------------------

/// Rectangular unit-by-block panel of transformed outcomes. Row 0 is the
/// treated unit. Y holds per-capita, pre-demeaned rates; raw_counts holds the
/// untransformed block sums for reporting.
struct Panel {
    std::vector<std::string> units; // treated first
    std::vector<Date> block_starts;
    int block_len_days = 0;
    int t0 = 0;
    Eigen::MatrixXd Y;          // units x blocks
    Eigen::MatrixXd raw_counts; // same shape
    std::map<std::string, double> populations;

    int n_units() const { return static_cast<int>(units.size()); }
    int n_donors() const { return n_units() - 1; }
    int total_blocks() const { return static_cast<int>(block_starts.size()); }
    int n_post() const { return total_blocks() - t0; }

    const std::string& treated_unit() const { return units.front(); }

    void validate() const {
        if (units.size() < 2) throw Error("panel needs a treated unit and at least one donor");
        if (Y.rows() != n_units() || Y.cols() != total_blocks())
            throw Error("panel Y shape does not match units/blocks");
        if (raw_counts.rows() != Y.rows() || raw_counts.cols() != Y.cols())
            throw Error("panel raw_counts shape does not match Y");
        if (t0 < 1 || t0 >= total_blocks())
            throw Error("panel needs at least one pre and one post block");
        if (!Y.allFinite()) throw Error("panel contains non-finite cells");
        for (int j = 0; j < n_units(); ++j) {
            double m = Y.row(j).head(t0).mean();
            if (std::abs(m) > 1e-12)
                throw Error("unit " + units[static_cast<std::size_t>(j)] +
                            " is not pre-demeaned (mean " + detail::format_double(m) + ")");
        }
    }
};

/// Assembles a Panel from per-unit block series: per-capita normalization,
/// pre-period demeaning, treated unit moved to row 0.
inline Panel assemble_panel(const std::map<std::string, BlockSeries>& by_unit,
                            const StudyDesign& design) {
    design.validate();
    auto treated_it = by_unit.find(design.treated_unit);
    if (treated_it == by_unit.end())
        throw Error("panel is missing the treated unit " + design.treated_unit);

    const BlockSeries& ref = treated_it->second;
    Panel panel;
    panel.units.push_back(design.treated_unit);
    for (const auto& [unit, series] : by_unit) {
        if (unit == design.treated_unit) continue;
        if (series.total_blocks() != ref.total_blocks() || series.t0 != ref.t0)
            throw Error("unit " + unit + " has mismatched block count");
        panel.units.push_back(unit);
    }
    panel.block_starts = ref.block_starts;
    panel.block_len_days = design.block_len_days;
    panel.t0 = ref.t0;
    panel.populations = design.populations;

    const int n = panel.n_units();
    const int T = ref.total_blocks();
    panel.Y.resize(n, T);
    panel.raw_counts.resize(n, T);
    for (int j = 0; j < n; ++j) {
        const std::string& unit = panel.units[static_cast<std::size_t>(j)];
        const BlockSeries& series = by_unit.at(unit);
        std::vector<double> rates = per_capita(series.values, design.population_of(unit));
        std::vector<double> demeaned = demean_pre(rates, series.t0);
        for (int t = 0; t < T; ++t) {
            panel.Y(j, t) = demeaned[static_cast<std::size_t>(t)];
            panel.raw_counts(j, t) = series.values[static_cast<std::size_t>(t)];
        }
    }
    panel.validate();
    return panel;
}

/// Restricted view materialized as a new Panel: `treated` names the unit for
/// row 0, `donors` the pool. Y values are copied bit-identically (demeaning is
/// per unit, so dropping units does not change the rest).
inline Panel reindex_panel(const Panel& src, const std::string& treated,
                           const std::vector<std::string>& donors) {
    auto row_of = [&](const std::string& unit) {
        for (int j = 0; j < src.n_units(); ++j)
            if (src.units[static_cast<std::size_t>(j)] == unit) return j;
        throw Error("unit " + unit + " not in panel");
    };
    Panel out;
    out.units.push_back(treated);
    for (const auto& d : donors) {
        if (d == treated) throw Error("donor pool cannot contain the treated unit");
        out.units.push_back(d);
    }
    out.block_starts = src.block_starts;
    out.block_len_days = src.block_len_days;
    out.t0 = src.t0;
    out.populations = src.populations;
    out.Y.resize(out.n_units(), src.total_blocks());
    out.raw_counts.resize(out.n_units(), src.total_blocks());
    for (int j = 0; j < out.n_units(); ++j) {
        int sj = row_of(out.units[static_cast<std::size_t>(j)]);
        out.Y.row(j) = src.Y.row(sj);
        out.raw_counts.row(j) = src.raw_counts.row(sj);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Panel files: wide CSV of Y plus JSON metadata sidecar
// ---------------------------------------------------------------------------

inline void write_panel(const Panel& panel, const std::string& base_path) {
    {
        csv::Writer w(base_path + ".csv");
        std::vector<std::string> header = {"block_start"};
        for (const auto& u : panel.units) header.push_back(u);
        w.write_row(header);
        for (int t = 0; t < panel.total_blocks(); ++t) {
            std::vector<std::string> row = {to_iso(panel.block_starts[static_cast<std::size_t>(t)])};
            for (int j = 0; j < panel.n_units(); ++j)
                row.push_back(detail::format_double(panel.Y(j, t)));
            w.write_row(row);
        }
    }
    {
        csv::Writer w(base_path + "_raw.csv");
        std::vector<std::string> header = {"block_start"};
        for (const auto& u : panel.units) header.push_back(u);
        w.write_row(header);
        for (int t = 0; t < panel.total_blocks(); ++t) {
            std::vector<std::string> row = {to_iso(panel.block_starts[static_cast<std::size_t>(t)])};
            for (int j = 0; j < panel.n_units(); ++j)
                row.push_back(detail::format_double(panel.raw_counts(j, t)));
            w.write_row(row);
        }
    }
    nlohmann::json meta;
    meta["treated_unit"] = panel.treated_unit();
    meta["units"] = panel.units;
    meta["t0"] = panel.t0;
    meta["block_len_days"] = panel.block_len_days;
    nlohmann::json pops = nlohmann::json::object();
    for (const auto& [city, pop] : panel.populations) pops[city] = pop;
    meta["populations"] = pops;
    std::ofstream out(base_path + ".meta.json");
    if (!out) throw Error("cannot write panel metadata: " + base_path + ".meta.json");
    out << meta.dump(2) << "\n";
}

inline Panel read_panel(const std::string& base_path) {
    std::ifstream meta_in(base_path + ".meta.json");
    if (!meta_in) throw Error("cannot open panel metadata: " + base_path + ".meta.json");
    nlohmann::json meta = nlohmann::json::parse(meta_in);

    Panel panel;
    panel.t0 = meta.at("t0").get<int>();
    panel.block_len_days = meta.at("block_len_days").get<int>();
    panel.units = meta.at("units").get<std::vector<std::string>>();
    if (panel.units.empty() || panel.units.front() != meta.at("treated_unit").get<std::string>())
        throw Error("panel metadata: treated unit must be first in units");
    for (auto it = meta.at("populations").begin(); it != meta.at("populations").end(); ++it)
        panel.populations[it.key()] = it.value().get<double>();

    csv::Table values = csv::Table::read_file(base_path + ".csv");
    const int T = static_cast<int>(values.n_rows());
    const int n = static_cast<int>(panel.units.size());
    panel.Y.resize(n, T);
    panel.raw_counts = Eigen::MatrixXd::Zero(n, T);
    for (int t = 0; t < T; ++t) {
        panel.block_starts.push_back(parse_iso_date(values.cell(static_cast<std::size_t>(t), "block_start")));
        for (int j = 0; j < n; ++j)
            panel.Y(j, t) = detail::parse_double(
                values.cell(static_cast<std::size_t>(t), panel.units[static_cast<std::size_t>(j)]),
                "panel " + base_path);
    }
    std::ifstream raw_probe(base_path + "_raw.csv");
    if (raw_probe.good()) {
        raw_probe.close();
        csv::Table raw = csv::Table::read_file(base_path + "_raw.csv");
        if (static_cast<int>(raw.n_rows()) != T) throw Error("raw panel file has mismatched rows");
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < n; ++j)
                panel.raw_counts(j, t) = detail::parse_double(
                    raw.cell(static_cast<std::size_t>(t), panel.units[static_cast<std::size_t>(j)]),
                    "raw panel " + base_path);
    }
    panel.validate();
    return panel;
}

} // namespace panelsynth

#endif
