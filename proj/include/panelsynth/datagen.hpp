#ifndef PANELSYNTH_DATAGEN_HPP
#define PANELSYNTH_DATAGEN_HPP

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "panelsynth/csv.hpp"
#include "panelsynth/inference.hpp"
#include "panelsynth/panel.hpp"
#include "panelsynth/prng.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Factor-model panels with known ground truth
// ---------------------------------------------------------------------------

/// Loading geometry for the generated units.
///  - Generic: all loadings independent; the treated unit is not representable.
///  - SpannedTreated: donors linearly independent, treated loading is a
///    sum-to-one combination of theirs, so the treated unit is exactly
///    representable by the donor pool (lambda = 0 recovers it).
///  - IdenticalUnits: every unit shares one series; any sum-to-one weighting
///    reproduces it, so placebo fits are exact too. Implies zero noise.
enum class LoadingMode { Generic, SpannedTreated, IdenticalUnits };

struct FactorModelSpec {
    int n_units = 6; // treated + donors
    int n_blocks = 40;
    int t0 = 30;
    int n_factors = 3;
    double noise_sd = 0.0;
    double injected_effect = 0.0;
    std::uint64_t seed = 1;
    LoadingMode mode = LoadingMode::Generic;
    Eigen::MatrixXd loadings; // optional: n_units x n_factors, treated row 0
    Eigen::MatrixXd factors;  // optional: n_blocks x n_factors

    void validate() const {
        if (n_units < 3) throw Error("factor model needs at least 3 units");
        if (t0 < 2 || t0 >= n_blocks) throw Error("factor model needs 2 <= t0 < n_blocks");
        if (n_factors < 1) throw Error("factor model needs at least one factor");
        if (noise_sd < 0.0) throw Error("noise_sd must be nonnegative");
        if (mode == LoadingMode::IdenticalUnits && noise_sd != 0.0)
            throw Error("identical-units mode requires zero noise");
    }
};

struct GeneratedPanel {
    Panel panel;
    double true_effect = 0.0;
};

/// Y_jt = loadings_j . factors_t + noise, with the injected effect added to
/// the treated unit's post blocks. Same seed, bit-identical panel.
inline GeneratedPanel generate_panel(const FactorModelSpec& spec_in) {
    FactorModelSpec spec = spec_in;
    spec.validate();
    const int n = spec.n_units;
    const int J = n - 1;
    const int T = spec.n_blocks;
    SplitMix64 rng(spec.seed);

    int f = spec.n_factors;
    if (spec.mode == LoadingMode::SpannedTreated) f = J;
    if (spec.mode == LoadingMode::IdenticalUnits) f = 1;

    Eigen::MatrixXd loadings;
    if (spec.loadings.rows() == n && spec.loadings.cols() == f) {
        loadings = spec.loadings;
    } else {
        loadings.resize(n, f);
        switch (spec.mode) {
        case LoadingMode::Generic:
            for (int j = 0; j < n; ++j)
                for (int c = 0; c < f; ++c) loadings(j, c) = rng.next_normal();
            break;
        case LoadingMode::SpannedTreated: {
            // Donor loadings (1, u_j) with generic u keep the donor block
            // matrix full rank; sum-to-one mixing keeps the first coordinate 1.
            for (int j = 1; j < n; ++j) {
                loadings(j, 0) = 1.0;
                for (int c = 1; c < f; ++c) loadings(j, c) = rng.next_normal();
            }
            Eigen::VectorXd mix(J);
            double total = 0.0;
            for (int j = 0; j < J; ++j) {
                mix(j) = 0.5 + rng.next_uniform();
                total += mix(j);
            }
            mix /= total;
            loadings.row(0).setZero();
            for (int j = 0; j < J; ++j) loadings.row(0) += mix(j) * loadings.row(j + 1);
            break;
        }
        case LoadingMode::IdenticalUnits:
            loadings.setOnes();
            break;
        }
    }

    Eigen::MatrixXd factors;
    if (spec.factors.rows() == T && spec.factors.cols() == f) {
        factors = spec.factors;
    } else {
        factors.resize(T, f);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < f; ++c) factors(t, c) = rng.next_normal();
    }

    Eigen::MatrixXd values = loadings * factors.transpose(); // n x T
    if (spec.noise_sd > 0.0)
        for (int j = 0; j < n; ++j)
            for (int t = 0; t < T; ++t) values(j, t) += spec.noise_sd * rng.next_normal();
    for (int t = spec.t0; t < T; ++t) values(0, t) += spec.injected_effect;

    GeneratedPanel out;
    out.true_effect = spec.injected_effect;
    Panel& panel = out.panel;
    for (int j = 0; j < n; ++j) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "u%02d", j + 1);
        panel.units.emplace_back(buf);
        panel.populations[buf] = 1.0;
    }
    panel.block_len_days = 7;
    panel.t0 = spec.t0;
    Date start = make_date(2018, 1, 1);
    for (int t = 0; t < T; ++t) panel.block_starts.push_back(start.plus_days(7 * t));
    panel.raw_counts = values;
    panel.Y.resize(n, T);
    for (int j = 0; j < n; ++j) {
        double pre_mean = values.row(j).head(spec.t0).mean();
        for (int t = 0; t < T; ++t) panel.Y(j, t) = values(j, t) - pre_mean;
    }
    panel.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic daily counts (full-pipeline demos and fixtures)
// ---------------------------------------------------------------------------

struct DailyCountSpec {
    std::vector<std::string> units; // first entry is the treated unit
    Date window_start;
    Date window_end;
    std::vector<std::string> outcomes; // level-2 category names
    double base_daily_rate = 25.0;
    double shared_trend_sd = 0.05; // common log-rate random walk step
    double city_effect_sd = 0.3;
    std::uint64_t seed = 1;
};

/// Poisson daily counts around a shared seasonal log-rate plus a slowly moving
/// common trend, so cross-city co-movement exists for the weight program to
/// exploit. Deterministic in the seed.
inline std::map<std::string, OutcomeDaily> generate_daily_counts(const DailyCountSpec& spec) {
    if (spec.units.size() < 4) throw Error("daily-count generator needs at least 4 units");
    if (spec.window_end < spec.window_start) throw Error("daily-count window is empty");
    const int n_days = spec.window_start.days_until(spec.window_end) + 1;
    SplitMix64 rng(spec.seed);

    std::map<std::string, OutcomeDaily> out;
    for (const std::string& outcome : spec.outcomes) {
        Level2 category = level2_from_string(outcome);
        double outcome_scale = 0.5 + rng.next_uniform();

        std::vector<double> shared(static_cast<std::size_t>(n_days));
        double walk = 0.0;
        for (int t = 0; t < n_days; ++t) {
            walk = 0.98 * walk + spec.shared_trend_sd * rng.next_normal();
            shared[static_cast<std::size_t>(t)] = walk;
        }

        OutcomeDaily daily;
        for (const std::string& unit : spec.units) {
            double city_level = std::exp(spec.city_effect_sd * rng.next_normal());
            DailyCountSeries series;
            series.city_id = unit;
            series.category = category;
            series.start = spec.window_start;
            series.counts.resize(static_cast<std::size_t>(n_days));
            for (int t = 0; t < n_days; ++t) {
                Date d = spec.window_start.plus_days(t);
                int doy = make_date(to_civil(d).year, 1, 1).days_until(d);
                double season = 1.0 + 0.25 * std::sin(2.0 * M_PI * doy / 365.25);
                double rate = spec.base_daily_rate * outcome_scale * city_level * season *
                              std::exp(shared[static_cast<std::size_t>(t)]);
                series.counts[static_cast<std::size_t>(t)] = rng.next_poisson(rate);
            }
            daily[unit] = std::move(series);
        }
        out[outcome] = std::move(daily);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic incident fixtures
// ---------------------------------------------------------------------------

struct IncidentFixtureSpec {
    int n_rows = 10000;
    std::vector<std::string> cities = {"Alphaville", "Betatown", "Gammaport"};
    Date window_start;
    Date window_end;
    double unmapped_fraction = 0.02;
    double malformed_fraction = 0.005;
    double out_of_window_fraction = 0.01;
    std::uint64_t seed = 1;
};

/// Rows for a synthetic incident CSV: city, date, offense text, law class,
/// agency text. Descriptors are drawn from a pool the bundled taxonomy maps,
/// plus a sliver of unmappable and malformed rows for audit exercises.
inline std::vector<std::vector<std::string>> generate_incident_rows(const IncidentFixtureSpec& spec) {
    static const std::vector<std::pair<const char*, const char*>> mapped_pool = {
        {"Murder & Non-Negl Manslaughter", "homicide"},
        {"Robbery, Open Area Unclassified", "robbery"},
        {"Robbery, Bodega/Convenience Store", "robbery"},
        {"Felony Assault", "assault"},
        {"Assault 2,1,Unclassified", "assault"},
        {"Burglary, Truck Day", "burglary"},
        {"Burglary, Commercial, Night", "burglary"},
        {"Larceny, Grand Of Auto", "theft"},
        {"Larceny,Petit By Check Use", "theft"},
        {"Larceny,Petit From Store-Shopl", "theft"},
        {"Theft Of Services, Unclassifie", "theft"},
        {"Controlled Substance, Sale 4", "drug"},
        {"Controlled Substance, Possessi", "drug"},
        {"Marijuana, Possession 4 & 5", "drug"},
        {"Drug Paraphernalia, Possesse", "drug"},
    };
    static const std::vector<const char*> unmapped_pool = {
        "Jostling", "Loitering, Unclassified", "Fireworks Violation"};

    if (spec.window_end < spec.window_start) throw Error("incident fixture window is empty");
    const int span_days = spec.window_start.days_until(spec.window_end) + 1;
    SplitMix64 rng(spec.seed);
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(spec.n_rows));

    for (int i = 0; i < spec.n_rows; ++i) {
        const std::string& city =
            spec.cities[static_cast<std::size_t>(rng.next_u64() % spec.cities.size())];
        double u = rng.next_uniform();
        std::string date_text;
        if (u < spec.malformed_fraction) {
            date_text = "13/45/2019"; // not a calendar date
        } else if (u < spec.malformed_fraction + spec.out_of_window_fraction) {
            date_text = to_iso(spec.window_end.plus_days(1 + static_cast<int>(rng.next_u64() % 60)));
        } else {
            date_text = to_iso(spec.window_start.plus_days(static_cast<int>(rng.next_u64() %
                                                                            static_cast<std::uint64_t>(span_days))));
        }
        std::string offense;
        if (rng.next_uniform() < spec.unmapped_fraction)
            offense = unmapped_pool[static_cast<std::size_t>(rng.next_u64() % unmapped_pool.size())];
        else
            offense = mapped_pool[static_cast<std::size_t>(rng.next_u64() % mapped_pool.size())].first;
        const char* law = rng.next_uniform() < 0.6 ? "FELONY" : "MISDEMEANOR";
        rows.push_back({city, date_text, offense, law, offense});
    }
    return rows;
}

inline void write_incident_fixture(const std::string& path, const IncidentFixtureSpec& spec) {
    csv::Writer w(path);
    w.write_row({"city", "date", "offense_desc", "law_class", "pd_desc"});
    for (const auto& row : generate_incident_rows(spec)) w.write_row(row);
}

} // namespace panelsynth

#endif
