#ifndef PANELSYNTH_INFERENCE_HPP
#define PANELSYNTH_INFERENCE_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "panelsynth/synth.hpp"

namespace panelsynth {

enum class Sidedness { OneSidedUpper, TwoSided };

inline std::string to_string(Sidedness s) {
    return s == Sidedness::OneSidedUpper ? "one_sided_upper" : "two_sided";
}

// ---------------------------------------------------------------------------
// Fit pipeline options
// ---------------------------------------------------------------------------

/// How one synthetic-control fit is produced. When `fixed_lambda` is unset the
/// penalty is tuned on the grid; panels shorter than 10 pre blocks cannot be
/// tuned and require a fixed lambda.
struct FitOptions {
    std::optional<double> fixed_lambda;
    LambdaGrid grid{};
    double screening_factor = 7.5;
    Sidedness sidedness = Sidedness::OneSidedUpper;
    bool include_original_treated_in_pools = false;
    double alpha = 0.1;
    double lower_pct = 5.0;
    double upper_pct = 95.0;
    int threads = 1;
};

/// One complete synthetic-control fit: tuned (or fixed) lambda, weights,
/// counterfactual and effect statistics.
///
/// Fits run on a scale-normalized copy of the panel (all pre-period cells
/// divided by their root-mean-square gamma) and results are mapped back to
/// panel units. The lambda grid therefore always acts at unit panel scale,
/// which makes every downstream rank statistic exactly invariant under a
/// uniform positive rescaling of the data.
struct UnitFit {
    WeightSolution solution;
    CounterfactualSeries series;
    EffectEstimate effect;
    std::optional<TuningTrace> tuning;
    double scale = 1.0; // gamma used for normalization
};

inline double panel_pre_scale(const Panel& panel) {
    // Treated row first, then donors by unit id, so the sum does not depend on
    // the panel's donor row order.
    std::vector<int> rows = synth_detail::canonical_donor_rows(panel);
    rows.insert(rows.begin(), 0);
    double ss = 0.0;
    for (int row : rows)
        for (int t = 0; t < panel.t0; ++t) ss += panel.Y(row, t) * panel.Y(row, t);
    double gamma = std::sqrt(ss / (static_cast<double>(panel.n_units()) * panel.t0));
    return gamma > 0.0 ? gamma : 1.0;
}

inline UnitFit fit_unit(const Panel& panel, const FitOptions& opts, double population = 0.0) {
    Panel scaled = panel;
    const double gamma = panel_pre_scale(panel);
    scaled.Y /= gamma;

    UnitFit fit;
    fit.scale = gamma;
    double lambda;
    if (opts.fixed_lambda) {
        lambda = *opts.fixed_lambda;
    } else {
        fit.tuning = tune_lambda(scaled, opts.grid);
        lambda = fit.tuning->best_lambda;
    }
    WeightSolution w = solve_weights(scaled, lambda);
    // Back to panel units: weights are scale-free, additive terms are not.
    w.intercept *= gamma;
    w.pre_rmse *= gamma;
    if (fit.tuning) w.validation_rmse = fit.tuning->best_rmse * gamma;
    fit.solution = w;
    fit.series = predict_counterfactual(panel, w);
    fit.effect = estimate_ate(fit.series, panel.t0, population);
    return fit;
}

// ---------------------------------------------------------------------------
// Unit placebos
// ---------------------------------------------------------------------------

struct PlaceboEntry {
    std::string unit;
    double pre_rmse = 0.0;
    double ate = 0.0;
    double rmse_ratio = 0.0;
    bool rmse_ratio_defined = true;
    bool screened = false;
};

struct PlaceboDistribution {
    std::vector<PlaceboEntry> entries; // sorted by unit id
    double screening_factor = 7.5;
    EffectEstimate treated_stats;
    int n_retained = 0;

    double avg_retained_pre_rmse() const {
        double s = 0.0;
        int n = 0;
        for (const auto& e : entries)
            if (!e.screened) {
                s += e.pre_rmse;
                ++n;
            }
        return n > 0 ? s / n : 0.0;
    }

    std::vector<double> retained_ates() const {
        std::vector<double> out;
        for (const auto& e : entries)
            if (!e.screened) out.push_back(e.ate);
        return out;
    }

    std::vector<double> retained_ratios() const {
        std::vector<double> out;
        for (const auto& e : entries)
            if (!e.screened) out.push_back(e.rmse_ratio);
        return out;
    }
};

namespace inference_detail {

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::vector<std::string> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&, t] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    errors[static_cast<std::size_t>(t)] = e.what();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (!e.empty()) throw Error(e);
}

} // namespace inference_detail

/// Reassigns each donor as the treated unit and reruns the full fit pipeline
/// (including lambda re-tuning) against the remaining pool. The originally
/// treated unit is excluded from placebo pools by default because its post
/// period carries the intervention. Placebos whose pre-period RMSE exceeds
/// screening_factor times the treated fit's are flagged, not dropped.
inline PlaceboDistribution unit_placebos(const Panel& panel, const UnitFit& treated_fit,
                                         const FitOptions& opts) {
    if (panel.n_donors() < 3) throw Error("placebo analysis needs at least 3 donors");

    std::vector<std::string> donors(panel.units.begin() + 1, panel.units.end());
    std::vector<PlaceboEntry> entries(donors.size());

    inference_detail::parallel_for(
        static_cast<int>(donors.size()), opts.threads, [&](int i) {
            const std::string& unit = donors[static_cast<std::size_t>(i)];
            std::vector<std::string> pool;
            if (opts.include_original_treated_in_pools) pool.push_back(panel.treated_unit());
            for (const auto& other : donors)
                if (other != unit) pool.push_back(other);
            Panel placebo_panel = reindex_panel(panel, unit, pool);
            UnitFit fit = fit_unit(placebo_panel, opts);
            PlaceboEntry e;
            e.unit = unit;
            e.pre_rmse = fit.solution.pre_rmse;
            e.ate = fit.effect.ate_per_capita;
            e.rmse_ratio = fit.effect.rmse_ratio;
            e.rmse_ratio_defined = fit.effect.rmse_ratio_defined;
            entries[static_cast<std::size_t>(i)] = e;
        });

    PlaceboDistribution dist;
    dist.screening_factor = opts.screening_factor;
    dist.treated_stats = treated_fit.effect;
    dist.entries = std::move(entries);
    std::sort(dist.entries.begin(), dist.entries.end(),
              [](const PlaceboEntry& a, const PlaceboEntry& b) { return a.unit < b.unit; });
    const double cutoff = opts.screening_factor * treated_fit.solution.pre_rmse;
    for (auto& e : dist.entries) {
        e.screened = e.pre_rmse > cutoff;
        if (!e.screened) ++dist.n_retained;
    }
    if (dist.n_retained == 0)
        throw Error("every placebo unit was screened out; no inference possible");
    return dist;
}

// ---------------------------------------------------------------------------
// Empirical p-values and effect bounds
// ---------------------------------------------------------------------------

/// Plain empirical proportion with inclusive ties and denominator n_retained;
/// no +1 correction, so a strictly extremal statistic yields p = 0.
inline double p_value_ate(const PlaceboDistribution& dist, double tau_hat, Sidedness sidedness) {
    if (dist.n_retained < 1) throw Error("p-value needs at least one retained placebo");
    int count = 0;
    for (const auto& e : dist.entries) {
        if (e.screened) continue;
        bool extreme = sidedness == Sidedness::OneSidedUpper ? e.ate >= tau_hat
                                                             : std::abs(e.ate) >= std::abs(tau_hat);
        if (extreme) ++count;
    }
    return static_cast<double>(count) / static_cast<double>(dist.n_retained);
}

inline double p_value_rmse(const PlaceboDistribution& dist, double r_treated) {
    if (dist.n_retained < 1) throw Error("p-value needs at least one retained placebo");
    int count = 0;
    for (const auto& e : dist.entries)
        if (!e.screened && e.rmse_ratio >= r_treated) ++count;
    return static_cast<double>(count) / static_cast<double>(dist.n_retained);
}

/// Percentile bounds of the retained placebo ATE distribution.
inline std::pair<double, double> effect_bounds(const PlaceboDistribution& dist,
                                               double low_pct = 5.0, double high_pct = 95.0) {
    std::vector<double> ates = dist.retained_ates();
    if (ates.empty()) throw Error("effect bounds need at least one retained placebo");
    return {stats::percentile(ates, low_pct), stats::percentile(ates, high_pct)};
}

// ---------------------------------------------------------------------------
// Holm-Sidak step-down correction
// ---------------------------------------------------------------------------

enum class Decision { Reject, FailToReject };

struct AdjustedPValues {
    std::map<std::string, double> raw;
    std::map<std::string, double> adjusted;
    std::map<std::string, Decision> decisions;
    double alpha = 0.1;
};

/// adjusted_(i) = max_{k<=i} 1 - (1 - p_(k))^(m-k+1) over the ascending sort,
/// clamped to [0,1]; rejects where adjusted <= alpha.
inline AdjustedPValues holm_sidak(const std::map<std::string, double>& raw, double alpha) {
    const std::size_t m = raw.size();
    if (m < 1 || m > 64) throw Error("Holm-Sidak expects between 1 and 64 hypotheses");
    for (const auto& [name, p] : raw)
        if (!(p >= 0.0 && p <= 1.0))
            throw Error("p-value for " + name + " outside [0,1]");

    std::vector<std::pair<std::string, double>> sorted(raw.begin(), raw.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });

    AdjustedPValues out;
    out.raw = raw;
    out.alpha = alpha;
    double running_max = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double exponent = static_cast<double>(m - i);
        double adj = 1.0 - std::pow(1.0 - sorted[i].second, exponent);
        adj = std::clamp(adj, 0.0, 1.0);
        running_max = std::max(running_max, adj);
        out.adjusted[sorted[i].first] = running_max;
        out.decisions[sorted[i].first] =
            running_max <= alpha ? Decision::Reject : Decision::FailToReject;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Test reports: main analysis, in-time placebos, early roll-in
// ---------------------------------------------------------------------------

struct TestReport {
    EffectEstimate treated;
    double p_ate = 1.0;
    double p_rmse = 1.0;
    Sidedness sidedness = Sidedness::OneSidedUpper;
    std::pair<double, double> bounds_5_95{0.0, 0.0};
    double avg_placebo_pre_rmse = 0.0;
    int n_retained = 0;
    double pre_r2 = 0.0;
    WeightSolution treated_solution;
    CounterfactualSeries treated_series;
    PlaceboDistribution placebos;
};

/// Full fit + placebo pipeline on one panel.
inline TestReport analyze_panel(const Panel& panel, const FitOptions& opts,
                                double population = 0.0) {
    UnitFit treated = fit_unit(panel, opts, population);
    PlaceboDistribution dist = unit_placebos(panel, treated, opts);

    TestReport report;
    report.treated = treated.effect;
    report.sidedness = opts.sidedness;
    report.p_ate = p_value_ate(dist, treated.effect.ate_per_capita, opts.sidedness);
    report.p_rmse = p_value_rmse(dist, treated.effect.rmse_ratio);
    report.bounds_5_95 = effect_bounds(dist, opts.lower_pct, opts.upper_pct);
    report.avg_placebo_pre_rmse = dist.avg_retained_pre_rmse();
    report.n_retained = dist.n_retained;
    report.pre_r2 = treated.solution.pre_r2;
    report.treated_solution = treated.solution;
    report.treated_series = treated.series;
    report.placebos = std::move(dist);
    return report;
}

/// Daily inputs for one outcome, keyed by city; the raw material for panels
/// that need re-blocking (in-time placebos and early roll-in).
using OutcomeDaily = std::map<std::string, DailyCountSeries>;

inline Panel build_panel_from_daily(const OutcomeDaily& daily, const StudyDesign& design,
                                    int min_pre_blocks = 8) {
    std::map<std::string, BlockSeries> blocks;
    for (const auto& [city, series] : daily)
        blocks[city] = aggregate_blocks(series, design, min_pre_blocks);
    return assemble_panel(blocks, design);
}

/// Pseudo-intervention strictly inside the pre period: the window is truncated
/// at the true intervention date, blocks are re-anchored at the pseudo date,
/// and [pseudo, true) becomes the pseudo-post period. The true effect is zero
/// by construction.
inline TestReport in_time_placebo(const OutcomeDaily& daily, const StudyDesign& design,
                                  Date pseudo_intervention, const FitOptions& opts,
                                  double population = 0.0) {
    if (!(pseudo_intervention < design.intervention_date))
        throw Error("in-time placebo date must precede the intervention");
    StudyDesign pseudo = design;
    pseudo.intervention_date = pseudo_intervention;
    pseudo.window_end = design.intervention_date.plus_days(-1);
    Panel panel = build_panel_from_daily(daily, pseudo);
    return analyze_panel(panel, opts, population);
}

/// Moves the declared start of the intervention earlier while keeping the full
/// window, extending the post period backward to probe anticipation effects.
inline TestReport early_rollin(const OutcomeDaily& daily, const StudyDesign& design,
                               Date early_start, const FitOptions& opts,
                               double population = 0.0) {
    if (design.intervention_date < early_start)
        throw Error("early roll-in date must not exceed the intervention date");
    StudyDesign shifted = design;
    shifted.intervention_date = early_start;
    Panel panel = build_panel_from_daily(daily, shifted);
    return analyze_panel(panel, opts, population);
}

} // namespace panelsynth

#endif
