#ifndef PANELSYNTH_SYNTH_HPP
#define PANELSYNTH_SYNTH_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "panelsynth/panel.hpp"
#include "panelsynth/stats.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Weight program
//
// minimize  (1/T0) * sum_{t<=T0} (Y_1t - c - sum_j w_j Y_jt)^2 + lambda * sum_j w_j^2
// subject to sum_j w_j = 1
//
// Negative weights allowed; the intercept c is unpenalized and outside the
// constraint. Solved in closed form from the stationarity system of the
// equality-constrained problem.
// ---------------------------------------------------------------------------

struct WeightSolution {
    Eigen::VectorXd weights; // one per donor, panel row order
    double intercept = 0.0;
    double lambda = 0.0;
    double pre_rmse = 0.0;
    double pre_r2 = 0.0;
    double validation_rmse = 0.0; // filled by tuning; 0 when not tuned
};

struct CounterfactualSeries {
    std::vector<double> observed;  // Y_1t, t = 1..T
    std::vector<double> predicted; // c + sum_j w_j Y_jt
    int t0 = 0;
};

struct EffectEstimate {
    double ate_per_capita = 0.0;
    double ate_per_1000 = 0.0;
    double ate_events = 0.0; // ate_per_capita * population when population known
    double pre_rmse = 0.0;
    double post_rmse = 0.0;
    double rmse_ratio = 0.0;
    bool rmse_ratio_defined = true; // false when pre_rmse == 0 (ratio reported +inf)
};

namespace synth_detail {

/// Donor rows (1..J) ordered by unit id. Every fit canonicalizes donor order
/// internally so that permuting the panel's donor rows permutes the returned
/// weights and changes nothing else, bit for bit.
inline std::vector<int> canonical_donor_rows(const Panel& panel) {
    std::vector<int> rows(static_cast<std::size_t>(panel.n_donors()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i) + 1;
    std::sort(rows.begin(), rows.end(), [&](int a, int b) {
        return panel.units[static_cast<std::size_t>(a)] < panel.units[static_cast<std::size_t>(b)];
    });
    return rows;
}

/// Precomputed pre-period cross-products for one (treated, donors, window)
/// triple, so a lambda grid can be swept without re-touching the data.
/// Donor columns follow `rows` (canonical order).
struct FitGram {
    Eigen::MatrixXd gram;      // Xc' * Xc / n_fit, donors x donors (centered)
    Eigen::VectorXd cross;     // Xc' * yc / n_fit
    Eigen::VectorXd col_means; // donor means over the fit window
    double y_mean = 0.0;
    int n_fit = 0;
    std::vector<int> rows; // panel row index per column
};

inline FitGram build_gram(const Panel& panel, int fit_blocks) {
    const int J = panel.n_donors();
    if (J < 1) throw Error("weight program needs at least one donor");
    if (fit_blocks < 2) throw Error("weight program needs at least two fit blocks");

    FitGram g;
    g.rows = canonical_donor_rows(panel);
    Eigen::MatrixXd X(fit_blocks, J);
    for (int c = 0; c < J; ++c)
        X.col(c) = panel.Y.row(g.rows[static_cast<std::size_t>(c)]).head(fit_blocks).transpose();
    Eigen::VectorXd y = panel.Y.row(0).head(fit_blocks).transpose();

    g.n_fit = fit_blocks;
    g.col_means = X.colwise().mean();
    g.y_mean = y.mean();
    Eigen::MatrixXd Xc = X.rowwise() - g.col_means.transpose();
    Eigen::VectorXd yc = y.array() - g.y_mean;
    const double inv_n = 1.0 / static_cast<double>(fit_blocks);
    g.gram = Xc.transpose() * Xc * inv_n;
    g.cross = Xc.transpose() * yc * inv_n;
    return g;
}

/// Solves the bordered stationarity system for given lambda.
inline WeightSolution solve_from_gram(const FitGram& g, double lambda) {
    if (lambda < 0.0) throw Error("ridge penalty must be nonnegative");
    const int J = static_cast<int>(g.gram.rows());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(J + 1, J + 1);
    K.topLeftCorner(J, J) = 2.0 * g.gram + 2.0 * lambda * Eigen::MatrixXd::Identity(J, J);
    K.block(0, J, J, 1).setOnes();
    K.block(J, 0, 1, J).setOnes();
    Eigen::VectorXd rhs(J + 1);
    rhs.head(J) = 2.0 * g.cross;
    rhs(J) = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible())
        throw Error("weight program is singular (collinear donors at lambda = " +
                    detail::format_double(lambda) + "); rerun with lambda > 0");
    Eigen::VectorXd sol = lu.solve(rhs);

    WeightSolution w;
    w.weights = sol.head(J);
    w.lambda = lambda;
    w.intercept = g.y_mean - g.col_means.dot(w.weights);
    return w;
}

} // namespace synth_detail

/// Value of the program objective at (weights, intercept) over the first
/// `fit_blocks` pre-period blocks.
inline double weight_objective(const Panel& panel, const Eigen::VectorXd& weights,
                               double intercept, double lambda, int fit_blocks) {
    const int J = panel.n_donors();
    double sse = 0.0;
    for (int t = 0; t < fit_blocks; ++t) {
        double pred = intercept;
        for (int j = 0; j < J; ++j) pred += weights(j) * panel.Y(j + 1, t);
        double r = panel.Y(0, t) - pred;
        sse += r * r;
    }
    return sse / static_cast<double>(fit_blocks) + lambda * weights.squaredNorm();
}

/// Closed-form solve over the first `fit_blocks` pre blocks (defaults to the
/// whole pre period). Fills pre-fit diagnostics over the full pre period.
inline WeightSolution solve_weights(const Panel& panel, double lambda, int fit_blocks = -1) {
    panel.validate();
    if (panel.n_donors() < 2) throw Error("weight program needs at least two donors");
    if (fit_blocks < 0) fit_blocks = panel.t0;
    if (fit_blocks > panel.t0) throw Error("fit window exceeds the pre period");

    synth_detail::FitGram g = synth_detail::build_gram(panel, fit_blocks);
    WeightSolution w = synth_detail::solve_from_gram(g, lambda);

    // Diagnostics over the full pre period, accumulated in canonical order.
    const int J = panel.n_donors();
    double sse = 0.0, sst = 0.0;
    for (int t = 0; t < panel.t0; ++t) {
        double pred = w.intercept;
        for (int c = 0; c < J; ++c)
            pred += w.weights(c) * panel.Y(g.rows[static_cast<std::size_t>(c)], t);
        double r = panel.Y(0, t) - pred;
        sse += r * r;
        sst += panel.Y(0, t) * panel.Y(0, t); // pre mean is 0 by construction
    }
    w.pre_rmse = std::sqrt(sse / static_cast<double>(panel.t0));
    w.pre_r2 = sst > 0.0 ? 1.0 - sse / sst : (sse > 0.0 ? -std::numeric_limits<double>::infinity() : 1.0);

    // Back to the panel's donor row order.
    Eigen::VectorXd reordered(J);
    for (int c = 0; c < J; ++c) reordered(g.rows[static_cast<std::size_t>(c)] - 1) = w.weights(c);
    w.weights = reordered;
    return w;
}

// ---------------------------------------------------------------------------
// Lambda tuning
// ---------------------------------------------------------------------------

struct LambdaGrid {
    double min = 1e-8;
    double max = 1e-2;
    int count = 100;

    std::vector<double> values() const {
        if (count < 2 || min <= 0.0 || max <= min)
            throw Error("lambda grid must have count >= 2 and 0 < min < max");
        std::vector<double> out(static_cast<std::size_t>(count));
        const double l0 = std::log10(min), l1 = std::log10(max);
        for (int i = 0; i < count; ++i)
            out[static_cast<std::size_t>(i)] =
                std::pow(10.0, l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(count - 1));
        return out;
    }
};

struct TuningTrace {
    std::vector<double> lambdas;
    std::vector<double> validation_rmse;
    double best_lambda = 0.0;
    double best_rmse = 0.0;
    bool boundary_warning = false; // argmin sits on a grid edge
};

/// Fits on the first floor(0.8 * T0) pre blocks for every grid lambda and
/// scores RMSE on the held-out remainder of the pre period; returns the
/// validation-RMSE minimizer. Warns when the argmin lies on the grid boundary.
inline TuningTrace tune_lambda(const Panel& panel, const LambdaGrid& grid = {}) {
    panel.validate();
    if (panel.t0 < 10) throw Error("lambda tuning needs at least 10 pre blocks");
    const int fit_blocks = static_cast<int>(std::floor(0.8 * panel.t0));
    const int n_val = panel.t0 - fit_blocks;
    if (fit_blocks < 2 || n_val < 1) throw Error("lambda tuning split is degenerate");

    synth_detail::FitGram g = synth_detail::build_gram(panel, fit_blocks);
    const int J = panel.n_donors();
    Eigen::MatrixXd X_val(n_val, J);
    for (int c = 0; c < J; ++c)
        X_val.col(c) = panel.Y.row(g.rows[static_cast<std::size_t>(c)])
                           .segment(fit_blocks, n_val)
                           .transpose();
    Eigen::VectorXd y_val = panel.Y.row(0).segment(fit_blocks, n_val).transpose();

    TuningTrace trace;
    trace.lambdas = grid.values();
    trace.validation_rmse.reserve(trace.lambdas.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < trace.lambdas.size(); ++i) {
        WeightSolution w = synth_detail::solve_from_gram(g, trace.lambdas[i]);
        Eigen::VectorXd resid =
            y_val - (X_val * w.weights + Eigen::VectorXd::Constant(n_val, w.intercept));
        double rmse = std::sqrt(resid.squaredNorm() / static_cast<double>(n_val));
        trace.validation_rmse.push_back(rmse);
        if (rmse < trace.validation_rmse[best]) best = i;
    }
    trace.best_lambda = trace.lambdas[best];
    trace.best_rmse = trace.validation_rmse[best];
    trace.boundary_warning = (best == 0 || best + 1 == trace.lambdas.size());
    return trace;
}

// ---------------------------------------------------------------------------
// Counterfactual and effect statistics
// ---------------------------------------------------------------------------

inline CounterfactualSeries predict_counterfactual(const Panel& panel, const WeightSolution& w) {
    const int J = panel.n_donors();
    if (w.weights.size() != J) throw Error("weight vector does not match donor count");
    const std::vector<int> rows = synth_detail::canonical_donor_rows(panel);
    CounterfactualSeries out;
    out.t0 = panel.t0;
    out.observed.resize(static_cast<std::size_t>(panel.total_blocks()));
    out.predicted.resize(static_cast<std::size_t>(panel.total_blocks()));
    for (int t = 0; t < panel.total_blocks(); ++t) {
        double pred = w.intercept;
        for (int row : rows) pred += w.weights(row - 1) * panel.Y(row, t);
        out.observed[static_cast<std::size_t>(t)] = panel.Y(0, t);
        out.predicted[static_cast<std::size_t>(t)] = pred;
    }
    return out;
}

/// Average post-period gap plus the post/pre RMSE ratio. When pre_rmse is 0
/// the ratio is undefined and reported as +inf with the flag cleared.
inline EffectEstimate estimate_ate(const CounterfactualSeries& series, int t0,
                                   double population = 0.0) {
    const int T = static_cast<int>(series.observed.size());
    if (t0 < 1 || t0 >= T) throw Error("effect estimate needs T > T0 >= 1");

    double post_sum = 0.0, post_sq = 0.0, pre_sq = 0.0;
    for (int t = 0; t < T; ++t) {
        double r = series.observed[static_cast<std::size_t>(t)] -
                   series.predicted[static_cast<std::size_t>(t)];
        if (t < t0) pre_sq += r * r;
        else {
            post_sum += r;
            post_sq += r * r;
        }
    }
    const double n_post = static_cast<double>(T - t0);
    EffectEstimate e;
    e.ate_per_capita = post_sum / n_post;
    e.ate_per_1000 = 1000.0 * e.ate_per_capita;
    e.ate_events = population > 0.0 ? e.ate_per_capita * population : 0.0;
    e.pre_rmse = std::sqrt(pre_sq / static_cast<double>(t0));
    e.post_rmse = std::sqrt(post_sq / n_post);
    if (e.pre_rmse == 0.0) {
        e.rmse_ratio = std::numeric_limits<double>::infinity();
        e.rmse_ratio_defined = false;
    } else {
        e.rmse_ratio = e.post_rmse / e.pre_rmse;
    }
    return e;
}

/// Converts a per-capita ATE to absolute events per block.
inline double to_events(double ate_per_capita, double population) {
    if (population <= 0.0) throw Error("event conversion needs population > 0");
    return ate_per_capita * population;
}

} // namespace panelsynth

#endif
