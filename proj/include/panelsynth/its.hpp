#ifndef PANELSYNTH_ITS_HPP
#define PANELSYNTH_ITS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "panelsynth/calendar.hpp"
#include "panelsynth/common.hpp"
#include "panelsynth/inference.hpp"
#include "panelsynth/stats.hpp"

namespace panelsynth {

// ---------------------------------------------------------------------------
// Segmented-regression design matrix
// ---------------------------------------------------------------------------

enum class TreatmentSpec { LevelOnly, LevelAndSlope };

struct DesignOptions {
    TreatmentSpec treatment = TreatmentSpec::LevelOnly;
    bool day_of_week = true; // 6 dummies, Sunday reference
    bool month = true;       // 11 dummies, December reference
    bool year = true;        // dummies for all observed years but the last
    bool holiday = true;     // US federal list + Halloween
    std::vector<Date> extra_holidays;
};

struct ItsDesignMatrix {
    Eigen::MatrixXd X;
    std::vector<std::string> names;
    std::vector<Date> dates;
    Date t_int; // treatment indicator is I(date > t_int)
};

/// Builds the ITS regressor matrix for contiguous daily dates. The treatment
/// level column ("t") is 0 through t_int and 1 after; the optional slope
/// column counts days since t_int.
inline ItsDesignMatrix build_design_matrix(const std::vector<Date>& dates, Date t_int,
                                           const DesignOptions& opts = {}) {
    const int n = static_cast<int>(dates.size());
    if (n < 2) throw Error("design matrix needs at least two days");
    for (int i = 1; i < n; ++i)
        if (dates[static_cast<std::size_t>(i)].serial !=
            dates[static_cast<std::size_t>(i - 1)].serial + 1)
            throw Error("design matrix dates must be contiguous daily");

    static const char* dow_names[] = {"Sunday", "Monday",   "Tuesday", "Wednesday",
                                      "Thursday", "Friday", "Saturday"};
    static const char* month_names[] = {"January", "February", "March",     "April",
                                        "May",     "June",     "July",      "August",
                                        "September", "October", "November", "December"};

    std::set<int> years;
    for (const Date& d : dates) years.insert(to_civil(d).year);
    std::vector<int> year_dummies(years.begin(), years.end());
    if (!year_dummies.empty()) year_dummies.pop_back(); // last year is the reference

    std::set<std::int32_t> holidays;
    if (opts.holiday) {
        for (int y : years)
            for (Date h : us_holidays(y)) holidays.insert(h.serial);
        for (Date h : opts.extra_holidays) holidays.insert(h.serial);
    }

    ItsDesignMatrix out;
    out.dates = dates;
    out.t_int = t_int;
    out.names.push_back("intercept");
    if (opts.day_of_week)
        for (int w = 1; w <= 6; ++w) out.names.push_back(dow_names[w]);
    if (opts.month)
        for (int m = 1; m <= 11; ++m) out.names.push_back(month_names[m - 1]);
    if (opts.year)
        for (int y : year_dummies) out.names.push_back(std::to_string(y));
    if (opts.holiday) out.names.push_back("holiday");
    out.names.push_back("t");
    if (opts.treatment == TreatmentSpec::LevelAndSlope) out.names.push_back("t_days");

    out.X = Eigen::MatrixXd::Zero(n, static_cast<int>(out.names.size()));
    for (int i = 0; i < n; ++i) {
        const Date d = dates[static_cast<std::size_t>(i)];
        const CivilDate c = to_civil(d);
        int col = 0;
        out.X(i, col++) = 1.0;
        if (opts.day_of_week) {
            int w = weekday(d);
            for (int k = 1; k <= 6; ++k) out.X(i, col++) = (w == k) ? 1.0 : 0.0;
        }
        if (opts.month)
            for (int m = 1; m <= 11; ++m) out.X(i, col++) = (c.month == m) ? 1.0 : 0.0;
        if (opts.year)
            for (int y : year_dummies) out.X(i, col++) = (c.year == y) ? 1.0 : 0.0;
        if (opts.holiday) out.X(i, col++) = holidays.count(d.serial) ? 1.0 : 0.0;
        const bool post = t_int < d;
        out.X(i, col++) = post ? 1.0 : 0.0;
        if (opts.treatment == TreatmentSpec::LevelAndSlope)
            out.X(i, col++) = post ? static_cast<double>(t_int.days_until(d)) : 0.0;
    }
    return out;
}

struct WeeklyDesignMatrix {
    Eigen::MatrixXd X;
    std::vector<std::string> names;
};

/// Coarser design for weekly-aggregated sparse counts: intercept, month and
/// year dummies, treatment terms; no day-of-week or holiday columns.
inline WeeklyDesignMatrix build_weekly_design_matrix(const std::vector<Date>& starts, Date t_int,
                                                     TreatmentSpec treatment) {
    static const char* month_names[] = {"January", "February", "March",     "April",
                                        "May",     "June",     "July",      "August",
                                        "September", "October", "November", "December"};
    if (starts.size() < 4) throw Error("weekly design matrix needs at least four blocks");
    std::set<int> years;
    for (const Date& d : starts) years.insert(to_civil(d).year);
    std::vector<int> year_dummies(years.begin(), years.end());
    if (!year_dummies.empty()) year_dummies.pop_back();

    WeeklyDesignMatrix out;
    out.names.push_back("intercept");
    for (int m = 1; m <= 11; ++m) out.names.push_back(month_names[m - 1]);
    for (int y : year_dummies) out.names.push_back(std::to_string(y));
    out.names.push_back("t");
    if (treatment == TreatmentSpec::LevelAndSlope) out.names.push_back("t_days");

    const int n = static_cast<int>(starts.size());
    out.X = Eigen::MatrixXd::Zero(n, static_cast<int>(out.names.size()));
    for (int i = 0; i < n; ++i) {
        const Date d = starts[static_cast<std::size_t>(i)];
        const CivilDate c = to_civil(d);
        int col = 0;
        out.X(i, col++) = 1.0;
        for (int m = 1; m <= 11; ++m) out.X(i, col++) = (c.month == m) ? 1.0 : 0.0;
        for (int y : year_dummies) out.X(i, col++) = (c.year == y) ? 1.0 : 0.0;
        const bool post = t_int < d;
        out.X(i, col++) = post ? 1.0 : 0.0;
        if (treatment == TreatmentSpec::LevelAndSlope)
            out.X(i, col++) = post ? static_cast<double>(t_int.days_until(d)) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// ARIMA order and the conditional-sum-of-squares machinery
// ---------------------------------------------------------------------------

struct ArimaOrder {
    int p = 0;
    int d = 0;
    int q = 0;

    void validate() const {
        if (p < 0 || q < 0 || d < 0 || p > 5 || q > 5 || d > 2)
            throw Error("ARIMA order out of range (p,q <= 5, d <= 2)");
    }
};

namespace its_detail {

/// Largest eigenvalue modulus of the AR companion matrix for the polynomial
/// 1 - a_1 z - ... - a_k z^k; roots are outside the unit circle iff this is
/// below 1.
inline double max_companion_modulus(const Eigen::VectorXd& a) {
    const int k = static_cast<int>(a.size());
    if (k == 0) return 0.0;
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(k, k);
    comp.row(0) = a.transpose();
    for (int i = 1; i < k; ++i) comp(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    double mx = 0.0;
    for (int i = 0; i < k; ++i) mx = std::max(mx, std::abs(es.eigenvalues()(i)));
    return mx;
}

inline bool ar_stationary(const Eigen::VectorXd& phi, double margin = 1e-6) {
    return max_companion_modulus(phi) < 1.0 - margin;
}

inline bool ma_invertible(const Eigen::VectorXd& theta, double margin = 1e-6) {
    return max_companion_modulus(-theta) < 1.0 - margin;
}

/// Applies the ARMA innovation recursion to one series with zero pre-sample
/// values: e_t = s_t - sum_i phi_i s_{t-i} - sum_j theta_j e_{t-j}.
inline Eigen::VectorXd innovation_filter(const Eigen::VectorXd& s, const Eigen::VectorXd& phi,
                                         const Eigen::VectorXd& theta) {
    const int n = static_cast<int>(s.size());
    const int p = static_cast<int>(phi.size());
    const int q = static_cast<int>(theta.size());
    Eigen::VectorXd e(n);
    for (int t = 0; t < n; ++t) {
        double v = s(t);
        for (int i = 1; i <= p; ++i)
            if (t - i >= 0) v -= phi(i - 1) * s(t - i);
        for (int j = 1; j <= q; ++j)
            if (t - j >= 0) v -= theta(j - 1) * e(t - j);
        e(t) = v;
    }
    return e;
}

inline Eigen::VectorXd difference(const Eigen::VectorXd& s, int d) {
    Eigen::VectorXd out = s;
    for (int k = 0; k < d; ++k) {
        Eigen::VectorXd next(out.size() - 1);
        for (int t = 1; t < out.size(); ++t) next(t - 1) = out(t) - out(t - 1);
        out = next;
    }
    return out;
}

/// Minimal Nelder-Mead with a fixed deterministic schedule.
struct NelderMeadResult {
    Eigen::VectorXd x;
    double fx = 0.0;
    int iterations = 0;
    bool converged = true;
};

inline NelderMeadResult nelder_mead_once(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& x0, double step = 0.1,
                                         double ftol = 1e-10, int max_iter = 0) {
    const int dim = static_cast<int>(x0.size());
    if (max_iter <= 0) max_iter = std::max(400, 250 * dim);
    std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(dim + 1), x0);
    for (int i = 0; i < dim; ++i) xs[static_cast<std::size_t>(i + 1)](i) += step;
    std::vector<double> fs(static_cast<std::size_t>(dim + 1));
    for (std::size_t i = 0; i < xs.size(); ++i) fs[i] = f(xs[i]);

    auto order = [&] {
        std::vector<std::size_t> idx(xs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
        std::vector<Eigen::VectorXd> nxs;
        std::vector<double> nfs;
        for (std::size_t i : idx) {
            nxs.push_back(xs[i]);
            nfs.push_back(fs[i]);
        }
        xs = std::move(nxs);
        fs = std::move(nfs);
    };

    NelderMeadResult res;
    int it = 0;
    for (; it < max_iter; ++it) {
        order();
        if (std::abs(fs.back() - fs.front()) <= ftol * (std::abs(fs.front()) + ftol)) break;
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
        for (int i = 0; i < dim; ++i) centroid += xs[static_cast<std::size_t>(i)];
        centroid /= static_cast<double>(dim);

        Eigen::VectorXd xr = centroid + (centroid - xs.back());
        double fr = f(xr);
        if (fr < fs.front()) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs.back());
            double fe = f(xe);
            if (fe < fr) {
                xs.back() = xe;
                fs.back() = fe;
            } else {
                xs.back() = xr;
                fs.back() = fr;
            }
        } else if (fr < fs[fs.size() - 2]) {
            xs.back() = xr;
            fs.back() = fr;
        } else {
            Eigen::VectorXd xc = centroid + 0.5 * (xs.back() - centroid);
            double fc = f(xc);
            if (fc < fs.back()) {
                xs.back() = xc;
                fs.back() = fc;
            } else {
                for (std::size_t i = 1; i < xs.size(); ++i) {
                    xs[i] = xs.front() + 0.5 * (xs[i] - xs.front());
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    order();
    res.x = xs.front();
    res.fx = fs.front();
    res.iterations = it;
    res.converged = it < max_iter;
    return res;
}

/// Nelder-Mead with a restart around the incumbent; restarts heal simplex
/// collapse away from the optimum.
inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, double step = 0.1,
                                    double ftol = 1e-10, int max_iter = 0) {
    NelderMeadResult best = nelder_mead_once(f, x0, step, ftol, max_iter);
    for (int restart = 0; restart < 2; ++restart) {
        NelderMeadResult again = nelder_mead_once(f, best.x, step / 4.0, ftol, max_iter);
        again.iterations += best.iterations;
        bool improved = again.fx < best.fx - ftol * (std::abs(best.fx) + ftol);
        again.converged = again.converged || best.converged;
        best = again;
        if (!improved) break;
    }
    return best;
}

} // namespace its_detail

// ---------------------------------------------------------------------------
// Regression with ARIMA errors (conditional sum of squares)
// ---------------------------------------------------------------------------

struct ItsFit {
    ArimaOrder order;
    std::vector<std::string> coef_names; // regression terms after differencing
    Eigen::VectorXd coef;
    Eigen::VectorXd coef_se;
    Eigen::VectorXd ar;
    Eigen::VectorXd ar_se;
    Eigen::VectorXd ma;
    Eigen::VectorXd ma_se;
    double sigma2 = 0.0;
    double loglik = 0.0;
    double aic = 0.0;
    double aicc = 0.0;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    double treatment_coef = 0.0;
    double treatment_se = 0.0;
    double treatment_p = 1.0;
    bool near_unit_root = false;
    int n_effective = 0;

    double coefficient(const std::string& name) const {
        for (std::size_t i = 0; i < coef_names.size(); ++i)
            if (coef_names[i] == name) return coef(static_cast<Eigen::Index>(i));
        throw Error("no coefficient named '" + name + "'");
    }
};

namespace its_detail {

struct PreparedRegression {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<std::string> names;
};

/// Differences response and regressors d times; columns that difference to
/// zero (the intercept) are removed and a drift constant takes their place.
inline PreparedRegression prepare_regression(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                             const std::vector<std::string>& names, int d) {
    PreparedRegression out;
    out.y = difference(y, d);
    if (d == 0) {
        out.X = X;
        out.names = names;
        return out;
    }
    std::vector<int> keep;
    Eigen::MatrixXd Xd(out.y.size(), X.cols());
    for (int c = 0; c < X.cols(); ++c) {
        Eigen::VectorXd col = difference(X.col(c), d);
        if (col.cwiseAbs().maxCoeff() > 1e-12) {
            Xd.col(static_cast<int>(keep.size())) = col;
            keep.push_back(c);
        }
    }
    out.X.resize(out.y.size(), static_cast<int>(keep.size()) + 1);
    out.X.col(0).setOnes();
    out.names.push_back("drift");
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.X.col(static_cast<int>(i) + 1) = Xd.col(static_cast<int>(i));
        out.names.push_back(names[static_cast<std::size_t>(keep[i])]);
    }
    return out;
}

struct CssEval {
    double sse = std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta;
    Eigen::VectorXd innovations; // aligned with the differenced series
    bool feasible = false;
};

/// `cond` is the number of leading observations conditioned on (>= p). Order
/// selection scores every candidate with the same cond so that likelihoods
/// are comparable across orders; a standalone fit conditions on p.
inline CssEval css_profile(const PreparedRegression& reg, const Eigen::VectorXd& phi,
                           const Eigen::VectorXd& theta, int cond) {
    CssEval ev;
    if (!ar_stationary(phi) || !ma_invertible(theta)) return ev;
    const int n = static_cast<int>(reg.y.size());
    const int p = static_cast<int>(phi.size());
    const int k = static_cast<int>(reg.X.cols());
    cond = std::max(cond, p);
    const int m = n - cond;
    if (m <= k) return ev;

    Eigen::VectorXd fy = innovation_filter(reg.y, phi, theta);
    Eigen::MatrixXd fX(n, k);
    for (int c = 0; c < k; ++c) fX.col(c) = innovation_filter(reg.X.col(c), phi, theta);

    Eigen::MatrixXd A = fX.bottomRows(m);
    Eigen::VectorXd b = fy.tail(m);
    Eigen::VectorXd beta = A.colPivHouseholderQr().solve(b);

    ev.beta = beta;
    ev.innovations = fy - fX * beta;
    ev.sse = ev.innovations.tail(m).squaredNorm();
    ev.feasible = true;
    return ev;
}

/// Negative concentrated conditional log-likelihood up to constants, as a
/// function of the full parameter vector (beta, phi, theta); used for the
/// observed-information standard errors.
inline double css_neg_loglik_full(const PreparedRegression& reg, const Eigen::VectorXd& params,
                                  int p, int q, int cond) {
    const int k = static_cast<int>(reg.X.cols());
    Eigen::VectorXd beta = params.head(k);
    Eigen::VectorXd phi = params.segment(k, p);
    Eigen::VectorXd theta = params.tail(q);
    const int n = static_cast<int>(reg.y.size());
    const int m = n - std::max(cond, p);
    Eigen::VectorXd u = reg.y - reg.X * beta;
    Eigen::VectorXd e = innovation_filter(u, phi, theta);
    double sse = e.tail(m).squaredNorm();
    sse = std::max(sse, 1e-300);
    return 0.5 * static_cast<double>(m) * std::log(sse / static_cast<double>(m));
}

} // namespace its_detail

/// Estimates y = X beta + eta with ARMA(p,q) errors on the d-times differenced
/// scale by conditional sum of squares. (phi, theta) are optimized by
/// Nelder-Mead over the profile objective with beta concentrated out exactly;
/// standard errors come from the inverse observed information of the
/// concentrated likelihood.
inline ItsFit fit_arima_regression(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                   const std::vector<std::string>& names, ArimaOrder order,
                                   int likelihood_conditioning = -1) {
    order.validate();
    if (y.size() != X.rows()) throw Error("response and design matrix are misaligned");
    if (static_cast<std::size_t>(X.cols()) != names.size())
        throw Error("design matrix and column names are misaligned");
    if (y.size() <= 10 * (order.p + order.q + static_cast<int>(X.cols())))
        throw Error("series too short for ARIMA(" + std::to_string(order.p) + "," +
                    std::to_string(order.d) + "," + std::to_string(order.q) + ") with " +
                    std::to_string(X.cols()) + " regressors");

    its_detail::PreparedRegression reg = its_detail::prepare_regression(y, X, names, order.d);
    const int p = order.p, q = order.q;
    const int k = static_cast<int>(reg.X.cols());
    const int n = static_cast<int>(reg.y.size());
    const int cond = std::max(likelihood_conditioning < 0 ? p : likelihood_conditioning, p);
    const int m = n - cond;
    if (m <= k + p + q + 1) throw Error("too few effective observations after conditioning");

    auto objective = [&](const Eigen::VectorXd& psi) {
        Eigen::VectorXd phi = psi.head(p);
        Eigen::VectorXd theta = psi.tail(q);
        double pen = 0.0;
        if (!its_detail::ar_stationary(phi))
            pen += 1e10 * (1.0 + its_detail::max_companion_modulus(phi));
        if (!its_detail::ma_invertible(theta))
            pen += 1e10 * (1.0 + its_detail::max_companion_modulus(-theta));
        if (pen > 0.0) return pen;
        its_detail::CssEval ev = its_detail::css_profile(reg, phi, theta, cond);
        if (!ev.feasible) return 1e10;
        double sse = std::max(ev.sse, 1e-300);
        return static_cast<double>(m) * std::log(sse / static_cast<double>(m));
    };

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(q);
    if (p + q > 0) {
        // Deterministic multi-start: zeros plus moment-informed points from the
        // lag-1 autocorrelation of the OLS residual.
        double r1 = 0.0;
        {
            Eigen::VectorXd beta0 = reg.X.colPivHouseholderQr().solve(reg.y);
            Eigen::VectorXd u = reg.y - reg.X * beta0;
            double denom = u.squaredNorm();
            if (denom > 0.0) {
                for (int t = 1; t < n; ++t) r1 += u(t) * u(t - 1);
                r1 = std::clamp(r1 / denom, -0.9, 0.9);
            }
        }
        std::vector<Eigen::VectorXd> starts;
        starts.push_back(Eigen::VectorXd::Zero(p + q));
        if (p > 0) {
            Eigen::VectorXd s = Eigen::VectorXd::Zero(p + q);
            s(0) = r1;
            starts.push_back(s);
        }
        if (q > 0) {
            Eigen::VectorXd s = Eigen::VectorXd::Zero(p + q);
            s(p) = std::clamp(r1, -0.5, 0.5);
            starts.push_back(s);
        }

        its_detail::NelderMeadResult nm;
        nm.fx = std::numeric_limits<double>::infinity();
        bool any_converged = false;
        for (const auto& start : starts) {
            its_detail::NelderMeadResult run = its_detail::nelder_mead(objective, start);
            any_converged = any_converged || run.converged;
            if (run.fx < nm.fx) nm = run;
        }
        if (!any_converged)
            throw Error("CSS optimizer did not converge after " + std::to_string(nm.iterations) +
                        " iterations (objective " + detail::format_double(nm.fx) + ")");
        phi = nm.x.head(p);
        theta = nm.x.tail(q);
    }

    its_detail::CssEval ev = its_detail::css_profile(reg, phi, theta, cond);
    if (!ev.feasible) throw Error("CSS solution infeasible at the reported optimum");

    ItsFit fit;
    fit.order = order;
    fit.coef_names = reg.names;
    fit.coef = ev.beta;
    fit.ar = phi;
    fit.ma = theta;
    fit.n_effective = m;
    fit.sigma2 = ev.sse / static_cast<double>(m);
    fit.loglik = -0.5 * static_cast<double>(m) *
                 (std::log(2.0 * M_PI * std::max(fit.sigma2, 1e-300)) + 1.0);
    const int n_params = k + p + q + 1;
    fit.aic = -2.0 * fit.loglik + 2.0 * n_params;
    const double denom = static_cast<double>(m - n_params - 1);
    fit.aicc = denom > 0.0
                   ? fit.aic + 2.0 * n_params * (n_params + 1) / denom
                   : std::numeric_limits<double>::infinity();
    fit.near_unit_root = its_detail::max_companion_modulus(phi) > 0.98 ||
                         its_detail::max_companion_modulus(-theta) > 0.98;

    // Observed-information standard errors via a central-difference Hessian.
    {
        Eigen::VectorXd params(k + p + q);
        params.head(k) = ev.beta;
        params.segment(k, p) = phi;
        params.tail(q) = theta;
        auto f = [&](const Eigen::VectorXd& x) {
            return its_detail::css_neg_loglik_full(reg, x, p, q, cond);
        };
        const int dim = static_cast<int>(params.size());
        Eigen::MatrixXd H(dim, dim);
        Eigen::VectorXd h(dim);
        for (int i = 0; i < dim; ++i)
            h(i) = 1e-4 * std::max(1.0, std::abs(params(i)));
        for (int i = 0; i < dim; ++i) {
            for (int j = i; j < dim; ++j) {
                Eigen::VectorXd xpp = params, xpm = params, xmp = params, xmm = params;
                xpp(i) += h(i); xpp(j) += h(j);
                xpm(i) += h(i); xpm(j) -= h(j);
                xmp(i) -= h(i); xmp(j) += h(j);
                xmm(i) -= h(i); xmm(j) -= h(j);
                double v = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h(i) * h(j));
                H(i, j) = v;
                H(j, i) = v;
            }
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
        Eigen::VectorXd se = Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::quiet_NaN());
        if (lu.isInvertible()) {
            Eigen::MatrixXd cov = lu.inverse();
            for (int i = 0; i < dim; ++i)
                se(i) = cov(i, i) > 0.0 ? std::sqrt(cov(i, i))
                                        : std::numeric_limits<double>::quiet_NaN();
        }
        fit.coef_se = se.head(k);
        fit.ar_se = se.segment(k, p);
        fit.ma_se = se.tail(q);
    }

    // Fitted values: y_t minus the estimated innovation, valid on effective rows.
    {
        Eigen::VectorXd yd = reg.y.tail(m);
        Eigen::VectorXd fitted = yd - ev.innovations.tail(m);
        std::vector<double> obs(yd.data(), yd.data() + m);
        std::vector<double> hat(fitted.data(), fitted.data() + m);
        double rho = stats::correlation(obs, hat);
        fit.r2 = rho * rho;
        const int k_model = k + p + q;
        fit.adj_r2 = m - k_model - 1 > 0
                         ? 1.0 - (1.0 - fit.r2) * static_cast<double>(m - 1) /
                                     static_cast<double>(m - k_model - 1)
                         : fit.r2;
    }

    // Treatment coefficient, when the design has one.
    for (std::size_t i = 0; i < fit.coef_names.size(); ++i) {
        if (fit.coef_names[i] != "t") continue;
        fit.treatment_coef = fit.coef(static_cast<Eigen::Index>(i));
        fit.treatment_se = fit.coef_se(static_cast<Eigen::Index>(i));
        if (fit.treatment_se > 0.0 && std::isfinite(fit.treatment_se)) {
            double z = std::abs(fit.treatment_coef / fit.treatment_se);
            fit.treatment_p = 2.0 * (1.0 - stats::normal_cdf(z));
        } else {
            fit.treatment_p = 1.0;
        }
    }
    return fit;
}

inline ItsFit fit_arima_regression(const Eigen::VectorXd& y, const ItsDesignMatrix& design,
                                   ArimaOrder order, int likelihood_conditioning = -1) {
    return fit_arima_regression(y, design.X, design.names, order, likelihood_conditioning);
}

// ---------------------------------------------------------------------------
// Order selection: KPSS for d, stepwise AICc for (p, q)
// ---------------------------------------------------------------------------

/// KPSS level-stationarity statistic with a Bartlett-kernel long-run variance
/// (bandwidth floor(4 * (n/100)^(1/4))).
inline double kpss_level_statistic(const Eigen::VectorXd& e) {
    const int n = static_cast<int>(e.size());
    if (n < 10) throw Error("KPSS needs at least 10 observations");
    Eigen::VectorXd r = e.array() - e.mean();
    double num = 0.0, run = 0.0;
    for (int t = 0; t < n; ++t) {
        run += r(t);
        num += run * run;
    }
    num /= static_cast<double>(n) * static_cast<double>(n);
    const int L = static_cast<int>(std::floor(4.0 * std::pow(n / 100.0, 0.25)));
    double lrv = r.squaredNorm() / n;
    for (int l = 1; l <= L; ++l) {
        double gamma = 0.0;
        for (int t = l; t < n; ++t) gamma += r(t) * r(t - l);
        gamma /= static_cast<double>(n);
        lrv += 2.0 * (1.0 - static_cast<double>(l) / (L + 1.0)) * gamma;
    }
    lrv = std::max(lrv, 1e-300);
    return num / lrv;
}

inline constexpr double kKpss5PercentCritical = 0.463;

/// Simplified Hyndman-Khandakar search: d is the smallest differencing degree
/// whose regression residuals pass the KPSS screen at 5%, then (p, q) is a
/// stepwise AICc minimum starting from {(0,0),(1,0),(0,1),(2,2)}. Falls back
/// to (0, d, 0) when every candidate fit fails.
inline ArimaOrder select_orders(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                const std::vector<std::string>& names, int max_p = 5,
                                int max_q = 5, int max_d = 2) {
    int d = max_d;
    for (int dd = 0; dd <= max_d; ++dd) {
        its_detail::PreparedRegression reg = its_detail::prepare_regression(y, X, names, dd);
        Eigen::VectorXd resid = reg.y;
        if (reg.X.cols() > 0) {
            Eigen::VectorXd beta = reg.X.colPivHouseholderQr().solve(reg.y);
            resid = reg.y - reg.X * beta;
        }
        if (kpss_level_statistic(resid) < kKpss5PercentCritical) {
            d = dd;
            break;
        }
    }

    // Every candidate is scored conditional on the same max_p leading rows so
    // that AICc values are comparable across orders. Candidates whose roots
    // crowd the unit circle are pruned: conditional sums of squares reward
    // near-non-invertible common-factor fits through their startup transient,
    // so such fits cannot be compared on SSE.
    auto score = [&](int p, int q) -> double {
        try {
            ItsFit fit = fit_arima_regression(y, X, names, ArimaOrder{p, d, q}, max_p);
            if (its_detail::max_companion_modulus(fit.ar) > 0.97 ||
                its_detail::max_companion_modulus(-fit.ma) > 0.97)
                return std::numeric_limits<double>::infinity();
            return fit.aicc;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    std::map<std::pair<int, int>, double> seen;
    auto eval = [&](int p, int q) -> double {
        if (p < 0 || q < 0 || p > max_p || q > max_q)
            return std::numeric_limits<double>::infinity();
        auto key = std::make_pair(p, q);
        auto it = seen.find(key);
        if (it != seen.end()) return it->second;
        double v = score(p, q);
        seen[key] = v;
        return v;
    };

    std::pair<int, int> best{0, 0};
    double best_v = eval(0, 0);
    for (auto [p, q] : {std::pair<int, int>{1, 0}, {0, 1}, {2, 2}}) {
        double v = eval(p, q);
        if (v < best_v) {
            best = {p, q};
            best_v = v;
        }
    }
    // Neighborhood refinement, moving to the best improving neighbor. The
    // downward diagonal connects the (2,2) starter to (1,1); growth is only
    // allowed one order at a time.
    for (;;) {
        std::pair<int, int> next = best;
        double next_v = best_v;
        for (auto [dp, dq] :
             {std::pair<int, int>{-1, -1}, {-1, 0}, {0, -1}, {1, 0}, {0, 1}}) {
            double v = eval(best.first + dp, best.second + dq);
            if (v < next_v) {
                next = {best.first + dp, best.second + dq};
                next_v = v;
            }
        }
        if (next == best) break;
        best = next;
        best_v = next_v;
    }
    if (!std::isfinite(best_v)) return ArimaOrder{0, d, 0};
    return ArimaOrder{best.first, d, best.second};
}

// ---------------------------------------------------------------------------
// Poisson GLM with autoregressive terms (sparse counts)
// ---------------------------------------------------------------------------

/// Poisson log-link regression with log1p-transformed lagged responses as
/// covariates, fitted by IRLS to 1e-8 relative deviance change.
inline ItsFit fit_poisson_ar(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                             const std::vector<std::string>& names,
                             const std::vector<int>& ar_lags) {
    const int n = static_cast<int>(y.size());
    if (n != X.rows()) throw Error("response and design matrix are misaligned");
    for (int t = 0; t < n; ++t)
        if (y(t) < 0.0 || std::floor(y(t)) != y(t))
            throw Error("Poisson response must be nonnegative integers");
    if (y.maxCoeff() <= 0.0) throw Error("Poisson fit is degenerate: response is all zeros");
    int max_lag = 0;
    for (int l : ar_lags) {
        if (l < 1) throw Error("AR lags must be positive");
        max_lag = std::max(max_lag, l);
    }

    const int rows = n - max_lag;
    const int k = static_cast<int>(X.cols()) + static_cast<int>(ar_lags.size());
    if (rows <= k + 1) throw Error("series too short for the requested Poisson AR fit");
    Eigen::MatrixXd Z(rows, k);
    Eigen::VectorXd yy = y.tail(rows);
    Z.leftCols(X.cols()) = X.bottomRows(rows);
    std::vector<std::string> znames = names;
    for (std::size_t i = 0; i < ar_lags.size(); ++i) {
        int l = ar_lags[i];
        for (int t = 0; t < rows; ++t)
            Z(t, X.cols() + static_cast<int>(i)) = std::log1p(y(t + max_lag - l));
        znames.push_back("ar_lag_" + std::to_string(l));
    }

    auto deviance = [&](const Eigen::VectorXd& mu) {
        double dev = 0.0;
        for (int t = 0; t < rows; ++t) {
            double obs = yy(t);
            if (obs > 0.0) dev += obs * std::log(obs / mu(t)) - (obs - mu(t));
            else dev += mu(t);
        }
        return 2.0 * dev;
    };

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd mu = (yy.array() + 0.5).matrix();
    Eigen::VectorXd eta = mu.array().log().matrix();
    double dev = deviance(mu);
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
        Eigen::VectorXd w = mu;
        Eigen::VectorXd z = eta + ((yy - mu).array() / mu.array()).matrix();
        Eigen::MatrixXd Zw = Z.array().colwise() * w.array().sqrt();
        Eigen::VectorXd zw = z.array() * w.array().sqrt();
        beta = Zw.colPivHouseholderQr().solve(zw);
        eta = Z * beta;
        if (eta.maxCoeff() > 30.0)
            throw Error("Poisson AR fit diverged (linear predictor overflow)");
        mu = eta.array().exp().matrix();
        double new_dev = deviance(mu);
        if (!std::isfinite(new_dev)) throw Error("Poisson AR fit diverged (non-finite deviance)");
        if (std::abs(new_dev - dev) <= 1e-8 * (std::abs(new_dev) + 0.1)) {
            dev = new_dev;
            converged = true;
            break;
        }
        dev = new_dev;
    }
    if (!converged) throw Error("Poisson AR fit did not converge in 100 IRLS iterations");

    ItsFit fit;
    fit.order = ArimaOrder{static_cast<int>(ar_lags.size()), 0, 0};
    fit.coef_names = znames;
    fit.coef = beta;
    fit.n_effective = rows;

    Eigen::MatrixXd info = Z.transpose() * (Z.array().colwise() * mu.array()).matrix();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    fit.coef_se = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
    if (lu.isInvertible()) {
        Eigen::MatrixXd cov = lu.inverse();
        for (int i = 0; i < k; ++i)
            fit.coef_se(i) =
                cov(i, i) > 0.0 ? std::sqrt(cov(i, i)) : std::numeric_limits<double>::quiet_NaN();
    }

    double ll = 0.0;
    for (int t = 0; t < rows; ++t) {
        ll += yy(t) * std::log(std::max(mu(t), 1e-300)) - mu(t) - std::lgamma(yy(t) + 1.0);
    }
    fit.loglik = ll;
    fit.aic = -2.0 * ll + 2.0 * k;
    fit.sigma2 = dev / std::max(rows - k, 1);

    std::vector<double> obs(yy.data(), yy.data() + rows);
    std::vector<double> hat(mu.data(), mu.data() + rows);
    double rho = stats::correlation(obs, hat);
    fit.r2 = rho * rho;
    fit.adj_r2 = rows - k - 1 > 0 ? 1.0 - (1.0 - fit.r2) * static_cast<double>(rows - 1) /
                                              static_cast<double>(rows - k - 1)
                                  : fit.r2;

    for (std::size_t i = 0; i < fit.coef_names.size(); ++i) {
        if (fit.coef_names[i] != "t") continue;
        fit.treatment_coef = fit.coef(static_cast<Eigen::Index>(i));
        fit.treatment_se = fit.coef_se(static_cast<Eigen::Index>(i));
        if (fit.treatment_se > 0.0 && std::isfinite(fit.treatment_se)) {
            double z = std::abs(fit.treatment_coef / fit.treatment_se);
            fit.treatment_p = 2.0 * (1.0 - stats::normal_cdf(z));
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Treatment summary across outcomes
// ---------------------------------------------------------------------------

struct ItsTreatmentRow {
    std::string outcome;
    double coef = 0.0;
    double se = 0.0;
    double p = 1.0;
    double adjusted_p = 1.0;
    Decision decision = Decision::FailToReject;
};

/// Per-outcome treatment coefficient table with Holm-Sidak adjusted p-values
/// (shared with the placebo module's correction).
inline std::vector<ItsTreatmentRow> its_report(const std::map<std::string, ItsFit>& fits,
                                               double alpha = 0.1) {
    if (fits.empty()) throw Error("ITS report needs at least one fit");
    std::map<std::string, double> raw;
    for (const auto& [outcome, fit] : fits) raw[outcome] = fit.treatment_p;
    AdjustedPValues adj = holm_sidak(raw, alpha);
    std::vector<ItsTreatmentRow> rows;
    for (const auto& [outcome, fit] : fits) {
        ItsTreatmentRow r;
        r.outcome = outcome;
        r.coef = fit.treatment_coef;
        r.se = fit.treatment_se;
        r.p = fit.treatment_p;
        r.adjusted_p = adj.adjusted.at(outcome);
        r.decision = adj.decisions.at(outcome);
        rows.push_back(r);
    }
    return rows;
}

} // namespace panelsynth

#endif
