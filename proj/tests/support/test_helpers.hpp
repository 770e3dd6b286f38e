#ifndef PANELSYNTH_TEST_HELPERS_HPP
#define PANELSYNTH_TEST_HELPERS_HPP

#include <catch2/catch.hpp>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "panelsynth/datagen.hpp"
#include "panelsynth/panel.hpp"
#include "panelsynth/prng.hpp"
#include "panelsynth/synth.hpp"

namespace test_support {

using namespace panelsynth;

/// Independent iterative solver for the weight program: projected gradient on
/// the sum-to-one hyperplane with the intercept concentrated out by centering.
/// Used as the oracle against the closed-form stationarity solve; it shares no
/// code path with it.
struct OracleResult {
    Eigen::VectorXd weights;
    double intercept = 0.0;
    double objective = 0.0;
    int iterations = 0;
};

inline OracleResult projected_gradient_oracle(const Panel& panel, double lambda,
                                              int fit_blocks = -1, int max_iter = 300000,
                                              double tol = 1e-15) {
    if (fit_blocks < 0) fit_blocks = panel.t0;
    const int J = panel.n_donors();
    const int n = fit_blocks;
    Eigen::MatrixXd X(n, J);
    for (int j = 0; j < J; ++j) X.col(j) = panel.Y.row(j + 1).head(n).transpose();
    Eigen::VectorXd y = panel.Y.row(0).head(n).transpose();
    Eigen::RowVectorXd xm = X.colwise().mean();
    double ym = y.mean();
    Eigen::MatrixXd Xc = X.rowwise() - xm;
    Eigen::VectorXd yc = y.array() - ym;

    auto objective = [&](const Eigen::VectorXd& w) {
        return (yc - Xc * w).squaredNorm() / static_cast<double>(n) + lambda * w.squaredNorm();
    };

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Xc.transpose() * Xc);
    double lip = 2.0 * es.eigenvalues().maxCoeff() / static_cast<double>(n) + 2.0 * lambda;
    double step = 1.0 / std::max(lip, 1e-12);

    Eigen::VectorXd w = Eigen::VectorXd::Constant(J, 1.0 / J);
    double f_prev = objective(w);
    OracleResult res;
    int it = 0;
    for (; it < max_iter; ++it) {
        Eigen::VectorXd grad =
            2.0 * (Xc.transpose() * (Xc * w - yc)) / static_cast<double>(n) + 2.0 * lambda * w;
        Eigen::VectorXd next = w - step * grad;
        next.array() -= (next.sum() - 1.0) / static_cast<double>(J); // hyperplane projection
        double f_next = objective(next);
        w = next;
        if (std::abs(f_prev - f_next) <= tol * (std::abs(f_prev) + tol)) {
            f_prev = f_next;
            break;
        }
        f_prev = f_next;
    }
    res.weights = w;
    res.intercept = ym - xm.dot(w);
    res.objective = f_prev;
    res.iterations = it;
    return res;
}

/// Noisy factor-model panel for property tests.
inline Panel random_panel(std::uint64_t seed, int n_units, int n_blocks, int t0,
                          double noise_sd = 0.2) {
    FactorModelSpec spec;
    spec.seed = seed;
    spec.n_units = n_units;
    spec.n_blocks = n_blocks;
    spec.t0 = t0;
    spec.n_factors = 3;
    spec.noise_sd = noise_sd;
    spec.mode = LoadingMode::Generic;
    return generate_panel(spec).panel;
}

inline std::string temp_dir(const std::string& tag) {
    auto path = std::filesystem::temp_directory_path() / ("panelsynth_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path.string();
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

} // namespace test_support

#endif
