#include <catch2/catch.hpp>

#include <cmath>

#include "panelsynth/loess.hpp"
#include "panelsynth/prng.hpp"

using namespace panelsynth;

TEST_CASE("local linear smoothing reproduces a straight line") {
    std::vector<double> y;
    for (int i = 0; i < 120; ++i) y.push_back(3.0 - 0.25 * i);
    auto smoothed = loess_smooth(y, 0.07);
    REQUIRE(smoothed.size() == y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(smoothed[i] == Approx(y[i]).margin(1e-9));
}

TEST_CASE("constant series stays constant") {
    std::vector<double> y(50, 4.2);
    for (double v : loess_smooth(y, 0.2)) CHECK(v == Approx(4.2).margin(1e-12));
}

TEST_CASE("smoothing a noisy sine reduces the error to the truth") {
    SplitMix64 rng(2);
    const int n = 400;
    std::vector<double> truth(n), noisy(n);
    for (int i = 0; i < n; ++i) {
        truth[static_cast<std::size_t>(i)] = std::sin(2.0 * M_PI * i / 200.0);
        noisy[static_cast<std::size_t>(i)] =
            truth[static_cast<std::size_t>(i)] + 0.3 * rng.next_normal();
    }
    auto smoothed = loess_smooth(noisy, 0.07);
    double err_raw = 0.0, err_smooth = 0.0;
    for (int i = 0; i < n; ++i) {
        err_raw += std::pow(noisy[static_cast<std::size_t>(i)] - truth[static_cast<std::size_t>(i)], 2);
        err_smooth +=
            std::pow(smoothed[static_cast<std::size_t>(i)] - truth[static_cast<std::size_t>(i)], 2);
    }
    CHECK(std::sqrt(err_smooth / n) < std::sqrt(err_raw / n));
}

TEST_CASE("span validation") {
    std::vector<double> y(100, 1.0);
    CHECK_THROWS_AS(loess_smooth(y, 0.0), Error);
    CHECK_THROWS_AS(loess_smooth(y, -0.1), Error);
    CHECK_THROWS_AS(loess_smooth(y, 1.5), Error);
    CHECK_NOTHROW(loess_smooth(y, 1.0));
    std::vector<double> tiny(3, 1.0);
    CHECK_THROWS_AS(loess_smooth(tiny, 0.5), Error);
}
