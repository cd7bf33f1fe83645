#include <doctest.h>

#include <cmath>

#include "dsdm/rng.hpp"
#include "oracles.hpp"

using namespace dsdm;

TEST_CASE("seed and stream pairs reproduce and separate sequences") {
    Rng a(5, 0);
    Rng b(5, 0);
    Rng c(5, 1);
    Rng d(6, 0);
    bool differs_c = false;
    bool differs_d = false;
    for (int i = 0; i < 10; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        differs_c = differs_c || x != c.uniform();
        differs_d = differs_d || x != d.uniform();
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("uniform stays inside the open unit interval") {
    Rng r(1);
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        CHECK_UNARY(u > 0.0);
        CHECK_UNARY(u < 1.0);
    }
}

TEST_CASE("log-gamma draws stay finite for tiny shapes and have the right mean") {
    Rng r(2);
    double mean = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double lg = r.log_gamma(0.01);
        REQUIRE(std::isfinite(lg));
        mean += std::exp(lg);
    }
    // Gamma(0.01) has mean 0.01 and sd 0.1
    CHECK(std::abs(mean / n - 0.01) < 4.0 * 0.1 / std::sqrt(static_cast<double>(n)));
    double big = 0.0;
    for (int i = 0; i < n; ++i) big += std::exp(r.log_gamma(3.5));
    CHECK(big / n == doctest::Approx(3.5).epsilon(0.02));
}

TEST_CASE("categorical draws follow log weights") {
    Rng r(3);
    const std::vector<double> lw{std::log(0.2), -INFINITY, std::log(0.5), std::log(0.3)};
    std::vector<double> observed(4, 0.0);
    for (int i = 0; i < 50000; ++i) observed[r.categorical_log(lw)] += 1.0;
    CHECK(observed[1] == 0.0);
    CHECK(oracle::chi_square_p({observed[0], observed[2], observed[3]}, {0.2, 0.5, 0.3}) > 0.001);
    const std::vector<double> none{-INFINITY, -INFINITY};
    CHECK(r.categorical_log(none) == 2);
    const std::vector<double> huge{-1e300, 0.0};
    CHECK(r.categorical_log(huge) == 1);
}
