#include <cmath>

#include "doctest.h"

#include "deepnoc/rng.hpp"

using deepnoc::Rng;

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("stream seeds differ per record and are order-free") {
    CHECK(deepnoc::stream_seed(7, 0) != deepnoc::stream_seed(7, 1));
    CHECK(deepnoc::stream_seed(7, 3) == deepnoc::stream_seed(7, 3));
    CHECK(deepnoc::stream_seed(7, 3) != deepnoc::stream_seed(8, 3));
}

TEST_CASE("uniform stays in [0,1) and has the right mean") {
    Rng rng(1);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
    Rng rng(2);
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("poisson mean tracks lambda") {
    Rng rng(3);
    const double lambda = 8.0;
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.poisson(lambda);
    CHECK(std::abs(sum / n - lambda) < 0.1);
    CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("beta stays in (0,1) with the right mean") {
    Rng rng(4);
    const double a = 20.0, b = 1.5;
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.beta(a, b);
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        sum += x;
    }
    CHECK(std::abs(sum / n - a / (a + b)) < 0.005);
}

TEST_CASE("uniform_int covers the range inclusively") {
    Rng rng(5);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(1, 10);
        CHECK(v >= 1);
        CHECK(v <= 10);
        saw_lo |= v == 1;
        saw_hi |= v == 10;
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
}

TEST_CASE("log_uniform respects degenerate and ordered ranges") {
    Rng rng(6);
    CHECK(rng.log_uniform(1000.0, 1000.0) == 1000.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.log_uniform(30.0, 30000.0);
        CHECK(v >= 30.0);
        CHECK(v <= 30000.0);
    }
}
