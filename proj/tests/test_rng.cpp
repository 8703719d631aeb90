#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cxr/rng.hpp"

using cxr::rng_stream;

TEST_CASE("same seed gives the same sequence", "[rng]") {
    rng_stream a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds give different sequences", "[rng]") {
    rng_stream a(1), b(2);
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) any_diff |= a.next_u64() != b.next_u64();
    REQUIRE(any_diff);
}

TEST_CASE("substream depends only on seed and index, not position", "[rng]") {
    rng_stream parent(7);
    rng_stream before = parent.substream(3);
    for (int i = 0; i < 1000; ++i) parent.next_u64();
    rng_stream after = parent.substream(3);
    for (int i = 0; i < 50; ++i) REQUIRE(before.next_u64() == after.next_u64());
}

TEST_CASE("sibling substreams differ", "[rng]") {
    rng_stream parent(7);
    std::set<std::uint64_t> firsts;
    for (std::uint64_t k = 0; k < 100; ++k) firsts.insert(parent.substream(k).next_u64());
    REQUIRE(firsts.size() == 100);
}

TEST_CASE("next_unit stays in [0, 1)", "[rng]") {
    rng_stream r(3);
    for (int i = 0; i < 100000; ++i) {
        const double u = r.next_unit();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("uniform covers its range evenly", "[rng]") {
    rng_stream r(11);
    int below_mid = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double v = r.uniform(-2.0, 6.0);
        REQUIRE(v >= -2.0);
        REQUIRE(v <= 6.0);
        if (v < 2.0) ++below_mid;
    }
    REQUIRE(std::abs(below_mid / double(n) - 0.5) < 0.01);
}

TEST_CASE("bernoulli frequency tracks p", "[rng]") {
    rng_stream r(13);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += r.bernoulli(0.3) ? 1 : 0;
    REQUIRE(std::abs(hits / double(n) - 0.3) < 0.01);
}

TEST_CASE("below is unbiased for a modulus that does not divide 2^64", "[rng]") {
    rng_stream r(17);
    int counts[3] = {0, 0, 0};
    const int n = 30000;
    for (int i = 0; i < n; ++i) ++counts[r.below(3)];
    for (int c : counts) REQUIRE(std::abs(c / double(n) - 1.0 / 3.0) < 0.015);
    REQUIRE(r.below(1) == 0);
}

TEST_CASE("below rejects zero", "[rng]") {
    rng_stream r(1);
    REQUIRE_THROWS_AS(r.below(0), std::invalid_argument);
}

TEST_CASE("normal has standard moments", "[rng]") {
    rng_stream r(19);
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sumsq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sumsq / n - 1.0) < 0.03);
}

TEST_CASE("gamma mean equals its shape", "[rng]") {
    rng_stream r(23);
    for (double shape : {0.1, 0.5, 1.0, 2.5, 9.0}) {
        double sum = 0.0;
        const int n = 50000;
        for (int i = 0; i < n; ++i) {
            const double x = r.gamma(shape);
            REQUIRE(x >= 0.0);
            sum += x;
        }
        REQUIRE(std::abs(sum / n - shape) < 0.05 * std::max(1.0, shape));
    }
    REQUIRE_THROWS_AS(r.gamma(0.0), std::invalid_argument);
}

TEST_CASE("beta(0.1, 0.1) is U-shaped with the right spread", "[rng]") {
    // Beta(a,b) sd = sqrt(ab / ((a+b)^2 (a+b+1))) = 0.45644 for a=b=0.1, and
    // the mass below 0.1 plus above 0.9 integrates to 0.8128.
    rng_stream r(29);
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    int tails = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.beta(0.1, 0.1);
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
        sum += x;
        sumsq += x * x;
        if (x < 0.1 || x > 0.9) ++tails;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sumsq / n - mean * mean);
    REQUIRE(std::abs(mean - 0.5) < 0.02);
    REQUIRE(std::abs(sd - 0.45643546458763845) < 0.02);
    REQUIRE(tails / double(n) > 0.78);
    REQUIRE(tails / double(n) < 0.85);
}

TEST_CASE("beta(5, 5) concentrates near the middle", "[rng]") {
    rng_stream r(31);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += r.beta(5.0, 5.0);
    REQUIRE(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("shuffle produces a permutation and mixes positions", "[rng]") {
    rng_stream r(37);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    int first_counts[8] = {0};
    const int trials = 8000;
    for (int t = 0; t < trials; ++t) {
        std::vector<int> w = v;
        r.shuffle(w.begin(), w.end());
        std::vector<int> sorted = w;
        std::sort(sorted.begin(), sorted.end());
        REQUIRE(sorted == v);
        ++first_counts[w[0]];
    }
    for (int c : first_counts) REQUIRE(std::abs(c / double(trials) - 1.0 / 8.0) < 0.03);
}

TEST_CASE("permutation covers 0..n-1", "[rng]") {
    rng_stream r(41);
    auto p = r.permutation(100);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p[i] == i);
}
