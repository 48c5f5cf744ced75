#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "vbstream/metrics.hpp"

#include "oracles.hpp"

using namespace vbs;
using namespace vbs::metrics;

TEST_CASE("nmi examples") {
    CHECK(nmi({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nmi({0, 0, 1, 1}, {0, 0, 0, 0}) == doctest::Approx(0.0));
    // Independent partitions: the all-ones 2x2 table has zero mutual information.
    CHECK(nmi({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(0.0));
    // Degenerate: both constant partitions coincide.
    CHECK(nmi({3, 3, 3}, {1, 1, 1}) == 1.0);
    CHECK_THROWS_AS(nmi({0, 1}, {0}), ShapeError);
}

TEST_CASE("ari examples") {
    CHECK(ari({0, 0, 1, 1}, {5, 5, 9, 9}) == doctest::Approx(1.0));
    CHECK(ari({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK_THROWS_AS(ari({0}, {0}), std::domain_error);
}

TEST_CASE("homogeneity examples") {
    // Every cluster pure (clusters refine classes).
    CHECK(homogeneity({0, 0, 1, 1}, {0, 1, 2, 3}) == doctest::Approx(1.0));
    // One cluster over two balanced classes.
    CHECK(homogeneity({0, 0, 1, 1}, {0, 0, 0, 0}) == doctest::Approx(0.0));
    // Worked case: H(C) = ln 2, H(C|K) from the (3,1)-split cluster.
    const double h_ck = -(2.0 / 4.0 * std::log(2.0 / 3.0) + 1.0 / 4.0 * std::log(1.0 / 3.0));
    CHECK(homogeneity({0, 0, 1, 1}, {0, 0, 0, 1}) ==
          doctest::Approx(1.0 - h_ck / std::log(2.0)).epsilon(1e-12));
    CHECK(homogeneity({0, 0, 1, 1}, {0, 0, 0, 1}) ==
          doctest::Approx(oracle::homogeneity({0, 0, 1, 1}, {0, 0, 0, 1})).epsilon(1e-12));
}

TEST_CASE("v_measure examples") {
    CHECK(v_measure({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    // Transpose-symmetric table: completeness equals homogeneity, so V1 = h.
    const std::vector<int> l = {0, 0, 1, 1};
    const std::vector<int> c = {0, 1, 0, 1};
    CHECK(v_measure(l, c) == doctest::Approx(homogeneity(l, c)).epsilon(1e-12));
    // Weighted variant stays within the harmonic-mean formula.
    CHECK(v_measure({0, 0, 1, 1}, {0, 0, 0, 1}, 2.0) ==
          doctest::Approx(oracle::v_measure({0, 0, 1, 1}, {0, 0, 0, 1}, 2.0)).epsilon(1e-12));
}

TEST_CASE("all four metrics agree exactly with the exhaustive oracle") {
    for (std::size_t n = 2; n <= 7; ++n) {
        const auto parts = oracle::partitions(n, 3);
        for (const auto& a : parts)
            for (const auto& b : parts) {
                CHECK(std::fabs(nmi(a, b) - oracle::nmi(a, b)) <= 1e-12);
                CHECK(std::fabs(ari(a, b) - oracle::ari(a, b)) <= 1e-12);
                CHECK(std::fabs(homogeneity(a, b) - oracle::homogeneity(a, b)) <= 1e-12);
                CHECK(std::fabs(v_measure(a, b) - oracle::v_measure(a, b)) <= 1e-12);
            }
    }
}

TEST_CASE("metrics are invariant under relabeling and nmi is symmetric") {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 4 + gen() % 10;
        std::vector<int> l(n), c(n);
        for (std::size_t i = 0; i < n; ++i) {
            l[i] = static_cast<int>(gen() % 3);
            c[i] = static_cast<int>(gen() % 3);
        }
        // Relabel classes 0,1,2 -> 7,5,6 and clusters 0,1,2 -> 2,0,1.
        std::vector<int> lr(n), cr(n);
        const int lmap[3] = {7, 5, 6};
        const int cmap[3] = {2, 0, 1};
        for (std::size_t i = 0; i < n; ++i) {
            lr[i] = lmap[l[i]];
            cr[i] = cmap[c[i]];
        }
        CHECK(nmi(l, c) == doctest::Approx(nmi(lr, cr)).epsilon(1e-12));
        CHECK(ari(l, c) == doctest::Approx(ari(lr, cr)).epsilon(1e-12));
        CHECK(homogeneity(l, c) == doctest::Approx(homogeneity(lr, cr)).epsilon(1e-12));
        CHECK(v_measure(l, c) == doctest::Approx(v_measure(lr, cr)).epsilon(1e-12));
        CHECK(nmi(l, c) == doctest::Approx(nmi(c, l)).epsilon(1e-12));

        CHECK(nmi(l, c) >= -1e-12);
        CHECK(nmi(l, c) <= 1.0 + 1e-12);
        CHECK(homogeneity(l, c) >= -1e-12);
        CHECK(homogeneity(l, c) <= 1.0 + 1e-12);
        CHECK(v_measure(l, c) >= -1e-12);
        CHECK(v_measure(l, c) <= 1.0 + 1e-12);
        CHECK(ari(l, c) <= 1.0 + 1e-12);
    }
}

TEST_CASE("novelty precision and recall under majority mapping") {
    // Perfect detection.
    {
        const auto reports = novelty_precision_recall({10, 10, 20, 20}, {0, 0, 1, 1}, {20});
        REQUIRE(reports.size() == 1);
        CHECK(reports[0].precision == doctest::Approx(1.0));
        CHECK(reports[0].recall == doctest::Approx(1.0));
        CHECK(!reports[0].no_novel_cluster);
    }
    // Half the novel points captured: cluster 1 is the only B-majority cluster.
    {
        const auto reports = novelty_precision_recall({10, 10, 20, 20}, {0, 0, 0, 1}, {20});
        CHECK(reports[0].precision == doctest::Approx(1.0));
        CHECK(reports[0].recall == doctest::Approx(0.5));
    }
    // No cluster with a novel majority: flagged, both scores zero.
    {
        const auto reports = novelty_precision_recall({10, 10, 10, 20}, {0, 0, 0, 0}, {20});
        CHECK(reports[0].no_novel_cluster);
        CHECK(reports[0].precision == 0.0);
        CHECK(reports[0].recall == 0.0);
    }
    CHECK_THROWS_AS(novelty_precision_recall({1, 1}, {0, 0}, {5}), std::domain_error);
}
