#include "common.hpp"

#include <kleinlab/patterson.hpp>

using namespace kleinlab;

namespace {

AtomicMeasure segment_measure(int n) {
    AtomicMeasure mu;
    for (int i = 0; i < n; ++i) mu.add(BoundaryPoint::finite(cplx((i + 0.5) / n, 0.0)), 1.0, 0.5 / n);
    mu.normalize();
    return mu;
}

AtomicMeasure square_measure(int n) {
    AtomicMeasure mu;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mu.add(BoundaryPoint::finite(cplx((i + 0.5) / n, (j + 0.5) / n)), 1.0, 0.5 / n);
    mu.normalize();
    return mu;
}

} // namespace

TEST(AtomicMeasure, WeightsTotalsAndResolution) {
    AtomicMeasure mu;
    mu.add(BoundaryPoint::finite(0.0), 1.0, 0.1);
    mu.add(BoundaryPoint::finite(1.0), 3.0, 0.3);
    EXPECT_THROW(mu.add(BoundaryPoint::finite(2.0), 0.0), NumericalError);
    EXPECT_THROW(mu.add(BoundaryPoint::finite(2.0), NAN), NumericalError);
    mu.normalize();
    EXPECT_DOUBLE_EQ(mu.total, 1.0);
    EXPECT_DOUBLE_EQ(mu.weights[1], 0.75);
    EXPECT_DOUBLE_EQ(mu.max_resolution(), 0.3);
    EXPECT_DOUBLE_EQ(ball_mass(mu, 0.0, 0.5), 0.25);
}

TEST(Poincare, PartialSumsCountWordsAtZeroAndDecreaseInS) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    EXPECT_DOUBLE_EQ(poincare_partial(G, 0.0, 5), static_cast<double>(word_count(2, 5)));
    EXPECT_GT(poincare_partial(G, 0.5, 6), poincare_partial(G, 1.0, 6));
    EXPECT_THROW(poincare_partial(G, -1.0, 3), ConfigError);
    LevelTable tab = level_table(G, 6);
    ASSERT_EQ(tab.max_len(), 6);
    EXPECT_EQ(tab.levels[0].size(), 1u);
    EXPECT_EQ(tab.levels[3].size(), 36u);
    EXPECT_EQ(tab.levels[0][0], 0.0);
    double longest_min = *std::min_element(tab.levels[6].begin(), tab.levels[6].end());
    EXPECT_LE(tab.reliable_radius, longest_min);
}

TEST(CriticalExponent, EstimatorsAgreeOnAFuchsianGroup) {
    SchottkyGroup G(kltest::fuchsian_pairs());
    LevelTable tab = level_table(G, 10);
    DeltaEstimate a = estimate_delta_series(tab);
    DeltaEstimate b = estimate_delta_orbit(tab);
    EXPECT_EQ(a.method, "series-bisection");
    EXPECT_EQ(b.method, "orbit-growth");
    EXPECT_GT(a.value, 0.0);
    EXPECT_LT(a.value, 1.0);
    EXPECT_LT(std::abs(a.value - b.value), 0.05);
    EXPECT_LT(a.uncertainty, 0.01);
    EXPECT_THROW(estimate_delta_series(level_table(G, 6)), ConfigError);
    EXPECT_THROW(estimate_delta_orbit(level_table(G, 6)), ConfigError);
}

TEST(CriticalExponent, GrowsWithDiskRadius) {
    double small = estimate_delta_series(SchottkyGroup(kltest::symmetric_pairs(0.6)), 9).value;
    double large = estimate_delta_series(SchottkyGroup(kltest::symmetric_pairs(1.3)), 9).value;
    EXPECT_LT(small, large);
    EXPECT_LT(large, 2.0);
}

TEST(PattersonSullivan, BuildIsNormalisedAndSupportedInDisks) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    double d = estimate_delta_series(G, 8).value;
    AtomicMeasure mu = build_ps(G, origin(), d + 0.05, 8, d);
    EXPECT_NEAR(mu.total, 1.0, 1e-12);
    EXPECT_EQ(static_cast<long long>(mu.size()), word_count(2, 8) - word_count(2, 5));
    for (const auto& p : mu.points) {
        bool inside = false;
        for (const auto& D : G.disks()) inside = inside || D.contains(p.z);
        EXPECT_TRUE(inside);
    }
    EXPECT_THROW(build_ps(G, origin(), d - 0.01, 8, d), NumericalError);
    EXPECT_THROW(build_ps(G, origin(), d + 0.05, 6, d), ConfigError);
}

TEST(PattersonSullivan, ConformalResidualShrinksWithWordLength) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    H3Point y{cplx(0.3, 0.2), 1.4};
    ResidualStats r6 = conformal_residual(G, origin(), y, 6);
    ResidualStats r9 = conformal_residual(G, origin(), y, 9);
    EXPECT_GT(r6.count, 0u);
    EXPECT_LT(r9.median, r6.median);
    EXPECT_LT(r9.median, 0.05);
    EXPECT_LE(r9.median, r9.p90);
}

TEST(Shadow, RecoversDimensionOfUniformMeasures) {
    auto radii = geometric_grid(1e-3, 1.0, 30);
    EXPECT_NEAR(radii.front(), 1e-3, 1e-15);
    EXPECT_NEAR(radii.back(), 1.0, 1e-12);

    AtomicMeasure seg = segment_measure(20000);
    ShadowFit f1 = shadow_exponent(seg, {BoundaryPoint::finite(0.5), BoundaryPoint::finite(0.3)}, radii);
    EXPECT_NEAR(f1.slope, 1.0, 0.02);
    EXPECT_LT(f1.spread, 0.02);

    AtomicMeasure sq = square_measure(300);
    ShadowFit f2 = shadow_exponent(sq, {BoundaryPoint::finite(cplx(0.5, 0.5))}, radii);
    EXPECT_NEAR(f2.slope, 2.0, 0.05);
    EXPECT_GE(f2.r_lo, 10 * sq.max_resolution());

    EXPECT_THROW(shadow_exponent(seg, {BoundaryPoint::finite(0.5)}, geometric_grid(1e-6, 1e-5, 5)), NumericalError);
}

TEST(Shadow, NonfocusingFractionOfLinearAndPlanarMeasures) {
    AtomicMeasure seg = segment_measure(1000);
    EXPECT_DOUBLE_EQ(nonfocusing_fraction(seg, 0.5, 4.0, 0.1), 1.0);
    AtomicMeasure sq = square_measure(200);
    double f = nonfocusing_fraction(sq, cplx(0.5, 0.5), 4.0, 0.2);
    EXPECT_GT(f, 0.1);
    EXPECT_LT(f, 0.4);
}

TEST(Serialisation, MeasureCsvHasHeaderAndOneRowPerAtom) {
    AtomicMeasure mu;
    mu.add(BoundaryPoint::finite(cplx(0.5, -1)), 2.0);
    mu.add(BoundaryPoint::finite(cplx(1, 0)), 2.0);
    mu.normalize();
    std::string csv = measure_csv(mu, "tag");
    EXPECT_EQ(csv, "# total=1 tag\nre,im,weight\n0.5,-1,0.5\n1,0,0.5\n");
}
