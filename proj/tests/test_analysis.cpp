#include "common.hpp"

#include <kleinlab/analysis.hpp>

using namespace kleinlab;

namespace {

AtomicMeasure segment_measure(int n) {
    AtomicMeasure mu;
    for (int i = 0; i < n; ++i) mu.add(BoundaryPoint::finite(cplx((i + 0.5) / n, 0.0)), 1.0 / n);
    mu.recompute_total();
    return mu;
}

void cantor(double lo, double len, int depth, std::vector<double>& out) {
    if (depth == 0) {
        out.push_back(lo + 0.5 * len);
        return;
    }
    cantor(lo, len / 3, depth - 1, out);
    cantor(lo + 2 * len / 3, len / 3, depth - 1, out);
}

} // namespace

TEST(Energy, TwoAtomsInClosedForm) {
    AtomicMeasure mu;
    mu.add(BoundaryPoint::finite(0.0), 0.25);
    mu.add(BoundaryPoint::finite(cplx(0.0, 2.0)), 0.75);
    mu.add(BoundaryPoint::infinity(), 1.0);
    EXPECT_NEAR(alpha_energy(mu, 1.0), 2 * 0.25 * 0.75 / 2.0, 1e-15);
    EXPECT_EQ(planar_atoms(mu).points.size(), 2u);
    EXPECT_THROW(alpha_energy(mu, 0.0), ConfigError);
}

TEST(Energy, UniformSegmentMatchesTheIntegral) {
    double alpha = 0.5;
    double exact = 2.0 / ((1.0 - alpha) * (2.0 - alpha));
    EXPECT_NEAR(alpha_energy(segment_measure(4000), alpha) / exact, 1.0, 0.02);
}

TEST(Energy, TreeAgreesWithDirectSum) {
    Rng rng(41, 0);
    AtomicMeasure mu;
    for (int i = 0; i < 3000; ++i) mu.add(BoundaryPoint::finite(cplx(rng.uniform(), rng.uniform())), rng.uniform(0.5, 1.5));
    PlanarAtoms a = planar_atoms(mu);
    for (double alpha : {0.5, 1.2}) {
        double direct = alpha_energy_exact(a, alpha, 1);
        EXPECT_NEAR(alpha_energy_tree(a, alpha, 1) / direct, 1.0, 1e-3);
        EXPECT_EQ(alpha_energy_exact(a, alpha, 4), direct);
        EXPECT_EQ(alpha_energy_tree(a, alpha, 4), alpha_energy_tree(a, alpha, 1));
    }
}

TEST(Projection, CoordinatesAndHistogram) {
    EXPECT_DOUBLE_EQ(project_point(cplx(0, 1), 0.0), 1.0);
    EXPECT_NEAR(project_point(cplx(1, 0), M_PI / 2), -1.0, 1e-15);
    AtomicMeasure seg = segment_measure(1000);
    ProjectedMeasure p = project(seg, M_PI / 2);
    EXPECT_NEAR(p.total, 1.0, 1e-12);
    Histogram h = projected_density(p, 50);
    double mass = 0.0;
    for (double m : h.mass) mass += m;
    EXPECT_NEAR(mass, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(h.occupancy(), 1.0);
    for (double d : h.density) EXPECT_NEAR(d, 1.0, 0.03);
    EXPECT_EQ(histogram_l2(h, h), 0.0);

    Histogram flat = projected_density(project(seg, 0.0), 32);
    EXPECT_DOUBLE_EQ(flat.occupancy(), 1.0 / 32);
    EXPECT_THROW(projected_density(p, 8), ConfigError);
    EXPECT_THROW(histogram_l2(h, flat), ConfigError);
    EXPECT_THROW(projected_density(ProjectedMeasure{}, 32), NumericalError);
}

TEST(Projection, HistogramCsv) {
    ProjectedMeasure p;
    p.positions = {0.0, 1.0};
    p.weights = {1.0, 1.0};
    Histogram h = projected_density(p, 16, 0.0, 16.0);
    std::string csv = histogram_csv(h, "p");
    EXPECT_EQ(csv.substr(0, csv.find("1,2")), "# p\nbin_lo,bin_hi,mass,density\n0,1,1,1\n");
}

TEST(BoxDimension, SquareSegmentAndCantorSet) {
    auto radii = geometric_grid(1e-3, 0.1, 12);
    std::vector<cplx> sq;
    for (int i = 0; i < 400; ++i)
        for (int j = 0; j < 400; ++j) sq.push_back(cplx((i + 0.5) / 400, (j + 0.5) / 400));
    EXPECT_NEAR(box_dimension(sq, radii, 1.0 / 800).slope, 2.0, 0.05);

    std::vector<double> seg;
    for (int i = 0; i < 20000; ++i) seg.push_back((i + 0.5) / 20000);
    EXPECT_NEAR(box_dimension_1d(seg, radii).slope, 1.0, 0.03);

    std::vector<double> c;
    cantor(0.0, 1.0, 14, c);
    BoxDimFit fit = box_dimension_1d(c, geometric_grid(1e-4, 0.1, 20), std::pow(3.0, -14));
    EXPECT_NEAR(fit.slope, std::log(2.0) / std::log(3.0), 0.03);
    EXPECT_EQ(fit.radii.size(), fit.residuals.size());

    EXPECT_THROW(box_dimension({cplx(0)}, radii), NumericalError);
    EXPECT_THROW(box_dimension(sq, {0.5, 0.6}), NumericalError);
}

TEST(Window, ConstantFunctionInClosedForm) {
    TimeSeries ts;
    for (int k = -100; k <= 100; ++k) {
        ts.times.push_back(0.1 * k);
        ts.values.push_back(1.0);
    }
    WindowResult a = window_from_series(ts, 10.0, 0.25);
    EXPECT_NEAR(a.inner, 5.0, 1e-12);
    EXPECT_NEAR(a.outer, 20.0, 1e-12);
    EXPECT_TRUE(a.good);
    EXPECT_FALSE(window_from_series(ts, 10.0, 0.75).good);
    EXPECT_THROW(window_from_series(ts, 10.0, 1.0), ConfigError);
}

TEST(HopfRatio, ProportionalFunctionsAndZeroDenominator) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    FramePoint x = make_frame(G, compose(a_s(0.2), n_z(cplx(0.1, 0.3))));
    FrameFunction psi2 = [](const Mobius& g) { return std::exp(-hyp_dist(apply_h3(g, origin()), origin())); };
    FrameFunction psi1 = [&](const Mobius& g) { return 3.0 * psi2(g); };
    auto r = hopf_ratio(G, x, psi1, psi2, {1.0, 5.0, 20.0}, 0.05);
    ASSERT_EQ(r.size(), 3u);
    for (double v : r) EXPECT_NEAR(v, 3.0, 1e-12);
    FrameFunction zero = [](const Mobius&) { return 0.0; };
    EXPECT_THROW(hopf_ratio(G, x, psi1, zero, {1.0}, 0.05), NumericalError);
    EXPECT_THROW(hopf_ratio(G, x, psi1, psi2, {}, 0.05), ConfigError);
}
