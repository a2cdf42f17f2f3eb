#include "common.hpp"

#include <kleinlab/hyperbolic.hpp>
#include <kleinlab/rng.hpp>

using namespace kleinlab;

namespace {

Mobius random_mobius(Rng& rng) {
    for (;;) {
        Mobius g(cplx(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)), cplx(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
                 cplx(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)), cplx(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)));
        if (std::abs(g.a * g.d - g.b * g.c) > 0.2) return g.normalize();
    }
}

H3Point random_point(Rng& rng) {
    return {cplx(rng.uniform(-2, 2), rng.uniform(-2, 2)), std::exp(rng.uniform(-1, 1))};
}

} // namespace

TEST(Mobius, NormalizeGivesUnitDeterminantAndSignRule) {
    Mobius g(cplx(-2, 1), cplx(0.5, 0), cplx(1, -1), cplx(3, 0));
    g.normalize();
    EXPECT_LT(std::abs(g.a * g.d - g.b * g.c - 1.0), 1e-12);
    EXPECT_GT(g.a.real(), 0.0);
    Mobius minus(-g.a, -g.b, -g.c, -g.d);
    EXPECT_EQ(sign_distance(g, minus), 0.0);
}

TEST(Mobius, ComposeIdentitiesOfOneParameterGroups) {
    Mobius g = Mobius(cplx(1, 2), cplx(0.3, 0), cplx(0, 1), cplx(1, 0)).normalize();
    kltest::expect_mobius_near(compose(Mobius::identity(), g), g, 1e-15);
    kltest::expect_mobius_near(compose(a_s(0.7), a_s(-1.9)), a_s(-1.2), 1e-14);
    kltest::expect_mobius_near(compose(n_z(cplx(1, 2)), n_z(cplx(-0.5, 0.25))), n_z(cplx(0.5, 2.25)), 1e-14);
}

TEST(Mobius, ActionOnPointsAndBoundary) {
    H3Point p = apply_h3(a_s(1.3), origin());
    EXPECT_NEAR(std::abs(p.z), 0.0, 1e-15);
    EXPECT_NEAR(p.t, std::exp(1.3), 1e-13);
    H3Point q{cplx(0.4, -0.2), 0.7};
    H3Point r = apply_h3(Mobius::identity(), q);
    EXPECT_EQ(r.z, q.z);
    EXPECT_EQ(r.t, q.t);
    EXPECT_TRUE(apply_boundary(a_s(2.0), BoundaryPoint::finite(0.0)) == BoundaryPoint::finite(0.0));
    EXPECT_TRUE(apply_boundary(a_s(2.0), BoundaryPoint::infinity()).at_infinity);
    BoundaryPoint w = apply_boundary(n_z(cplx(2, 1)), BoundaryPoint::infinity());
    EXPECT_LT(std::abs(w.z - 1.0 / cplx(2, 1)), 1e-15);
}

TEST(Distance, ClosedCasesAndInvariance) {
    EXPECT_NEAR(hyp_dist(origin(), {cplx(0), std::exp(1.0)}), 1.0, 1e-14);
    H3Point p{cplx(0.3, 0.1), 0.4};
    EXPECT_EQ(hyp_dist(p, p), 0.0);
    Rng rng(11, 0);
    for (int i = 0; i < 100; ++i) {
        Mobius g = random_mobius(rng);
        H3Point x = random_point(rng), y = random_point(rng);
        double d = hyp_dist(x, y);
        EXPECT_NEAR(hyp_dist(apply_h3(g, x), apply_h3(g, y)), d, 1e-10 * std::max(1.0, d));
    }
    H3Point nz = apply_h3(n_z(cplx(0.6, 0.8)), origin());
    EXPECT_NEAR(hyp_dist(nz, origin()), std::acosh(1.0 + 0.5), 1e-13);
}

TEST(Busemann, ClosedFormMatchesProbe) {
    EXPECT_NEAR(busemann(BoundaryPoint::infinity(), origin(), {cplx(0), std::exp(1.0)}), 1.0, 1e-9);
    H3Point x{cplx(0.2, 0.1), 0.8};
    EXPECT_EQ(busemann_closed(BoundaryPoint::finite(cplx(1, 1)), x, x), 0.0);
    Rng rng(12, 0);
    for (int i = 0; i < 50; ++i) {
        BoundaryPoint xi = BoundaryPoint::finite(cplx(rng.uniform(-2, 2), rng.uniform(-2, 2)));
        H3Point p = random_point(rng), q = random_point(rng);
        EXPECT_NEAR(busemann(xi, p, q), busemann_closed(xi, p, q), 1e-7);
    }
}

TEST(Busemann, CocycleAndEquivariance) {
    Rng rng(13, 0);
    for (int i = 0; i < 100; ++i) {
        Mobius g = random_mobius(rng);
        BoundaryPoint xi = BoundaryPoint::finite(cplx(rng.uniform(-2, 2), rng.uniform(-2, 2)));
        H3Point x = random_point(rng), y = random_point(rng), z = random_point(rng);
        double xy = busemann_closed(xi, x, y);
        EXPECT_NEAR(busemann_closed(xi, x, z), xy + busemann_closed(xi, y, z), 1e-9);
        EXPECT_NEAR(busemann_closed(apply_boundary(g, xi), apply_h3(g, x), apply_h3(g, y)), xy, 1e-9);
    }
}

TEST(Iwasawa, ClosedCasesAndRoundTrip) {
    IwasawaTriple a = iwasawa(a_s(3.0));
    EXPECT_NEAR(a.s, 3.0, 1e-13);
    EXPECT_LT(std::abs(a.z), 1e-13);
    kltest::expect_mobius_near(a.k, Mobius::identity(), 1e-13);
    IwasawaTriple n = iwasawa(n_z(cplx(2, 1)));
    EXPECT_NEAR(n.s, 0.0, 1e-13);
    EXPECT_LT(std::abs(n.z - cplx(2, 1)), 1e-13);
    Rng rng(14, 0);
    for (int i = 0; i < 100; ++i) {
        Mobius g = random_mobius(rng);
        kltest::expect_mobius_near(recompose(iwasawa(g)), g, 1e-9);
    }
}

TEST(BoxDecomposition, ClosedCasesAndRoundTrip) {
    auto id = decompose_box(Mobius::identity());
    ASSERT_TRUE(id);
    EXPECT_EQ(std::abs(id->w), 0.0);
    EXPECT_EQ(id->s, 0.0);
    EXPECT_EQ(std::abs(id->z), 0.0);
    auto w = decompose_box(nminus_w(cplx(0.3, -0.1)));
    ASSERT_TRUE(w);
    EXPECT_LT(std::abs(w->w - cplx(0.3, -0.1)), 1e-15);
    Mobius g = nminus_w(0.1) * a_s(0.05) * n_z(cplx(0, 0.2)) * m_theta(0.3);
    auto bc = decompose_box(g);
    ASSERT_TRUE(bc);
    EXPECT_NEAR(bc->w.real(), 0.1, 1e-8);
    EXPECT_NEAR(bc->s, 0.05, 1e-8);
    EXPECT_LT(std::abs(bc->z - cplx(0, 0.2)), 1e-8);
    EXPECT_NEAR(bc->theta, 0.3, 1e-8);
    kltest::expect_mobius_near(recompose(*bc), g, 1e-12);
}

TEST(Endpoints, ConventionAndInvariance) {
    Endpoints e = frame_endpoints(Mobius::identity());
    EXPECT_TRUE(e.plus.at_infinity);
    EXPECT_TRUE(boundary_close(e.minus, BoundaryPoint::finite(0.0), 1e-15));
    Rng rng(15, 0);
    for (int i = 0; i < 20; ++i) {
        Mobius g = random_mobius(rng);
        Endpoints e0 = frame_endpoints(g), e1 = frame_endpoints(g * a_s(rng.uniform(-2, 2)));
        EXPECT_TRUE(boundary_close(e0.plus, e1.plus, 1e-9));
        EXPECT_TRUE(boundary_close(e0.minus, e1.minus, 1e-9));
        Mobius m = m_theta(0.4);
        Endpoints e2 = frame_endpoints(m * g);
        EXPECT_TRUE(boundary_close(e2.plus, apply_boundary(m, e0.plus), 1e-9));
        EXPECT_TRUE(boundary_close(e2.minus, apply_boundary(m, e0.minus), 1e-9));
    }
}
