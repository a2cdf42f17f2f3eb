#pragma once

// Geometry of upper half-space H^3 = {(z, t) : z in C, t > 0} and of G = PSL(2, C).
//
// Convention table (regression-tested in tests/test_hyperbolic.cpp):
//   a_s      = diag(e^{s/2}, e^{-s/2})         a_s(0, 1) = (0, e^s)
//   n_z      = (1 0; z 1)                      fixes the boundary point 0
//   n^-_w    = (1 w; 0 1)                      fixes the boundary point infinity
//   u_t      = n_t, t real
//   m_theta  = diag(e^{i theta}, e^{-i theta}) theta is defined modulo pi
//   o        = (0, 1)
//   g^+      = g(infinity), g^- = g(0)         so (g a_s)^+ = g^+, (g n_z)^- = g^-,
//                                                 (g n^-_w)^+ = g^+
//   g a_s o  tends to g^+ as s -> +infinity.

#include <kleinlab/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <complex>
#include <optional>

namespace kleinlab {

using cplx = std::complex<double>;

struct H3Point {
    cplx z{0.0, 0.0};
    double t = 1.0;
};

inline H3Point origin() { return {cplx(0.0, 0.0), 1.0}; }

// A point of C u {infinity}. The tag is exact; no large-magnitude encoding.
struct BoundaryPoint {
    cplx z{0.0, 0.0};
    bool at_infinity = false;

    static BoundaryPoint infinity() { return {cplx(0.0, 0.0), true}; }
    static BoundaryPoint finite(cplx w) { return {w, false}; }
};

inline bool operator==(const BoundaryPoint& p, const BoundaryPoint& q) {
    if (p.at_infinity || q.at_infinity) return p.at_infinity == q.at_infinity;
    return p.z == q.z;
}

// Chordal-free comparison for tests: both infinite, or finite and close.
inline bool boundary_close(const BoundaryPoint& p, const BoundaryPoint& q, double tol) {
    if (p.at_infinity || q.at_infinity) return p.at_infinity == q.at_infinity;
    return std::abs(p.z - q.z) <= tol;
}

class Mobius {
public:
    cplx a{1.0}, b{0.0}, c{0.0}, d{1.0};

    Mobius() = default;
    Mobius(cplx a_, cplx b_, cplx c_, cplx d_) : a(a_), b(b_), c(c_), d(d_) {}

    // Scales to determinant one and applies the sign rule: the first entry (in the
    // order a, b, c, d) that is not negligible gets a positive real part, or a
    // positive imaginary part when its real part is exactly zero.
    Mobius& normalize() {
        cplx det = a * d - b * c;
        if (det == cplx(0.0)) throw NumericalError("SingularMatrix", "determinant is zero");
        if (std::abs(det - 1.0) > 8 * std::numeric_limits<double>::epsilon()) {
            cplx r = std::sqrt(det);
            a /= r; b /= r; c /= r; d /= r;
        }
        double scale = std::max({std::abs(a), std::abs(b), std::abs(c), std::abs(d)});
        for (cplx* e : {&a, &b, &c, &d}) {
            if (std::abs(*e) <= 1e-14 * scale) continue;
            bool flip = e->real() < 0.0 || (e->real() == 0.0 && e->imag() < 0.0);
            if (flip) { a = -a; b = -b; c = -c; d = -d; }
            break;
        }
        return *this;
    }

    Mobius normalized() const { Mobius g = *this; return g.normalize(); }

    Mobius inverse() const { return Mobius(d, -b, -c, a); }

    double frobenius_sq() const { return std::norm(a) + std::norm(b) + std::norm(c) + std::norm(d); }

    static Mobius identity() { return {}; }
    static Mobius diag(double s) { return {cplx(std::exp(s / 2)), 0.0, 0.0, cplx(std::exp(-s / 2))}; }
    static Mobius n(cplx z) { return {1.0, 0.0, z, 1.0}; }
    static Mobius nminus(cplx w) { return {1.0, w, 0.0, 1.0}; }
    static Mobius u(double t) { return n(cplx(t, 0.0)); }
    static Mobius m(double theta) { return Mobius(std::polar(1.0, theta), 0.0, 0.0, std::polar(1.0, -theta)).normalized(); }
};

// Raw product; determinant is preserved up to rounding, sign is left as computed.
inline Mobius operator*(const Mobius& g, const Mobius& h) {
    return {g.a * h.a + g.b * h.c, g.a * h.b + g.b * h.d, g.c * h.a + g.d * h.c, g.c * h.b + g.d * h.d};
}

inline Mobius compose(const Mobius& g, const Mobius& h) { return (g * h).normalize(); }

inline Mobius a_s(double s) { return Mobius::diag(s); }
inline Mobius n_z(cplx z) { return Mobius::n(z); }
inline Mobius nminus_w(cplx w) { return Mobius::nminus(w); }
inline Mobius u_t(double t) { return Mobius::u(t); }
inline Mobius m_theta(double theta) { return Mobius::m(theta); }

// Largest entrywise deviation between g and h, minimised over the sign of h.
inline double sign_distance(const Mobius& g, const Mobius& h) {
    auto dev = [&](double sgn) {
        return std::max({std::abs(g.a - sgn * h.a), std::abs(g.b - sgn * h.b), std::abs(g.c - sgn * h.c),
                         std::abs(g.d - sgn * h.d)});
    };
    return std::min(dev(1.0), dev(-1.0));
}

inline bool approx_equal(const Mobius& g, const Mobius& h, double tol) { return sign_distance(g, h) <= tol; }

inline H3Point apply_h3(const Mobius& g, const H3Point& p) {
    cplx q = g.c * p.z + g.d;
    double den = std::norm(q) + std::norm(g.c) * p.t * p.t;
    cplx num = (g.a * p.z + g.b) * std::conj(q) + g.a * std::conj(g.c) * (p.t * p.t);
    return {num / den, p.t / den};
}

inline BoundaryPoint apply_boundary(const Mobius& g, const BoundaryPoint& xi) {
    if (xi.at_infinity) {
        if (g.c == cplx(0.0)) return BoundaryPoint::infinity();
        return BoundaryPoint::finite(g.a / g.c);
    }
    cplx den = g.c * xi.z + g.d;
    if (den == cplx(0.0)) return BoundaryPoint::infinity();
    return BoundaryPoint::finite((g.a * xi.z + g.b) / den);
}

inline double hyp_dist(const H3Point& p, const H3Point& q) {
    double dt = p.t - q.t;
    double chord = std::sqrt(std::norm(p.z - q.z) + dt * dt);
    return 2.0 * std::asinh(chord / (2.0 * std::sqrt(p.t * q.t)));
}

// Unitary k with k(infinity) = xi; k fixes o, so k(0, e^s) runs along the ray from o to xi.
inline Mobius ray_rotation(const BoundaryPoint& xi) {
    if (xi.at_infinity) return Mobius::identity();
    double r = std::sqrt(1.0 + std::norm(xi.z));
    return {xi.z / r, -1.0 / r, 1.0 / r, std::conj(xi.z) / r};
}

// beta_xi(x, y) = lim d(x, xi_s) - d(y, xi_s), evaluated with a probe point marching
// along the ray from o toward xi.
inline double busemann(const BoundaryPoint& xi, const H3Point& x, const H3Point& y) {
    const Mobius k = ray_rotation(xi);
    double prev = 0.0;
    bool have_prev = false;
    for (double s = 10.0; s <= 300.0; s += 2.0) {
        H3Point probe = apply_h3(k, H3Point{cplx(0.0), std::exp(s)});
        double val = hyp_dist(x, probe) - hyp_dist(y, probe);
        if (have_prev && std::abs(val - prev) < 1e-10) return val;
        prev = val;
        have_prev = true;
    }
    throw NumericalError("NonConvergence", "Busemann probe did not stabilise");
}

inline double poisson_kernel(const H3Point& p, cplx xi) { return p.t / (std::norm(p.z - xi) + p.t * p.t); }

// Closed form of the same cocycle: log of a Poisson-kernel ratio, or of a height ratio at infinity.
inline double busemann_closed(const BoundaryPoint& xi, const H3Point& x, const H3Point& y) {
    if (xi.at_infinity) return std::log(y.t / x.t);
    return std::log(poisson_kernel(y, xi.z) / poisson_kernel(x, xi.z));
}

struct IwasawaTriple {
    Mobius k;
    double s = 0.0;
    cplx z{0.0};
};

// g = k a_s n_z with k unitary. The second column of a_s n_z is (0, e^{-s/2}).
inline IwasawaTriple iwasawa(const Mobius& g) {
    double col = std::sqrt(std::norm(g.b) + std::norm(g.d));
    double s = -2.0 * std::log(col);
    double e = std::exp(s / 2);
    cplx alpha = std::conj(g.d * e);
    cplx beta = -std::conj(g.b * e);
    Mobius k(alpha, -std::conj(beta), beta, std::conj(alpha));
    Mobius rest = k.inverse() * g;
    IwasawaTriple out;
    out.k = k;
    out.s = s;
    out.z = rest.c * e;
    return out;
}

inline Mobius recompose(const IwasawaTriple& tr) { return tr.k * a_s(tr.s) * n_z(tr.z); }

struct BoxCoords {
    cplx w{0.0};
    double s = 0.0;
    cplx z{0.0};
    double theta = 0.0;
};

// g = n^-_w a_s n_z m_theta. With g = (A B; C D): D = e^{-s/2} e^{-i theta},
// B = w D and C = z conj(D). Fails only when D vanishes (g^- = infinity).
inline std::optional<BoxCoords> decompose_box(const Mobius& g) {
    double scale = std::sqrt(g.frobenius_sq());
    if (std::abs(g.d) <= 1e-12 * scale) return std::nullopt;
    BoxCoords out;
    out.s = -2.0 * std::log(std::abs(g.d));
    double theta = -std::arg(g.d);
    if (theta > M_PI / 2) theta -= M_PI;
    if (theta <= -M_PI / 2) theta += M_PI;
    out.theta = theta;
    out.w = g.b / g.d;
    out.z = g.c / std::conj(g.d);
    return out;
}

inline Mobius recompose(const BoxCoords& bc) {
    return nminus_w(bc.w) * a_s(bc.s) * n_z(bc.z) * m_theta(bc.theta);
}

struct Endpoints {
    BoundaryPoint plus;
    BoundaryPoint minus;
};

inline Endpoints frame_endpoints(const Mobius& g) {
    return {apply_boundary(g, BoundaryPoint::infinity()), apply_boundary(g, BoundaryPoint::finite(0.0))};
}

// Hopf time coordinate beta_{g^-}(o, g o); it decreases by s along g -> g a_s.
inline double hopf_time(const Mobius& g) { return busemann(frame_endpoints(g).minus, origin(), apply_h3(g, origin())); }

// Frame h with h^+ = plus, h^- = minus whose base point is the point of the geodesic
// nearest to o.
inline Mobius geodesic_frame(const BoundaryPoint& plus, const BoundaryPoint& minus) {
    Mobius h;
    if (plus.at_infinity) h = Mobius(1.0, minus.z, 0.0, 1.0);
    else if (minus.at_infinity) h = Mobius(plus.z, -1.0, 1.0, 0.0);
    else h = Mobius(plus.z, minus.z, 1.0, 1.0) * Mobius(1.0 / std::sqrt(plus.z - minus.z), 0.0, 0.0, std::sqrt(plus.z - minus.z));
    h.normalize();
    // Along h a_s o the distance to o is minimised where the Busemann functions of the
    // two endpoints agree.
    H3Point p = apply_h3(h, origin());
    double s = 0.5 * (busemann_closed(plus, origin(), p) - busemann_closed(minus, origin(), p));
    return (h * a_s(-s)).normalize();
}

// Fixed points (attracting first) of a loxodromic element.
inline std::array<BoundaryPoint, 2> fixed_points(const Mobius& g) {
    if (g.c == cplx(0.0)) {
        BoundaryPoint fin = BoundaryPoint::finite(g.b / (g.d - g.a));
        bool inf_attracts = std::abs(g.a) > std::abs(g.d);
        return inf_attracts ? std::array<BoundaryPoint, 2>{BoundaryPoint::infinity(), fin}
                            : std::array<BoundaryPoint, 2>{fin, BoundaryPoint::infinity()};
    }
    cplx disc = std::sqrt((g.a + g.d) * (g.a + g.d) - 4.0);
    cplx z1 = (g.a - g.d + disc) / (2.0 * g.c), z2 = (g.a - g.d - disc) / (2.0 * g.c);
    // |g'(z)| = 1 / |cz + d|^2
    if (std::abs(g.c * z1 + g.d) > std::abs(g.c * z2 + g.d)) return {BoundaryPoint::finite(z1), BoundaryPoint::finite(z2)};
    return {BoundaryPoint::finite(z2), BoundaryPoint::finite(z1)};
}

// cosh d(o, g o) = |g|_F^2 / 2 for det g = 1.
inline double displacement(const Mobius& g) {
    double c = 0.5 * g.frobenius_sq();
    return std::acosh(std::max(1.0, c));
}

// Metric on G used for neighbourhood tests: hyperbolic distance of base points plus
// the rotation angle of the unitary Iwasawa factor of g^{-1} h.
inline double frame_distance(const Mobius& g, const Mobius& h) {
    Mobius q = g.inverse() * h;
    IwasawaTriple tr = iwasawa(q);
    double tr_half = std::min(1.0, std::abs(tr.k.a.real()));
    return hyp_dist(apply_h3(g, origin()), apply_h3(h, origin())) + 2.0 * std::acos(tr_half);
}

} // namespace kleinlab
