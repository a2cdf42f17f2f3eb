#pragma once

// Bowen-Margulis-Sullivan and Burger-Roblin measures on X = Gamma \ G, boxes, the base
// eigenfunction phi_0 and conditional leaf measures.
//
// Box around x0:  x0 N^-_rho A_rho N_rho M  with  |w| < rho, |s| < rho, |z| < rho.
// In KAN coordinates  dm^BR(k a_s n_z) = e^{-delta s} dnu_o(k(0)) ds dz  and the
// Lebesgue leaf measure on x N is exactly dz.

#include <kleinlab/error.hpp>
#include <kleinlab/hyperbolic.hpp>
#include <kleinlab/parallel.hpp>
#include <kleinlab/patterson.hpp>
#include <kleinlab/rng.hpp>
#include <kleinlab/schottky.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

// ---- frames ----------------------------------------------------------------------------

struct FramePoint {
    Mobius rep;
    BoundaryPoint plus;
    BoundaryPoint minus;
    double hopf = 0.0;  // beta_{rep^-}(o, rep o)
};

inline FramePoint frame_from_rep(const Mobius& rep) {
    FramePoint f;
    f.rep = rep;
    Endpoints e = frame_endpoints(rep);
    f.plus = e.plus;
    f.minus = e.minus;
    f.hopf = busemann_closed(f.minus, origin(), apply_h3(rep, origin()));
    return f;
}

inline FramePoint make_frame(const SchottkyGroup& G, const Mobius& g) { return frame_from_rep(reduce(G, g).rep); }

struct WeightedSample {
    FramePoint frame;
    double weight = 0.0;
};

// ---- densities ---------------------------------------------------------------------------

inline double bms_density(const Mobius& u, double delta) {
    Endpoints e = frame_endpoints(u);
    H3Point p = apply_h3(u, origin());
    return std::exp(delta * (busemann_closed(e.plus, origin(), p) + busemann_closed(e.minus, origin(), p)));
}

inline double br_density_kan(double s, double delta) { return std::exp(-delta * s); }

inline double leaf_ps_weight(const Mobius& y, cplx z, double delta) {
    Mobius v = y * n_z(z);
    return std::exp(delta * busemann_closed(frame_endpoints(v).plus, origin(), apply_h3(v, origin())));
}

inline double leaf_leb_weight(const Mobius& y, cplx z) {
    Mobius v = y * n_z(z);
    return std::exp(2.0 * busemann_closed(frame_endpoints(v).plus, origin(), apply_h3(v, origin())));
}

// ---- eigenfunction ---------------------------------------------------------------------------

inline double phi0_kernel(cplx xi, const H3Point& p, double delta) {
    double k = (std::norm(xi) + 1.0) * p.t / (std::norm(p.z - xi) + p.t * p.t);
    return std::pow(k, delta);
}

// Pairwise summation keeps the rounding floor of finite differences near machine precision.
inline double phi0(const AtomicMeasure& nu, double delta, const H3Point& p) {
    std::vector<double> terms(nu.size());
    for (size_t i = 0; i < nu.size(); ++i) {
        if (nu.points[i].at_infinity) terms[i] = nu.weights[i] * std::pow(p.t, delta);
        else terms[i] = nu.weights[i] * phi0_kernel(nu.points[i].z, p, delta);
    }
    return pairwise_sum(std::move(terms));
}

// |(-Delta_h phi0)(p) - delta (2 - delta) phi0(p)| / phi0(p) with
// Delta = t^2 (d_xx + d_yy + d_tt) - t d_t and central differences of step h t.
inline double laplacian_residual(const AtomicMeasure& nu, double delta, const H3Point& p, double h) {
    double e = h * p.t;
    auto f = [&](double dx, double dy, double dt) { return phi0(nu, delta, {p.z + cplx(dx, dy), p.t + dt}); };
    double f0 = f(0, 0, 0);
    double fxx = (f(e, 0, 0) - 2 * f0 + f(-e, 0, 0)) / (e * e);
    double fyy = (f(0, e, 0) - 2 * f0 + f(0, -e, 0)) / (e * e);
    double ftp = f(0, 0, e), ftm = f(0, 0, -e);
    double ftt = (ftp - 2 * f0 + ftm) / (e * e);
    double ft = (ftp - ftm) / (2 * e);
    double lap = p.t * p.t * (fxx + fyy + ftt) - p.t * ft;
    return std::abs(-lap - delta * (2.0 - delta) * f0) / f0;
}

// Aggregates atoms into square cells of side `cell`; each cell keeps its total weight
// at the weighted mean position.
inline AtomicMeasure coarsen(const AtomicMeasure& nu, double cell) {
    std::map<std::pair<long long, long long>, std::array<double, 3>> cells;
    AtomicMeasure out;
    for (size_t i = 0; i < nu.size(); ++i) {
        if (nu.points[i].at_infinity) {
            out.add(nu.points[i], nu.weights[i], 0.0);
            continue;
        }
        cplx z = nu.points[i].z;
        auto key = std::make_pair(static_cast<long long>(std::floor(z.real() / cell)),
                                  static_cast<long long>(std::floor(z.imag() / cell)));
        auto& c = cells[key];
        c[0] += nu.weights[i];
        c[1] += nu.weights[i] * z.real();
        c[2] += nu.weights[i] * z.imag();
    }
    for (const auto& [key, c] : cells) out.add(BoundaryPoint::finite(cplx(c[1] / c[0], c[2] / c[0])), c[0], cell);
    out.recompute_total();
    return out;
}

inline double limit_set_diameter(const AtomicMeasure& nu) {
    double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
    for (const auto& p : nu.points) {
        if (p.at_infinity) continue;
        lo_x = std::min(lo_x, p.z.real()); hi_x = std::max(hi_x, p.z.real());
        lo_y = std::min(lo_y, p.z.imag()); hi_y = std::max(hi_y, p.z.imag());
    }
    return std::hypot(hi_x - lo_x, hi_y - lo_y);
}

// ---- total BMS mass ----------------------------------------------------------------------

// Length of the geodesic (plus, minus) outside every half-ball over the Schottky disks.
inline double fundamental_length(const SchottkyGroup& G, cplx plus, cplx minus) {
    int dp = -1, dm = -1;
    for (int k = 0; k < G.letters(); ++k) {
        if (G.disk_of(k).contains(plus)) dp = k;
        if (G.disk_of(k).contains(minus)) dm = k;
    }
    if (dp < 0 || dm < 0 || dp == dm) return 0.0;
    Mobius hinv = geodesic_frame(BoundaryPoint::finite(plus), BoundaryPoint::finite(minus)).inverse();
    // In these coordinates the geodesic is the vertical axis; each hemisphere crosses it
    // at height sqrt(r^2 - |c|^2).
    Disk lo = image_disk(hinv, G.disk_of(dm)), hi = image_disk(hinv, G.disk_of(dp));
    double tau_lo = 0.5 * std::log(lo.radius * lo.radius - std::norm(lo.center));
    double tau_hi = 0.5 * std::log(hi.radius * hi.radius - std::norm(hi.center));
    return std::max(0.0, tau_hi - tau_lo);
}

// |m^BMS| = sum_{i != j} w_i w_j e^{delta (beta_i + beta_j)} L_F(xi_i, xi_j).
inline double bms_total_mass(const SchottkyGroup& G, const AtomicMeasure& nu, double delta, int threads = 1) {
    long long n = static_cast<long long>(nu.size());
    return chunked_sum(n * n, threads, [&](long long idx) {
        long long i = idx / n, j = idx % n;
        if (i == j || nu.points[i].at_infinity || nu.points[j].at_infinity) return 0.0;
        cplx a = nu.points[i].z, b = nu.points[j].z;
        double L = fundamental_length(G, a, b);
        if (L <= 0.0) return 0.0;
        H3Point p = apply_h3(geodesic_frame(nu.points[i], nu.points[j]), origin());
        double beta = busemann_closed(nu.points[i], origin(), p) + busemann_closed(nu.points[j], origin(), p);
        return nu.weights[i] * nu.weights[j] * std::exp(delta * beta) * L;
    }, 1024);
}

struct BmsNormalization {
    AtomicMeasure nu;       // scaled so that |m^BMS| = 1
    double factor = 1.0;    // applied scale
    double raw_mass = 0.0;  // |m^BMS| before scaling
};

// The mass is evaluated on a copy aggregated to cells of side diameter / cells_across.
inline BmsNormalization normalize_bms(const SchottkyGroup& G, const AtomicMeasure& nu, double delta,
                                      int cells_across = 48, int threads = 1) {
    AtomicMeasure coarse = coarsen(nu, limit_set_diameter(nu) / cells_across);
    BmsNormalization out;
    out.raw_mass = bms_total_mass(G, coarse, delta, threads);
    if (!(out.raw_mass > 0.0)) throw NumericalError("DegenerateMeasure", "BMS mass vanished");
    out.factor = 1.0 / std::sqrt(out.raw_mass);
    out.nu = nu;
    out.nu.scale(out.factor);
    return out;
}

// ---- boxes ---------------------------------------------------------------------------------

// Largest distance d(o, b o) over b in N^-_rho A_rho N_rho M.
inline double box_reach(double rho) { return rho + 4.0 * std::asinh(rho / 2.0); }

struct BoxSpec {
    Mobius center;  // reduced representative x0
    double rho = 0.0;
    double reach = 0.0;
    double min_return = 0.0;          // min over checked words of d(x0 o, gamma x0 o)
    std::vector<Mobius> targets;      // gamma^{-1} x0 for the words that can reach the box
    std::vector<Mobius> target_invs;  // x0^{-1} gamma
    std::vector<H3Point> target_points;
    double br_mass = 0.0;             // cached m^BR(E)
};

inline double min_return_distance(const SchottkyGroup& G, const Mobius& x0, int check_len) {
    H3Point p = apply_h3(x0, origin());
    double best = INFINITY;
    for_each_word(G, check_len, [&](const WordNode& nd) {
        if (nd.level > 0) best = std::min(best, hyp_dist(p, apply_h3(nd.element * x0, origin())));
        return true;
    });
    return best;
}

// Largest rho whose box passes the injectivity check, 2 reach(rho) < min return distance.
inline double max_box_radius(const SchottkyGroup& G, const Mobius& x0, int check_len = 6) {
    double half = 0.5 * min_return_distance(G, x0, check_len);
    double lo = 0.0, hi = half;
    for (int it = 0; it < 100; ++it) {
        double mid = 0.5 * (lo + hi);
        (box_reach(mid) < half ? lo : hi) = mid;
    }
    return lo;
}

// Box frame on a geodesic joining attracting fixed points of words of length <= 2, slid
// along it in steps of 1/4 over [-4, 4]; the frame with the largest return distance
// (words of length <= 4) wins, earliest on ties.
inline Mobius default_box_center(const SchottkyGroup& G) {
    std::vector<BoundaryPoint> fps;
    for_each_word(G, 2, [&](const WordNode& nd) {
        if (nd.level > 0) fps.push_back(fixed_points(nd.element)[0]);
        return true;
    });
    Mobius best_x;
    double best = -1.0;
    for (size_t i = 0; i < fps.size(); ++i)
        for (size_t j = 0; j < fps.size(); ++j) {
            if (i == j || boundary_close(fps[i], fps[j], 1e-9)) continue;
            Mobius h = geodesic_frame(fps[i], fps[j]);
            for (int k = -16; k <= 16; ++k) {
                Mobius x = reduce(G, h * a_s(0.25 * k)).rep;
                double m = min_return_distance(G, x, 4);
                if (m > best) {
                    best = m;
                    best_x = x;
                }
            }
        }
    return best_x;
}

inline BoxSpec make_box(const SchottkyGroup& G, const Mobius& x0, double rho, int check_len = 6) {
    if (!(rho > 0.0)) throw ConfigError("InvalidRadius", "box radius must be positive");
    BoxSpec E;
    E.center = reduce(G, x0).rep;
    E.rho = rho;
    E.reach = box_reach(rho);
    E.min_return = min_return_distance(G, E.center, check_len);
    if (E.min_return <= 2.0 * E.reach)
        throw ConfigError("BoxNotInjective", "box radius " + format_double(rho) + " exceeds the injectivity bound");
    H3Point p = apply_h3(E.center, origin());
    for_each_word(G, 64, [&](const WordNode& nd) {
        if (nd.level > 0 && distance_to_halfball(p, nd.nested) > E.reach) return false;
        Mobius inv = nd.element.inverse() * E.center;
        E.targets.push_back(inv);
        E.target_invs.push_back(inv.inverse());
        E.target_points.push_back(apply_h3(inv, origin()));
        return true;
    });
    return E;
}

inline bool box_coords_inside(const BoxCoords& bc, double rho) {
    return std::abs(bc.w) < rho && std::abs(bc.s) < rho && std::abs(bc.z) < rho;
}

// Box coordinates of a reduced representative, when it lies in the box.
inline std::optional<BoxCoords> box_coords(const BoxSpec& E, const Mobius& rep) {
    H3Point p = apply_h3(rep, origin());
    for (size_t j = 0; j < E.targets.size(); ++j) {
        if (hyp_dist(p, E.target_points[j]) > E.reach + 1e-9) continue;
        auto bc = decompose_box(E.target_invs[j] * rep);
        if (bc && box_coords_inside(*bc, E.rho)) return bc;
    }
    return std::nullopt;
}

inline bool in_box(const BoxSpec& E, const Mobius& rep) { return box_coords(E, rep).has_value(); }

inline std::uint64_t box_hash(const BoxSpec& E) {
    std::ostringstream os;
    for (cplx e : {E.center.a, E.center.b, E.center.c, E.center.d})
        os << format_double(e.real()) << ',' << format_double(e.imag()) << ',';
    os << format_double(E.rho);
    return fnv1a(os.str());
}

// Atoms of nu seen from x0: w = x0^{-1} xi with |w| < rho, reweighted to the density of
// m^BR in box coordinates, w_xi e^{-delta beta_xi(x0 o, o)} (1 + |w|^2)^delta.
struct BoxPatch {
    std::vector<cplx> w;
    std::vector<double> weight;
    std::vector<size_t> atom;
    double total = 0.0;
};

inline BoxPatch box_patch(const BoxSpec& E, const AtomicMeasure& nu, double delta) {
    BoxPatch P;
    Mobius inv = E.center.inverse();
    H3Point p0 = apply_h3(E.center, origin());
    for (size_t i = 0; i < nu.size(); ++i) {
        BoundaryPoint w = apply_boundary(inv, nu.points[i]);
        if (w.at_infinity || std::abs(w.z) >= E.rho) continue;
        double c = nu.weights[i] * std::exp(-delta * busemann_closed(nu.points[i], p0, origin())) *
                   std::pow(1.0 + std::norm(w.z), delta);
        P.w.push_back(w.z);
        P.weight.push_back(c);
        P.atom.push_back(i);
    }
    P.total = pairwise_sum(P.weight);
    return P;
}

// Closed form: sum over the patch of pi rho^2 * int_{-rho}^{rho} e^{-delta s} ds.
inline double br_box_mass(const BoxSpec& E, const AtomicMeasure& nu, double delta) {
    BoxPatch P = box_patch(E, nu, delta);
    return P.total * M_PI * E.rho * E.rho * 2.0 * std::sinh(delta * E.rho) / delta;
}

// Independent midpoint quadrature of m^BR(E): for each atom, an (s, z) grid in box
// coordinates, with the density e^{-delta s'} read off the Iwasawa decomposition.
inline double br_box_mass_quadrature(const BoxSpec& E, const AtomicMeasure& nu, double delta, int nz, int ns) {
    Mobius inv = E.center.inverse();
    double acc = 0.0;
    double hz = 2.0 * E.rho / nz, hs = 2.0 * E.rho / ns;
    for (size_t i = 0; i < nu.size(); ++i) {
        BoundaryPoint w = apply_boundary(inv, nu.points[i]);
        if (w.at_infinity || std::abs(w.z) >= E.rho) continue;
        double part = 0.0;
        for (int a = 0; a < ns; ++a) {
            double s = -E.rho + (a + 0.5) * hs;
            for (int b = 0; b < nz; ++b)
                for (int c = 0; c < nz; ++c) {
                    cplx z(-E.rho + (b + 0.5) * hz, -E.rho + (c + 0.5) * hz);
                    if (std::abs(z) >= E.rho) continue;
                    Mobius g = E.center * nminus_w(w.z) * a_s(s) * n_z(z);
                    part += std::exp(-delta * iwasawa(g).s);
                }
        }
        acc += nu.weights[i] * part * hz * hz * hs;
    }
    return acc;
}

// m^BMS(E): pairs (backward atom in the patch, forward atom), each carrying the
// s-length on which the forward point is reached with |z| < rho. Forward atoms are taken
// from nu coarsened to cells of size diam / forward_cells.
inline double bms_box_mass(const BoxSpec& E, const AtomicMeasure& nu, double delta, int forward_cells = 256,
                           int threads = 1) {
    Mobius inv = E.center.inverse();
    H3Point p0 = apply_h3(E.center, origin());
    auto transport = [&](const AtomicMeasure& m, std::vector<cplx>& pts, std::vector<double>& wts) {
        for (size_t i = 0; i < m.size(); ++i) {
            BoundaryPoint v = apply_boundary(inv, m.points[i]);
            if (v.at_infinity) continue;
            pts.push_back(v.z);
            wts.push_back(m.weights[i] * std::exp(-delta * busemann_closed(m.points[i], p0, origin())));
        }
    };
    std::vector<cplx> back, fwd;
    std::vector<double> back_w, fwd_w;
    {
        std::vector<cplx> pts;
        std::vector<double> wts;
        transport(nu, pts, wts);
        for (size_t i = 0; i < pts.size(); ++i)
            if (std::abs(pts[i]) < E.rho) {
                back.push_back(pts[i]);
                back_w.push_back(wts[i]);
            }
    }
    transport(coarsen(nu, limit_set_diameter(nu) / forward_cells), fwd, fwd_w);
    return chunked_sum(static_cast<long long>(back.size()), threads, [&](long long i) {
        cplx w = back[i];
        std::vector<double> terms;
        for (size_t j = 0; j < fwd.size(); ++j) {
            double len = std::clamp(std::log(E.rho * std::abs(fwd[j] - w)) + E.rho, 0.0, 2.0 * E.rho);
            if (len <= 0.0) continue;
            Mobius u = nminus_w(w) * n_z(1.0 / (fwd[j] - w));
            H3Point p = apply_h3(u, origin());
            double beta = busemann_closed(BoundaryPoint::finite(fwd[j]), origin(), p) +
                          busemann_closed(BoundaryPoint::finite(w), origin(), p);
            terms.push_back(fwd_w[j] * std::exp(delta * beta) * len);
        }
        return back_w[i] * pairwise_sum(std::move(terms));
    });
}

// ---- samplers -----------------------------------------------------------------------------------

inline size_t pick_index(const std::vector<double>& cumulative, double u) {
    double target = u * cumulative.back();
    size_t k = static_cast<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), target) - cumulative.begin());
    return std::min(k, cumulative.size() - 1);
}

// Draws (atom, s, z, theta) with the atom chosen by patch weight, s uniform on (-rho, rho),
// z uniform on the disk and theta uniform; weights make sum w psi estimate m^BR(psi 1_E).
inline std::vector<WeightedSample> sample_br_box(const SchottkyGroup& G, const BoxSpec& E, const AtomicMeasure& nu,
                                                 double delta, int count, std::uint64_t seed, int threads = 1) {
    BoxPatch P = box_patch(E, nu, delta);
    if (P.weight.empty() || !(P.total > 0.0)) throw NumericalError("ZeroAcceptance", "no atoms in the box patch");
    std::vector<double> cum(P.weight.size());
    std::partial_sum(P.weight.begin(), P.weight.end(), cum.begin());
    double scale = P.total * 2.0 * E.rho * M_PI * E.rho * E.rho / count;
    std::vector<std::optional<WeightedSample>> slots(count);
    parallel_for(count, threads, [&](long long i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        size_t k = pick_index(cum, rng.uniform());
        double s = rng.uniform(-E.rho, E.rho);
        double rad = E.rho * std::sqrt(rng.uniform());
        cplx z = std::polar(rad, 2.0 * M_PI * rng.uniform());
        double theta = M_PI * rng.uniform();
        Mobius g = E.center * nminus_w(P.w[k]) * a_s(s) * n_z(z) * m_theta(theta);
        FramePoint f = make_frame(G, g);
        if (!in_box(E, f.rep)) return;
        slots[i] = WeightedSample{f, scale * br_density_kan(s, delta)};
    });
    std::vector<WeightedSample> out;
    for (auto& s : slots)
        if (s) out.push_back(*s);
    if (out.empty()) throw NumericalError("ZeroAcceptance", "every proposal fell outside the box");
    return out;
}

struct BmsSampleSet {
    std::vector<WeightedSample> samples;
    long long coincident_rejections = 0;
};

// xi^+ and xi^- drawn independently from nu, Hopf time uniform on t_range.
inline BmsSampleSet sample_bms(const SchottkyGroup& G, const AtomicMeasure& nu, double delta, int count,
                               std::uint64_t seed, std::pair<double, double> t_range, int threads = 1) {
    if (nu.size() < 2) throw NumericalError("DegenerateMeasure", "need at least two atoms");
    std::vector<double> cum(nu.size());
    std::partial_sum(nu.weights.begin(), nu.weights.end(), cum.begin());
    double W = cum.back();
    double sq = 0.0;
    for (double w : nu.weights) sq += w * w;
    double len = t_range.second - t_range.first;
    std::vector<WeightedSample> slots(count);
    std::vector<int> rejected(count, 0);
    parallel_for(count, threads, [&](long long i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        size_t a, b;
        for (;;) {
            a = pick_index(cum, rng.uniform());
            b = pick_index(cum, rng.uniform());
            if (a != b) break;
            ++rejected[i];
        }
        double t = rng.uniform(t_range.first, t_range.second);
        double theta = M_PI * rng.uniform();
        Mobius h = geodesic_frame(nu.points[a], nu.points[b]);
        double hop = busemann_closed(nu.points[b], origin(), apply_h3(h, origin()));
        Mobius g = h * a_s(hop - t) * m_theta(theta);
        double dens = bms_density(g, delta);
        slots[i] = WeightedSample{make_frame(G, g), dens * (W * W - sq) * len / count};
    });
    BmsSampleSet out;
    out.samples = std::move(slots);
    for (int r : rejected) out.coincident_rejections += r;
    return out;
}

// ---- leaf pieces ---------------------------------------------------------------------------------

// A disk of leaf coordinates z on which x n_z a_s lies in the box.
struct LeafPiece {
    cplx center{0.0};
    double radius = 0.0;
};

// All pieces of {z : x n_z a_s in E}, up to |z| < leaf_radius + radius. Words eta are
// enumerated through their inverses gamma; a subtree is dropped once the half-ball
// holding gamma x0 o is farther than the box reach from the leaf patch, tested in
// x-coordinates against the horoball at 0 of diameter e^{s + reach} and against the
// sphere |p| = e^{-reach} min|n_z a_s o|.
inline std::vector<LeafPiece> leaf_pieces(const SchottkyGroup& G, const BoxSpec& E, const Mobius& x, double s,
                                          double leaf_radius, int max_depth = 400) {
    Mobius xinv = x.inverse();
    double R = E.reach;
    double big = std::exp(s + R);
    double es = std::exp(s);
    double qmin = std::exp(-R) * es / std::sqrt(1.0 + leaf_radius * leaf_radius * es * es);
    double piece_r = E.rho * std::exp(-s);
    std::vector<LeafPiece> out;
    for_each_word(G, max_depth, [&](const WordNode& nd) {
        if (nd.level == max_depth) throw NumericalError("IterationBudgetExceeded", "leaf enumeration too deep");
        if (nd.level > 0 && !maps_to_exterior(xinv, nd.nested)) {
            Disk D = image_disk(xinv, nd.nested);
            double c2 = std::norm(D.center), r = D.radius;
            if (c2 - r * r > r * big) return false;
            if (std::sqrt(c2) + r < qmin) return false;
        }
        Mobius q = (nd.element * E.center).inverse() * x;
        auto bc = decompose_box(q);
        if (bc && std::abs(bc->w) < E.rho && std::abs(bc->s + s) < E.rho) {
            cplx c = -std::polar(1.0, 2.0 * bc->theta) * bc->z;
            if (std::abs(c) < leaf_radius + piece_r) out.push_back({c, piece_r});
        }
        return true;
    });
    return out;
}

using LeafFunction = std::function<double(cplx)>;

// 19-point product rule on a disk (radial Gauss-Legendre times 6 angles plus centre).
inline double disk_average(const LeafFunction& psi, cplx c, double r) {
    static const double nodes[3] = {0.1127016653792583, 0.5, 0.8872983346207417};
    static const double wts[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
        double rr = r * std::sqrt(nodes[i]);
        double ring = 0.0;
        for (int k = 0; k < 6; ++k) ring += psi(c + std::polar(rr, (k + 0.5 * (i % 2)) * M_PI / 3.0));
        acc += wts[i] * ring / 6.0;
    }
    return acc;
}

// lambda_{E,x,s}(psi) = e^{(2 - delta) s} / m^BR(E) * int_{|z| < R} psi(z) chi_E(x n_z a_s) dz.
inline double conditional_leaf(const SchottkyGroup& G, const BoxSpec& E, const Mobius& x, double s,
                               const LeafFunction& psi, double delta, double leaf_radius) {
    if (!(E.br_mass > 0.0)) throw ConfigError("MissingBoxMass", "box has no cached m^BR(E)");
    auto pieces = leaf_pieces(G, E, x, s, leaf_radius);
    LeafFunction clipped = [&](cplx z) { return std::abs(z) < leaf_radius ? psi(z) : 0.0; };
    std::vector<double> parts;
    for (const auto& pc : pieces) parts.push_back(M_PI * pc.radius * pc.radius * disk_average(clipped, pc.center, pc.radius));
    return std::exp((2.0 - delta) * s) / E.br_mass * pairwise_sum(std::move(parts));
}

// Same quantity by a midpoint grid on the leaf square with an explicit membership test.
inline double conditional_leaf_grid(const SchottkyGroup& G, const BoxSpec& E, const Mobius& x, double s,
                                    const LeafFunction& psi, double delta, double leaf_radius, int n, int threads = 1) {
    if (!(E.br_mass > 0.0)) throw ConfigError("MissingBoxMass", "box has no cached m^BR(E)");
    double h = 2.0 * leaf_radius / n;
    double sum = chunked_sum(static_cast<long long>(n) * n, threads, [&](long long idx) {
        cplx z(-leaf_radius + (idx / n + 0.5) * h, -leaf_radius + (idx % n + 0.5) * h);
        if (std::abs(z) >= leaf_radius) return 0.0;
        Mobius g = reduce(G, x * n_z(z) * a_s(s)).rep;
        return in_box(E, g) ? psi(z) : 0.0;
    });
    return std::exp((2.0 - delta) * s) / E.br_mass * sum * h * h;
}

// mu^PS_x(psi): atoms transported to leaf coordinates z = 1 / x^{-1}(xi).
inline double leaf_ps_integral(const AtomicMeasure& nu, const Mobius& x, const LeafFunction& psi, double delta,
                               double leaf_radius) {
    Mobius xinv = x.inverse();
    std::vector<double> parts;
    for (size_t i = 0; i < nu.size(); ++i) {
        BoundaryPoint v = apply_boundary(xinv, nu.points[i]);
        if (v.at_infinity || v.z == cplx(0.0)) continue;
        cplx z = 1.0 / v.z;
        if (std::abs(z) >= leaf_radius) continue;
        Mobius y = x * n_z(z);
        double f = psi(z);
        if (f == 0.0) continue;
        parts.push_back(f * nu.weights[i] *
                        std::exp(delta * busemann_closed(nu.points[i], origin(), apply_h3(y, origin()))));
    }
    return pairwise_sum(std::move(parts));
}

// ---- mixing --------------------------------------------------------------------------------------

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

inline McEstimate weighted_estimate(const std::vector<double>& contributions) {
    McEstimate e;
    size_t n = contributions.size();
    e.value = pairwise_sum(contributions);
    double mean = e.value / n;
    double var = 0.0;
    for (double c : contributions) var += (c - mean) * (c - mean);
    e.std_error = n > 1 ? std::sqrt(var * n / (n - 1)) : 0.0;
    return e;
}

// int chi_E1(g a_{-s}) chi_E2(g) dm^BR(g) from samples of m^BR restricted to E2.
inline McEstimate mixing_correlation(const SchottkyGroup& G, const BoxSpec& E1,
                                     const std::vector<WeightedSample>& samples_e2, double s, int threads = 1) {
    std::vector<double> c(samples_e2.size());
    parallel_for(static_cast<long long>(samples_e2.size()), threads, [&](long long i) {
        Mobius g = reduce(G, samples_e2[i].frame.rep * a_s(-s)).rep;
        c[i] = in_box(E1, g) ? samples_e2[i].weight : 0.0;
    });
    return weighted_estimate(c);
}

// e^{(2 - delta) s} int chi_E1(g) chi_E2(g a_s) dm^BR(g), from samples of m^BR on E1.
inline McEstimate mixing_flipped(const SchottkyGroup& G, const BoxSpec& E2,
                                 const std::vector<WeightedSample>& samples_e1, double s, double delta, int threads = 1) {
    std::vector<double> c(samples_e1.size());
    double f = std::exp((2.0 - delta) * s);
    parallel_for(static_cast<long long>(samples_e1.size()), threads, [&](long long i) {
        Mobius g = reduce(G, samples_e1[i].frame.rep * a_s(s)).rep;
        c[i] = in_box(E2, g) ? f * samples_e1[i].weight : 0.0;
    });
    return weighted_estimate(c);
}

// ---- m^BR(phi0 o pi) -------------------------------------------------------------------------------

// int_F phi0^2 dvol over the fundamental domain F (outside every half-ball). Columns over
// a log-polar z grid inside the hemisphere of radius R_out about the limit set; below a
// small height the column uses phi0 ~ t^delta f(z), and outside the hemisphere the far
// field phi0 ~ C (t / (|z|^2 + t^2))^delta is integrated in closed form. Needs delta > 1.
inline double phi0_sq_integral(const SchottkyGroup& G, const AtomicMeasure& nu, double delta, int n_u = 160,
                               int n_phi = 128, int n_t = 40, double out_factor = 40.0, int threads = 1) {
    if (!(delta > 1.0)) throw NumericalError("DivergentIntegral", "phi0 is square integrable only for delta > 1");
    cplx c0(0.0);
    double W = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) {
        c0 += nu.weights[i] * nu.points[i].z;
        W += nu.weights[i];
    }
    c0 /= W;
    double diam = limit_set_diameter(nu);
    double R_out = out_factor * diam;
    double r_min = 1e-4 * diam;
    // Far field about c0: phi0 ~ C (t / (|z - c0|^2 + t^2))^delta.
    double C = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) C += nu.weights[i] * std::pow(std::norm(nu.points[i].z) + 1.0, delta);
    double outer = C * C * M_PI * std::pow(R_out, -2.0 * delta) / (2.0 * delta * (delta - 1.0));

    static const std::vector<std::pair<double, double>> gl = [] {
        // 20-point Gauss-Legendre on [-1, 1]
        const double x[10] = {0.0765265211334973, 0.2277858511416451, 0.3737060887154195, 0.5108670019508271,
                              0.6360536807265150, 0.7463319064601508, 0.8391169718222188, 0.9122344282513259,
                              0.9639719272779138, 0.9931285991850949};
        const double w[10] = {0.1527533871307258, 0.1491729864726037, 0.1420961093183820, 0.1316886384491766,
                              0.1181945319615184, 0.1019301198172404, 0.0832767415767048, 0.0626720483341091,
                              0.0406014298003869, 0.0176140071391521};
        std::vector<std::pair<double, double>> v;
        for (int i = 0; i < 10; ++i) {
            v.push_back({-x[i], w[i]});
            v.push_back({x[i], w[i]});
        }
        return v;
    }();
    auto column = [&](cplx z) {
        double top2 = R_out * R_out - std::norm(z - c0);
        if (top2 <= 0.0) return 0.0;
        double top = std::sqrt(top2);
        double bottom = 0.0;
        for (const auto& D : G.disks()) {
            double v = D.radius * D.radius - std::norm(z - D.center);
            if (v > 0.0) bottom = std::max(bottom, std::sqrt(v));
        }
        if (bottom >= top) return 0.0;
        double acc = 0.0;
        double lo = bottom;
        if (bottom == 0.0) {
            double near = INFINITY;
            for (const auto& p : nu.points) near = std::min(near, std::abs(p.z - z));
            double tc = std::min(1e-3 * near, 0.5 * top);
            double f = 0.0;
            for (size_t i = 0; i < nu.size(); ++i)
                f += nu.weights[i] * std::pow((std::norm(nu.points[i].z) + 1.0) / std::norm(z - nu.points[i].z), delta);
            acc += f * f * std::pow(tc, 2.0 * delta - 2.0) / (2.0 * delta - 2.0);
            lo = tc;
        }
        // int phi0^2 t^{-3} dt = int phi0^2 t^{-2} dv with t = e^v, split into n_t / 20 panels
        double v0 = std::log(lo), v1 = std::log(top);
        int panels = std::max(1, n_t / 20);
        for (int pnl = 0; pnl < panels; ++pnl) {
            double a = v0 + (v1 - v0) * pnl / panels, b = v0 + (v1 - v0) * (pnl + 1) / panels;
            double half = 0.5 * (b - a), mid = 0.5 * (a + b);
            for (const auto& [x, w] : gl) {
                double t = std::exp(mid + half * x);
                double f = phi0(nu, delta, {z, t});
                acc += w * half * f * f / (t * t);
            }
        }
        return acc;
    };
    double du = std::log(R_out / r_min) / n_u, dphi = 2.0 * M_PI / n_phi;
    double inner = chunked_sum(static_cast<long long>(n_u) * n_phi, threads, [&](long long idx) {
        double u = std::log(r_min) + (idx / n_phi + 0.5) * du;
        double ang = (idx % n_phi + 0.5) * dphi;
        double rad = std::exp(u);
        return column(c0 + std::polar(rad, ang)) * rad * rad * du * dphi;
    }, 64);
    return inner + outer;
}

// ---- serialisation ---------------------------------------------------------------------------------

inline std::string samples_csv(const std::vector<WeightedSample>& samples, const std::string& provenance) {
    std::ostringstream os;
    os << "# " << provenance << '\n';
    os << "a_re,a_im,b_re,b_im,c_re,c_im,d_re,d_im,weight\n";
    for (const auto& s : samples) {
        const Mobius& g = s.frame.rep;
        for (cplx e : {g.a, g.b, g.c, g.d}) os << format_double(e.real()) << ',' << format_double(e.imag()) << ',';
        os << format_double(s.weight) << '\n';
    }
    return os.str();
}

} // namespace kleinlab
