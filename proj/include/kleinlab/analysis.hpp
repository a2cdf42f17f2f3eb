#pragma once

// Energies, projections and box-counting dimension of atomic measures and point clouds,
// and the window and Hopf-ratio functionals along unipotent orbits.

#include <kleinlab/dynamics.hpp>
#include <kleinlab/error.hpp>
#include <kleinlab/parallel.hpp>
#include <kleinlab/patterson.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace kleinlab {

// ---- alpha-energy ----------------------------------------------------------------------------

struct PlanarAtoms {
    std::vector<cplx> points;
    std::vector<double> weights;
};

// Finite atoms of mu; atoms at infinity carry no planar position and are dropped.
inline PlanarAtoms planar_atoms(const AtomicMeasure& mu) {
    PlanarAtoms out;
    for (size_t i = 0; i < mu.size(); ++i) {
        if (mu.points[i].at_infinity) continue;
        out.points.push_back(mu.points[i].z);
        out.weights.push_back(mu.weights[i]);
    }
    return out;
}

// Sum over ordered pairs i != j of w_i w_j |z_i - z_j|^{-alpha}; coincident atoms are skipped.
inline double alpha_energy_exact(const PlanarAtoms& a, double alpha, int threads = 1) {
    if (!(alpha > 0.0)) throw ConfigError("InvalidExponent", "alpha must be positive");
    size_t n = a.points.size();
    return chunked_sum(static_cast<long long>(n), threads, [&](long long i) {
        std::vector<double> row;
        row.reserve(n);
        for (size_t j = 0; j < n; ++j) {
            if (j == static_cast<size_t>(i)) continue;
            double d2 = std::norm(a.points[i] - a.points[j]);
            if (d2 == 0.0) continue;
            row.push_back(a.weights[j] * std::exp(-0.5 * alpha * std::log(d2)));
        }
        return a.weights[i] * pairwise_sum(std::move(row));
    }, 64);
}

namespace detail {

struct QuadNode {
    double cx = 0.0, cy = 0.0, half = 0.0;  // square cell
    double mass = 0.0;
    cplx com{0.0};
    double qxx = 0.0, qxy = 0.0, qyy = 0.0;  // second moments about com
    size_t first = 0, count = 0;            // range into the permuted index list
    std::array<int, 4> child{-1, -1, -1, -1};
};

class QuadTree {
public:
    QuadTree(const PlanarAtoms& a, size_t leaf_size = 8) : a_(a), order_(a.points.size()) {
        std::iota(order_.begin(), order_.end(), 0);
        double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
        for (cplx z : a.points) {
            lo_x = std::min(lo_x, z.real());
            hi_x = std::max(hi_x, z.real());
            lo_y = std::min(lo_y, z.imag());
            hi_y = std::max(hi_y, z.imag());
        }
        double half = 0.5 * std::max(hi_x - lo_x, hi_y - lo_y) * (1.0 + 1e-9) + 1e-300;
        build(0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y), half, 0, order_.size(), leaf_size, 0);
    }

    // sum_j w_j |z - z_j|^{-alpha} over j != self, with a quadrupole far-field term.
    double potential(size_t self, double alpha, double opening) const {
        cplx z = a_.points[self];
        double acc = 0.0;
        std::vector<int> stack{0};
        while (!stack.empty()) {
            const QuadNode& nd = nodes_[stack.back()];
            stack.pop_back();
            cplx r = z - nd.com;
            double d2 = std::norm(r);
            double size = 2.0 * nd.half;
            bool inside = std::abs(z.real() - nd.cx) <= nd.half && std::abs(z.imag() - nd.cy) <= nd.half;
            if (!inside && size * size < opening * opening * d2) {
                double f = std::exp(-0.5 * alpha * std::log(d2));
                double rx = r.real(), ry = r.imag();
                double quad = (alpha + 2.0) * (nd.qxx * rx * rx + 2.0 * nd.qxy * rx * ry + nd.qyy * ry * ry) / d2 -
                              (nd.qxx + nd.qyy);
                acc += nd.mass * f + 0.5 * alpha * f / d2 * quad;
                continue;
            }
            if (nd.child[0] < 0 && nd.child[1] < 0 && nd.child[2] < 0 && nd.child[3] < 0) {
                for (size_t k = nd.first; k < nd.first + nd.count; ++k) {
                    size_t j = order_[k];
                    if (j == self) continue;
                    double e2 = std::norm(z - a_.points[j]);
                    if (e2 == 0.0) continue;
                    acc += a_.weights[j] * std::exp(-0.5 * alpha * std::log(e2));
                }
                continue;
            }
            for (int c : nd.child)
                if (c >= 0) stack.push_back(c);
        }
        return acc;
    }

private:
    int build(double cx, double cy, double half, size_t first, size_t count, size_t leaf_size, int depth) {
        int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        QuadNode nd;
        nd.cx = cx;
        nd.cy = cy;
        nd.half = half;
        nd.first = first;
        nd.count = count;
        for (size_t k = first; k < first + count; ++k) {
            size_t j = order_[k];
            nd.mass += a_.weights[j];
            nd.com += a_.weights[j] * a_.points[j];
        }
        nd.com /= nd.mass;
        for (size_t k = first; k < first + count; ++k) {
            size_t j = order_[k];
            cplx d = a_.points[j] - nd.com;
            nd.qxx += a_.weights[j] * d.real() * d.real();
            nd.qxy += a_.weights[j] * d.real() * d.imag();
            nd.qyy += a_.weights[j] * d.imag() * d.imag();
        }
        if (count > leaf_size && depth < 60) {
            auto quadrant = [&](size_t j) {
                cplx z = a_.points[j];
                return (z.real() >= cx ? 1 : 0) + (z.imag() >= cy ? 2 : 0);
            };
            auto begin = order_.begin() + static_cast<long>(first);
            std::stable_sort(begin, begin + static_cast<long>(count),
                             [&](size_t p, size_t q) { return quadrant(p) < quadrant(q); });
            size_t pos = first;
            for (int qd = 0; qd < 4; ++qd) {
                size_t end = pos;
                while (end < first + count && quadrant(order_[end]) == qd) ++end;
                if (end > pos) {
                    double h = 0.5 * half;
                    int c = build(cx + ((qd & 1) ? h : -h), cy + ((qd & 2) ? h : -h), h, pos, end - pos, leaf_size,
                                  depth + 1);
                    nd.child[qd] = c;
                }
                pos = end;
            }
        }
        nodes_[id] = nd;
        return id;
    }

    const PlanarAtoms& a_;
    std::vector<size_t> order_;
    std::vector<QuadNode> nodes_;
};

} // namespace detail

inline double alpha_energy_tree(const PlanarAtoms& a, double alpha, int threads = 1, double opening = 0.35) {
    if (!(alpha > 0.0)) throw ConfigError("InvalidExponent", "alpha must be positive");
    detail::QuadTree tree(a);
    return chunked_sum(static_cast<long long>(a.points.size()), threads,
                       [&](long long i) { return a.weights[i] * tree.potential(static_cast<size_t>(i), alpha, opening); },
                       256);
}

// I_alpha(mu) with the diagonal excluded; exact below exact_limit atoms.
inline double alpha_energy(const AtomicMeasure& mu, double alpha, int threads = 1, size_t exact_limit = 20000) {
    PlanarAtoms a = planar_atoms(mu);
    return a.points.size() <= exact_limit ? alpha_energy_exact(a, alpha, threads) : alpha_energy_tree(a, alpha, threads);
}

// ---- projections ------------------------------------------------------------------------------

struct ProjectedMeasure {
    double theta = 0.0;
    std::vector<double> positions;
    std::vector<double> weights;
    double total = 0.0;
};

// p_theta(z) = Im(e^{-i theta} z), the coordinate transverse to the line R e^{i theta}.
inline double project_point(cplx z, double theta) { return (std::polar(1.0, -theta) * z).imag(); }

inline ProjectedMeasure project(const AtomicMeasure& mu, double theta) {
    ProjectedMeasure p;
    p.theta = theta;
    for (size_t i = 0; i < mu.size(); ++i) {
        if (mu.points[i].at_infinity) continue;
        p.positions.push_back(project_point(mu.points[i].z, theta));
        p.weights.push_back(mu.weights[i]);
    }
    p.total = pairwise_sum(p.weights);
    return p;
}

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<double> mass;
    std::vector<double> density;

    double width() const { return (hi - lo) / static_cast<double>(mass.size()); }
    double occupancy() const {
        size_t n = 0;
        for (double m : mass) n += m > 0.0;
        return static_cast<double>(n) / static_cast<double>(mass.size());
    }
};

// Bins [lo, hi] evenly; a degenerate range collapses to one bin around the common value.
inline Histogram projected_density(const ProjectedMeasure& p, int bins, double lo, double hi) {
    if (bins < 16) throw ConfigError("InvalidBins", "need at least 16 bins");
    Histogram h;
    if (!(hi > lo)) {
        double span = std::max(1.0, std::abs(lo)) * 1e-9;
        lo -= span;
        hi += span;
    }
    h.lo = lo;
    h.hi = hi;
    h.mass.assign(bins, 0.0);
    for (size_t i = 0; i < p.positions.size(); ++i) {
        long k = static_cast<long>(std::floor((p.positions[i] - lo) / (hi - lo) * bins));
        k = std::clamp(k, 0L, static_cast<long>(bins) - 1);
        h.mass[k] += p.weights[i];
    }
    h.density.resize(bins);
    for (int k = 0; k < bins; ++k) h.density[k] = h.mass[k] / h.width();
    return h;
}

inline Histogram projected_density(const ProjectedMeasure& p, int bins) {
    auto [mn, mx] = std::minmax_element(p.positions.begin(), p.positions.end());
    if (mn == p.positions.end()) throw NumericalError("DegenerateMeasure", "empty projection");
    return projected_density(p, bins, *mn, *mx);
}

// L2 distance between two densities on the same bins.
inline double histogram_l2(const Histogram& a, const Histogram& b) {
    if (a.mass.size() != b.mass.size()) throw ConfigError("BinMismatch", "histograms differ in bin count");
    double acc = 0.0;
    for (size_t k = 0; k < a.density.size(); ++k) acc += (a.density[k] - b.density[k]) * (a.density[k] - b.density[k]);
    return std::sqrt(acc * a.width());
}

inline std::string histogram_csv(const Histogram& h, const std::string& provenance) {
    std::ostringstream os;
    os << "# " << provenance << '\n' << "bin_lo,bin_hi,mass,density\n";
    for (size_t k = 0; k < h.mass.size(); ++k)
        os << format_double(h.lo + k * h.width()) << ',' << format_double(h.lo + (k + 1) * h.width()) << ','
           << format_double(h.mass[k]) << ',' << format_double(h.density[k]) << '\n';
    return os.str();
}

// ---- box-counting dimension -----------------------------------------------------------------

struct BoxDimFit {
    double slope = 0.0;
    double intercept = 0.0;
    std::vector<double> radii;   // radii kept in the fit
    std::vector<double> counts;  // N(r) at those radii
    std::vector<double> residuals;
};

inline size_t occupied_cells(const std::vector<cplx>& pts, double r) {
    struct CellHash {
        size_t operator()(const std::pair<std::int64_t, std::int64_t>& c) const {
            std::uint64_t s = static_cast<std::uint64_t>(c.first) * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(c.second);
            return static_cast<size_t>(splitmix64(s));
        }
    };
    std::unordered_set<std::pair<std::int64_t, std::int64_t>, CellHash> cells;
    cells.reserve(pts.size());
    for (cplx z : pts)
        cells.insert({static_cast<std::int64_t>(std::floor(z.real() / r)), static_cast<std::int64_t>(std::floor(z.imag() / r))});
    return cells.size();
}

// Slope of log N(r) against log(1/r). Radii above diameter / 10, below 10 x resolution, or
// with fewer than ten points per occupied cell on average are discarded.
inline BoxDimFit box_dimension(const std::vector<cplx>& pts, const std::vector<double>& r_grid, double resolution = 0.0) {
    if (pts.size() < 2) throw NumericalError("DegenerateRange", "need at least two points");
    double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
    for (cplx z : pts) {
        lo_x = std::min(lo_x, z.real());
        hi_x = std::max(hi_x, z.real());
        lo_y = std::min(lo_y, z.imag());
        hi_y = std::max(hi_y, z.imag());
    }
    double diam = std::hypot(hi_x - lo_x, hi_y - lo_y);
    BoxDimFit fit;
    std::vector<double> lx, ly;
    for (double r : r_grid) {
        if (r > diam / 10.0 || r < 10.0 * resolution) continue;
        size_t n = occupied_cells(pts, r);
        if (static_cast<double>(n) > static_cast<double>(pts.size()) / 10.0) continue;
        fit.radii.push_back(r);
        fit.counts.push_back(static_cast<double>(n));
        lx.push_back(-std::log(r));
        ly.push_back(std::log(static_cast<double>(n)));
    }
    if (lx.size() < 3) throw NumericalError("DegenerateRange", "fewer than three radii survive the range filter");
    auto [s, c] = least_squares(lx, ly);
    fit.slope = s;
    fit.intercept = c;
    for (size_t i = 0; i < lx.size(); ++i) fit.residuals.push_back(ly[i] - (s * lx[i] + c));
    return fit;
}

inline BoxDimFit box_dimension_1d(const std::vector<double>& xs, const std::vector<double>& r_grid,
                                  double resolution = 0.0) {
    std::vector<cplx> pts(xs.begin(), xs.end());
    return box_dimension(pts, r_grid, resolution);
}

// ---- window statistic -------------------------------------------------------------------------

struct WindowResult {
    double inner = 0.0;
    double outer = 0.0;
    bool good = false;
};

inline WindowResult window_from_series(const TimeSeries& ts, double T, double r) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("InvalidWindow", "r must lie in (0, 1)");
    WindowResult w;
    w.inner = ts.integrate(-r * T, r * T);
    w.outer = ts.integrate(-T, T);
    w.good = w.inner <= (1.0 - r) * w.outer;
    return w;
}

inline WindowResult window_statistic(const SchottkyGroup& G, const FramePoint& x, const FrameFunction& psi, double T,
                                     double r, double dt) {
    return window_from_series(orbit_series(G, x, psi, T, dt), T, r);
}

// ---- Hopf ratio -------------------------------------------------------------------------------

// int_0^T psi1(x u_t) dt / int_0^T psi2(x u_t) dt at each T of the grid; NaN while the
// denominator vanishes.
inline std::vector<double> hopf_ratio(const SchottkyGroup& G, const FramePoint& x, const FrameFunction& psi1,
                                      const FrameFunction& psi2, const std::vector<double>& T_grid, double dt) {
    if (T_grid.empty()) throw ConfigError("EmptyGrid", "hopf_ratio needs at least one T");
    double Tmax = *std::max_element(T_grid.begin(), T_grid.end());
    TimeSeries num, den;
    num.dt = den.dt = dt;
    HoroWalker w(G, x.rep, dt, 0.0);
    long long K = std::llround(Tmax / dt);
    for (long long k = 0; k <= K; ++k) {
        if (k > 0) w.advance();
        num.times.push_back(k * dt);
        den.times.push_back(k * dt);
        num.values.push_back(psi1(w.rep()));
        den.values.push_back(psi2(w.rep()));
    }
    std::vector<double> out;
    bool any = false;
    for (double T : T_grid) {
        double d = den.integrate(0.0, T);
        if (d > 0.0) {
            out.push_back(num.integrate(0.0, T) / d);
            any = true;
        } else {
            out.push_back(NAN);
        }
    }
    if (!any) throw NumericalError("DenominatorZero", "the orbit never meets the support of psi2");
    return out;
}

} // namespace kleinlab
