#pragma once

// Frame flow, unipotent flow and horospherical translates on X = Gamma \ G, with the
// representative reduced after every step.

#include <kleinlab/error.hpp>
#include <kleinlab/hyperbolic.hpp>
#include <kleinlab/measures.hpp>
#include <kleinlab/schottky.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

inline FramePoint flow_frame(const SchottkyGroup& G, const FramePoint& x, double s) {
    return make_frame(G, x.rep * a_s(s));
}

inline FramePoint flow_unipotent(const SchottkyGroup& G, const FramePoint& x, double t) {
    return make_frame(G, x.rep * u_t(t));
}

inline FramePoint flow_horospherical(const SchottkyGroup& G, const FramePoint& x, cplx z) {
    return make_frame(G, x.rep * n_z(z));
}

// Direction e^{i theta} inside N; theta = 0 is U.
inline Mobius horo_step(double t, double theta) { return n_z(std::polar(t, theta)); }

// Walks x n_{t e^{i theta}} in steps of dt, reducing at every step.
class HoroWalker {
public:
    HoroWalker(const SchottkyGroup& G, const Mobius& rep, double dt, double theta)
        : G_(G), rep_(rep), step_(horo_step(dt, theta)) {}

    const Mobius& rep() const { return rep_; }
    void advance() { rep_ = reduce(G_, rep_ * step_).rep; }

private:
    const SchottkyGroup& G_;
    Mobius rep_;
    Mobius step_;
};

using FrameFunction = std::function<double(const Mobius&)>;

struct TimeSeries {
    std::vector<double> times;
    std::vector<double> values;
    double dt = 0.0;

    // Integral of the piecewise-linear interpolant over [a, b].
    double integrate(double a, double b) const {
        if (times.size() < 2 || b <= a) return 0.0;
        double acc = 0.0;
        for (size_t k = 0; k + 1 < times.size(); ++k) {
            double t0 = times[k], t1 = times[k + 1];
            double lo = std::max(a, t0), hi = std::min(b, t1);
            if (hi <= lo) continue;
            auto val = [&](double t) { return values[k] + (values[k + 1] - values[k]) * (t - t0) / (t1 - t0); };
            acc += 0.5 * (val(lo) + val(hi)) * (hi - lo);
        }
        return acc;
    }
};

// psi along the reduced orbit at t = k dt, |t| <= T.
inline TimeSeries orbit_series(const SchottkyGroup& G, const FramePoint& x, const FrameFunction& psi, double T,
                               double dt, double theta = 0.0, double t_min = -INFINITY) {
    if (!(dt > 0.0) || !(T >= 0.0)) throw ConfigError("InvalidStep", "need dt > 0 and T >= 0");
    long long K = std::llround(T / dt);
    long long K0 = std::isfinite(t_min) ? std::max(-K, static_cast<long long>(std::ceil(t_min / dt - 1e-9))) : -K;
    TimeSeries ts;
    ts.dt = dt;
    std::vector<double> back;
    if (K0 < 0) {
        HoroWalker w(G, x.rep, -dt, theta);
        for (long long k = 1; k <= -K0; ++k) {
            w.advance();
            back.push_back(psi(w.rep()));
        }
    }
    for (long long k = -K0; k >= 1; --k) {
        ts.times.push_back(-k * dt);
        ts.values.push_back(back[k - 1]);
    }
    ts.times.push_back(0.0);
    ts.values.push_back(psi(x.rep));
    HoroWalker w(G, x.rep, dt, theta);
    for (long long k = 1; k <= K; ++k) {
        w.advance();
        ts.times.push_back(k * dt);
        ts.values.push_back(psi(w.rep()));
    }
    return ts;
}

inline std::string series_csv(const TimeSeries& ts, const std::string& provenance) {
    std::ostringstream os;
    os << "# " << provenance << '\n' << "t,value\n";
    for (size_t i = 0; i < ts.times.size(); ++i) os << format_double(ts.times[i]) << ',' << format_double(ts.values[i]) << '\n';
    return os.str();
}

// ---- escape diagnostics (Fuchsian groups, plane over the real axis) -----------------------------

inline double distance_to_plane(const H3Point& p) { return std::asinh(std::abs(p.z.imag()) / p.t); }
inline double distance_to_plane(const Mobius& g) { return distance_to_plane(apply_h3(g, origin())); }

// Signed sinh of the distance to the plane along x n_{t e^{i theta}} o; it is a
// polynomial of degree at most two in t, returned as (c0, c1, c2).
inline std::array<double, 3> plane_polynomial(const Mobius& x, double theta) {
    auto q = [&](double t) {
        H3Point p = apply_h3(x * horo_step(t, theta), origin());
        return p.z.imag() / p.t;
    };
    double q0 = q(0.0), q1 = q(1.0), qm = q(-1.0);
    return {q0, 0.5 * (q1 - qm), 0.5 * (q1 + qm) - q0};
}

// Last t >= 0 with distance to the plane <= threshold; 0 when there is none and
// infinity when the orbit never leaves.
inline double certified_escape_time(const Mobius& x, double theta, double threshold) {
    auto c = plane_polynomial(x, theta);
    double S = std::sinh(threshold);
    auto within = [&](double t) { return std::abs(c[0] + c[1] * t + c[2] * t * t) <= S; };
    double scale = std::abs(c[0]) + std::abs(c[1]) + std::abs(c[2]);
    if (std::abs(c[2]) <= 1e-12 * scale && std::abs(c[1]) <= 1e-12 * scale) return within(0.0) ? INFINITY : 0.0;
    double last = 0.0;
    bool any = within(0.0);
    for (double target : {S, -S}) {
        double a = c[2], b = c[1], k = c[0] - target;
        std::vector<double> roots;
        if (std::abs(a) <= 1e-12 * scale) roots.push_back(-k / b);
        else {
            double disc = b * b - 4 * a * k;
            if (disc >= 0) {
                double sq = std::sqrt(disc);
                roots.push_back((-b + sq) / (2 * a));
                roots.push_back((-b - sq) / (2 * a));
            }
        }
        for (double r : roots)
            if (r >= 0.0) {
                last = std::max(last, r);
                any = true;
            }
    }
    if (!any) return 0.0;
    if (within(last + 1.0) ) return INFINITY;
    return last;
}

struct EscapeFit {
    double slope = 0.0;
    double intercept = 0.0;
    TimeSeries distance;  // d(t) on [dt, T]
};

// Least-squares slope of d versus log t on the tail half [T/2, T] of the lifted orbit.
inline EscapeFit escape_slope(const Mobius& x, double T, double dt, double theta) {
    EscapeFit fit;
    fit.distance.dt = dt;
    std::vector<double> lx, ly;
    long long K = std::llround(T / dt);
    for (long long k = 1; k <= K; ++k) {
        double t = k * dt;
        double d = distance_to_plane(x * horo_step(t, theta));
        fit.distance.times.push_back(t);
        fit.distance.values.push_back(d);
        if (t >= 0.5 * T) {
            lx.push_back(std::log(t));
            ly.push_back(d);
        }
    }
    if (lx.size() < 2) throw ConfigError("InvalidStep", "escape fit needs at least two tail samples");
    auto [s, c] = least_squares(lx, ly);
    fit.slope = s;
    fit.intercept = c;
    return fit;
}

// ---- recurrence -----------------------------------------------------------------------------

struct Visits {
    std::vector<std::pair<double, double>> intervals;  // (t_enter, t_exit)

    double total(double upto = INFINITY) const {
        double acc = 0.0;
        for (const auto& [a, b] : intervals) acc += std::max(0.0, std::min(b, upto) - a);
        return acc;
    }
    size_t count(double upto = INFINITY) const {
        size_t n = 0;
        for (const auto& iv : intervals) n += iv.first < upto;
        return n;
    }
};

// Intervals of [0, T] on which the sampled orbit lies in E; an interval runs from its
// first inside sample to the first outside sample after it.
inline Visits recurrence_times(const SchottkyGroup& G, const FramePoint& x, const BoxSpec& E, double T, double dt,
                               double theta = 0.0) {
    Visits v;
    HoroWalker w(G, x.rep, dt, theta);
    long long K = std::llround(T / dt);
    bool inside = false;
    double enter = 0.0;
    for (long long k = 0; k <= K; ++k) {
        if (k > 0) w.advance();
        bool now = in_box(E, w.rep());
        double t = k * dt;
        if (now && !inside) enter = t;
        if (!now && inside) v.intervals.push_back({enter, t});
        inside = now;
    }
    if (inside) v.intervals.push_back({enter, K * dt});
    return v;
}

// Exact visit intervals for t in [t_lo, t_hi]: for every eta with x0^{-1} eta x m_{-theta/2}
// = n^-_w a_sigma n_zeta m_phi, |w| < rho and |sigma| < rho, the orbit is inside while
// |t + e^{2 i phi} zeta| < rho. Enumeration is pruned in x-coordinates by the horoball at
// 0 of diameter e^{reach}, the sphere |p| = e^{-reach} / sqrt(1 + t^2) and the distance
// to the vertical plane holding the horocycle.
inline Visits exact_visits(const SchottkyGroup& G, const BoxSpec& E, const Mobius& x, double t_lo, double t_hi,
                           double theta = 0.0, int max_depth = 400) {
    Mobius xr = x * m_theta(-theta / 2.0);
    Mobius xinv = xr.inverse();
    double R = E.reach;
    double big = std::exp(R);
    double tmax = std::max(std::abs(t_lo), std::abs(t_hi));
    double qmin = std::exp(-R) / std::sqrt(1.0 + tmax * tmax);
    double plane = std::sinh(R);
    Visits v;
    for_each_word(G, max_depth, [&](const WordNode& nd) {
        if (nd.level == max_depth) throw NumericalError("IterationBudgetExceeded", "visit enumeration too deep");
        if (nd.level > 0 && !maps_to_exterior(xinv, nd.nested)) {
            Disk D = image_disk(xinv, nd.nested);
            double c2 = std::norm(D.center), r = D.radius;
            if (c2 - r * r > r * big) return false;
            if (std::sqrt(c2) + r < qmin) return false;
            if ((std::abs(D.center.imag()) - r) / r > plane) return false;
        }
        auto bc = decompose_box((nd.element * E.center).inverse() * xr);
        if (bc && std::abs(bc->w) < E.rho && std::abs(bc->s) < E.rho) {
            cplx c = std::polar(1.0, 2.0 * bc->theta) * bc->z;
            if (std::abs(c.imag()) < E.rho) {
                double h = std::sqrt(E.rho * E.rho - c.imag() * c.imag());
                double a = std::max(t_lo, -c.real() - h), b = std::min(t_hi, -c.real() + h);
                if (b > a) v.intervals.push_back({a, b});
            }
        }
        return true;
    });
    std::sort(v.intervals.begin(), v.intervals.end());
    return v;
}

inline std::string visits_csv(const Visits& v, const std::string& provenance) {
    std::ostringstream os;
    os << "# " << provenance << '\n' << "t_enter,t_exit\n";
    for (const auto& [a, b] : v.intervals) os << format_double(a) << ',' << format_double(b) << '\n';
    return os.str();
}

} // namespace kleinlab
