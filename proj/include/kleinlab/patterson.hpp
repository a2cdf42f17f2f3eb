#pragma once

#include <kleinlab/error.hpp>
#include <kleinlab/hyperbolic.hpp>
#include <kleinlab/parallel.hpp>
#include <kleinlab/schottky.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

// Finitely many weighted boundary atoms. `resolution` holds, per atom, the radius of
// the nested disk it stands for (zero when unknown).
struct AtomicMeasure {
    std::vector<BoundaryPoint> points;
    std::vector<double> weights;
    std::vector<double> resolution;
    double total = 0.0;

    size_t size() const { return points.size(); }

    void add(BoundaryPoint p, double w, double res = 0.0) {
        if (!(w > 0.0) || !std::isfinite(w)) throw NumericalError("InvalidWeight", "atom weights must be positive");
        points.push_back(p);
        weights.push_back(w);
        resolution.push_back(res);
    }

    void recompute_total() { total = pairwise_sum(weights); }

    void scale(double f) {
        for (double& w : weights) w *= f;
        recompute_total();
    }

    void normalize() { scale(1.0 / pairwise_sum(weights)); }

    double max_resolution() const {
        double r = 0.0;
        for (double v : resolution) r = std::max(r, v);
        return r;
    }
};

// Displacements d(o, gamma o) of every reduced word, grouped by word length.
struct LevelTable {
    std::vector<std::vector<double>> levels;  // levels[k] for k = 0..max_len
    double reliable_radius = 0.0;             // every longer word has displacement >= this

    int max_len() const { return static_cast<int>(levels.size()) - 1; }
};

// Distance from an exterior point p to the half-ball over D.
inline double distance_to_halfball(const H3Point& p, const Disk& D) {
    double v = std::norm(p.z - D.center) + p.t * p.t - D.radius * D.radius;
    if (v <= 0.0) return 0.0;
    return std::asinh(v / (2.0 * D.radius * p.t));
}

inline LevelTable level_table(const SchottkyGroup& G, int max_len) {
    LevelTable tab;
    tab.levels.resize(max_len + 1);
    double reliable = INFINITY;
    for_each_word(G, max_len, [&](const WordNode& nd) {
        tab.levels[nd.level].push_back(nd.displacement);
        if (nd.level == max_len && max_len > 0)
            reliable = std::min(reliable, distance_to_halfball(origin(), nd.nested));
        return true;
    });
    tab.reliable_radius = reliable;
    return tab;
}

inline double level_sum(const std::vector<double>& d, double s) {
    std::vector<double> terms(d.size());
    for (size_t i = 0; i < d.size(); ++i) terms[i] = std::exp(-s * d[i]);
    return pairwise_sum(std::move(terms));
}

inline double poincare_partial(const LevelTable& tab, double s) {
    double total = 0.0;
    for (const auto& lev : tab.levels) total += level_sum(lev, s);
    return total;
}

inline double poincare_partial(const SchottkyGroup& G, double s, int max_len) {
    if (s < 0.0) throw ConfigError("InvalidExponent", "s must be nonnegative");
    return poincare_partial(level_table(G, max_len), s);
}

struct DeltaEstimate {
    double value = 0.0;
    std::string method;
    int word_len = 0;
    double uncertainty = 0.0;
};

namespace detail {

// Mean of log(S_k / S_{k-1}) over the four levels ending at `last`.
inline double mean_log_ratio(const LevelTable& tab, int last, double s) {
    double acc = 0.0;
    double prev = level_sum(tab.levels[last - 4], s);
    for (int k = last - 3; k <= last; ++k) {
        double cur = level_sum(tab.levels[k], s);
        acc += std::log(cur / prev);
        prev = cur;
    }
    return acc / 4.0;
}

inline double bisect_ratio(const LevelTable& tab, int last, double tol, double* half_width) {
    double lo = tol, hi = 2.0;
    if (mean_log_ratio(tab, last, lo) <= 0.0 || mean_log_ratio(tab, last, hi) >= 0.0)
        throw NumericalError("NonBracketed", "level growth ratio does not cross 1 on (0, 2]");
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        if (mean_log_ratio(tab, last, mid) > 0.0) lo = mid;
        else hi = mid;
    }
    if (half_width) *half_width = 0.5 * (hi - lo);
    return 0.5 * (lo + hi);
}

} // namespace detail

inline DeltaEstimate estimate_delta_series(const LevelTable& tab, double tol = 1e-6) {
    int L = tab.max_len();
    if (L < 8) throw ConfigError("InvalidDepth", "series estimator needs max_len >= 8");
    double hw = 0.0;
    double value = detail::bisect_ratio(tab, L, tol, &hw);
    double previous = detail::bisect_ratio(tab, L - 1, tol, nullptr);
    return {value, "series-bisection", L, hw + std::abs(value - previous)};
}

inline DeltaEstimate estimate_delta_series(const SchottkyGroup& G, int max_len, double tol = 1e-6) {
    return estimate_delta_series(level_table(G, max_len), tol);
}

struct OrbitGrowthFit {
    std::vector<double> radii;
    std::vector<double> log_counts;
    double slope = 0.0;
    double intercept = 0.0;
    double r_lo = 0.0, r_hi = 0.0;
};

inline std::pair<double, double> least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

// Slope of log #{gamma : d(o, gamma o) <= R} on [R_hi / 2, R_hi], where R_hi is the
// radius below which words of length max_len and longer cannot contribute.
inline OrbitGrowthFit orbit_growth_fit(const LevelTable& tab, int points = 64) {
    std::vector<double> all;
    for (int k = 0; k < tab.max_len(); ++k) all.insert(all.end(), tab.levels[k].begin(), tab.levels[k].end());
    std::sort(all.begin(), all.end());
    OrbitGrowthFit fit;
    fit.r_hi = tab.reliable_radius;
    fit.r_lo = 0.5 * fit.r_hi;
    for (int i = 0; i < points; ++i) {
        double R = fit.r_lo + (fit.r_hi - fit.r_lo) * i / (points - 1);
        auto cnt = std::upper_bound(all.begin(), all.end(), R) - all.begin();
        fit.radii.push_back(R);
        fit.log_counts.push_back(std::log(static_cast<double>(cnt)));
    }
    auto [slope, icept] = least_squares(fit.radii, fit.log_counts);
    fit.slope = slope;
    fit.intercept = icept;
    return fit;
}

inline DeltaEstimate estimate_delta_orbit(const LevelTable& tab) {
    if (tab.max_len() < 8) throw ConfigError("InvalidDepth", "orbit estimator needs max_len >= 8");
    OrbitGrowthFit fit = orbit_growth_fit(tab);
    // Uncertainty: disagreement between the two halves of the fit range.
    size_t h = fit.radii.size() / 2;
    std::vector<double> x1(fit.radii.begin(), fit.radii.begin() + h), y1(fit.log_counts.begin(), fit.log_counts.begin() + h);
    std::vector<double> x2(fit.radii.begin() + h, fit.radii.end()), y2(fit.log_counts.begin() + h, fit.log_counts.end());
    double s1 = least_squares(x1, y1).first, s2 = least_squares(x2, y2).first;
    return {fit.slope, "orbit-growth", tab.max_len(), 0.5 * std::abs(s1 - s2)};
}

inline DeltaEstimate estimate_delta_orbit(const SchottkyGroup& G, int max_len) {
    return estimate_delta_orbit(level_table(G, max_len));
}

// Atoms at the nested-disk centres of words with length in [max_len - 2, max_len],
// weighted by e^{-s d(x, gamma o)} and normalised to total mass one.
inline AtomicMeasure build_ps(const SchottkyGroup& G, const H3Point& x, double s, int max_len, double delta_hat) {
    if (max_len < 8) throw ConfigError("InvalidDepth", "build_ps needs max_len >= 8");
    if (s <= delta_hat) throw NumericalError("SubcriticalExponent", "s must exceed the critical exponent estimate");
    AtomicMeasure mu;
    for_each_word(G, max_len, [&](const WordNode& nd) {
        if (nd.level >= max_len - 2) {
            double d = hyp_dist(x, apply_h3(nd.element, origin()));
            mu.add(BoundaryPoint::finite(nd.nested.center), std::exp(-s * d), nd.nested.radius);
        }
        return true;
    });
    mu.normalize();
    return mu;
}

struct ResidualStats {
    double median = 0.0;
    double p90 = 0.0;
    size_t count = 0;
};

inline ResidualStats summarize(std::vector<double> v) {
    ResidualStats st;
    st.count = v.size();
    if (v.empty()) return st;
    auto q = [&](double f) {
        size_t k = static_cast<size_t>(f * (v.size() - 1));
        std::nth_element(v.begin(), v.begin() + k, v.end());
        return v[k];
    };
    st.median = q(0.5);
    st.p90 = q(0.9);
    return st;
}

// Per top-band atom: |[d(y, gamma o) - d(x, gamma o)] - beta_xi(y, x)|.
inline ResidualStats conformal_residual(const SchottkyGroup& G, const H3Point& x, const H3Point& y, int max_len) {
    std::vector<double> res;
    for_each_word(G, max_len, [&](const WordNode& nd) {
        if (nd.level >= max_len - 2) {
            H3Point p = apply_h3(nd.element, origin());
            double lhs = hyp_dist(y, p) - hyp_dist(x, p);
            double rhs = busemann(BoundaryPoint::finite(nd.nested.center), y, x);
            res.push_back(std::abs(lhs - rhs));
        }
        return true;
    });
    return summarize(std::move(res));
}

// ---- shadows and cones -----------------------------------------------------------------

struct ShadowFit {
    double slope = 0.0;        // mean of per-point slopes
    double spread = 0.0;       // standard deviation of per-point slopes
    std::vector<double> per_point;
    double r_lo = 0.0, r_hi = 0.0;
};

inline std::vector<double> geometric_grid(double lo, double hi, int n) {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    return g;
}

inline double ball_mass(const AtomicMeasure& mu, cplx center, double r) {
    double m = 0.0;
    for (size_t i = 0; i < mu.size(); ++i)
        if (std::norm(mu.points[i].z - center) < r * r) m += mu.weights[i];
    return m;
}

// Least-squares slope of log nu(B(xi, r)) against log r for each xi, averaged.
// The radius grid is clipped to [10 * resolution, diameter / 10]; resolution defaults to the
// largest atom resolution.
inline ShadowFit shadow_exponent(const AtomicMeasure& mu, const std::vector<BoundaryPoint>& xis,
                                 std::vector<double> radii, int threads = 1, double resolution = NAN) {
    double res = std::isnan(resolution) ? mu.max_resolution() : resolution;
    double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
    for (const auto& p : mu.points) {
        lo_x = std::min(lo_x, p.z.real()); hi_x = std::max(hi_x, p.z.real());
        lo_y = std::min(lo_y, p.z.imag()); hi_y = std::max(hi_y, p.z.imag());
    }
    double diam = std::hypot(hi_x - lo_x, hi_y - lo_y);
    std::vector<double> used;
    for (double r : radii)
        if (r >= 10.0 * res && r <= diam / 10.0) used.push_back(r);
    if (used.size() < 3) throw NumericalError("DegenerateRange", "fewer than three radii in the valid range");
    ShadowFit fit;
    fit.r_lo = used.front();
    fit.r_hi = used.back();
    fit.per_point.assign(xis.size(), 0.0);
    std::vector<double> logr;
    for (double r : used) logr.push_back(std::log(r));
    double r_max = used.back();
    parallel_for(static_cast<long long>(xis.size()), threads, [&](long long i) {
        cplx c = xis[i].z;
        std::vector<std::pair<double, double>> near;
        for (size_t a = 0; a < mu.size(); ++a) {
            double d2 = std::norm(mu.points[a].z - c);
            if (d2 < r_max * r_max) near.push_back({d2, mu.weights[a]});
        }
        std::sort(near.begin(), near.end());
        std::vector<double> logm;
        size_t k = 0;
        double acc = 0.0;
        for (double r : used) {
            while (k < near.size() && near[k].first < r * r) acc += near[k++].second;
            if (acc <= 0.0) throw NumericalError("EmptyBall", "a shadow ball contains no atoms");
            logm.push_back(std::log(acc));
        }
        fit.per_point[i] = least_squares(logr, logm).first;
    });
    double mean = std::accumulate(fit.per_point.begin(), fit.per_point.end(), 0.0) / xis.size();
    double var = 0.0;
    for (double v : fit.per_point) var += (v - mean) * (v - mean);
    fit.slope = mean;
    fit.spread = xis.size() > 1 ? std::sqrt(var / (xis.size() - 1)) : 0.0;
    return fit;
}

// Mass fraction of B(xi, r) inside the cone |Im(eta - xi)| <= |Re(eta - xi)| / d.
inline double nonfocusing_fraction(const AtomicMeasure& mu, cplx xi, double d, double r) {
    double in_ball = 0.0, in_cone = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) {
        cplx v = mu.points[i].z - xi;
        if (std::norm(v) >= r * r) continue;
        in_ball += mu.weights[i];
        if (std::abs(v.imag()) <= std::abs(v.real()) / d) in_cone += mu.weights[i];
    }
    return in_ball > 0.0 ? in_cone / in_ball : 0.0;
}

// ---- serialisation -----------------------------------------------------------------------

inline std::string measure_csv(const AtomicMeasure& mu, const std::string& provenance) {
    std::ostringstream os;
    os << "# total=" << format_double(mu.total) << ' ' << provenance << '\n';
    os << "re,im,weight\n";
    for (size_t i = 0; i < mu.size(); ++i)
        os << format_double(mu.points[i].z.real()) << ',' << format_double(mu.points[i].z.imag()) << ','
           << format_double(mu.weights[i]) << '\n';
    return os.str();
}

} // namespace kleinlab
