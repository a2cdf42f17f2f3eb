#pragma once

// Acceptance suite: thirteen numbered criteria over the bundled configurations. Each
// criterion yields one pass/fail line.

#include <kleinlab/experiments.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

struct AcceptanceConfig {
    std::filesystem::path fuchsian;     // delta < 1, real disks
    std::filesystem::path spatial;      // delta < 1, genuinely 3D
    std::filesystem::path wide;         // delta > 1
    std::filesystem::path single_atom;  // closed-form phi0
    std::uint64_t seed = 1;
};

inline AcceptanceConfig parse_acceptance(const std::string& text, const std::filesystem::path& base_dir = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("MalformedConfig", e.what());
    }
    if (!j.is_object()) throw ConfigError("MalformedConfig", "top level must be an object");
    AcceptanceConfig a;
    bool seen[5] = {false, false, false, false, false};
    for (const auto& [key, v] : j.items()) {
        if (key == "seed") {
            if (!v.is_number_unsigned()) throw ConfigError("InvalidType", "field 'seed': expected a non-negative integer");
            a.seed = v.get<std::uint64_t>();
            seen[4] = true;
            continue;
        }
        std::filesystem::path* slot = key == "fuchsian" ? &a.fuchsian
                                      : key == "spatial" ? &a.spatial
                                      : key == "wide" ? &a.wide
                                      : key == "single_atom" ? &a.single_atom
                                                             : nullptr;
        if (!slot) throw ConfigError("UnknownKey", "field '" + key + "': not a recognised setting");
        if (!v.is_string()) throw ConfigError("InvalidType", "field '" + key + "': expected a path");
        *slot = base_dir / v.get<std::string>();
        seen[slot == &a.fuchsian ? 0 : slot == &a.spatial ? 1 : slot == &a.wide ? 2 : 3] = true;
    }
    const char* names[4] = {"fuchsian", "spatial", "wide", "single_atom"};
    for (int k = 0; k < 4; ++k)
        if (!seen[k]) throw ConfigError("MissingKey", std::string("field '") + names[k] + "' is required");
    return a;
}

inline AcceptanceConfig load_acceptance(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("MissingFile", "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_acceptance(ss.str(), path.parent_path());
}

struct CriterionOutcome {
    int id = 0;
    std::string label;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

inline std::string format_outcome(const CriterionOutcome& c) {
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s  %-26s", c.id, c.pass ? "PASS" : "FAIL", c.label.c_str());
    char tail[32];
    std::snprintf(tail, sizeof tail, " (%.1f s)", c.seconds);
    return std::string(head) + c.detail + tail;
}

class AcceptanceSuite {
public:
    AcceptanceSuite(AcceptanceConfig cfg, int threads) : cfg_(std::move(cfg)), threads_(threads) {}

    static constexpr int kCriteria = 13;

    CriterionOutcome run(int id) {
        static const char* labels[kCriteria + 1] = {"",
                                                    "geometry suite",
                                                    "reduction",
                                                    "critical exponent",
                                                    "conformality",
                                                    "shadow exponent",
                                                    "eigenfunction",
                                                    "energy dichotomy",
                                                    "dimension and projections",
                                                    "conditional convergence",
                                                    "window theorem",
                                                    "dichotomy diagnostics",
                                                    "hopf ratio trend",
                                                    "determinism"};
        if (id < 1 || id > kCriteria) throw ConfigError("UnknownCriterion", "criteria are numbered 1 to 13");
        CriterionOutcome out;
        out.id = id;
        out.label = labels[id];
        auto t0 = std::chrono::steady_clock::now();
        try {
            switch (id) {
            case 1: geometry(out); break;
            case 2: reduction(out); break;
            case 3: per_config(out, "estimate-delta", {"fuchsian", "spatial", "wide"}); break;
            case 4: per_config(out, "ps-build", {"fuchsian", "spatial", "wide"}); break;
            case 5: per_config(out, "shadow", {"fuchsian", "spatial", "wide"}); break;
            case 6: per_config(out, "phi0-check", {"single_atom", "fuchsian", "spatial", "wide"}); break;
            case 7: per_config(out, "energy", {"fuchsian", "spatial", "wide"}); break;
            case 8: dimension(out); break;
            case 9: per_config(out, "conditional", {"wide"}); break;
            case 10: per_config(out, "window", {"wide"}); break;
            case 11: dichotomy(out); break;
            case 12: per_config(out, "hopf", {"wide"}); break;
            case 13: determinism(out); break;
            }
        } catch (const Error& e) {
            out.pass = false;
            out.detail += (out.detail.empty() ? "" : "; ") + std::string("error ") + e.what();
        }
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (id == 1 && out.seconds >= 10.0) fail_budget(out, 10.0);
        if (id == 2 && out.seconds >= 30.0) fail_budget(out, 30.0);
        if (id == 3 && out.seconds >= 120.0) fail_budget(out, 120.0);
        return out;
    }

    std::vector<CriterionOutcome> run_all(const std::function<void(const CriterionOutcome&)>& on_result = {}) {
        std::vector<CriterionOutcome> all;
        for (int id = 1; id <= kCriteria; ++id) {
            all.push_back(run(id));
            if (on_result) on_result(all.back());
        }
        return all;
    }

    Experiment& experiment(const std::string& key) {
        auto it = experiments_.find(key);
        if (it != experiments_.end()) return *it->second;
        ExperimentConfig cfg = load_config(path_of(key));
        cfg.seed = cfg_.seed;
        auto ex = std::make_unique<Experiment>(std::move(cfg), threads_);
        return *(experiments_[key] = std::move(ex));
    }

private:
    const std::filesystem::path& path_of(const std::string& key) const {
        if (key == "fuchsian") return cfg_.fuchsian;
        if (key == "spatial") return cfg_.spatial;
        if (key == "wide") return cfg_.wide;
        return cfg_.single_atom;
    }

    static void fail_budget(CriterionOutcome& out, double budget) {
        out.pass = false;
        out.detail += "; over the " + format_double(budget) + " s budget";
    }

    static std::string short_num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return buf;
    }

    // Key numbers of a subcommand result for the one-line report.
    static std::string brief(const std::string& sub, const RunResult& r) {
        const auto& j = r.results;
        auto g = [&](const char* k) { return j.contains(k) && j[k].is_number() ? short_num(j[k].get<double>()) : "?"; };
        if (sub == "estimate-delta")
            return "series " + short_num(j["series"]["value"].get<double>()) + " orbit " +
                   short_num(j["orbit"]["value"].get<double>()) + " gap " + g("gap");
        if (sub == "ps-build") {
            std::string s = "median residual";
            for (const auto& c : j["conformal"]) s += " " + short_num(c["median"].get<double>());
            return s;
        }
        if (sub == "shadow") return "slope " + g("slope") + " vs " + g("delta") + " spread " + g("seed_spread");
        if (sub == "phi0-check") return "max " + g("max_residual") + " ratio " + g("richardson_ratio");
        if (sub == "energy") {
            std::string s = "growth";
            for (const auto& e : j["energies"]) s += " " + short_num(e["growth"].get<double>());
            return s;
        }
        if (sub == "boxdim") return "dim " + g("dimension") + " vs " + g("delta");
        if (sub == "project")
            return "proj dim " + g("median_projected_dimension") + " wide support " + g("wide_support_fraction") + "/" +
                   g("wide_support_fraction_refined");
        if (sub == "conditional") return std::to_string(j["passing_cases"].get<int>()) + "/9 cases";
        if (sub == "window") {
            double best = 0.0, r_best = 0.0;
            for (const auto& row : j["fractions"]) {
                double ratio = row["good_fraction"].get<double>() / (0.5 * row["r"].get<double>());
                if (ratio > best) {
                    best = ratio;
                    r_best = row["r"].get<double>();
                }
            }
            return "best fraction/(r/2) " + short_num(best) + " at r " + short_num(r_best);
        }
        if (sub == "flow") return "increasing " + g("increasing_fraction");
        if (sub == "escape") return "slope " + g("median_slope") + " escaped " + g("escaped_fraction");
        if (sub == "hopf") return "passing " + g("passing_fraction") + " median " + g("median_final_ratio") + " target " + g("target");
        return "";
    }

    void record(CriterionOutcome& out, const std::string& key, const std::string& sub, bool& all) {
        std::string piece = key + " ";
        try {
            RunResult r = run_experiment(sub, experiment(key));
            bool ok = r.pass.value_or(false);
            all = all && ok;
            piece += std::string(ok ? "ok" : "no") + " [" + brief(sub, r) + "]";
        } catch (const Error& e) {
            all = false;
            piece += std::string("error ") + e.name();
        }
        out.detail += (out.detail.empty() ? "" : "; ") + piece;
    }

    void per_config(CriterionOutcome& out, const std::string& sub, std::initializer_list<const char*> keys) {
        bool all = true;
        for (const char* k : keys) record(out, k, sub, all);
        out.pass = all;
    }

    void dimension(CriterionOutcome& out) {
        bool all = true;
        for (const char* k : {"fuchsian", "spatial", "wide"}) record(out, k, "boxdim", all);
        for (const char* k : {"fuchsian", "spatial", "wide"}) record(out, k, "project", all);
        out.pass = all;
    }

    void dichotomy(CriterionOutcome& out) {
        bool all = true;
        record(out, "wide", "flow", all);
        record(out, "fuchsian", "escape", all);
        out.pass = all;
    }

    static Mobius random_mobius(Rng& rng) {
        for (;;) {
            cplx e[4];
            for (auto& v : e) v = cplx(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
            cplx det = e[0] * e[3] - e[1] * e[2];
            if (std::abs(det) < 0.2) continue;
            cplx r = std::sqrt(det);
            return Mobius(e[0] / r, e[1] / r, e[2] / r, e[3] / r);
        }
    }

    static H3Point random_point(Rng& rng) {
        return {cplx(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)), std::exp(rng.uniform(-1.0, 1.0))};
    }

    void geometry(CriterionOutcome& out) {
        const int n = 100;
        double worst[5] = {0, 0, 0, 0, 0};
        for (int i = 0; i < n; ++i) {
            Rng rng(cfg_.seed, 1000 + i);
            Mobius g = random_mobius(rng);
            H3Point p = random_point(rng), q = random_point(rng), r = random_point(rng);
            BoundaryPoint xi = BoundaryPoint::finite(cplx(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)));
            double d = hyp_dist(p, q);
            worst[0] = std::max(worst[0], std::abs(hyp_dist(apply_h3(g, p), apply_h3(g, q)) - d) / std::max(1.0, d));
            double b_pq = busemann_closed(xi, p, q), b_qr = busemann_closed(xi, q, r), b_pr = busemann_closed(xi, p, r);
            worst[1] = std::max(worst[1], std::abs(b_pq + b_qr - b_pr));
            double b_g = busemann_closed(apply_boundary(g, xi), apply_h3(g, p), apply_h3(g, q));
            worst[2] = std::max(worst[2], std::abs(b_g - b_pq));
            worst[3] = std::max(worst[3], sign_distance(recompose(iwasawa(g)), g));
            Mobius h = m_theta(rng.uniform(0.0, M_PI)) * nminus_w(cplx(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))) *
                       a_s(rng.uniform(-2.0, 2.0)) * n_z(cplx(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0))) *
                       m_theta(rng.uniform(0.0, M_PI));
            auto bc = decompose_box(h);
            worst[4] = std::max(worst[4], bc ? sign_distance(recompose(*bc), h) : INFINITY);
        }
        const char* names[5] = {"isometry", "cocycle", "equivariance", "iwasawa", "box"};
        out.pass = true;
        for (int k = 0; k < 5; ++k) {
            out.pass = out.pass && worst[k] <= 1e-9;
            out.detail += std::string(k ? " " : "") + names[k] + " " + short_num(worst[k]);
        }
        out.detail += " over " + std::to_string(n) + " cases each";
    }

    // Representatives agree up to the rounding carried by the product gamma h, which grows like |gamma|^2 |h|^2.
    void reduction(CriterionOutcome& out) {
        const double eps = std::numeric_limits<double>::epsilon();
        double worst = 0.0, worst_scaled = 0.0;
        bool idempotent = true;
        int cases = 0;
        for (const char* key : {"fuchsian", "spatial", "wide"}) {
            const SchottkyGroup& G = experiment(key).group();
            for (int i = 0; i < 500; ++i) {
                Rng rng(cfg_.seed, 5000 + i);
                Mobius h = n_z(cplx(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))) * a_s(rng.uniform(-1.0, 1.0)) *
                           m_theta(rng.uniform(0.0, M_PI));
                int len = 1 + static_cast<int>(rng.below(5));
                Mobius gamma = word_element(G, random_reduced_word(G, len, rng));
                Reduction base = reduce(G, h);
                Reduction moved = reduce(G, gamma * h);
                double dist = sign_distance(moved.rep, base.rep);
                worst = std::max(worst, dist);
                worst_scaled = std::max(worst_scaled, dist / (eps * gamma.frobenius_sq() * h.frobenius_sq()));
                Reduction again = reduce(G, base.rep);
                idempotent = idempotent && again.word.empty() && again.rep.a == base.rep.a && again.rep.b == base.rep.b &&
                             again.rep.c == base.rep.c && again.rep.d == base.rep.d;
                ++cases;
            }
        }
        out.pass = worst_scaled <= 64.0 && idempotent;
        out.detail = std::to_string(cases) + " cases, max rep distance " + short_num(worst) + " (" +
                     short_num(worst_scaled) + " eps |gamma|^2 |h|^2), idempotence " + (idempotent ? "exact" : "broken");
    }

    // Every subcommand with reduced knobs, at one and four threads; outputs must match byte for byte.
    void determinism(CriterionOutcome& out) {
        auto small = [&](const std::string& key) {
            ExperimentConfig c = load_config(path_of(key));
            c.seed = cfg_.seed;
            c.max_len = 8;
            c.delta_len = 8;
            c.energy_len = 10;
            c.samples = 12;
            c.mixing_samples = 200;
            c.hopf_samples = 3;
            c.points = 3000;
            c.depth = 12;
            c.shadow_points = 4;
            c.shadow_seeds = 2;
            c.phi0_points = 6;
            c.T = 10.0;
            c.recurrence_T = {5.0, 10.0};
            c.T_grid = {2.5, 5.0, 10.0};
            c.s_grid = {2.0, 4.0};
            c.mixing_s = {1.0};
            c.directions = 8;
            c.bins = 64;
            return c;
        };
        auto bytes = [](const std::string& sub, const ExperimentConfig& c, int threads) {
            Experiment ex(c, threads);
            try {
                RunResult r = run_experiment(sub, ex);
                return r.csv + summary_json(sub, ex, r).dump(2);
            } catch (const Error& e) {
                return std::string("error ") + e.what();
            }
        };
        int same = 0, total = 0;
        std::string differing;
        for (const auto& [sub, fn] : experiment_runners()) {
            std::string key = sub == "escape" ? "fuchsian" : sub == "hopf" ? "wide" : sub == "phi0-check" ? "single_atom" : "spatial";
            ExperimentConfig c = small(key);
            bool eq = bytes(sub, c, 1) == bytes(sub, c, 4);
            same += eq;
            ++total;
            if (!eq) differing += " " + sub;
        }
        out.pass = same == total;
        out.detail = std::to_string(same) + "/" + std::to_string(total) + " subcommands identical at 1 and 4 threads" +
                     (differing.empty() ? "" : "; differ:" + differing);
    }

    AcceptanceConfig cfg_;
    int threads_;
    std::map<std::string, std::unique_ptr<Experiment>> experiments_;
};

} // namespace kleinlab
