#pragma once

// Experiment configuration read from JSON. Every key is optional except the group,
// which comes either inline ("pairs") or from a disk-pair table ("group_table").

#include <kleinlab/error.hpp>
#include <kleinlab/rng.hpp>
#include <kleinlab/schottky.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace kleinlab {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<DiskPair> pairs;
    std::optional<cplx> single_atom;  // replaces nu by one unit atom (phi0 checks)
    std::optional<double> delta;      // replaces the estimated critical exponent

    int max_len = 10;       // word length for nu
    int energy_len = 12;    // energies compare nu at energy_len - 2 and energy_len
    int delta_len = 12;     // word length for the exponent estimators
    double s_offset = 0.02;
    double rho = 0.0;       // box radius; 0 picks 0.9 of the injectivity bound
    double dt = 0.02;
    double T = 100.0;
    std::vector<double> r = {0.1, 0.2, 0.3, 0.4};
    std::vector<double> T_grid = {25.0, 50.0, 100.0, 200.0};
    std::vector<double> s_grid = {2.0, 4.0, 6.0, 8.0};
    std::vector<double> mixing_s = {1.0, 6.0};
    std::vector<double> recurrence_T = {50.0, 100.0, 200.0};
    std::vector<double> alpha = {0.8, 1.2};  // multiples of the exponent estimate
    int bins = 256;
    int directions = 64;
    int samples = 500;
    int mixing_samples = 20000;
    int hopf_samples = 100;
    int depth = 18;         // limit-set sample depth
    int points = 20000;     // limit-set sample count
    int shadow_points = 32;
    int shadow_seeds = 3;
    int phi0_points = 100;
    double h = 1e-3;        // finite-difference step relative to height
    double leaf_radius = 1.0;
    double theta = 0.7;     // horocycle direction for escape runs
    std::optional<std::uint64_t> seed;

    std::filesystem::path base_dir;  // directory of the config file
    std::string source;              // raw text, for diagnostics
};

namespace detail {

inline int line_of_offset(const std::string& text, size_t offset) {
    int line = 1;
    for (size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
    return line;
}

inline int line_of_key(const std::string& text, const std::string& key) {
    size_t pos = text.find('"' + key + '"');
    return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

[[noreturn]] inline void field_error(const ExperimentConfig& cfg, const std::string& name, const std::string& key,
                                     const std::string& what) {
    int line = line_of_key(cfg.source, key);
    throw ConfigError(name, (line > 0 ? "line " + std::to_string(line) + ", " : std::string()) + "field '" + key +
                                "': " + what);
}

inline double get_number(const ExperimentConfig& cfg, const nlohmann::json& v, const std::string& key, double lo,
                         double hi) {
    if (!v.is_number()) field_error(cfg, "InvalidType", key, "expected a number");
    double x = v.get<double>();
    if (!(x >= lo && x <= hi))
        field_error(cfg, "OutOfRange", key, "value " + format_double(x) + " outside [" + format_double(lo) + ", " +
                                                 format_double(hi) + "]");
    return x;
}

inline int get_int(const ExperimentConfig& cfg, const nlohmann::json& v, const std::string& key, int lo, int hi) {
    if (!v.is_number_integer()) field_error(cfg, "InvalidType", key, "expected an integer");
    long long x = v.get<long long>();
    if (x < lo || x > hi)
        field_error(cfg, "OutOfRange", key,
                    "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
}

inline std::vector<double> get_list(const ExperimentConfig& cfg, const nlohmann::json& v, const std::string& key,
                                    double lo, double hi) {
    if (!v.is_array() || v.empty()) field_error(cfg, "InvalidType", key, "expected a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(get_number(cfg, e, key, lo, hi));
    return out;
}

inline std::vector<DiskPair> pairs_from_json(const ExperimentConfig& cfg, const nlohmann::json& v) {
    if (!v.is_array()) field_error(cfg, "InvalidType", "pairs", "expected an array of disk pairs");
    std::vector<DiskPair> out;
    for (const auto& row : v) {
        if (!row.is_array() || (row.size() != 6 && row.size() != 7))
            field_error(cfg, "InvalidType", "pairs", "each pair needs 6 or 7 numbers");
        std::vector<double> x;
        for (const auto& e : row) {
            if (!e.is_number()) field_error(cfg, "InvalidType", "pairs", "expected numbers");
            x.push_back(e.get<double>());
        }
        DiskPair p;
        p.from = Disk{cplx(x[0], x[1]), x[2]};
        p.to = Disk{cplx(x[3], x[4]), x[5]};
        p.twist = x.size() == 7 ? x[6] : 0.0;
        out.push_back(p);
    }
    return out;
}

} // namespace detail

inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig cfg;
    cfg.source = text;
    cfg.base_dir = base_dir;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("MalformedConfig",
                          "line " + std::to_string(detail::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0)) + ": " +
                              e.what());
    }
    if (!j.is_object()) throw ConfigError("MalformedConfig", "line 1: top level must be an object");
    using detail::get_int;
    using detail::get_list;
    using detail::get_number;
    bool have_group = false;
    for (const auto& [key, v] : j.items()) {
        if (key == "name") {
            if (!v.is_string()) detail::field_error(cfg, "InvalidType", key, "expected a string");
            cfg.name = v.get<std::string>();
            if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos)
                detail::field_error(cfg, "InvalidName", key, "name must be non-empty without path separators");
        } else if (key == "pairs") {
            cfg.pairs = detail::pairs_from_json(cfg, v);
            have_group = true;
        } else if (key == "group_table") {
            if (!v.is_string()) detail::field_error(cfg, "InvalidType", key, "expected a path");
            std::filesystem::path p = base_dir / v.get<std::string>();
            std::ifstream in(p);
            if (!in) detail::field_error(cfg, "MissingFile", key, "cannot read " + p.string());
            std::stringstream ss;
            ss << in.rdbuf();
            cfg.pairs = parse_group_table(ss.str());
            have_group = true;
        } else if (key == "single_atom") {
            auto x = get_list(cfg, v, key, -1e6, 1e6);
            if (x.size() != 2) detail::field_error(cfg, "InvalidType", key, "expected [re, im]");
            cfg.single_atom = cplx(x[0], x[1]);
        } else if (key == "delta") cfg.delta = get_number(cfg, v, key, 1e-6, 2.0);
        else if (key == "max_len") cfg.max_len = get_int(cfg, v, key, 8, 14);
        else if (key == "energy_len") cfg.energy_len = get_int(cfg, v, key, 10, 14);
        else if (key == "delta_len") cfg.delta_len = get_int(cfg, v, key, 8, 14);
        else if (key == "s_offset") cfg.s_offset = get_number(cfg, v, key, 1e-4, 0.5);
        else if (key == "rho") cfg.rho = get_number(cfg, v, key, 0.0, 2.0);
        else if (key == "dt") cfg.dt = get_number(cfg, v, key, 1e-4, 0.1);
        else if (key == "T") cfg.T = get_number(cfg, v, key, 1.0, 1e4);
        else if (key == "r") cfg.r = get_list(cfg, v, key, 1e-6, 1.0 - 1e-6);
        else if (key == "T_grid") cfg.T_grid = get_list(cfg, v, key, 1.0, 1e4);
        else if (key == "s_grid") cfg.s_grid = get_list(cfg, v, key, 0.0, 20.0);
        else if (key == "mixing_s") cfg.mixing_s = get_list(cfg, v, key, 0.0, 20.0);
        else if (key == "recurrence_T") cfg.recurrence_T = get_list(cfg, v, key, 1.0, 1e4);
        else if (key == "alpha") cfg.alpha = get_list(cfg, v, key, 1e-3, 4.0);
        else if (key == "bins") cfg.bins = get_int(cfg, v, key, 16, 1 << 20);
        else if (key == "directions") cfg.directions = get_int(cfg, v, key, 1, 4096);
        else if (key == "samples") cfg.samples = get_int(cfg, v, key, 1, 10000000);
        else if (key == "mixing_samples") cfg.mixing_samples = get_int(cfg, v, key, 1, 10000000);
        else if (key == "hopf_samples") cfg.hopf_samples = get_int(cfg, v, key, 1, 10000000);
        else if (key == "depth") cfg.depth = get_int(cfg, v, key, 4, 60);
        else if (key == "points") cfg.points = get_int(cfg, v, key, 100, 10000000);
        else if (key == "shadow_points") cfg.shadow_points = get_int(cfg, v, key, 1, 100000);
        else if (key == "shadow_seeds") cfg.shadow_seeds = get_int(cfg, v, key, 1, 100);
        else if (key == "phi0_points") cfg.phi0_points = get_int(cfg, v, key, 1, 1000000);
        else if (key == "h") cfg.h = get_number(cfg, v, key, 1e-6, 0.1);
        else if (key == "leaf_radius") cfg.leaf_radius = get_number(cfg, v, key, 1e-3, 100.0);
        else if (key == "theta") cfg.theta = get_number(cfg, v, key, -10.0, 10.0);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) detail::field_error(cfg, "InvalidType", key, "expected a non-negative integer");
            cfg.seed = v.get<std::uint64_t>();
        } else detail::field_error(cfg, "UnknownKey", key, "not a recognised setting");
    }
    if (!have_group && !cfg.single_atom)
        throw ConfigError("MissingGroup", "config needs \"pairs\", \"group_table\" or \"single_atom\"");
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("MissingFile", "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

// Canonical text of every knob that influences results; the hash identifies runs.
inline nlohmann::ordered_json config_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["name"] = cfg.name;
    nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
    for (const auto& p : cfg.pairs)
        pairs.push_back({p.from.center.real(), p.from.center.imag(), p.from.radius, p.to.center.real(),
                         p.to.center.imag(), p.to.radius, p.twist});
    j["pairs"] = pairs;
    if (cfg.single_atom) j["single_atom"] = {cfg.single_atom->real(), cfg.single_atom->imag()};
    if (cfg.delta) j["delta"] = *cfg.delta;
    j["max_len"] = cfg.max_len;
    j["delta_len"] = cfg.delta_len;
    j["energy_len"] = cfg.energy_len;
    j["s_offset"] = cfg.s_offset;
    j["rho"] = cfg.rho;
    j["dt"] = cfg.dt;
    j["T"] = cfg.T;
    j["r"] = cfg.r;
    j["T_grid"] = cfg.T_grid;
    j["s_grid"] = cfg.s_grid;
    j["mixing_s"] = cfg.mixing_s;
    j["recurrence_T"] = cfg.recurrence_T;
    j["alpha"] = cfg.alpha;
    j["bins"] = cfg.bins;
    j["directions"] = cfg.directions;
    j["samples"] = cfg.samples;
    j["mixing_samples"] = cfg.mixing_samples;
    j["hopf_samples"] = cfg.hopf_samples;
    j["depth"] = cfg.depth;
    j["points"] = cfg.points;
    j["shadow_points"] = cfg.shadow_points;
    j["shadow_seeds"] = cfg.shadow_seeds;
    j["phi0_points"] = cfg.phi0_points;
    j["h"] = cfg.h;
    j["leaf_radius"] = cfg.leaf_radius;
    j["theta"] = cfg.theta;
    if (cfg.seed) j["seed"] = *cfg.seed;
    return j;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_json(cfg).dump())));
    return buf;
}

} // namespace kleinlab
