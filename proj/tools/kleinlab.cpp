#include <kleinlab/acceptance.hpp>
#include <kleinlab/experiments.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace kleinlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("UnwritableOutput", "cannot write " + path.string());
    f << text;
}

int run_accept(const fs::path& config, std::optional<std::uint64_t> seed, const fs::path& out, int threads,
               const std::string& format) {
    AcceptanceConfig acfg = load_acceptance(config);
    if (seed) acfg.seed = *seed;
    AcceptanceSuite suite(acfg, threads);
    std::string csv = "# kleinlab " + std::string(kVersion) + " accept seed=" + std::to_string(acfg.seed) +
                      "\ncriterion,label,pass,detail\n";
    nlohmann::ordered_json crit = nlohmann::ordered_json::array();
    std::vector<int> failed;
    suite.run_all([&](const CriterionOutcome& c) {
        std::cout << format_outcome(c) << std::endl;
        csv += std::to_string(c.id) + "," + c.label + "," + (c.pass ? "true" : "false") + ",\"" + c.detail + "\"\n";
        crit.push_back({{"id", c.id}, {"label", c.label}, {"pass", c.pass}, {"detail", c.detail}});
        if (!c.pass) failed.push_back(c.id);
    });
    nlohmann::ordered_json j;
    j["name"] = "acceptance";
    j["subcommand"] = "accept";
    j["config_hash"] = [&] {
        std::ifstream in(config);
        std::stringstream ss;
        ss << in.rdbuf();
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
        return std::string(buf);
    }();
    j["version"] = kVersion;
    j["seed"] = acfg.seed;
    j["results"] = {{"criteria", crit}, {"failed", failed}};
    j["pass"] = failed.empty();
    fs::create_directories(out);
    write_file(out / "acceptance_accept.csv", csv);
    write_file(out / "acceptance_accept.json", j.dump(2) + "\n");
    if (format == "json") std::cout << j.dump(2) << "\n";
    if (!failed.empty()) {
        std::cerr << "acceptance failed:";
        for (int id : failed) std::cerr << ' ' << id;
        std::cerr << "\n";
        return kExitFailed;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Numerical experiments on Schottky groups and their Patterson, BMS and BR measures"};
    app.set_version_flag("--version", std::string(kVersion));
    std::vector<std::string> names;
    for (const auto& [name, fn] : experiment_runners()) names.push_back(name);
    names.push_back("accept");

    std::string sub;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    int threads = 0;
    std::string format = "json";
    app.add_option("subcommand", sub, "Experiment to run")->required()->check(CLI::IsMember(names));
    app.add_option("--config", config, "JSON configuration file")->required();
    app.add_option("--seed", seed, "Seed for sampling subcommands; overrides the config");
    app.add_option("--out", out, "Output directory");
    app.add_option("--threads", threads, "Worker threads; overrides KLEINLAB_THREADS")->check(CLI::Range(1, 1024));
    app.add_option("--format", format, "What to echo on stdout")->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    if (threads == 0) threads = default_threads();

    try {
        if (sub == "accept") return run_accept(config, seed, out, threads, format);
        ExperimentConfig cfg = load_config(config);
        if (seed) cfg.seed = *seed;
        Experiment ex(cfg, threads);
        RunResult r = run_experiment(sub, ex);
        std::string json = summary_json(sub, ex, r).dump(2) + "\n";
        fs::create_directories(out);
        fs::path stem = fs::path(out) / (cfg.name + "_" + sub);
        write_file(stem.string() + ".csv", r.csv);
        write_file(stem.string() + ".json", json);
        std::cout << (format == "csv" ? r.csv : json);
        if (r.pass && !*r.pass) {
            std::cerr << sub << ": criterion not met\n";
            return kExitFailed;
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
}
