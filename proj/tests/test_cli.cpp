#include "common.hpp"

#include <kleinlab/acceptance.hpp>
#include <kleinlab/experiments.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace kleinlab;
namespace fs = std::filesystem;

namespace {

const char* kPairs = R"("pairs": [[-2, 0, 1.2, 2, 0, 1.2], [0, -2, 1.2, 0, 2, 1.2]])";

std::string error_name(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.name();
    }
    return "";
}

std::string error_text(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

ExperimentConfig small_spatial() {
    ExperimentConfig c = parse_config(std::string("{") + kPairs + R"(, "name": "t", "seed": 3})");
    c.max_len = 8;
    c.delta_len = 8;
    c.points = 3000;
    c.depth = 12;
    c.directions = 8;
    c.bins = 64;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("kleinlab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(KLEINLAB_CLI) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, ParsesGroupsAndKnobs) {
    ExperimentConfig c = parse_config(std::string("{") + kPairs + R"(, "name": "a", "max_len": 9, "r": [0.2], "seed": 5})");
    EXPECT_EQ(c.name, "a");
    ASSERT_EQ(c.pairs.size(), 2u);
    EXPECT_EQ(c.pairs[1].to.center, cplx(0, 2));
    EXPECT_EQ(c.max_len, 9);
    EXPECT_EQ(c.r, std::vector<double>{0.2});
    EXPECT_EQ(c.seed, 5u);
    ExperimentConfig twisted = parse_config(R"({"pairs": [[-2, 0, 1, 2, 0, 1, 0.5], [0, -2, 1, 0, 2, 1]]})");
    EXPECT_EQ(twisted.pairs[0].twist, 0.5);
    ExperimentConfig atom = parse_config(R"({"single_atom": [0.3, -0.2], "delta": 1.5})");
    EXPECT_EQ(atom.single_atom, cplx(0.3, -0.2));
    EXPECT_EQ(atom.delta, 1.5);
    EXPECT_FALSE(atom.seed);
}

TEST(Config, ReportsErrorsByNameAndLine) {
    EXPECT_EQ(error_name("{"), "MalformedConfig");
    EXPECT_EQ(error_name("[1, 2]"), "MalformedConfig");
    EXPECT_EQ(error_name(R"({"name": "x"})"), "MissingGroup");
    EXPECT_EQ(error_name(std::string("{") + kPairs + R"(, "colour": 1})"), "UnknownKey");
    EXPECT_EQ(error_name(std::string("{") + kPairs + R"(, "max_len": 99})"), "OutOfRange");
    EXPECT_EQ(error_name(std::string("{") + kPairs + R"(, "max_len": 9.5})"), "InvalidType");
    EXPECT_EQ(error_name(std::string("{") + kPairs + R"(, "seed": -1})"), "InvalidType");
    EXPECT_EQ(error_name(std::string("{") + kPairs + R"(, "name": "a/b"})"), "InvalidName");
    EXPECT_EQ(error_name(R"({"pairs": [[1, 2, 3]]})"), "InvalidType");
    EXPECT_EQ(error_name(R"({"group_table": "no_such_file.csv"})"), "MissingFile");
    EXPECT_NE(error_text("{\n" + std::string(kPairs) + ",\n\"dt\": 5\n}").find("line 3"), std::string::npos);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, LoadsShippedConfigurations) {
    for (const char* name : {"fuchsian", "spatial", "wide", "single_atom"}) {
        ExperimentConfig c = load_config(fs::path(KLEINLAB_CONFIG_DIR) / (std::string(name) + ".json"));
        EXPECT_EQ(c.name, name);
        EXPECT_TRUE(c.seed);
        if (c.pairs.empty()) continue;
        EXPECT_NO_THROW(SchottkyGroup G(c.pairs));
    }
    EXPECT_TRUE(SchottkyGroup(load_config(fs::path(KLEINLAB_CONFIG_DIR) / "fuchsian.json").pairs).is_fuchsian());
}

TEST(Config, HashTracksEveryKnob) {
    ExperimentConfig a = small_spatial();
    ExperimentConfig b = small_spatial();
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b.dt = 0.03;
    EXPECT_NE(config_hash(a), config_hash(b));
    b = a;
    b.seed = 4;
    EXPECT_NE(config_hash(a), config_hash(b));
    b = a;
    b.pairs[0].twist = 0.1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Experiment, SeedsAndProvenance) {
    Experiment ex(small_spatial());
    EXPECT_EQ(ex.seed("flow"), ex.seed("flow"));
    EXPECT_NE(ex.seed("flow"), ex.seed("hopf"));
    std::string p = ex.provenance("boxdim");
    EXPECT_EQ(p.rfind("kleinlab " + std::string(kVersion) + " t boxdim config=", 0), 0u);
    EXPECT_NE(p.find("seed=3"), std::string::npos);
    ExperimentConfig c = small_spatial();
    c.seed.reset();
    Experiment unseeded(c);
    EXPECT_THROW(unseeded.seed("flow"), ConfigError);
    Experiment atom(parse_config(R"({"single_atom": [0, 0], "delta": 1.5})"));
    EXPECT_THROW(atom.group(), ConfigError);
    EXPECT_EQ(atom.delta(), 1.5);
    EXPECT_EQ(atom.ps().size(), 1u);
}

TEST(Runners, TableAndDispatch) {
    std::vector<std::string> names;
    for (const auto& [name, fn] : experiment_runners()) names.push_back(name);
    EXPECT_EQ(names.size(), 13u);
    for (const char* n : {"estimate-delta", "ps-build", "shadow", "phi0-check", "conditional", "flow", "window",
                          "hopf", "project", "energy", "boxdim", "mixing", "escape"})
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    Experiment ex(small_spatial());
    EXPECT_THROW(run_experiment("nope", ex), ConfigError);
}

TEST(Runners, BoxDimensionSummaryAndThreadIndependence) {
    ExperimentConfig c = small_spatial();
    Experiment one(c, 1), four(c, 4);
    RunResult a = run_experiment("boxdim", one);
    RunResult b = run_experiment("boxdim", four);
    EXPECT_EQ(a.csv, b.csv);
    nlohmann::ordered_json ja = summary_json("boxdim", one, a);
    EXPECT_EQ(ja.dump(), summary_json("boxdim", four, b).dump());
    for (const char* key : {"name", "subcommand", "config_hash", "version", "seed", "results", "pass"})
        EXPECT_TRUE(ja.contains(key)) << key;
    EXPECT_EQ(ja["subcommand"], "boxdim");
    EXPECT_EQ(a.csv.rfind("# kleinlab", 0), 0u);
    ASSERT_TRUE(a.pass.has_value());
}

TEST(Runners, EscapeRefusesNonFuchsianGroups) {
    Experiment ex(small_spatial());
    try {
        run_experiment("escape", ex);
        FAIL() << "escape ran on a non-Fuchsian group";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.name(), "NotFuchsian");
    }
}

TEST(Acceptance, ConfigParsing) {
    AcceptanceConfig a = parse_acceptance(
        R"({"fuchsian": "f.json", "spatial": "s.json", "wide": "w.json", "single_atom": "a.json", "seed": 9})", "/base");
    EXPECT_EQ(a.fuchsian, fs::path("/base/f.json"));
    EXPECT_EQ(a.seed, 9u);
    EXPECT_THROW(parse_acceptance(R"({"fuchsian": "f.json"})"), ConfigError);
    EXPECT_THROW(parse_acceptance(
                     R"({"fuchsian": "f", "spatial": "s", "wide": "w", "single_atom": "a", "extra": 1})"),
                 ConfigError);
    AcceptanceConfig shipped = load_acceptance(fs::path(KLEINLAB_CONFIG_DIR) / "acceptance.json");
    EXPECT_TRUE(fs::exists(shipped.wide));
}

TEST(Acceptance, OutcomeLineFormat) {
    CriterionOutcome c{4, "patterson", true, "median 1e-13", 1.5};
    std::string line = format_outcome(c);
    EXPECT_EQ(line.rfind("criterion  4 PASS", 0), 0u);
    EXPECT_NE(line.find("patterson"), std::string::npos);
    EXPECT_NE(line.find("median 1e-13"), std::string::npos);
    c.pass = false;
    EXPECT_NE(format_outcome(c).find("FAIL"), std::string::npos);
}

TEST(CommandLine, ExitCodes) {
    fs::path dir = scratch_dir("exit");
    std::ofstream(dir / "bad.json") << "{ \"pairs\": 3 }";
    std::ofstream(dir / "small.json") << "{\"name\": \"small\", " << kPairs
                                      << R"(, "max_len": 8, "delta_len": 8, "points": 3000, "depth": 12, "seed": 1})";
    std::string out = " --out " + (dir / "out").string();
    EXPECT_EQ(run_cli("--version"), 0);
    EXPECT_EQ(run_cli("boxdim"), 2);
    EXPECT_EQ(run_cli("nonsense --config " + (dir / "small.json").string()), 2);
    EXPECT_EQ(run_cli("boxdim --config " + (dir / "bad.json").string()), 2);
    EXPECT_EQ(run_cli("boxdim --config " + (dir / "missing.json").string()), 2);
    EXPECT_EQ(run_cli("boxdim --threads 0 --config " + (dir / "small.json").string()), 2);
    EXPECT_EQ(run_cli("hopf --config " + (dir / "small.json").string() + out), 3);
    int code = run_cli("boxdim --config " + (dir / "small.json").string() + out);
    EXPECT_TRUE(code == 0 || code == 1);
    EXPECT_TRUE(fs::exists(dir / "out" / "small_boxdim.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "small_boxdim.json"));
    fs::remove_all(dir);
}
