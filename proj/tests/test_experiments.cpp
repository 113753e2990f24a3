#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "arw/error.hpp"
#include "arw/experiments.hpp"

using namespace arw;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = ARW_FIXTURES;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string config_error(const json& j) {
    try {
        ExperimentConfig::from_json(j, kFixtures);
    } catch (const Error& e) {
        return e.kind();
    }
    return "";
}

json small_hydro() {
    return json::parse(R"({
        "kind": "hydro", "domain": "tiny/two_strips.json", "levels": [2, 3], "replicas": 6,
        "seed": 5, "t_end": 0.5, "schedule": [0.25, 0.5],
        "picard": {"time_steps": 16, "cells_per_unit": 16, "modes": 16},
        "probes": [{"plus": ["1/4", "1/4"], "minus": ["-1/4", "1/4"]}],
        "checks": ["hydro", "martingale", "chaos", "flux"]})");
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("arw_test_experiments_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK(config_error(json{{"kind", "nonsense"}}) == "ConfigError");
    json j = small_hydro();
    j["schedule"] = json::array();
    CHECK(config_error(j) == "ConfigError");
    j["schedule"] = {0.5, 0.25};
    CHECK(config_error(j) == "ConfigError");
    j["schedule"] = {0.25, 0.25};
    CHECK(config_error(j) == "ConfigError");
    j["schedule"] = {0.25, 0.75};   // beyond t_end
    CHECK(config_error(j) == "ConfigError");
    j = small_hydro();
    j["replicas"] = 1;
    CHECK(config_error(j) == "ConfigError");
    j = small_hydro();
    j["levels"] = {0};
    CHECK(config_error(j) == "ConfigError");
    j = small_hydro();
    j.erase("domain");
    CHECK(config_error(j) == "ConfigError");
    j = small_hydro();
    j["domain"] = "does_not_exist.json";
    CHECK(config_error(j) == "ConfigError");
    CHECK(config_error(small_hydro()).empty());
    CHECK_THROWS_AS(ExperimentConfig::load(kFixtures + "/nope.json"), Error);
}

TEST_CASE("cosine series initial data") {
    const CosineSeries s = CosineSeries::from_json(json::parse(R"({"c0": 1, "modes": [{"amp": 0.5, "k": [1, 2]}]})"));
    const double pi = std::acos(-1.0);
    CHECK(s(Point{0.3, 0.2}) == doctest::Approx(1 + 0.5 * std::cos(0.3 * pi) * std::cos(0.4 * pi)));
    CHECK(s.sup_bound() == 1.5);
    CHECK(CosineSeries::from_json(s.to_json())(Point{0.7, 0.1}) == s(Point{0.7, 0.1}));
}

TEST_CASE("Aitken floor: exact on geometric sequences, gradient by differences") {
    const AitkenFloor a = aitken_floor(0.3 + 0.8, 0.3 + 0.4, 0.3 + 0.2);
    REQUIRE(a.defined);
    CHECK(a.floor == doctest::Approx(0.3).epsilon(1e-14));
    const double d[3] = {1.0, 0.55, 0.4};
    const AitkenFloor base = aitken_floor(d[0], d[1], d[2]);
    for (int i = 0; i < 3; ++i) {
        double up[3] = {d[0], d[1], d[2]}, dn[3] = {d[0], d[1], d[2]};
        const double h = 1e-6;
        up[i] += h;
        dn[i] -= h;
        const double fd = (aitken_floor(up[0], up[1], up[2]).floor - aitken_floor(dn[0], dn[1], dn[2]).floor) / (2 * h);
        CHECK(base.gradient[i] == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK_FALSE(aitken_floor(1.0, 0.5, 0.0).defined);   // linear: no second difference
}

TEST_CASE("SHA-256 of known strings") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("jn kind reproduces the first exact values") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(
        json::parse(R"({"kind": "jn", "seed": 3, "N_max": 6, "certify_to": 10, "mc_max_N": 3, "mc_samples": 20000})"),
        kFixtures);
    const ExperimentOutput out = run_experiment(cfg);
    CHECK(out.all_gated_pass());
    CHECK(out.criterion_pass(1));
    CHECK(out.criterion_pass(2));
    CHECK_FALSE(out.criterion_pass(5));   // no checks for that criterion in this run
    const auto& rows = out.report.at("bounds").at("rows");
    CHECK(rows[0].at("exact") == "2");
    CHECK(rows[1].at("exact") == "2 + pi");
    CHECK(rows[2].at("exact") == "4 + 10/3*pi");
    CHECK(out.report.at("bounds").at("first_upper_N") == 3);
}

TEST_CASE("duality kind passes on a small case") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(R"({
        "kind": "duality", "tolerance": 1e-10,
        "cases": [{"domain": "two_intervals.json", "j": 2, "t": 0.2, "classes": [[1, 1, 1, 1], [1, 0, 2, 0]]}]})"),
                                                             kFixtures);
    const ExperimentOutput out = run_experiment(cfg);
    CHECK(out.all_gated_pass());
    CHECK(out.criterion_pass(3));
}

TEST_CASE("outputs are deterministic across runs and thread counts") {
    ExperimentConfig cfg = ExperimentConfig::from_json(small_hydro(), kFixtures);
    const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
    ExperimentOutput oa;
    const RunManifest ma = run_and_write(cfg, a.string(), &oa);
    run_and_write(cfg, b.string());
    cfg.threads = 3;
    run_and_write(cfg, c.string());
    for (const char* f : {"results.csv", "report.json"}) {
        CHECK(slurp(a / f) == slurp(b / f));
        CHECK(slurp(a / f) == slurp(c / f));
    }
    // the thread count is recorded only in the manifest
    CHECK(json::parse(slurp(a / "report.json")).at("config").at("seed") == 5);
    // manifest hashes are the SHA-256 of the written files
    const json man = json::parse(slurp(a / "manifest.json"));
    for (const auto& f : man.at("files"))
        CHECK(f.at("sha256") == sha256_hex(slurp(a / f.at("file").get<std::string>())));
    CHECK(man.at("seed") == 5);
    CHECK(man.at("threads") == 1);
    CHECK_FALSE(json::parse(slurp(a / "report.json")).at("config").contains("threads"));
    CHECK(ma.wall_seconds > 0);
    CHECK(ma.all_gated_pass == oa.all_gated_pass());
    // every check carries a criterion tag and a pass flag in the csv
    const std::string csv = slurp(a / "results.csv");
    CHECK(csv.rfind("check,quantity,j,t,value,stderr,bound,pass\n", 0) == 0);
    for (const auto& chk : oa.checks) CHECK(chk.criterion >= 0);
    // a different seed changes the statistics
    cfg.seed = 6;
    const fs::path d = scratch("d");
    run_and_write(cfg, d.string());
    CHECK(slurp(a / "results.csv") != slurp(d / "results.csv"));
    for (const auto& p : {a, b, c, d}) if (!std::getenv("ARW_KEEP")) fs::remove_all(p);
}
