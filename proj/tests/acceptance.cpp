// Acceptance run: executes the fixture experiment configs and prints one
// PASS/FAIL line per numbered criterion, then one line for the module-level
// invariants (criterion tag 0). Exit status is nonzero if any line fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arw/error.hpp"
#include "arw/experiments.hpp"

namespace fs = std::filesystem;

namespace {

struct CriterionInfo {
    const char* title;
    std::vector<std::string> configs;
};

const std::map<int, CriterionInfo> kCriteria = {
    {1, {"exact J_1..J_3, leaf counts, Catalan numbers", {"jn"}}},
    {2, {"J_N lower/upper bounds and Monte Carlo", {"jn"}}},
    {3, {"duality and annihilation-operator identities", {"duality"}}},
    {4, {"lattice kernel invariants", {"kernel_bounds"}}},
    {5, {"local CLT gap", {"lclt"}}},
    {6, {"Cheeger / spectral-gap inequality", {"kernel_bounds"}}},
    {7, {"coupled PDE: fixed point vs finite differences, mass balance, no-coupling limit", {"pde_1d", "pde_2d"}}},
    {8, {"hydrodynamic L1 convergence", {"hydro"}}},
    {9, {"propagation of chaos and interface flux", {"hydro"}}},
    {10, {"martingale diagnostics", {"hydro"}}},
};

const std::vector<std::string> kConfigs = {"jn",     "duality", "kernel_bounds", "kernel_bounds_full", "lclt",
                                           "pde_1d", "pde_2d",  "hydro"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string out_dir = "acceptance_out", fixtures = ARW_FIXTURES;
    std::vector<std::string> only;
    app.add_option("--out", out_dir, "Directory for per-config outputs");
    app.add_option("--fixtures", fixtures, "Fixture directory");
    app.add_option("--only", only, "Run only these configs (criteria depending on others report FAIL)");
    CLI11_PARSE(app, argc, argv);

    std::map<std::string, arw::ExperimentOutput> results;
    std::map<std::string, double> seconds;
    std::map<std::string, std::string> errors;
    for (const auto& name : kConfigs) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const fs::path cfg_path = fs::path(fixtures) / "experiments" / (name + ".json");
        try {
            const arw::ExperimentConfig cfg = arw::ExperimentConfig::load(cfg_path.string());
            arw::ExperimentOutput res;
            const arw::RunManifest man = arw::run_and_write(cfg, (fs::path(out_dir) / name).string(), &res);
            seconds[name] = man.wall_seconds;
            std::printf("[%s] %.1fs\n", name.c_str(), man.wall_seconds);
            for (const auto& c : res.checks)
                std::printf("    %-36s %s%s\n", c.name.c_str(), c.pass ? "pass" : "FAIL", c.gated ? "" : " (not gated)");
            results[name] = std::move(res);
        } catch (const arw::Error& e) {
            errors[name] = e.what();
            std::printf("[%s] error: %s\n", name.c_str(), e.what());
        }
        std::fflush(stdout);
    }

    std::printf("\n");
    bool all = true;
    for (const auto& [id, info] : kCriteria) {
        bool pass = true;
        std::vector<std::string> failed;
        int gated = 0;
        for (const auto& name : info.configs) {
            auto it = results.find(name);
            if (it == results.end()) {
                pass = false;
                failed.push_back(name + " did not run");
                continue;
            }
            for (const auto& c : it->second.checks) {
                if (!c.gated || c.criterion != id) continue;
                ++gated;
                if (!c.pass) {
                    pass = false;
                    failed.push_back(c.name);
                }
            }
        }
        if (gated == 0) pass = false;
        all = all && pass;
        std::string why;
        for (const auto& f : failed) why += (why.empty() ? "" : ", ") + f;
        std::printf("criterion %d: %s  %s%s%s\n", id, pass ? "PASS" : "FAIL", info.title,
                    why.empty() ? "" : "  [failed: ", (why.empty() ? "" : (why + "]").c_str()));
    }

    // Module-level invariants carried by the same runs.
    bool inv = true;
    std::string why;
    for (const auto& [name, res] : results)
        for (const auto& c : res.checks)
            if (c.gated && c.criterion == 0 && !c.pass) {
                inv = false;
                why += (why.empty() ? "" : ", ") + name + "/" + c.name;
            }
    all = all && inv;
    std::printf("module invariants: %s%s%s\n", inv ? "PASS" : "FAIL", why.empty() ? "" : "  [failed: ",
                why.empty() ? "" : (why + "]").c_str());
    double total = 0;
    for (const auto& [n, s] : seconds) total += s;
    std::printf("total %.1fs, outputs in %s\n", total, out_dir.c_str());
    return all ? 0 : 1;
}
