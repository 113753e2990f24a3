#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "arw/geometry.hpp"
#include "arw/pde.hpp"

namespace arw {

// c0 + sum_i amp_i prod_a cos(k_ia pi x_a) in absolute coordinates.
struct CosineSeries {
    struct Mode {
        double amp = 0.0;
        std::array<int, kMaxDim> k{0, 0};
    };
    double c0 = 1.0;
    std::vector<Mode> modes;

    double operator()(const Point& x) const;
    double sup_bound() const;   // c0 + sum |amp|
    static CosineSeries from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct ExperimentConfig {
    std::string kind;                 // jn, duality, kernel-bounds, lclt, pde, hydro, chaos, flux
    std::string base_dir;             // directory of the config file
    std::string domain_path;          // resolved, empty if unused
    DomainSpec spec;
    std::vector<int> levels;
    int replicas = 0;
    std::uint64_t seed = 1;
    int threads = 1;
    double t_end = 1.0;
    std::vector<double> schedule;
    CosineSeries f, g;
    nlohmann::json params = nlohmann::json::object();   // kind-specific settings
    nlohmann::json raw;

    // Errors: ConfigError (schema violation, missing files, bad schedule).
    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir);
    static ExperimentConfig load(const std::string& path);
    // Effective configuration (raw with command-line overrides applied). The
    // thread count is left out: it does not affect any result.
    nlohmann::json effective() const;
    std::string resolve(const std::string& relative) const;
};

// One named verification outcome. `criterion` ties it to a numbered
// acceptance criterion (0 = module-level invariant).
struct CheckResult {
    std::string name;
    int criterion = 0;
    bool gated = true;
    bool pass = false;
    nlohmann::json detail = nlohmann::json::object();
    nlohmann::json to_json() const;
};

// One line of results.csv; NaN / -1 fields are written empty.
struct ResultRow {
    std::string check, quantity;
    int j = -1;
    double t = std::numeric_limits<double>::quiet_NaN();
    double value = std::numeric_limits<double>::quiet_NaN();
    double stderr_ = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();
    std::string pass;
};

struct ExperimentOutput {
    std::vector<CheckResult> checks;
    std::vector<ResultRow> rows;
    nlohmann::json report = nlohmann::json::object();
    bool all_gated_pass() const;
    // Gated checks of one acceptance criterion all pass (false if there are none).
    bool criterion_pass(int criterion) const;
};

ExperimentOutput run_experiment(const ExperimentConfig& cfg);

struct RunManifest {
    std::string config_hash, code_version, start_time, end_time;
    std::uint64_t seed = 0;
    int threads = 1;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, std::string>> files;   // (name, sha256)
    nlohmann::json checks = nlohmann::json::array();           // {name, gated, pass}
    bool all_gated_pass = false;
    nlohmann::json to_json() const;
};

// Runs the experiment and writes results.csv, report.json and manifest.json
// into out_dir (created if missing). Everything except the manifest's wall
// times is a deterministic function of the effective configuration.
RunManifest run_and_write(const ExperimentConfig& cfg, const std::string& out_dir, ExperimentOutput* output = nullptr);

std::string sha256_hex(const std::string& bytes);
std::string code_version();

// Sup over FD nodes of |u_picard - u_fd| at each FD output time.
std::vector<double> compare_picard_fd(const PicardSolution& picard, const FdSolution& fd);

// Aitken extrapolation of three successive values and the gradient of the
// limit with respect to them. Returns false when the second difference is
// (numerically) zero.
struct AitkenFloor {
    bool defined = false;
    double floor = 0.0;
    std::array<double, 3> gradient{};
};
AitkenFloor aitken_floor(double d0, double d1, double d2);

}  // namespace arw
