#pragma once

#include <array>
#include <vector>

#include <gmpxx.h>
#include <json.hpp>

namespace arw {

constexpr int kMaxDim = 2;
using Point = std::array<double, kMaxDim>;

// rho(x) = exp(P(x)) with P a polynomial of total degree <= 2 and rational
// coefficients. An empty term list encodes rho == 1.
struct DensityTerm {
    mpq_class coef;
    std::array<int, kMaxDim> powers{0, 0};
};

struct DensitySpec {
    std::vector<DensityTerm> terms;

    static DensitySpec uniform() { return {}; }
    bool is_uniform() const;
    double log_rho(const Point& x) const;
    double rho(const Point& x) const;

    // Accepts "uniform", null, or {"terms": [{"coef": "1/2", "powers": [1,0]}, ...]}.
    // Coefficients may be JSON numbers or rational strings.
    static DensitySpec from_json(const nlohmann::json& j, int dimension);
    nlohmann::json to_json() const;
};

// Parses "p/q", "p" or a JSON number into an exact rational. Numbers are
// converted through their shortest decimal representation.
mpq_class parse_rational(const nlohmann::json& j);
std::string rational_string(const mpq_class& q);

}  // namespace arw
