#include "arw/density.hpp"

#include <cmath>
#include <sstream>

#include "arw/error.hpp"

namespace arw {

mpq_class parse_rational(const nlohmann::json& j) {
    if (j.is_number_integer()) return mpq_class(j.get<long>());
    if (j.is_number()) {
        // Shortest round-trip decimal, then exact decimal-to-rational.
        std::ostringstream os;
        os.precision(17);
        os << j.get<double>();
        std::string s = os.str();
        auto e = s.find_first_of("eE");
        long exp10 = 0;
        if (e != std::string::npos) {
            exp10 = std::stol(s.substr(e + 1));
            s = s.substr(0, e);
        }
        auto dot = s.find('.');
        if (dot != std::string::npos) {
            exp10 -= static_cast<long>(s.size() - dot - 1);
            s.erase(dot, 1);
        }
        mpq_class q(mpz_class(s, 10));
        mpz_class p10;
        mpz_ui_pow_ui(p10.get_mpz_t(), 10, static_cast<unsigned long>(std::labs(exp10)));
        if (exp10 >= 0) q *= p10; else q /= p10;
        q.canonicalize();
        return q;
    }
    if (j.is_string()) {
        mpq_class q;
        if (q.set_str(j.get<std::string>(), 10) != 0)
            throw Error("ConfigError", "not a rational: " + j.get<std::string>());
        q.canonicalize();
        return q;
    }
    throw Error("ConfigError", "expected a rational, got " + j.dump());
}

std::string rational_string(const mpq_class& q) { return q.get_str(); }

bool DensitySpec::is_uniform() const {
    for (const auto& t : terms)
        if (t.coef != 0 && (t.powers[0] != 0 || t.powers[1] != 0)) return false;
    return true;
}

double DensitySpec::log_rho(const Point& x) const {
    double p = 0.0;
    for (const auto& t : terms) {
        double v = t.coef.get_d();
        for (int a = 0; a < kMaxDim; ++a)
            for (int k = 0; k < t.powers[a]; ++k) v *= x[a];
        p += v;
    }
    return p;
}

double DensitySpec::rho(const Point& x) const { return std::exp(log_rho(x)); }

DensitySpec DensitySpec::from_json(const nlohmann::json& j, int dimension) {
    DensitySpec spec;
    if (j.is_null() || (j.is_string() && j.get<std::string>() == "uniform")) return spec;
    if (!j.is_object() || !j.contains("terms"))
        throw Error("ConfigError", "density must be \"uniform\" or {\"terms\": [...]}");
    for (const auto& t : j.at("terms")) {
        DensityTerm term;
        term.coef = parse_rational(t.at("coef"));
        const auto& pw = t.at("powers");
        if (static_cast<int>(pw.size()) < dimension || pw.size() > kMaxDim)
            throw Error("ConfigError", "density term powers must have one entry per dimension");
        int total = 0;
        for (std::size_t a = 0; a < pw.size(); ++a) {
            term.powers[a] = pw[a].get<int>();
            if (term.powers[a] < 0) throw Error("ConfigError", "negative power in density");
            if (static_cast<int>(a) >= dimension && term.powers[a] != 0)
                throw Error("ConfigError", "density uses a coordinate beyond the dimension");
            total += term.powers[a];
        }
        if (total > 2) throw Error("ConfigError", "density polynomial must have degree <= 2");
        spec.terms.push_back(term);
    }
    return spec;
}

nlohmann::json DensitySpec::to_json() const {
    if (terms.empty()) return "uniform";
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : terms)
        arr.push_back({{"coef", rational_string(t.coef)}, {"powers", {t.powers[0], t.powers[1]}}});
    return {{"terms", arr}};
}

}  // namespace arw
