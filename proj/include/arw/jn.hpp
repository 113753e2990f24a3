#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <gmpxx.h>
#include <json.hpp>

namespace arw {

// Exact polynomial sum_k c_k pi^k with rational coefficients; zero
// coefficients are never stored.
class PiPoly {
public:
    PiPoly() = default;
    static PiPoly constant(const mpq_class& q);
    static PiPoly monomial(const mpq_class& q, int degree);

    PiPoly& operator+=(const PiPoly& o);
    PiPoly operator+(const PiPoly& o) const;
    PiPoly operator*(const PiPoly& o) const;
    PiPoly operator*(const mpq_class& q) const;
    PiPoly operator/(const mpq_class& q) const;
    bool operator==(const PiPoly& o) const { return c_ == o.c_; }
    bool operator!=(const PiPoly& o) const { return !(*this == o); }

    int degree() const;   // -1 for the zero polynomial
    mpq_class coeff(int k) const;
    const std::map<int, mpq_class>& coefficients() const { return c_; }
    double to_double() const;
    // "4 + 10/3*pi"; "0" for zero.
    std::string to_string() const;

private:
    void set(int k, const mpq_class& q);
    std::map<int, mpq_class> c_;
};

// Certified enclosure [lo, hi] of a real, rounded outward to doubles.
struct Enclosure {
    double lo = 0.0, hi = 0.0;
};
// Evaluates p at a 128-bit outward-rounded enclosure of pi.
Enclosure enclose(const PiPoly& p, int precision_bits = 128);

// (n+m+N-1)! / (n+m-1)!
mpz_class leaf_count(int n, int m, int N);
// (2N)! / (N! (N+1)!)
mpz_class catalan_planar_trees(int N);
// sqrt(pi) Gamma((n+1)/2) / Gamma((n+2)/2) = int_0^1 t^{(n-1)/2} (1-t)^{-1/2} dt.
PiPoly gamma_ratio(int n);

// J_0..J_N by the composition recursion, evaluated through power series
// (sum_k (1/k!) [x^N] a(x)^k with a(x) = sum_n J_{n-1} g(n) x^n).
std::vector<PiPoly> jn_table(int N_max);
PiPoly jn(int N);
// Same recursion by explicit enumeration of ordered tuples (n_2..n_{k+1}),
// in lexicographic or reverse-lexicographic order. Used as an audit.
PiPoly jn_by_tuples(int N, bool reverse_order);

// Rational c_N with K_N = c_N pi^{N/2}, from the K recursion (sqrt(pi) in
// place of the gamma ratio) and from the closed form (N+1)^{N-1}/N!.
std::vector<mpq_class> k_coefficients_recursive(int N_max);
mpq_class k_coefficient_closed(int N);

struct JnBoundRow {
    int N = 0;
    std::string exact;
    Enclosure J, K, K_two;     // K_two: same closed form with 2 in place of sqrt(pi)
    bool lower_certified = false;       // 2^N <= J_N
    std::string upper_status;           // "holds", "fails", "undetermined"
    bool upper_two_certified = false;   // J_N <= K_two
    nlohmann::json to_json() const;
};

struct JnBoundsReport {
    std::vector<JnBoundRow> rows;
    int first_upper_N = 0;          // smallest N with certified J_N <= K_N (0 if none)
    bool upper_from_first = false;  // certified for every N in [first_upper_N, N_max]
    bool lower_all = false;
    nlohmann::json to_json() const;
};
JnBoundsReport jn_bounds_check(int N_max);

// Importance-sampled estimate of J_N(1): a parent map f (f(i) < i) is drawn
// uniformly, then t_2 > t_3 > ... sequentially with density proportional to
// (t_{f(i)} - t_i)^{-1/2} on [0, t_{i-1}]. The weight N! prod Z_i is bounded.
struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::uint64_t samples = 0;
};
McEstimate jn_montecarlo(int N, std::uint64_t samples, std::uint64_t seed, int threads = 1);

}  // namespace arw
