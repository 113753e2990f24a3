#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include <mpfr.h>

#include "arw/jn.hpp"

using namespace arw;

namespace {

const double kPi = std::acos(-1.0);

// sqrt(pi) Gamma((n+1)/2) / Gamma((n+2)/2) in double precision.
double ratio_double(int n) { return std::sqrt(kPi) * std::tgamma((n + 1) / 2.0) / std::tgamma((n + 2) / 2.0); }

// J_N by direct enumeration of ordered compositions in floating point,
// independent of the exact power-series implementation.
std::vector<double> jn_double(int N_max) {
    std::vector<double> J(N_max + 1, 0.0);
    J[0] = 1.0;
    for (int N = 1; N <= N_max; ++N) {
        double total = 0, fact = 1;
        for (int k = 1; k <= N; ++k) {
            fact *= k;
            // sum over (n_1..n_k), n_i >= 1, sum = N
            std::function<double(int, int)> rec = [&](int parts, int remaining) -> double {
                if (parts == 0) return remaining == 0 ? 1.0 : 0.0;
                double s = 0;
                for (int n = 1; n <= remaining - (parts - 1); ++n)
                    s += J[n - 1] * ratio_double(n) * rec(parts - 1, remaining - n);
                return s;
            };
            total += rec(k, N) / fact;
        }
        J[N] = total;
    }
    return J;
}

mpz_class catalan_by_recurrence(int N) {
    std::vector<mpz_class> c(N + 1);
    c[0] = 1;
    for (int k = 0; k < N; ++k) {
        c[k + 1] = 0;
        for (int i = 0; i <= k; ++i) c[k + 1] += c[i] * c[k - i];
    }
    return c[N];
}

}  // namespace

TEST_CASE("PiPoly arithmetic is exact and canonical") {
    const PiPoly one = PiPoly::constant(1), pi = PiPoly::monomial(1, 1);
    const PiPoly a = one + pi, b = one + pi * mpq_class(-1);
    const PiPoly prod = a * b;
    CHECK(prod.degree() == 2);
    CHECK(prod.coeff(0) == 1);
    CHECK(prod.coeff(1) == 0);
    CHECK(prod.coeff(2) == -1);
    CHECK(prod.coefficients().count(1) == 0);
    CHECK((a + b) == PiPoly::constant(2));
    CHECK((pi * mpq_class(0)).degree() == -1);
    CHECK(PiPoly().to_string() == "0");
    CHECK((PiPoly::constant(4) + pi * mpq_class(10, 3)).to_string() == "4 + 10/3*pi");
    CHECK((a / mpq_class(2)).coeff(1) == mpq_class(1, 2));
}

TEST_CASE("J_1..J_3 exact values") {
    const PiPoly pi = PiPoly::monomial(1, 1);
    CHECK(jn(0) == PiPoly::constant(1));
    CHECK(jn(1) == PiPoly::constant(2));
    CHECK(jn(2) == PiPoly::constant(2) + pi);
    CHECK(jn(3) == PiPoly::constant(4) + pi * mpq_class(10, 3));
}

TEST_CASE("J_N agrees with an independent floating-point recursion") {
    const auto ref = jn_double(10);
    const auto table = jn_table(10);
    for (int N = 0; N <= 10; ++N) CHECK(table[N].to_double() == doctest::Approx(ref[N]).epsilon(1e-12));
}

TEST_CASE("tuple enumeration order does not change J_N") {
    for (int N = 1; N <= 12; ++N) {
        const PiPoly j = jn(N);
        CHECK(jn_by_tuples(N, false) == j);
        CHECK(jn_by_tuples(N, true) == j);
    }
}

TEST_CASE("degree of J_N is floor(N/2)") {
    const auto table = jn_table(12);
    for (int N = 0; N <= 12; ++N) CHECK(table[N].degree() == N / 2);
}

TEST_CASE("gamma ratio against 128-bit MPFR Gamma") {
    mpfr_t a, b, s, r;
    mpfr_inits2(128, a, b, s, r, (mpfr_ptr)0);
    for (int n = 1; n <= 12; ++n) {
        mpfr_set_d(a, (n + 1) / 2.0, MPFR_RNDN);
        mpfr_gamma(a, a, MPFR_RNDN);
        mpfr_set_d(b, (n + 2) / 2.0, MPFR_RNDN);
        mpfr_gamma(b, b, MPFR_RNDN);
        mpfr_const_pi(s, MPFR_RNDN);
        mpfr_sqrt(s, s, MPFR_RNDN);
        mpfr_mul(r, s, a, MPFR_RNDN);
        mpfr_div(r, r, b, MPFR_RNDN);
        const PiPoly g = gamma_ratio(n);
        CHECK(g.to_double() == doctest::Approx(mpfr_get_d(r, MPFR_RNDN)).epsilon(1e-15));
        // rational for odd n, rational multiple of pi for even n
        CHECK(g.degree() == (n % 2 == 0 ? 1 : 0));
        CHECK(g.coefficients().size() == 1);
    }
    mpfr_clears(a, b, s, r, (mpfr_ptr)0);
    CHECK(gamma_ratio(1) == PiPoly::constant(2));
    CHECK(gamma_ratio(2) == PiPoly::monomial(mpq_class(1, 2), 1));
}

TEST_CASE("leaf counts and Catalan numbers") {
    CHECK(leaf_count(1, 2, 2) == 12);
    CHECK(leaf_count(1, 2, 1) == 3);
    CHECK(leaf_count(2, 1, 0) == 1);
    for (int n = 1; n <= 3; ++n)
        for (int m = 0; m <= 3; ++m)
            for (int N = 1; N <= 8; ++N) CHECK(leaf_count(n, m, N) == (n + m + N - 1) * leaf_count(n, m, N - 1));
    CHECK(catalan_planar_trees(0) == 1);
    CHECK(catalan_planar_trees(3) == 5);
    CHECK(catalan_planar_trees(6) == 132);
    for (int N = 0; N <= 20; ++N) CHECK(catalan_planar_trees(N) == catalan_by_recurrence(N));
}

TEST_CASE("K recursion matches the closed form") {
    const auto rec = k_coefficients_recursive(20);
    for (int N = 0; N <= 20; ++N) CHECK(rec[N] == k_coefficient_closed(N));
    CHECK(k_coefficient_closed(1) == 1);            // K_1 = sqrt(pi)
    CHECK(k_coefficient_closed(2) == mpq_class(3, 2));
}

TEST_CASE("enclosures contain the value and are tight") {
    for (int N = 1; N <= 12; ++N) {
        const PiPoly j = jn(N);
        const Enclosure e = enclose(j);
        // to_double is not correctly rounded, so allow a few ulps
        const double v = j.to_double(), slack = 1e-14 * v;
        CHECK(e.lo <= v + slack);
        CHECK(v - slack <= e.hi);
        CHECK(e.lo <= e.hi);
        CHECK(e.hi - e.lo <= 1e-12 * e.hi);
    }
}

TEST_CASE("bounds: lower holds everywhere, closed-form upper holds from N = 3") {
    const JnBoundsReport r = jn_bounds_check(30);
    CHECK(r.lower_all);
    CHECK(r.rows[0].upper_status == "fails");   // J_1 = 2 > sqrt(pi)
    CHECK(r.rows[1].upper_status == "fails");   // J_2 = 2 + pi > 3 pi / 2
    CHECK(r.first_upper_N == 3);
    CHECK(r.upper_from_first);
    for (const auto& row : r.rows) CHECK(row.upper_two_certified);
    // independent check of the two failures in double precision
    CHECK(2.0 > std::sqrt(kPi));
    CHECK(2.0 + kPi > 1.5 * kPi);
    CHECK(jn(4).to_double() >= 16.0);
}

TEST_CASE("Monte Carlo estimates agree with the exact values") {
    const auto table = jn_table(4);
    const McEstimate e1 = jn_montecarlo(1, 1000, 7);
    CHECK(e1.estimate == doctest::Approx(2.0).epsilon(1e-12));
    for (int N = 2; N <= 4; ++N) {
        const McEstimate e = jn_montecarlo(N, 200000, 11);
        CHECK(e.stderr_ > 0);
        CHECK(std::abs(e.estimate - table[N].to_double()) <= 3 * e.stderr_);
    }
    const McEstimate a = jn_montecarlo(3, 50000, 5, 1), b = jn_montecarlo(3, 50000, 5, 3);
    CHECK(a.estimate == b.estimate);
    CHECK(a.stderr_ == b.stderr_);
}
