#include "arw/jn.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <thread>

#include <mpfr.h>

#include "arw/error.hpp"
#include "arw/rng.hpp"

namespace arw {

// --- PiPoly -----------------------------------------------------------------

void PiPoly::set(int k, const mpq_class& q) {
    if (q == 0)
        c_.erase(k);
    else
        c_[k] = q;
}

PiPoly PiPoly::constant(const mpq_class& q) { return monomial(q, 0); }

PiPoly PiPoly::monomial(const mpq_class& q, int degree) {
    PiPoly p;
    p.set(degree, q);
    return p;
}

PiPoly& PiPoly::operator+=(const PiPoly& o) {
    for (const auto& [k, q] : o.c_) set(k, coeff(k) + q);
    return *this;
}

PiPoly PiPoly::operator+(const PiPoly& o) const {
    PiPoly r = *this;
    r += o;
    return r;
}

PiPoly PiPoly::operator*(const PiPoly& o) const {
    PiPoly r;
    for (const auto& [a, p] : c_)
        for (const auto& [b, q] : o.c_) r.set(a + b, r.coeff(a + b) + p * q);
    return r;
}

PiPoly PiPoly::operator*(const mpq_class& q) const {
    PiPoly r;
    for (const auto& [k, p] : c_) r.set(k, p * q);
    return r;
}

PiPoly PiPoly::operator/(const mpq_class& q) const {
    if (q == 0) throw Error("ConfigError", "division by zero");
    return *this * mpq_class(1 / q);
}

int PiPoly::degree() const { return c_.empty() ? -1 : c_.rbegin()->first; }

mpq_class PiPoly::coeff(int k) const {
    auto it = c_.find(k);
    return it == c_.end() ? mpq_class(0) : it->second;
}

double PiPoly::to_double() const {
    double s = 0;
    for (const auto& [k, q] : c_) s += q.get_d() * std::pow(M_PI, k);
    return s;
}

std::string PiPoly::to_string() const {
    if (c_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, q] : c_) {
        mpq_class a = abs(q);
        if (!first) os << (q < 0 ? " - " : " + ");
        else if (q < 0) os << "-";
        first = false;
        if (k == 0) {
            os << a.get_str();
        } else {
            if (a != 1) os << a.get_str() << "*";
            os << "pi";
            if (k > 1) os << "^" << k;
        }
    }
    return os.str();
}

// --- Interval evaluation ----------------------------------------------------

namespace {

struct Mp {
    mpfr_t v;
    explicit Mp(int prec) { mpfr_init2(v, prec); }
    ~Mp() { mpfr_clear(v); }
    Mp(const Mp&) = delete;
    Mp& operator=(const Mp&) = delete;
};

struct MpInterval {
    Mp lo, hi;
    explicit MpInterval(int prec) : lo(prec), hi(prec) {}
};

void set_q(MpInterval& x, const mpq_class& q) {
    mpfr_set_q(x.lo.v, q.get_mpq_t(), MPFR_RNDD);
    mpfr_set_q(x.hi.v, q.get_mpq_t(), MPFR_RNDU);
}

// x *= y for y with y.lo >= 0.
void mul_pos(MpInterval& x, const MpInterval& y, int prec) {
    Mp a(prec), b(prec);
    if (mpfr_sgn(x.lo.v) >= 0) {
        mpfr_mul(a.v, x.lo.v, y.lo.v, MPFR_RNDD);
        mpfr_mul(b.v, x.hi.v, y.hi.v, MPFR_RNDU);
    } else if (mpfr_sgn(x.hi.v) <= 0) {
        mpfr_mul(a.v, x.lo.v, y.hi.v, MPFR_RNDD);
        mpfr_mul(b.v, x.hi.v, y.lo.v, MPFR_RNDU);
    } else {
        mpfr_mul(a.v, x.lo.v, y.hi.v, MPFR_RNDD);
        mpfr_mul(b.v, x.hi.v, y.hi.v, MPFR_RNDU);
    }
    mpfr_set(x.lo.v, a.v, MPFR_RNDD);
    mpfr_set(x.hi.v, b.v, MPFR_RNDU);
}

void pi_interval(MpInterval& x) {
    mpfr_const_pi(x.lo.v, MPFR_RNDD);
    mpfr_const_pi(x.hi.v, MPFR_RNDU);
}

Enclosure to_enclosure(const MpInterval& x) {
    return {mpfr_get_d(x.lo.v, MPFR_RNDD), mpfr_get_d(x.hi.v, MPFR_RNDU)};
}

// q * s^n where s is a positive interval.
Enclosure enclose_power(const mpq_class& q, const MpInterval& s, int n, int prec) {
    MpInterval acc(prec);
    set_q(acc, q);
    for (int i = 0; i < n; ++i) mul_pos(acc, s, prec);
    return to_enclosure(acc);
}

mpz_class factorial(int n) {
    mpz_class r;
    mpz_fac_ui(r.get_mpz_t(), static_cast<unsigned long>(n));
    return r;
}

}  // namespace

Enclosure enclose(const PiPoly& p, int prec) {
    MpInterval pi(prec), sum(prec);
    pi_interval(pi);
    mpfr_set_zero(sum.lo.v, 1);
    mpfr_set_zero(sum.hi.v, 1);
    for (const auto& [k, q] : p.coefficients()) {
        MpInterval term(prec);
        set_q(term, q);
        for (int i = 0; i < k; ++i) mul_pos(term, pi, prec);
        mpfr_add(sum.lo.v, sum.lo.v, term.lo.v, MPFR_RNDD);
        mpfr_add(sum.hi.v, sum.hi.v, term.hi.v, MPFR_RNDU);
    }
    return to_enclosure(sum);
}

// --- Combinatorics ----------------------------------------------------------

mpz_class leaf_count(int n, int m, int N) {
    if (n < 0 || m < 0 || n + m < 1 || N < 0) throw Error("ConfigError", "leaf_count needs n+m >= 1, N >= 0");
    mpz_class r = 1;
    for (int i = 0; i < N; ++i) r *= n + m + i;
    return r;
}

mpz_class catalan_planar_trees(int N) {
    if (N < 0) throw Error("ConfigError", "N must be nonnegative");
    mpz_class r;
    mpz_bin_uiui(r.get_mpz_t(), 2 * static_cast<unsigned long>(N), static_cast<unsigned long>(N));
    return r / (N + 1);
}

PiPoly gamma_ratio(int n) {
    if (n < 1) throw Error("ConfigError", "gamma_ratio needs n >= 1");
    // g(1) = 2, g(2) = pi/2, g(n+2) = g(n) (n+1)/(n+2).
    PiPoly g = n % 2 == 1 ? PiPoly::constant(2) : PiPoly::monomial(mpq_class(1, 2), 1);
    for (int k = n % 2 == 1 ? 1 : 2; k + 2 <= n; k += 2) g = g * mpq_class(k + 1, k + 2);
    return g;
}

std::vector<PiPoly> jn_table(int N_max) {
    if (N_max < 0) throw Error("ConfigError", "N must be nonnegative");
    std::vector<PiPoly> J(N_max + 1);
    J[0] = PiPoly::constant(1);
    for (int N = 1; N <= N_max; ++N) {
        // a_n = J_{n-1} g(n) for n = 1..N; power series truncated at degree N.
        std::vector<PiPoly> a(N + 1);
        for (int n = 1; n <= N; ++n) a[n] = J[n - 1] * gamma_ratio(n);
        std::vector<PiPoly> power = a;  // a^1
        PiPoly total;
        mpz_class kfact = 1;
        for (int k = 1; k <= N; ++k) {
            kfact *= k;
            total += power[N] / mpq_class(kfact);
            if (k == N) break;
            std::vector<PiPoly> next(N + 1);
            for (int i = k + 1; i <= N; ++i)
                for (int s = 1; s <= i - k; ++s) {
                    if (power[i - s].degree() < 0) continue;
                    next[i] += power[i - s] * a[s];
                }
            power = std::move(next);
        }
        J[N] = total;
    }
    return J;
}

PiPoly jn(int N) { return jn_table(N).back(); }

PiPoly jn_by_tuples(int N, bool reverse_order) {
    if (N < 0) throw Error("ConfigError", "N must be nonnegative");
    if (N > 20) throw Error("ResourceGuard", "tuple enumeration limited to N <= 20");
    if (N == 0) return PiPoly::constant(1);
    std::vector<PiPoly> J(N);
    for (int n = 0; n < N; ++n) J[n] = n == 0 ? PiPoly::constant(1) : jn_by_tuples(n, reverse_order);
    PiPoly total;
    std::vector<int> parts;
    mpz_class kfact = 1;
    std::vector<mpz_class> fact(N + 1, 1);
    for (int k = 1; k <= N; ++k) fact[k] = fact[k - 1] * k;
    std::function<void(int)> rec = [&](int remaining) {
        if (remaining == 0) {
            PiPoly prod = PiPoly::constant(1);
            for (int p : parts) prod = prod * (J[p - 1] * gamma_ratio(p));
            total += prod / mpq_class(fact[parts.size()]);
            return;
        }
        for (int i = 1; i <= remaining; ++i) {
            const int p = reverse_order ? remaining + 1 - i : i;
            parts.push_back(p);
            rec(remaining - p);
            parts.pop_back();
        }
    };
    rec(N);
    return total;
}

std::vector<mpq_class> k_coefficients_recursive(int N_max) {
    std::vector<mpq_class> c(N_max + 1);
    c[0] = 1;
    for (int N = 1; N <= N_max; ++N) {
        std::vector<mpq_class> a(N + 1, 0);
        for (int n = 1; n <= N; ++n) a[n] = c[n - 1];
        std::vector<mpq_class> power = a;
        mpq_class total = 0;
        mpz_class kfact = 1;
        for (int k = 1; k <= N; ++k) {
            kfact *= k;
            total += power[N] / mpq_class(kfact);
            std::vector<mpq_class> next(N + 1, 0);
            for (int i = k + 1; i <= N; ++i)
                for (int s = 1; s <= i - k; ++s) next[i] += power[i - s] * a[s];
            power = std::move(next);
        }
        c[N] = total;
    }
    return c;
}

mpq_class k_coefficient_closed(int N) {
    if (N < 0) throw Error("ConfigError", "N must be nonnegative");
    mpz_class num;
    mpz_pow_ui(num.get_mpz_t(), mpz_class(N + 1).get_mpz_t(), static_cast<unsigned long>(N));
    mpq_class r(num, factorial(N + 1));
    r.canonicalize();
    return r;
}

nlohmann::json JnBoundRow::to_json() const {
    return {{"N", N},
            {"exact", exact},
            {"J", {J.lo, J.hi}},
            {"K", {K.lo, K.hi}},
            {"K_two", {K_two.lo, K_two.hi}},
            {"lower_certified", lower_certified},
            {"upper_status", upper_status},
            {"upper_two_certified", upper_two_certified}};
}

nlohmann::json JnBoundsReport::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    return {{"rows", rs}, {"first_upper_N", first_upper_N}, {"upper_from_first", upper_from_first}, {"lower_all", lower_all}};
}

JnBoundsReport jn_bounds_check(int N_max) {
    if (N_max < 1) throw Error("ConfigError", "N_max must be >= 1");
    const int prec = 128;
    const auto J = jn_table(N_max);
    MpInterval pi(prec), sqrt_pi(prec), two(prec);
    pi_interval(pi);
    mpfr_sqrt(sqrt_pi.lo.v, pi.lo.v, MPFR_RNDD);
    mpfr_sqrt(sqrt_pi.hi.v, pi.hi.v, MPFR_RNDU);
    set_q(two, 2);
    JnBoundsReport rep;
    rep.lower_all = true;
    for (int N = 1; N <= N_max; ++N) {
        JnBoundRow row;
        row.N = N;
        row.exact = J[N].to_string();
        row.J = enclose(J[N], prec);
        const mpq_class c = k_coefficient_closed(N);
        row.K = enclose_power(c, sqrt_pi, N, prec);
        row.K_two = enclose_power(c, two, N, prec);
        row.lower_certified = std::ldexp(1.0, N) <= row.J.lo;
        if (row.J.hi <= row.K.lo)
            row.upper_status = "holds";
        else if (row.J.lo > row.K.hi)
            row.upper_status = "fails";
        else
            row.upper_status = "undetermined";
        row.upper_two_certified = row.J.hi <= row.K_two.lo;
        rep.lower_all = rep.lower_all && row.lower_certified;
        if (rep.first_upper_N == 0 && row.upper_status == "holds") rep.first_upper_N = N;
        rep.rows.push_back(row);
    }
    if (rep.first_upper_N > 0) {
        rep.upper_from_first = true;
        for (const auto& r : rep.rows)
            if (r.N >= rep.first_upper_N && r.upper_status != "holds") rep.upper_from_first = false;
    }
    return rep;
}

// --- Monte Carlo ------------------------------------------------------------

McEstimate jn_montecarlo(int N, std::uint64_t samples, std::uint64_t seed, int threads) {
    if (N < 0 || N > 6) throw Error("ConfigError", "Monte Carlo supports 0 <= N <= 6");
    if (samples < 2) throw Error("ConfigError", "need at least two samples");
    double nfact = 1;
    for (int k = 2; k <= N; ++k) nfact *= k;
    constexpr int kBlocks = 64;
    std::vector<double> sum(kBlocks, 0.0), sum2(kBlocks, 0.0);
    auto run_block = [&](int b) {
        Rng rng(stream_key(seed, static_cast<std::uint64_t>(b)));
        const std::uint64_t begin = samples * b / kBlocks, end = samples * (b + 1) / kBlocks;
        std::vector<double> t(N + 2);
        for (std::uint64_t s = begin; s < end; ++s) {
            t[1] = 1.0;
            double w = nfact;
            for (int i = 2; i <= N + 1; ++i) {
                const int parent = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(i - 1)));
                const double tp = t[parent];
                // sqrt(tp - t_i) uniform on [sqrt(tp - t_{i-1}), sqrt(tp)].
                const double a = std::sqrt(std::max(0.0, tp - t[i - 1])), b2 = std::sqrt(tp);
                w *= 2 * (b2 - a);
                const double root = a + (b2 - a) * rng.uniform();
                t[i] = std::clamp(tp - root * root, 0.0, t[i - 1]);
            }
            sum[b] += w;
            sum2[b] += w * w;
        }
    };
    threads = std::max(1, threads);
    std::vector<std::thread> pool;
    for (int th = 0; th < threads; ++th)
        pool.emplace_back([&, th] {
            for (int b = th; b < kBlocks; b += threads) run_block(b);
        });
    for (auto& th : pool) th.join();
    double s = 0, s2 = 0;
    for (int b = 0; b < kBlocks; ++b) {
        s += sum[b];
        s2 += sum2[b];
    }
    const double n = static_cast<double>(samples);
    McEstimate e;
    e.samples = samples;
    e.estimate = s / n;
    e.stderr_ = std::sqrt(std::max(0.0, s2 / n - e.estimate * e.estimate) / (n - 1));
    return e;
}

}  // namespace arw
