#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "arw/ctrw.hpp"
#include "arw/error.hpp"

using namespace arw;
using nlohmann::json;

namespace {

const double kPi = std::acos(-1.0);

std::string fixture(const std::string& name) { return std::string(ARW_FIXTURES) + "/" + name; }

// Reflected Brownian motion on [0, L] with generator Delta/2 by its cosine series.
double neumann_series(double L, double t, double x, double y, int terms = 200) {
    double s = 1.0 / L;
    for (int k = 1; k <= terms; ++k) {
        const double w = k * kPi / L;
        s += 2.0 / L * std::exp(-w * w * t / 2) * std::cos(w * x) * std::cos(w * y);
    }
    return s;
}

double neumann_cell_series(double L, double t, double x, double y0, double y1, int terms = 200) {
    double s = (y1 - y0) / L;
    for (int k = 1; k <= terms; ++k) {
        const double w = k * kPi / L;
        s += 2.0 / L * std::exp(-w * w * t / 2) * std::cos(w * x) * (std::sin(w * y1) - std::sin(w * y0)) / w;
    }
    return s;
}

DomainSpec path4() {
    // four vertices 1/8, 3/8, 5/8, 7/8 at j = 2
    return DomainSpec::from_json(json::parse(R"({
        "dimension": 1, "boxes_plus": [[[0], [1]]], "boxes_minus": [[[-1], [0]]],
        "anchor_plus": ["1/8"], "anchor_minus": ["-1/2"]})"));
}

}  // namespace

TEST_CASE("uniform density gives mu = eps^(d-2)/2 and m = eps^d inside") {
    for (const char* f : {"two_intervals.json", "two_squares.json"}) {
        const DomainSpec spec = read_domain_spec(fixture(f));
        for (int j = 2; j <= 4; ++j) {
            const LatticeGraph g = build_lattice(spec, Side::plus, j);
            const Conductances c = build_conductances(g, spec.rho_plus);
            const double eps = g.eps, d = g.d;
            CHECK(c.holding_rate == doctest::Approx(d / (eps * eps)));
            for (double mu : c.mu) CHECK(mu == doctest::Approx(std::pow(eps, d - 2) / 2));
            for (std::size_t x = 0; x < c.size(); ++x) {
                CHECK(c.m[x] == doctest::Approx(eps * eps / d * g.degree[x] * std::pow(eps, d - 2) / 2));
                if (!g.is_boundary[x]) CHECK(c.m[x] == doctest::Approx(std::pow(eps, d)));
                double hs = 0;
                for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s) hs += c.hop[s];
                CHECK(hs == doctest::Approx(1.0));
            }
        }
    }
}

TEST_CASE("exponential density: conductances against a direct formula, mass against rho") {
    const DomainSpec spec = read_domain_spec(fixture("tiny/weighted_intervals.json"));   // rho+ = e^x
    double prev_err = 1e300;
    for (int j = 3; j <= 8; ++j) {
        const LatticeGraph g = build_lattice(spec, Side::plus, j);
        const Conductances c = build_conductances(g, spec.rho_plus);
        const long double eps = g.eps;
        for (std::size_t x = 0; x < g.size(); ++x)
            for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s) {
                const int y = c.nbr[s];
                long double expect;
                if (g.is_boundary[x] && g.is_boundary[y]) {
                    expect = 1 / (2 * eps);
                } else {
                    const long double lo = std::min(g.coords[x][0], g.coords[y][0]);
                    // log-ratio along the positive direction is eps
                    expect = (1 + eps / 2) * (std::exp(lo) + std::exp(lo + eps)) / 2 / (2 * eps);
                }
                CHECK(c.mu[s] == doctest::Approx(static_cast<double>(expect)).epsilon(1e-13));
                // symmetry of mu
                for (int r = c.nbr_begin[y]; r < c.nbr_begin[y + 1]; ++r)
                    if (c.nbr[r] == static_cast<int>(x)) CHECK(c.mu[r] == c.mu[s]);
            }
        // m(x) / (eps rho(x)) -> 1 at interior vertices, and m(D) -> int rho = e - 1
        double worst = 0;
        for (std::size_t x = 0; x < g.size(); ++x)
            if (!g.is_boundary[x]) worst = std::max(worst, std::abs(c.m[x] / (g.eps * std::exp(g.coords[x][0])) - 1));
        CHECK(worst <= 2 * g.eps);
        CHECK(worst < prev_err);
        prev_err = worst;
        CHECK(std::abs(c.total_mass() - (std::exp(1.0) - 1)) <= 4 * g.eps);
    }
}

TEST_CASE("two-vertex chain: closed-form kernel") {
    const DomainSpec spec = read_domain_spec(fixture("tiny/two_strips.json"));
    const LatticeGraph g = build_lattice(spec, Side::plus, 1);
    REQUIRE(g.size() == 2);
    const Conductances c = build_conductances(g, spec.rho_plus);
    CHECK(c.m[0] == 1.0 / 16);
    CHECK(c.m[1] == 1.0 / 16);
    for (double t : {0.0, 0.01, 0.1, 0.5}) {
        const KernelMatrix K = heat_kernel(c, t);
        const double same = 8 * (1 + std::exp(-16 * t)), other = 8 * (1 - std::exp(-16 * t));
        CHECK(K.values(0, 0) == doctest::Approx(same).epsilon(1e-11));
        CHECK(K.values(1, 1) == doctest::Approx(same).epsilon(1e-11));
        CHECK(K.values(0, 1) == doctest::Approx(other).epsilon(1e-11));
        CHECK(K.values(1, 0) == doctest::Approx(other).epsilon(1e-11));
    }
    const SpectralReport r = spectral_checks(c);
    CHECK(r.generator_gap == doctest::Approx(16.0));
    CHECK(r.poincare_gap == doctest::Approx(2.0));
    CHECK(r.cheeger_I == doctest::Approx(1.0));
    CHECK(r.cheeger_ok);
    CHECK(r.mixing_ok);
}

TEST_CASE("four-vertex path: spectral gap of the simple walk") {
    const DomainSpec spec = path4();
    const LatticeGraph g = build_lattice(spec, Side::plus, 2);
    REQUIRE(g.size() == 4);
    const Conductances c = build_conductances(g, spec.rho_plus);
    // -A = 16 (I - P) with P the reflecting simple walk on a path of 4 (eigenvalues cos(k pi / 3))
    const SpectralReport r = spectral_checks(c);
    CHECK(r.generator_gap == doctest::Approx(16 * (1 - std::cos(kPi / 3))));
    CHECK(c.total_mass() == doctest::Approx(0.75));
    CHECK(r.cheeger_ok);
    CHECK(r.mixing_ok);
    CHECK(r.mixing_max_ratio <= 1.0 + 1e-8);
}

TEST_CASE("kernel: conservation, symmetry, identity at t = 0, semigroup") {
    const DomainSpec spec = read_domain_spec(fixture("tiny/weighted_squares.json"));
    for (Side side : {Side::plus, Side::minus}) {
        const LatticeGraph g = build_lattice(spec, side, 3);
        const Conductances c = build_conductances(g, spec.rho(side));
        const std::size_t n = c.size();
        const KernelMatrix K0 = heat_kernel(c, 0.0);
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t y = 0; y < n; ++y)
                CHECK(K0.values(x, y) * c.m[y] == doctest::Approx(x == y ? 1.0 : 0.0));
        const double s = 0.03, t = 0.05;
        const KernelMatrix Ks = heat_kernel(c, s), Kt = heat_kernel(c, t), Kst = heat_kernel(c, s + t);
        Eigen::VectorXd m(n);
        for (std::size_t i = 0; i < n; ++i) m(i) = c.m[i];
        const Eigen::MatrixXd ck = Ks.values * m.asDiagonal() * Kt.values;
        CHECK((ck - Kst.values).cwiseAbs().maxCoeff() <= 1e-10 * Kst.values.cwiseAbs().maxCoeff());
        CHECK((Kt.values - Kt.values.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * Kt.values.maxCoeff());
        CHECK(Kt.values.minCoeff() >= 0.0);
        CHECK(((Kt.values * m).array() - 1.0).abs().maxCoeff() <= 1e-11);

        // subset invariants agree with the dense kernel
        const std::vector<int> src{0, static_cast<int>(n / 2), static_cast<int>(n - 1)};
        const KernelInvariants inv = kernel_invariants(c, src, s, t);
        CHECK(inv.symmetry <= 1e-10);
        CHECK(inv.conservation <= 1e-10);
        CHECK(inv.chapman_kolmogorov <= 1e-10);
        CHECK(inv.positivity == 0.0);
        const double sup_ref = std::max({Ks.values(src, Eigen::all).maxCoeff(), Kt.values(src, Eigen::all).maxCoeff(),
                                         Kst.values(src, Eigen::all).maxCoeff()});
        CHECK(inv.sup_p == doctest::Approx(sup_ref).epsilon(1e-9));

        // rows and semigroup against the dense matrix
        const auto rows = heat_kernel_rows(c, src, {s, t});
        CHECK((rows[1] - Kt.values(src, Eigen::all)).cwiseAbs().maxCoeff() <= 1e-10 * Kt.values.maxCoeff());
        Eigen::VectorXd f(n);
        for (std::size_t i = 0; i < n; ++i) f(i) = std::sin(3.0 * i);
        const auto pf = semigroup_apply(c, f, {t});
        const Eigen::VectorXd ref = Kt.values * (f.array() * m.array()).matrix();
        CHECK((pf[0] - ref).cwiseAbs().maxCoeff() <= 1e-10);
        // Propagator: one step of length t equals two steps of t/2
        Propagator P(c);
        Eigen::MatrixXd X = f, Y = f;
        P.advance(X, t);
        P.advance(Y, t / 2);
        P.advance(Y, t / 2);
        CHECK((X.col(0) - ref).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((X - Y).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("generator annihilates constants and is symmetric in l2(m)") {
    const DomainSpec spec = read_domain_spec(fixture("tiny/weighted_squares.json"));
    const LatticeGraph g = build_lattice(spec, Side::plus, 3);
    const Conductances c = build_conductances(g, spec.rho_plus);
    const std::size_t n = c.size();
    for (double v : c.generator_apply(std::vector<double>(n, 2.5))) CHECK(std::abs(v) <= 1e-10);
    std::vector<double> f(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
        f[i] = std::cos(0.7 * i);
        h[i] = std::sin(1.3 * i) + 0.1 * i;
    }
    const auto Af = c.generator_apply(f), Ah = c.generator_apply(h);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        lhs += Af[i] * h[i] * c.m[i];
        rhs += f[i] * Ah[i] * c.m[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("Poisson weights") {
    for (double lam : {0.0, 0.5, 7.0, 300.0}) {
        const PoissonWeights w = poisson_weights(lam, 1e-13);
        double s = 0, mean = 0;
        for (std::size_t k = 0; k < w.w.size(); ++k) {
            s += w.w[k];
            mean += (w.first + k) * w.w[k];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(mean == doctest::Approx(lam).epsilon(1e-10));
    }
}

TEST_CASE("Neumann kernel of the interval") {
    for (double L : {1.0, 2.0})
        for (double t : {0.01, 0.1, 0.4, 0.6, 2.0})
            for (double x : {0.0, 0.3 * L, 0.9 * L})
                for (double y : {0.1 * L, 0.5 * L, L}) {
                    const double ref = neumann_series(L, t, x, y);
                    CHECK(neumann_1d(L, t, x, y) == doctest::Approx(ref).epsilon(1e-12));
                    CHECK(neumann_1d(L, t, y, x) == doctest::Approx(neumann_1d(L, t, x, y)).epsilon(1e-13));
                    CHECK(neumann_1d_cell(L, t, x, 0.2 * L, 0.45 * L) ==
                          doctest::Approx(neumann_cell_series(L, t, x, 0.2 * L, 0.45 * L)).epsilon(1e-11));
                }
    // golden value and the uniform limit
    CHECK(neumann_1d(1.0, 0.1, 0.3, 0.5) == doctest::Approx(neumann_series(1.0, 0.1, 0.3, 0.5, 60)).epsilon(1e-14));
    CHECK(neumann_1d(1.0, 20.0, 0.1, 0.8) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(neumann_1d_cell(1.0, 0.3, 0.2, 0.0, 1.0) == doctest::Approx(1.0).epsilon(1e-13));
    AxisBox box;
    box.d = 2;
    box.lo = {-1.0, 0.0};
    box.hi = {0.0, 1.0};
    CHECK(analytic_neumann_kernel(box, 0.2, Point{-0.3, 0.4}, Point{-0.6, 0.9}) ==
          doctest::Approx(neumann_series(1, 0.2, 0.7, 0.4) * neumann_series(1, 0.2, 0.4, 0.9)).epsilon(1e-12));
}

TEST_CASE("local CLT gap decreases with the level") {
    const DomainSpec spec = read_domain_spec(fixture("two_intervals.json"));
    double prev = 1e300;
    for (int j = 3; j <= 6; ++j) {
        const LcltResult r = lclt_gap(spec, j, 0.25, 1.0, 5, 9);
        CHECK(r.gap < prev);
        CHECK(r.sup_p > 0.9);
        prev = r.gap;
    }
    const DomainSpec weighted = read_domain_spec(fixture("tiny/weighted_intervals.json"));
    try {
        lclt_gap(weighted, 3, 0.25, 1.0);
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == "ConfigError");
    }
}

TEST_CASE("resource guard and brute-force limits") {
    const DomainSpec spec = read_domain_spec(fixture("two_squares.json"));
    const LatticeGraph g = build_lattice(spec, Side::plus, 3);
    const Conductances c = build_conductances(g, spec.rho_plus);
    try {
        spectral_checks(c);
        FAIL("expected TooLargeForBruteForce");
    } catch (const Error& e) {
        CHECK(e.kind() == "TooLargeForBruteForce");
    }
}
