#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "arw/error.hpp"
#include "arw/experiments.hpp"
#include "arw/pde.hpp"

using namespace arw;

namespace {

const double kPi = std::acos(-1.0);

std::string fixture(const std::string& name) { return std::string(ARW_FIXTURES) + "/" + name; }

PdeProblem interval_problem(double lambda, double T) {
    PdeProblem p;
    p.spec = read_domain_spec(fixture("two_intervals.json"));
    p.f = [](const Point& x) { return 1.0 + 0.5 * std::cos(kPi * x[0]); };
    p.g = [](const Point& x) { return 1.0 - 0.5 * std::cos(kPi * x[0]); };
    p.lambda = lambda;
    p.T = T;
    return p;
}

// Backward Euler for u_t = u_xx / 2 on [0, 1] with u_x(0) = kappa u(0) and
// u_x(1) = 0 (ghost nodes), tridiagonal solve each step.
std::vector<double> robin_fd(double kappa, double T, int n, int steps, const std::function<double(double)>& phi) {
    const double h = 1.0 / n, dt = T / steps, r = 0.5 * dt / (h * h);
    std::vector<double> u(n + 1);
    for (int i = 0; i <= n; ++i) u[i] = phi(i * h);
    std::vector<double> a(n + 1), b(n + 1), c(n + 1), d(n + 1);
    for (int s = 0; s < steps; ++s) {
        for (int i = 0; i <= n; ++i) {
            a[i] = -r;
            b[i] = 1 + 2 * r;
            c[i] = -r;
            d[i] = u[i];
        }
        // ghost u_{-1} = u_1 - 2 h kappa u_0, u_{n+1} = u_{n-1}
        b[0] += 2 * r * h * kappa;
        c[0] = -2 * r;
        a[n] = -2 * r;
        for (int i = 1; i <= n; ++i) {
            const double w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        u[n] = d[n] / b[n];
        for (int i = n - 1; i >= 0; --i) u[i] = (d[i] - c[i] * u[i + 1]) / b[i];
    }
    return u;
}

}  // namespace

TEST_CASE("no coupling: the solution is the free Neumann evolution") {
    const PdeProblem p = interval_problem(0.0, 0.5);
    PicardConfig cfg;
    cfg.time_steps = 32;
    const PicardSolution sol = solve_coupled_picard(p, cfg);
    const std::vector<Point> xp{{0.1, 0}, {0.5, 0}, {0.95, 0}}, xm{{-0.9, 0}, {-0.4, 0}, {-0.05, 0}};
    for (int k : {0, 8, 32}) {
        const double t = sol.times[k], decay = 0.5 * std::exp(-kPi * kPi * t / 2);
        const Eigen::VectorXd up = sol.evaluate(Side::plus, k, xp), um = sol.evaluate(Side::minus, k, xm);
        for (int i = 0; i < 3; ++i) {
            CHECK(up(i) == doctest::Approx(1 + decay * std::cos(kPi * xp[i][0])).epsilon(1e-10));
            CHECK(um(i) == doctest::Approx(1 - decay * std::cos(kPi * xm[i][0])).epsilon(1e-10));
        }
    }
}

TEST_CASE("no coupling in two dimensions") {
    PdeProblem p;
    p.spec = read_domain_spec(fixture("two_squares.json"));
    p.f = [](const Point& x) { return 2.0 + std::cos(kPi * x[0]) * std::cos(2 * kPi * x[1]); };
    p.g = [](const Point&) { return 1.0; };
    p.lambda = 0.0;
    p.T = 0.1;
    PicardConfig cfg;
    cfg.time_steps = 8;
    cfg.cells_per_unit = 8;
    const PicardSolution sol = solve_coupled_picard(p, cfg);
    const Point x{0.3, 0.6};
    const double expect = 2.0 + std::exp(-5 * kPi * kPi * 0.1 / 2) * std::cos(kPi * 0.3) * std::cos(2 * kPi * 0.6);
    CHECK(sol.evaluate(Side::plus, 8, {x})(0) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(sol.evaluate(Side::minus, 8, {Point{-0.5, 0.5}})(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mirror-symmetric data gives mirror-symmetric solutions") {
    PdeProblem p = interval_problem(2.0, 0.5);
    p.f = [](const Point& x) { return 1.0 + x[0] * x[0]; };
    p.g = [](const Point& x) { return 1.0 + x[0] * x[0]; };
    PicardConfig cfg;
    cfg.time_steps = 32;
    const PicardSolution sol = solve_coupled_picard(p, cfg);
    for (int k : {4, 16, 32}) {
        const Eigen::VectorXd up = sol.evaluate(Side::plus, k, {Point{0.2, 0}, Point{0.7, 0}});
        const Eigen::VectorXd um = sol.evaluate(Side::minus, k, {Point{-0.2, 0}, Point{-0.7, 0}});
        CHECK(up(0) == doctest::Approx(um(0)).epsilon(1e-10));
        CHECK(up(1) == doctest::Approx(um(1)).epsilon(1e-10));
        const MassBalance mb = mass_balance(sol, k);
        CHECK(mb.left_plus == doctest::Approx(mb.left_minus).epsilon(1e-10));
    }
}

TEST_CASE("mass balance and flux functional") {
    const PdeProblem p = interval_problem(1.0, 1.0);
    PicardConfig cfg;
    cfg.time_steps = 64;
    const PicardSolution sol = solve_coupled_picard(p, cfg);
    for (int k : {0, 16, 64}) {
        const MassBalance mb = mass_balance(sol, k);
        CHECK(mb.max_error() <= 1e-8);
        CHECK(mb.right <= 0.0);
    }
    CHECK(mass_balance(sol, 64).right < mass_balance(sol, 16).right);
    CHECK(flux_functional(sol, 10, [](const Point&) { return 0.0; }) == 0.0);
    // d = 1: a single interface cell of weight 1
    CHECK(flux_functional(sol, 10, [](const Point&) { return 1.0; }) ==
          doctest::Approx(0.5 * sol.interface_product(10, 0)));
    // coupling only removes mass: u+ below the free evolution
    const double free_val = 1 + 0.5 * std::exp(-kPi * kPi / 2) * std::cos(kPi * 0.25);
    CHECK(sol.evaluate(Side::plus, 64, {Point{0.25, 0}})(0) < free_val);
    CHECK(sol.evaluate(Side::plus, 64, {Point{0.25, 0}})(0) > 0.0);
}

TEST_CASE("Robin problem: g = 0 is free evolution, constant g matches finite differences") {
    AxisBox box;
    box.d = 1;
    box.lo = {0.0, 0.0};
    box.hi = {1.0, 0.0};
    const std::vector<BoundaryFace> faces{{0, 0.0, 0.0, 0.0}};
    auto phi = [](const Point& x) { return 1.0 + 0.5 * std::cos(kPi * x[0]); };
    const RobinSolution free = solve_robin(box, faces, phi, [](double, const Point&) { return 0.0; }, 0.25, 32);
    const double decay = 0.5 * std::exp(-kPi * kPi * 0.25 / 2);
    CHECK(free.evaluate(32, {Point{0.3, 0}})(0) == doctest::Approx(1 + decay * std::cos(kPi * 0.3)).epsilon(1e-10));

    const double kappa = 2.0;
    const RobinSolution sol = solve_robin(box, faces, phi, [&](double, const Point&) { return kappa; }, 0.25, 128);
    const auto ref = robin_fd(kappa, 0.25, 400, 20000, [](double x) { return 1.0 + 0.5 * std::cos(kPi * x); });
    for (int i : {0, 40, 200, 400}) {
        const double x = i / 400.0;
        CHECK(std::abs(sol.evaluate(128, {Point{x, 0}})(0) - ref[i]) <= 2e-3);
    }
    // larger absorption, smaller solution
    const RobinSolution strong = solve_robin(box, faces, phi, [](double, const Point&) { return 5.0; }, 0.25, 128);
    for (double x : {0.0, 0.3, 1.0}) CHECK(strong.evaluate(128, {Point{x, 0}})(0) < sol.evaluate(128, {Point{x, 0}})(0));
    try {
        solve_robin(box, faces, phi, [](double, const Point&) { return -1.0; }, 0.25, 8);
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == "ConfigError");
    }
}

TEST_CASE("fixed point agrees with the finite-difference solver") {
    const PdeProblem p = interval_problem(1.0, 1.0);
    PicardConfig pc;
    pc.time_steps = 64;
    const PicardSolution sol = solve_coupled_picard(p, pc);
    FdConfig fc;
    fc.cells_per_unit = 64;
    fc.time_steps = 256;
    const FdSolution fd = solve_coupled_fd(p, {0.25, 0.5, 1.0}, fc);
    for (double e : compare_picard_fd(sol, fd)) CHECK(e <= 1e-3);
    // FD mass identity
    for (std::size_t i = 0; i < fd.output_times.size(); ++i) {
        double mp = 0, m0 = 0;
        for (std::size_t n = 0; n < fd.nodes[0].size(); ++n) {
            mp += fd.values[0][i](n) * fd.volume[0][n];
            m0 += p.f(fd.nodes[0][n]) * fd.volume[0][n];
        }
        CHECK(m0 - mp == doctest::Approx(fd.mass_loss[i]).epsilon(1e-8));
    }
}

TEST_CASE("grid-time lookup") {
    const PicardSolution sol = solve_coupled_picard(interval_problem(1.0, 1.0), PicardConfig{8, 64, 64, 200, 1e-12, 0});
    CHECK(sol.time_index(0.5) == 4);
    try {
        sol.time_index(0.3);
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == "ConfigError");
    }
}
