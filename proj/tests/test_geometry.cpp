#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "arw/error.hpp"
#include "arw/geometry.hpp"

using namespace arw;
using nlohmann::json;

namespace {

std::string fixture(const std::string& name) { return std::string(ARW_FIXTURES) + "/" + name; }

DomainSpec l_shape() {
    return DomainSpec::from_json(json::parse(R"({
        "dimension": 2,
        "boxes_plus": [[[0, 0], [1, "1/2"]], [[0, "1/2"], ["1/2", 1]]],
        "boxes_minus": [[[-1, 0], [0, 1]]],
        "anchor_plus": ["1/4", "1/4"], "anchor_minus": ["-1/2", "1/2"]})"));
}

std::string error_kind(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return "";
}

std::size_t count_lines(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("unit interval at j = 2") {
    const DomainSpec spec = read_domain_spec(fixture("two_intervals.json"));
    const LatticeGraph g = build_lattice(spec, Side::plus, 2);
    REQUIRE(g.size() == 3);
    CHECK(g.edges.size() == 2);
    std::set<double> xs, bnd;
    for (const auto& p : g.coords) xs.insert(p[0]);
    for (int v : g.boundary) bnd.insert(g.coords[v][0]);
    CHECK(xs == std::set<double>{0.25, 0.5, 0.75});
    CHECK(bnd == std::set<double>{0.25, 0.75});
    CHECK(g.eps == 0.25);
}

TEST_CASE("unit square at j = 2") {
    const DomainSpec spec = read_domain_spec(fixture("two_squares.json"));
    for (Side s : {Side::plus, Side::minus}) {
        const LatticeGraph g = build_lattice(spec, s, 2);
        CHECK(g.size() == 9);
        CHECK(g.edges.size() == 12);
        CHECK(g.boundary.size() == 8);
        std::size_t deg_sum = 0;
        for (int k : g.degree) deg_sum += k;
        CHECK(deg_sum == 2 * g.edges.size());
    }
}

TEST_CASE("L-shaped side matches an independent flood fill") {
    const DomainSpec spec = l_shape();
    for (int j = 2; j <= 5; ++j) {
        const int n = 1 << j;
        // integer grid (i, k) <-> (i / n, k / n); the open L is the unit square
        // minus the closed upper-right quarter
        auto inside = [&](int i, int k) {
            return i > 0 && i < n && k > 0 && k < n && !(2 * i >= n && 2 * k >= n);
        };
        std::set<std::pair<int, int>> seen{{n / 4, n / 4}};
        std::vector<std::pair<int, int>> stack{{n / 4, n / 4}};
        std::size_t edges2 = 0;
        while (!stack.empty()) {
            auto [i, k] = stack.back();
            stack.pop_back();
            const int di[4] = {1, -1, 0, 0}, dk[4] = {0, 0, 1, -1};
            for (int r = 0; r < 4; ++r) {
                const int a = i + di[r], b = k + dk[r];
                if (!inside(a, b)) continue;
                ++edges2;
                if (seen.insert({a, b}).second) stack.push_back({a, b});
            }
        }
        const LatticeGraph g = build_lattice(spec, Side::plus, j);
        CHECK(g.size() == seen.size());
        CHECK(g.size() == static_cast<std::size_t>((n - 1) * (n - 1) - (n / 2) * (n / 2)));
        CHECK(2 * g.edges.size() == edges2);
        for (const auto& p : g.coords) {
            const int i = static_cast<int>(std::lround(p[0] * n)), k = static_cast<int>(std::lround(p[1] * n));
            CHECK(seen.count({i, k}) == 1);
        }
    }
}

TEST_CASE("seams between boxes of one side are interior") {
    const DomainSpec spec = l_shape();
    CHECK(spec.contains(Side::plus, Point{0.25, 0.5}));
    CHECK_FALSE(spec.contains(Side::plus, Point{0.5, 0.75}));
    CHECK_FALSE(spec.contains(Side::plus, Point{0.75, 0.5}));
    CHECK_FALSE(spec.contains(Side::plus, Point{0.0, 0.25}));
    const LatticeGraph g = build_lattice(spec, Side::plus, 2);
    CHECK(g.find(Key{0, 1}) >= 0);   // (1/4, 1/2) on the seam
    // two halves of the unit square give the same lattice as the square itself
    const DomainSpec split = DomainSpec::from_json(json::parse(R"({
        "dimension": 2,
        "boxes_plus": [[[0, 0], ["1/2", 1]], [["1/2", 0], [1, 1]]],
        "boxes_minus": [[[-1, 0], [0, 1]]],
        "anchor_plus": ["1/2", "1/2"], "anchor_minus": ["-1/2", "1/2"]})"));
    const DomainSpec whole = read_domain_spec(fixture("two_squares.json"));
    for (int j = 2; j <= 5; ++j) {
        const LatticeGraph a = build_lattice(split, Side::plus, j), b = build_lattice(whole, Side::plus, j);
        CHECK(a.size() == b.size());
        CHECK(a.edges.size() == b.edges.size());
        CHECK(a.boundary.size() == b.boundary.size());
    }
}

TEST_CASE("interface discretization of two squares") {
    const DomainSpec spec = read_domain_spec(fixture("two_squares.json"));
    CHECK(interface_measure(spec) == 1.0);
    for (int j = 2; j <= 7; ++j) {
        const LatticeGraph gp = build_lattice(spec, Side::plus, j), gm = build_lattice(spec, Side::minus, j);
        const InterfaceDiscretization I = build_interface(spec, gp, gm);
        const double h = std::ldexp(1.0, -j);
        CHECK(I.size() == static_cast<std::size_t>(1 << j));
        double total = 0;
        for (double w : I.weights) {
            CHECK(w == h);
            total += w;
        }
        CHECK(total == 1.0);
        CHECK(I.weight_constant == 1.0);
        // midpoint rule: exact for linear, error h^2/12 for y^2
        CHECK(surface_quadrature(I, [](const Point& x) { return x[1]; }) == doctest::Approx(0.5).epsilon(1e-14));
        const double q2 = surface_quadrature(I, [](const Point& x) { return x[1] * x[1]; });
        CHECK(q2 == doctest::Approx(1.0 / 3.0 - h * h / 12.0).epsilon(1e-13));
        if (j >= 6) CHECK(std::abs(q2 - 1.0 / 3.0) <= std::ldexp(1.0, -12));
        // pairing: brute-force nearest vertex and the 2 eps bound
        CHECK(I.max_pair_distance <= 2 * h);
        for (std::size_t c = 0; c < I.size(); ++c) {
            CHECK(I.points[c][0] == 0.0);
            for (auto [g, site] : {std::pair{&gp, I.site_plus[c]}, std::pair{&gm, I.site_minus[c]}}) {
                double best = 1e300;
                for (const auto& p : g->coords) best = std::min(best, distance(p, I.points[c], 2));
                CHECK(distance(g->coords[site], I.points[c], 2) == doctest::Approx(best).epsilon(1e-15));
            }
        }
        // ball counts grow like s / eps in d = 2
        for (double s : {h, 4 * h, 0.3}) {
            const std::size_t n = count_in_ball(I, Point{0.0, 0.5}, s);
            CHECK(n >= 1);
            CHECK(static_cast<double>(n) <= 2 * s / h + 2);
        }
    }
}

TEST_CASE("interface in one dimension is a single point of unit weight") {
    const DomainSpec spec = read_domain_spec(fixture("two_intervals.json"));
    CHECK(interface_measure(spec) == 1.0);
    const InterfaceDiscretization I =
        build_interface(spec, build_lattice(spec, Side::plus, 3), build_lattice(spec, Side::minus, 3));
    REQUIRE(I.size() == 1);
    CHECK(I.weights[0] == 1.0);
    CHECK(I.points[0][0] == 0.0);
    CHECK(I.max_pair_distance == 0.125);
}

TEST_CASE("interface of two half-height strips") {
    const DomainSpec spec = read_domain_spec(fixture("tiny/two_strips.json"));
    CHECK(interface_measure(spec) == 0.5);
    for (int j = 1; j <= 5; ++j) {
        const InterfaceDiscretization I =
            build_interface(spec, build_lattice(spec, Side::plus, j), build_lattice(spec, Side::minus, j));
        double total = 0;
        for (double w : I.weights) total += w;
        CHECK(total == 0.5);
    }
}

TEST_CASE("error kinds") {
    DomainSpec bad = read_domain_spec(fixture("two_squares.json"));
    bad.anchor_plus = {mpq_class(5), mpq_class(5)};
    CHECK(error_kind([&] { build_lattice(bad, Side::plus, 2); }) == "EmptyLattice");

    const json small = json::parse(R"({
        "dimension": 2,
        "boxes_plus": [[[0, 0], ["1/2", "1/2"]]], "boxes_minus": [[[-1, 0], [0, 1]]],
        "anchor_plus": ["1/4", "1/4"], "anchor_minus": ["-1/2", "1/2"]})");
    const DomainSpec tiny = DomainSpec::from_json(small);
    CHECK(error_kind([&] { build_lattice(tiny, Side::plus, 1); }) == "DisconnectedAnchor");
    CHECK(error_kind([&] { build_lattice(tiny, Side::plus, 2); }) == "DisconnectedAnchor");
    CHECK(build_lattice(tiny, Side::plus, 3).size() == 9);
    CHECK(error_kind([&] { build_lattice(tiny, Side::plus, 0); }) == "ConfigError");

    json overlap = small;
    overlap["boxes_plus"] = json::parse(R"([[[0, 0], [1, 1]], [["1/2", 0], [2, 1]]])");
    CHECK(error_kind([&] { DomainSpec::from_json(overlap); }) == "ConfigError");
    json cross = small;
    cross["boxes_minus"] = json::parse(R"([[[-1, 0], ["1/8", 1]]])");
    CHECK(error_kind([&] { DomainSpec::from_json(cross); }) == "ConfigError");
    json apart = small;
    apart["boxes_minus"] = json::parse(R"([[[-1, 0], ["-1/2", 1]]])");
    apart["anchor_minus"] = json::parse(R"(["-3/4", "1/2"])");
    CHECK(error_kind([&] { DomainSpec::from_json(apart); }) == "ConfigError");
    json outside = small;
    outside["anchor_plus"] = json::parse(R"([0, "1/4"])");
    CHECK(error_kind([&] { DomainSpec::from_json(outside); }) == "ConfigError");
    CHECK(error_kind([] { read_domain_spec("/nonexistent/spec.json"); }) == "ConfigError");
}

TEST_CASE("lattice CSV export") {
    const DomainSpec spec = read_domain_spec(fixture("two_squares.json"));
    const LatticeGraph g = build_lattice(spec, Side::minus, 3);
    const auto dir = std::filesystem::temp_directory_path() / "arw_test_geometry";
    std::filesystem::create_directories(dir);
    const std::string vp = (dir / "v.csv").string(), ep = (dir / "e.csv").string();
    write_lattice_csv(g, vp, ep);
    CHECK(count_lines(vp) == g.size() + 1);
    CHECK(count_lines(ep) == g.edges.size() + 1);
    std::ifstream in(vp);
    std::string header;
    std::getline(in, header);
    CHECK(header == "vertex_id,x0,x1,degree,is_boundary");
    std::filesystem::remove_all(dir);
}

TEST_CASE("spec round trip through JSON") {
    const DomainSpec a = read_domain_spec(fixture("tiny/weighted_squares.json"));
    const DomainSpec b = DomainSpec::from_json(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(b.rho_plus.rho(Point{1.0, 1.0}) == doctest::Approx(std::exp(0.5)));
}
