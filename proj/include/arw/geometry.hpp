#pragma once

#include <array>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <gmpxx.h>
#include <json.hpp>

#include "arw/density.hpp"

namespace arw {

using QPoint = std::array<mpq_class, kMaxDim>;
using Key = std::array<long, kMaxDim>;

enum class Side { plus, minus };
inline const char* side_name(Side s) { return s == Side::plus ? "plus" : "minus"; }
inline int side_index(Side s) { return s == Side::plus ? 0 : 1; }

// Open axis-aligned box; only the first `dimension` coordinates are used.
struct Box {
    QPoint lo, hi;
};

struct DomainSpec {
    int dimension = 2;
    std::vector<Box> boxes_plus, boxes_minus;
    QPoint anchor_plus, anchor_minus;
    DensitySpec rho_plus, rho_minus;
    double lambda = 0.0;
    double lipschitz_M = 1.0;

    const std::vector<Box>& boxes(Side s) const { return s == Side::plus ? boxes_plus : boxes_minus; }
    const QPoint& anchor(Side s) const { return s == Side::plus ? anchor_plus : anchor_minus; }
    const DensitySpec& rho(Side s) const { return s == Side::plus ? rho_plus : rho_minus; }

    // Throws ConfigError on malformed geometry (degenerate boxes, anchors
    // outside their side, overlapping sides, empty interface).
    void validate() const;
    bool contains(Side s, const QPoint& x) const;
    bool contains(Side s, const Point& x) const;
    // Lebesgue measure of one side, assuming its boxes do not overlap.
    double volume(Side s) const;

    static DomainSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

DomainSpec read_domain_spec(const std::string& path);

struct LatticeGraph {
    int d = 0;
    int j = 0;
    double eps = 0.0;
    Side side = Side::plus;
    QPoint anchor;               // exact anchor; vertex i sits at anchor + eps * keys[i]
    std::vector<Key> keys;
    std::vector<Point> coords;
    std::vector<std::array<int, 2>> edges;  // each unordered pair once, first < second
    std::vector<int> nbr_begin;  // CSR adjacency, size() + 1 entries
    std::vector<int> nbr;
    std::vector<int> degree;
    std::vector<char> is_boundary;
    std::vector<int> boundary;   // ids with degree < 2d

    std::size_t size() const { return keys.size(); }
    int find(const Key& k) const;
    QPoint exact_coord(int i) const;

    std::unordered_map<long long, int> index;
};

// Connected component of the anchor-translated eps*Z^d inside one side,
// eps = 2^-j. Edges join points at distance eps whose closed segment lies in
// the open union of boxes. Errors: EmptyLattice, DisconnectedAnchor.
LatticeGraph build_lattice(const DomainSpec& spec, Side side, int j);

// A flat piece of I = closure(D+) ∩ closure(D-): the hyperplane
// x[normal_axis] = normal_coord, restricted (for d = 2) to [lo, hi] along the
// other axis.
struct InterfaceFace {
    int normal_axis = 0;
    mpq_class normal_coord;
    mpq_class lo, hi;
};

std::vector<InterfaceFace> interface_faces(const DomainSpec& spec);
// sigma(I): total length (d = 2) or number of points (d = 1).
double interface_measure(const DomainSpec& spec);

struct InterfaceDiscretization {
    int d = 0;
    double eps = 0.0;
    double lipschitz_M = 1.0;
    std::vector<Point> points;
    std::vector<double> weights;
    std::vector<int> site_plus, site_minus;
    std::vector<int> face;
    double weight_constant = 1.0;   // C with sigma in [eps^{d-1}/C, C eps^{d-1}]
    double max_pair_distance = 0.0;

    std::size_t size() const { return points.size(); }
};

// Cells of width eps (a remainder shorter than eps/2 is merged into the last
// cell), midpoint representatives, nearest-site pairing with lexicographic
// tie-break. Errors: NoPairableSite.
InterfaceDiscretization build_interface(const DomainSpec& spec, const LatticeGraph& lat_plus,
                                        const LatticeGraph& lat_minus);

double surface_quadrature(const InterfaceDiscretization& iface,
                          const std::function<double(const Point&)>& f);

// Number of interface points in the closed ball B(x, s).
std::size_t count_in_ball(const InterfaceDiscretization& iface, const Point& x, double s);

void write_lattice_csv(const LatticeGraph& lat, const std::string& vertices_path,
                       const std::string& edges_path);

double distance(const Point& a, const Point& b, int d);

}  // namespace arw
