#include "arw/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>

#include "arw/error.hpp"

namespace arw {

namespace {

long long pack(const Key& k) {
    constexpr long long off = 1LL << 30;
    return ((k[0] + off) << 32) | (k[1] + off);
}

mpq_class pow2_neg(int j) {
    mpq_class e(1);
    mpz_class den;
    mpz_ui_pow_ui(den.get_mpz_t(), 2, static_cast<unsigned long>(j));
    e /= den;
    return e;
}

// A side is the interior of the closure of its boxes, so shared faces
// between boxes of one side belong to the domain. x is interior iff every
// open orthant at x is entered by some closed box containing x.
bool interior_point(const std::vector<Box>& boxes, const QPoint& x, int d) {
    for (int mask = 0; mask < (1 << d); ++mask) {
        bool found = false;
        for (const auto& b : boxes) {
            bool ok = true;
            for (int a = 0; a < d && ok; ++a) {
                if (x[a] < b.lo[a] || x[a] > b.hi[a]) ok = false;
                else if ((mask >> a) & 1) ok = x[a] < b.hi[a];
                else ok = b.lo[a] < x[a];
            }
            if (ok) {
                found = true;
                break;
            }
        }
        if (!found) return false;
    }
    return true;
}

// Is the closed axis-parallel segment {x + s e_axis : s in [a, b]} inside the
// domain? Interiority is constant between consecutive box coordinates, so it
// suffices to test those coordinates and the midpoints between them.
bool segment_inside(const std::vector<Box>& boxes, const QPoint& x, int axis, const mpq_class& a,
                    const mpq_class& b, int d) {
    std::vector<mpq_class> cuts{a, b};
    for (const auto& box : boxes)
        for (const mpq_class* c : {&box.lo[axis], &box.hi[axis]})
            if (a < *c && *c < b) cuts.push_back(*c);
    std::sort(cuts.begin(), cuts.end());
    QPoint p = x;
    for (std::size_t i = 0; i < cuts.size(); ++i) {
        p[axis] = cuts[i];
        if (!interior_point(boxes, p, d)) return false;
        if (i + 1 < cuts.size()) {
            p[axis] = (cuts[i] + cuts[i + 1]) / 2;
            if (!interior_point(boxes, p, d)) return false;
        }
    }
    return true;
}

QPoint point_of(const nlohmann::json& j, int d) {
    if (!j.is_array() || static_cast<int>(j.size()) != d)
        throw Error("ConfigError", "expected a point with " + std::to_string(d) + " coordinates");
    QPoint p{mpq_class(0), mpq_class(0)};
    for (int a = 0; a < d; ++a) p[a] = parse_rational(j[a]);
    return p;
}

std::vector<Box> boxes_of(const nlohmann::json& j, int d) {
    std::vector<Box> out;
    if (!j.is_array() || j.empty()) throw Error("ConfigError", "boxes must be a nonempty list");
    for (const auto& b : j) {
        if (!b.is_array() || b.size() != 2) throw Error("ConfigError", "box must be [[lo...],[hi...]]");
        out.push_back({point_of(b[0], d), point_of(b[1], d)});
    }
    return out;
}

nlohmann::json qpoint_json(const QPoint& p, int d) {
    nlohmann::json a = nlohmann::json::array();
    for (int k = 0; k < d; ++k) a.push_back(rational_string(p[k]));
    return a;
}

}  // namespace

double distance(const Point& a, const Point& b, int d) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

bool DomainSpec::contains(Side s, const QPoint& x) const { return interior_point(boxes(s), x, dimension); }

bool DomainSpec::contains(Side s, const Point& x) const {
    QPoint q{mpq_class(0), mpq_class(0)};
    for (int a = 0; a < dimension; ++a) q[a] = mpq_class(x[a]);
    return interior_point(boxes(s), q, dimension);
}

double DomainSpec::volume(Side s) const {
    double v = 0.0;
    for (const auto& b : boxes(s)) {
        double w = 1.0;
        for (int a = 0; a < dimension; ++a) w *= mpq_class(b.hi[a] - b.lo[a]).get_d();
        v += w;
    }
    return v;
}

void DomainSpec::validate() const {
    if (dimension < 1 || dimension > kMaxDim)
        throw Error("ConfigError", "dimension must be 1 or 2");
    for (Side s : {Side::plus, Side::minus}) {
        if (boxes(s).empty()) throw Error("ConfigError", std::string("no boxes for side ") + side_name(s));
        for (const auto& b : boxes(s))
            for (int a = 0; a < dimension; ++a)
                if (!(b.lo[a] < b.hi[a])) throw Error("ConfigError", "degenerate box");
        if (!contains(s, anchor(s)))
            throw Error("ConfigError", std::string("anchor not strictly inside side ") + side_name(s));
    }
    auto overlap_within = [&](const std::vector<Box>& bs) {
        for (std::size_t i = 0; i < bs.size(); ++i)
            for (std::size_t k = i + 1; k < bs.size(); ++k) {
                bool overlap = true;
                for (int a = 0; a < dimension; ++a)
                    if (!(bs[i].lo[a] < bs[k].hi[a] && bs[k].lo[a] < bs[i].hi[a])) overlap = false;
                if (overlap) return true;
            }
        return false;
    };
    if (overlap_within(boxes_plus) || overlap_within(boxes_minus))
        throw Error("ConfigError", "boxes of one side overlap");
    for (const auto& bp : boxes_plus)
        for (const auto& bm : boxes_minus) {
            bool overlap = true;
            for (int a = 0; a < dimension; ++a)
                if (!(bp.lo[a] < bm.hi[a] && bm.lo[a] < bp.hi[a])) overlap = false;
            if (overlap) throw Error("ConfigError", "D+ and D- overlap");
        }
    if (interface_faces(*this).empty()) throw Error("ConfigError", "interface is empty");
    if (lambda < 0) throw Error("ConfigError", "lambda must be nonnegative");
    if (!(lipschitz_M > 0)) throw Error("ConfigError", "lipschitz_M must be positive");
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
    DomainSpec s;
    try {
        s.dimension = j.at("dimension").get<int>();
        if (s.dimension < 1 || s.dimension > kMaxDim) throw Error("ConfigError", "dimension must be 1 or 2");
        s.boxes_plus = boxes_of(j.at("boxes_plus"), s.dimension);
        s.boxes_minus = boxes_of(j.at("boxes_minus"), s.dimension);
        s.anchor_plus = point_of(j.at("anchor_plus"), s.dimension);
        s.anchor_minus = point_of(j.at("anchor_minus"), s.dimension);
        s.rho_plus = DensitySpec::from_json(j.value("rho_plus", nlohmann::json()), s.dimension);
        s.rho_minus = DensitySpec::from_json(j.value("rho_minus", nlohmann::json()), s.dimension);
        s.lambda = j.value("lambda", 0.0);
        s.lipschitz_M = j.value("lipschitz_M", 1.0);
    } catch (const nlohmann::json::exception& e) {
        throw Error("ConfigError", std::string("domain spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json DomainSpec::to_json() const {
    auto boxes_json = [&](const std::vector<Box>& bs) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& b : bs) a.push_back(nlohmann::json::array({qpoint_json(b.lo, dimension), qpoint_json(b.hi, dimension)}));
        return a;
    };
    return {{"dimension", dimension},
            {"boxes_plus", boxes_json(boxes_plus)},
            {"boxes_minus", boxes_json(boxes_minus)},
            {"anchor_plus", qpoint_json(anchor_plus, dimension)},
            {"anchor_minus", qpoint_json(anchor_minus, dimension)},
            {"rho_plus", rho_plus.to_json()},
            {"rho_minus", rho_minus.to_json()},
            {"lambda", lambda},
            {"lipschitz_M", lipschitz_M}};
}

DomainSpec read_domain_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("ConfigError", "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("ConfigError", path + ": " + e.what());
    }
    return DomainSpec::from_json(j);
}

int LatticeGraph::find(const Key& k) const {
    auto it = index.find(pack(k));
    return it == index.end() ? -1 : it->second;
}

QPoint LatticeGraph::exact_coord(int i) const {
    QPoint p{mpq_class(0), mpq_class(0)};
    mpq_class e = pow2_neg(j);
    for (int a = 0; a < d; ++a) p[a] = anchor[a] + e * mpq_class(keys[i][a]);
    return p;
}

LatticeGraph build_lattice(const DomainSpec& spec, Side side, int j) {
    if (j < 1) throw Error("ConfigError", "lattice level j must be >= 1");
    const int d = spec.dimension;
    const auto& boxes = spec.boxes(side);
    LatticeGraph g;
    g.d = d;
    g.j = j;
    g.side = side;
    g.anchor = spec.anchor(side);
    for (int a = d; a < kMaxDim; ++a) g.anchor[a] = 0;
    const mpq_class e = pow2_neg(j);
    g.eps = e.get_d();

    if (!spec.contains(side, g.anchor))
        throw Error("EmptyLattice", std::string("anchor lattice point not inside side ") + side_name(side));

    auto coord = [&](const Key& k) {
        QPoint p{mpq_class(0), mpq_class(0)};
        for (int a = 0; a < d; ++a) p[a] = g.anchor[a] + e * mpq_class(k[a]);
        return p;
    };
    auto add = [&](const Key& k) {
        int id = static_cast<int>(g.keys.size());
        g.keys.push_back(k);
        g.index.emplace(pack(k), id);
        return id;
    };

    // Breadth-first flood fill along admissible edges.
    std::vector<std::vector<int>> adj;
    add(Key{0, 0});
    adj.emplace_back();
    std::deque<int> queue{0};
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        const Key kv = g.keys[v];
        const QPoint xv = coord(kv);
        for (int a = 0; a < d; ++a)
            for (int sgn : {+1, -1}) {
                Key kn = kv;
                kn[a] += sgn;
                mpq_class lo = sgn > 0 ? xv[a] : xv[a] - e;
                mpq_class hi = sgn > 0 ? xv[a] + e : xv[a];
                if (!segment_inside(boxes, xv, a, lo, hi, d)) continue;
                int w = g.find(kn);
                if (w < 0) {
                    w = add(kn);
                    adj.emplace_back();
                    queue.push_back(w);
                }
                adj[v].push_back(w);
            }
    }
    if (adj[0].empty())
        throw Error("DisconnectedAnchor", std::string("anchor vertex has no admissible edge on side ") +
                                              side_name(side) + " at j=" + std::to_string(j));

    const int n = static_cast<int>(g.keys.size());
    g.coords.resize(n);
    g.nbr_begin.assign(n + 1, 0);
    g.degree.resize(n);
    g.is_boundary.resize(n);
    for (int v = 0; v < n; ++v) {
        QPoint q = coord(g.keys[v]);
        g.coords[v] = {0.0, 0.0};
        for (int a = 0; a < d; ++a) g.coords[v][a] = q[a].get_d();
        g.degree[v] = static_cast<int>(adj[v].size());
        g.nbr_begin[v + 1] = g.nbr_begin[v] + g.degree[v];
        g.is_boundary[v] = g.degree[v] < 2 * d;
        if (g.is_boundary[v]) g.boundary.push_back(v);
        for (int w : adj[v]) {
            g.nbr.push_back(w);
            if (v < w) g.edges.push_back({v, w});
        }
    }
    return g;
}

std::vector<InterfaceFace> interface_faces(const DomainSpec& spec) {
    const int d = spec.dimension;
    std::map<std::pair<int, mpq_class>, std::vector<std::pair<mpq_class, mpq_class>>> lines;
    for (const auto& bp : spec.boxes_plus)
        for (const auto& bm : spec.boxes_minus) {
            int degenerate = -1, ndeg = 0;
            bool empty = false;
            std::array<mpq_class, kMaxDim> lo, hi;
            for (int a = 0; a < d; ++a) {
                lo[a] = std::max(bp.lo[a], bm.lo[a]);
                hi[a] = std::min(bp.hi[a], bm.hi[a]);
                if (lo[a] > hi[a]) empty = true;
                else if (lo[a] == hi[a]) {
                    degenerate = a;
                    ++ndeg;
                }
            }
            if (empty || ndeg != 1) continue;
            auto& segs = lines[{degenerate, lo[degenerate]}];
            if (d == 1) segs.emplace_back(0, 0);
            else {
                int t = 1 - degenerate;
                segs.emplace_back(lo[t], hi[t]);
            }
        }
    std::vector<InterfaceFace> faces;
    for (auto& [key, segs] : lines) {
        std::sort(segs.begin(), segs.end());
        std::vector<std::pair<mpq_class, mpq_class>> merged;
        for (const auto& s : segs) {
            if (!merged.empty() && s.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, s.second);
            else merged.push_back(s);
        }
        for (const auto& m : merged) faces.push_back({key.first, key.second, m.first, m.second});
    }
    return faces;
}

double interface_measure(const DomainSpec& spec) {
    double total = 0.0;
    for (const auto& f : interface_faces(spec)) total += spec.dimension == 1 ? 1.0 : mpq_class(f.hi - f.lo).get_d();
    return total;
}

namespace {

// Nearest vertex to z, ties broken by the lexicographically smallest exact
// coordinate vector. Returns -1 and sets dist if the lattice is empty.
int nearest_site(const LatticeGraph& lat, const QPoint& zq, const Point& z, double& dist) {
    const int d = lat.d;
    double best = INFINITY;
    for (std::size_t v = 0; v < lat.size(); ++v) {
        double s = 0;
        for (int a = 0; a < d; ++a) s += (lat.coords[v][a] - z[a]) * (lat.coords[v][a] - z[a]);
        best = std::min(best, s);
    }
    const double slack = 1e-9 * lat.eps * lat.eps;
    int winner = -1;
    mpq_class wd;
    QPoint wc;
    for (std::size_t v = 0; v < lat.size(); ++v) {
        double s = 0;
        for (int a = 0; a < d; ++a) s += (lat.coords[v][a] - z[a]) * (lat.coords[v][a] - z[a]);
        if (s > best + slack) continue;
        QPoint c = lat.exact_coord(static_cast<int>(v));
        mpq_class dq = 0;
        for (int a = 0; a < d; ++a) dq += (c[a] - zq[a]) * (c[a] - zq[a]);
        bool better = winner < 0 || dq < wd;
        if (!better && dq == wd) {
            for (int a = 0; a < d; ++a) {
                if (c[a] != wc[a]) {
                    better = c[a] < wc[a];
                    break;
                }
            }
        }
        if (better) {
            winner = static_cast<int>(v);
            wd = dq;
            wc = c;
        }
    }
    dist = std::sqrt(wd.get_d());
    return winner;
}

}  // namespace

InterfaceDiscretization build_interface(const DomainSpec& spec, const LatticeGraph& lat_plus,
                                        const LatticeGraph& lat_minus) {
    if (lat_plus.j != lat_minus.j) throw Error("ConfigError", "lattices must share the same eps");
    const int d = spec.dimension;
    const auto faces = interface_faces(spec);
    if (faces.empty()) throw Error("ConfigError", "interface is empty");
    InterfaceDiscretization out;
    out.d = d;
    out.eps = lat_plus.eps;
    out.lipschitz_M = spec.lipschitz_M;
    const mpq_class e = pow2_neg(lat_plus.j);
    const mpq_class half_e = e / 2;

    std::vector<std::pair<QPoint, mpq_class>> cells;  // (midpoint, measure)
    std::vector<int> cell_face;
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        const auto& f = faces[fi];
        if (d == 1) {
            QPoint z{f.normal_coord, mpq_class(0)};
            cells.push_back({z, mpq_class(1)});
            cell_face.push_back(static_cast<int>(fi));
            continue;
        }
        const int t = 1 - f.normal_axis;
        std::vector<mpq_class> cuts{f.lo};
        mpq_class x = f.lo;
        while (x + e <= f.hi) {
            x += e;
            cuts.push_back(x);
        }
        if (cuts.back() != f.hi) {
            if (f.hi - cuts.back() >= half_e || cuts.size() == 1) cuts.push_back(f.hi);
            else cuts.back() = f.hi;
        }
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            QPoint z{mpq_class(0), mpq_class(0)};
            z[f.normal_axis] = f.normal_coord;
            z[t] = (cuts[c] + cuts[c + 1]) / 2;
            cells.push_back({z, cuts[c + 1] - cuts[c]});
            cell_face.push_back(static_cast<int>(fi));
        }
    }

    const double unit = d == 1 ? 1.0 : out.eps;
    const double limit = 2.0 * spec.lipschitz_M * out.eps * (1.0 + 1e-12);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& [zq, w] = cells[c];
        Point z{0.0, 0.0};
        for (int a = 0; a < d; ++a) z[a] = zq[a].get_d();
        double dp = 0, dm = 0;
        int sp = nearest_site(lat_plus, zq, z, dp);
        int sm = nearest_site(lat_minus, zq, z, dm);
        if (sp < 0 || sm < 0 || dp > limit || dm > limit)
            throw Error("NoPairableSite", "interface point at distance " + std::to_string(std::max(dp, dm)) +
                                              " > 2*M*eps = " + std::to_string(limit));
        out.points.push_back(z);
        out.weights.push_back(w.get_d());
        out.site_plus.push_back(sp);
        out.site_minus.push_back(sm);
        out.face.push_back(cell_face[c]);
        out.max_pair_distance = std::max({out.max_pair_distance, dp, dm});
        double ratio = w.get_d() / unit;
        out.weight_constant = std::max({out.weight_constant, ratio, 1.0 / ratio});
    }
    return out;
}

double surface_quadrature(const InterfaceDiscretization& iface, const std::function<double(const Point&)>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < iface.size(); ++i) s += f(iface.points[i]) * iface.weights[i];
    return s;
}

std::size_t count_in_ball(const InterfaceDiscretization& iface, const Point& x, double s) {
    std::size_t n = 0;
    for (const auto& z : iface.points)
        if (distance(z, x, iface.d) <= s) ++n;
    return n;
}

void write_lattice_csv(const LatticeGraph& lat, const std::string& vertices_path, const std::string& edges_path) {
    std::ofstream v(vertices_path);
    if (!v) throw Error("IOError", "cannot write " + vertices_path);
    v.precision(17);
    v << "vertex_id";
    for (int a = 0; a < lat.d; ++a) v << ",x" << a;
    v << ",degree,is_boundary\n";
    for (std::size_t i = 0; i < lat.size(); ++i) {
        v << i;
        for (int a = 0; a < lat.d; ++a) v << ',' << lat.coords[i][a];
        v << ',' << lat.degree[i] << ',' << int(lat.is_boundary[i]) << '\n';
    }
    std::ofstream e(edges_path);
    if (!e) throw Error("IOError", "cannot write " + edges_path);
    e << "u,v\n";
    for (const auto& ed : lat.edges) e << ed[0] << ',' << ed[1] << '\n';
}

}  // namespace arw
