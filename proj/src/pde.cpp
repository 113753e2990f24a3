#include "arw/pde.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/math/quadrature/gauss.hpp>

#include "arw/error.hpp"

namespace arw {

namespace {

constexpr double kPi = 3.141592653589793;

using Rule = std::vector<std::pair<double, double>>;  // (node, weight) on [0, 1]

template <int N>
Rule gauss01() {
    using G = boost::math::quadrature::gauss<double, N>;
    const auto& a = G::abscissa();
    const auto& w = G::weights();
    Rule out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0) {
            out.emplace_back(0.5, w[i] / 2);
            continue;
        }
        out.emplace_back(0.5 * (1 - a[i]), w[i] / 2);
        out.emplace_back(0.5 * (1 + a[i]), w[i] / 2);
    }
    std::sort(out.begin(), out.end());
    return out;
}

const Rule& rule6() {
    static const Rule r = gauss01<6>();
    return r;
}
const Rule& rule8() {
    static const Rule r = gauss01<8>();
    return r;
}

// int_a^c fun with geometric panels refining toward the endpoint c.
template <class F>
double graded_toward(const F& fun, double a, double c, int levels = 30) {
    if (a == c) return 0.0;
    double total = 0;
    double lo = a;
    for (int k = 1; k <= levels + 1; ++k) {
        const double hi = k <= levels ? c - (c - a) * std::ldexp(1.0, -k) : c;
        for (const auto& [x, w] : rule8()) total += w * (hi - lo) * fun(lo + (hi - lo) * x);
        lo = hi;
    }
    return total;
}

// int_a^b fun, graded toward an interior (or end) point c.
template <class F>
double graded_around(const F& fun, double a, double b, double c) {
    c = std::clamp(c, a, b);
    return graded_toward(fun, a, c) + graded_toward(fun, b, c) * -1.0;
}

int other_axis(int a) { return 1 - a; }

double sup_on_boxes(const std::vector<Box>& boxes, int d, const Field0& f) {
    double s = 0;
    const int n = 128;
    for (const auto& b : boxes) {
        const double lo0 = b.lo[0].get_d(), hi0 = b.hi[0].get_d();
        const double lo1 = d == 2 ? b.lo[1].get_d() : 0, hi1 = d == 2 ? b.hi[1].get_d() : 0;
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= (d == 2 ? n : 0); ++j) {
                Point p{lo0 + (hi0 - lo0) * i / n, d == 2 ? lo1 + (hi1 - lo1) * j / n : 0.0};
                s = std::max(s, std::abs(f(p)));
            }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Analytic Neumann kernel on a box.

class AnalyticKernel : public SideKernel {
public:
    AnalyticKernel(const AxisBox& box, const BoundaryCells& cells, const Field0& f, int modes)
        : box_(box), modes_(modes) {
        cells_ = cells;
        for (int a = 0; a < box_.d; ++a) L_[a] = box_.hi[a] - box_.lo[a];
        // Cosine coefficients by composite Gauss quadrature.
        const int panels = std::max(16, modes);
        std::array<std::vector<double>, 2> xs, ws;
        for (int a = 0; a < box_.d; ++a)
            for (int p = 0; p < panels; ++p)
                for (const auto& [x, w] : rule8()) {
                    xs[a].push_back((p + x) * L_[a] / panels);
                    ws[a].push_back(w * L_[a] / panels);
                }
        const int n1 = box_.d == 2 ? modes_ : 1;
        coef_ = Eigen::MatrixXd::Zero(modes_, n1);
        std::array<Eigen::MatrixXd, 2> cosv;
        for (int a = 0; a < box_.d; ++a) {
            cosv[a].resize(xs[a].size(), modes_);
            for (std::size_t i = 0; i < xs[a].size(); ++i)
                for (int k = 0; k < modes_; ++k) cosv[a](i, k) = std::cos(k * kPi * xs[a][i] / L_[a]);
        }
        if (box_.d == 1) {
            for (std::size_t i = 0; i < xs[0].size(); ++i) {
                const double fv = f(Point{box_.lo[0] + xs[0][i], 0.0}) * ws[0][i];
                for (int k = 0; k < modes_; ++k) coef_(k, 0) += fv * cosv[0](i, k);
            }
            for (int k = 0; k < modes_; ++k) coef_(k, 0) *= (k == 0 ? 1.0 : 2.0) / L_[0];
        } else {
            Eigen::MatrixXd F(xs[0].size(), xs[1].size());
            for (std::size_t i = 0; i < xs[0].size(); ++i)
                for (std::size_t j = 0; j < xs[1].size(); ++j)
                    F(i, j) = f(Point{box_.lo[0] + xs[0][i], box_.lo[1] + xs[1][j]}) * ws[0][i] * ws[1][j];
            coef_ = cosv[0].transpose() * F * cosv[1];
            for (int k = 0; k < modes_; ++k)
                for (int l = 0; l < modes_; ++l)
                    coef_(k, l) *= (k == 0 ? 1.0 : 2.0) / L_[0] * (l == 0 ? 1.0 : 2.0) / L_[1];
        }
    }

    std::string source() const override { return "analytic"; }

    void for_each_node(const std::vector<Point>& targets, const std::vector<LagNode>& nodes,
                       const std::function<void(std::size_t, const Eigen::MatrixXd&)>& visit) const override {
        const int d = box_.d;
        // Unique coordinate values per axis.
        std::array<std::vector<double>, 2> uniq;
        std::array<std::vector<int>, 2> idx;
        for (int a = 0; a < d; ++a) {
            for (const auto& p : targets) uniq[a].push_back(p[a]);
            std::sort(uniq[a].begin(), uniq[a].end());
            uniq[a].erase(std::unique(uniq[a].begin(), uniq[a].end()), uniq[a].end());
            for (const auto& p : targets)
                idx[a].push_back(static_cast<int>(std::lower_bound(uniq[a].begin(), uniq[a].end(), p[a]) - uniq[a].begin()));
        }
        const std::size_t C = cells_.size();
        Eigen::MatrixXd K(targets.size(), C);
        std::vector<std::vector<double>> Aface(cells_.faces.size());
        std::vector<std::vector<double>> B(C);
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            const double r = nodes[n].r;
            for (std::size_t f = 0; f < cells_.faces.size(); ++f) {
                const auto& F = cells_.faces[f];
                const int a = F.axis;
                Aface[f].resize(uniq[a].size());
                for (std::size_t u = 0; u < uniq[a].size(); ++u)
                    Aface[f][u] = neumann_1d(L_[a], r, uniq[a][u] - box_.lo[a], F.coord - box_.lo[a]);
            }
            for (std::size_t c = 0; c < C; ++c) {
                const int f = cells_.face[c];
                const int a = cells_.faces[f].axis;
                if (d == 2) {
                    const int b = other_axis(a);
                    B[c].resize(uniq[b].size());
                    for (std::size_t u = 0; u < uniq[b].size(); ++u)
                        B[c][u] = neumann_1d_cell(L_[b], r, uniq[b][u] - box_.lo[b], cells_.lo[c] - box_.lo[b],
                                                  cells_.hi[c] - box_.lo[b]);
                }
                for (std::size_t p = 0; p < targets.size(); ++p) {
                    double v = Aface[f][idx[a][p]];
                    if (d == 2) v *= B[c][idx[other_axis(a)][p]];
                    K(p, c) = v;
                }
            }
            visit(n, K);
        }
    }

    std::vector<Eigen::VectorXd> free_evolution(const std::vector<Point>& targets,
                                                const std::vector<double>& times) const override {
        std::array<Eigen::MatrixXd, 2> cosv;
        for (int a = 0; a < box_.d; ++a) {
            cosv[a].resize(targets.size(), modes_);
            for (std::size_t p = 0; p < targets.size(); ++p)
                for (int k = 0; k < modes_; ++k) cosv[a](p, k) = std::cos(k * kPi * (targets[p][a] - box_.lo[a]) / L_[a]);
        }
        std::vector<Eigen::VectorXd> out;
        for (double t : times) {
            Eigen::MatrixXd c = coef_;
            for (int k = 0; k < modes_; ++k)
                for (int l = 0; l < c.cols(); ++l) {
                    double e = (k / L_[0]) * (k / L_[0]);
                    if (box_.d == 2) e += (l / L_[1]) * (l / L_[1]);
                    c(k, l) *= std::exp(-0.5 * kPi * kPi * e * t);
                }
            Eigen::VectorXd v(targets.size());
            if (box_.d == 1) {
                v = cosv[0] * c.col(0);
            } else {
                Eigen::MatrixXd tmp = cosv[0] * c;  // P x modes
                for (std::size_t p = 0; p < targets.size(); ++p) v(p) = tmp.row(p).dot(cosv[1].row(p));
            }
            out.push_back(v);
        }
        return out;
    }

    double free_mass(double t) const override {
        // Tensor Gauss quadrature of the evolved series.
        std::vector<Point> pts;
        std::vector<double> w;
        const int panels = 16;
        Rule r = rule8();
        std::vector<double> x0, w0, x1{0.0}, w1{1.0};
        for (int p = 0; p < panels; ++p)
            for (const auto& [x, ww] : r) {
                x0.push_back(box_.lo[0] + (p + x) * L_[0] / panels);
                w0.push_back(ww * L_[0] / panels);
            }
        if (box_.d == 2) {
            x1.clear();
            w1.clear();
            for (int p = 0; p < panels; ++p)
                for (const auto& [x, ww] : r) {
                    x1.push_back(box_.lo[1] + (p + x) * L_[1] / panels);
                    w1.push_back(ww * L_[1] / panels);
                }
        }
        for (std::size_t i = 0; i < x0.size(); ++i)
            for (std::size_t j = 0; j < x1.size(); ++j) {
                pts.push_back(Point{x0[i], x1[j]});
                w.push_back(w0[i] * w1[j]);
            }
        Eigen::VectorXd v = free_evolution(pts, {t})[0];
        double s = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) s += w[i] * v(i);
        return s;
    }

    Eigen::MatrixXd kernel_mass(const std::vector<LagNode>& nodes) const override {
        const std::size_t C = cells_.size();
        Eigen::MatrixXd out(nodes.size(), C);
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            const double r = nodes[n].r;
            std::vector<double> normal(cells_.faces.size());
            for (std::size_t f = 0; f < cells_.faces.size(); ++f) {
                const auto& F = cells_.faces[f];
                const int a = F.axis;
                const double z = F.coord - box_.lo[a];
                normal[f] = graded_around([&](double x) { return neumann_1d(L_[a], r, x, z); }, 0.0, L_[a], z);
            }
            for (std::size_t c = 0; c < C; ++c) {
                const int f = cells_.face[c];
                double v = normal[f];
                if (box_.d == 2) {
                    const int b = other_axis(cells_.faces[f].axis);
                    const double z = cells_.centers[c][b] - box_.lo[b];
                    v *= graded_around([&](double x) { return neumann_1d(L_[b], r, x, z); }, 0.0, L_[b], z);
                }
                out(n, c) = v;
            }
        }
        return out;
    }

private:
    AxisBox box_;
    int modes_;
    std::array<double, 2> L_{1, 1};
    Eigen::MatrixXd coef_;
};

// ---------------------------------------------------------------------------
// Lattice kernel p^eps at a fixed level.

class LatticeKernel : public SideKernel {
public:
    LatticeKernel(const DomainSpec& spec, Side side, int j, const Field0& f)
        : lat_(build_lattice(spec, side, j)),
          other_(build_lattice(spec, side == Side::plus ? Side::minus : Side::plus, j)),
          cond_(build_conductances(lat_, spec.rho(side))),
          prop_(cond_) {
        const InterfaceDiscretization iface = side == Side::plus ? build_interface(spec, lat_, other_)
                                                                 : build_interface(spec, other_, lat_);
        cells_.d = spec.dimension;
        cells_.faces.push_back({});
        for (std::size_t z = 0; z < iface.size(); ++z) {
            cells_.centers.push_back(iface.points[z]);
            cells_.widths.push_back(iface.weights[z]);
            cells_.lo.push_back(0);
            cells_.hi.push_back(0);
            cells_.face.push_back(0);
            sites_.push_back(side == Side::plus ? iface.site_plus[z] : iface.site_minus[z]);
        }
        f0_.resize(lat_.size());
        for (std::size_t x = 0; x < lat_.size(); ++x) f0_(x) = f(lat_.coords[x]);
    }

    std::string source() const override { return "lattice_j" + std::to_string(lat_.j); }

    int vertex_of(const Point& p) const {
        Key k{0, 0};
        for (int a = 0; a < lat_.d; ++a)
            k[a] = std::lround((p[a] - lat_.anchor[a].get_d()) / lat_.eps);
        const int v = lat_.find(k);
        if (v < 0 || distance(lat_.coords[v], p, lat_.d) > 1e-9 * lat_.eps)
            throw Error("ConfigError", "lattice kernel targets must be lattice vertices");
        return v;
    }

    // Paired lattice site of each cell (the natural trace targets).
    std::vector<Point> site_points() const {
        std::vector<Point> out;
        for (int s : sites_) out.push_back(lat_.coords[s]);
        return out;
    }

    void for_each_node(const std::vector<Point>& targets, const std::vector<LagNode>& nodes,
                       const std::function<void(std::size_t, const Eigen::MatrixXd&)>& visit) const override {
        std::vector<int> tv;
        for (const auto& p : targets) tv.push_back(vertex_of(p));
        // Columns: p(r, site_c, .) as densities; by symmetry p(r, x, site_c).
        const std::size_t C = sites_.size();
        Eigen::MatrixXd X = Eigen::MatrixXd::Zero(lat_.size(), C);
        for (std::size_t c = 0; c < C; ++c) X(sites_[c], c) = 1.0 / cond_.m[sites_[c]];
        std::vector<std::size_t> order(nodes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return nodes[a].r < nodes[b].r; });
        double now = 0;
        Eigen::MatrixXd K(targets.size(), C);
        for (std::size_t n : order) {
            prop_.advance(X, nodes[n].r - now);
            now = nodes[n].r;
            for (std::size_t p = 0; p < tv.size(); ++p)
                for (std::size_t c = 0; c < C; ++c) K(p, c) = X(tv[p], c) * cells_.widths[c];
            visit(n, K);
        }
    }

    std::vector<Eigen::VectorXd> free_evolution(const std::vector<Point>& targets,
                                                const std::vector<double>& times) const override {
        std::vector<int> tv;
        for (const auto& p : targets) tv.push_back(vertex_of(p));
        Eigen::MatrixXd X = f0_;
        double now = 0;
        std::vector<Eigen::VectorXd> out;
        for (double t : times) {
            if (t < now) throw Error("ConfigError", "times must be sorted");
            prop_.advance(X, t - now);
            now = t;
            Eigen::VectorXd v(tv.size());
            for (std::size_t p = 0; p < tv.size(); ++p) v(p) = X(tv[p], 0);
            out.push_back(v);
        }
        return out;
    }

    double free_mass(double t) const override {
        Eigen::MatrixXd X = f0_;
        prop_.advance(X, t);
        double s = 0;
        for (std::size_t x = 0; x < lat_.size(); ++x) s += X(x, 0) * cond_.m[x];
        return s;
    }

    Eigen::MatrixXd kernel_mass(const std::vector<LagNode>& nodes) const override {
        Eigen::MatrixXd out(nodes.size(), sites_.size());
        std::vector<Point> all(lat_.coords.begin(), lat_.coords.end());
        for_each_node(all, nodes, [&](std::size_t n, const Eigen::MatrixXd& K) {
            for (std::size_t c = 0; c < sites_.size(); ++c) {
                double s = 0;
                for (std::size_t x = 0; x < lat_.size(); ++x) s += K(x, c) * cond_.m[x];
                out(n, c) = s / cells_.widths[c];
            }
        });
        return out;
    }

private:
    LatticeGraph lat_, other_;
    Conductances cond_;
    Propagator prop_;
    std::vector<int> sites_;
    Eigen::VectorXd f0_;
};

// Points at which the traces of one side are evaluated.
std::vector<Point> trace_targets(const SideKernel& k) {
    if (auto* lk = dynamic_cast<const LatticeKernel*>(&k)) return lk->site_points();
    return k.cells().centers;
}

// Lag weights W0_i, W1_i (cells x cells) for the trace targets.
struct TraceWeights {
    std::vector<Eigen::MatrixXd> W0, W1;
    double boundary_constant = 0.0;
};

TraceWeights trace_weights(const SideKernel& k, const std::vector<LagNode>& nodes, int lags) {
    const std::size_t C = k.cells().size();
    TraceWeights tw;
    tw.W0.assign(lags, Eigen::MatrixXd::Zero(C, C));
    tw.W1.assign(lags, Eigen::MatrixXd::Zero(C, C));
    k.for_each_node(trace_targets(k), nodes, [&](std::size_t n, const Eigen::MatrixXd& K) {
        const auto& nd = nodes[n];
        tw.W0[nd.lag].noalias() += nd.weight * (1 - nd.v) * K;
        tw.W1[nd.lag].noalias() += nd.weight * nd.v * K;
        tw.boundary_constant = std::max(tw.boundary_constant, std::sqrt(nd.r) * K.rowwise().sum().maxCoeff());
    });
    return tw;
}

// One exact Volterra march for w on steps [k0, k1]:
//   w_k = pf_k - (1/2) sum_i [W0_i y_{k-i} + W1_i y_{k-i-1}],  y = a o w.
void march(const TraceWeights& tw, const Eigen::MatrixXd& pf, const Eigen::MatrixXd& a, Eigen::MatrixXd& w, int k0,
           int k1) {
    const int C = static_cast<int>(w.cols());
    Eigen::MatrixXd y = a.cwiseProduct(w);
    for (int k = k0; k <= k1; ++k) {
        Eigen::VectorXd rhs = pf.row(k).transpose();
        for (int i = 1; i <= k - 1; ++i) rhs.noalias() -= 0.5 * tw.W0[i] * y.row(k - i).transpose();
        for (int i = 0; i <= k - 1; ++i) rhs.noalias() -= 0.5 * tw.W1[i] * y.row(k - i - 1).transpose();
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(C, C);
        M.noalias() += 0.5 * tw.W0[0] * a.row(k).asDiagonal();
        Eigen::VectorXd wk = M.partialPivLu().solve(rhs);
        w.row(k) = wk.transpose();
        y.row(k) = a.row(k).cwiseProduct(w.row(k));
    }
}

// u(t_k, x) = P f(x) - (1/2) int int p y, y given on the grid as (M+1) x cells.
Eigen::VectorXd evaluate_with(const SideKernel& kernel, double tau, int steps, const Eigen::MatrixXd& y, int k,
                              const std::vector<Point>& pts) {
    Eigen::VectorXd u = kernel.free_evolution(pts, {k * tau})[0];
    if (k == 0) return u;
    std::vector<LagNode> nodes;
    for (const auto& n : lag_nodes(tau, steps))
        if (n.lag < k) nodes.push_back(n);
    kernel.for_each_node(pts, nodes, [&](std::size_t n, const Eigen::MatrixXd& K) {
        const auto& nd = nodes[n];
        Eigen::VectorXd yv = (1 - nd.v) * y.row(k - nd.lag).transpose() + nd.v * y.row(k - nd.lag - 1).transpose();
        u.noalias() -= 0.5 * nd.weight * (K * yv);
    });
    return u;
}

}  // namespace

std::vector<BoundaryFace> interface_boundary_faces(const DomainSpec& spec) {
    std::vector<BoundaryFace> out;
    for (const auto& f : interface_faces(spec))
        out.push_back({f.normal_axis, f.normal_coord.get_d(), f.lo.get_d(), f.hi.get_d()});
    return out;
}

std::vector<BoundaryFace> all_box_faces(const AxisBox& box) {
    std::vector<BoundaryFace> out;
    for (int a = 0; a < box.d; ++a)
        for (double c : {box.lo[a], box.hi[a]}) {
            BoundaryFace f;
            f.axis = a;
            f.coord = c;
            if (box.d == 2) {
                f.lo = box.lo[1 - a];
                f.hi = box.hi[1 - a];
            }
            out.push_back(f);
        }
    return out;
}

BoundaryCells make_boundary_cells(int d, const std::vector<BoundaryFace>& faces, int cells_per_unit) {
    if (faces.empty()) throw Error("ConfigError", "no boundary faces");
    BoundaryCells bc;
    bc.d = d;
    bc.faces = faces;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& F = faces[f];
        if (d == 1) {
            bc.centers.push_back(Point{F.coord, 0.0});
            bc.lo.push_back(0);
            bc.hi.push_back(0);
            bc.widths.push_back(1.0);
            bc.face.push_back(static_cast<int>(f));
            continue;
        }
        const int n = std::max(1, static_cast<int>(std::ceil((F.hi - F.lo) * cells_per_unit - 1e-9)));
        const double w = (F.hi - F.lo) / n;
        for (int i = 0; i < n; ++i) {
            Point c{0, 0};
            c[F.axis] = F.coord;
            c[1 - F.axis] = F.lo + (i + 0.5) * w;
            bc.centers.push_back(c);
            bc.lo.push_back(F.lo + i * w);
            bc.hi.push_back(F.lo + (i + 1) * w);
            bc.widths.push_back(w);
            bc.face.push_back(static_cast<int>(f));
        }
    }
    return bc;
}

std::vector<LagNode> lag_nodes(double tau, int lags) {
    std::vector<LagNode> out;
    // Lag 0: r = tau v^2, geometric panels in v toward 0.
    const int levels = 20;
    double lo = 0;
    for (int k = levels; k >= 0; --k) {
        const double hi = std::ldexp(1.0, -k);
        for (const auto& [x, w] : rule8()) {
            const double v = lo + (hi - lo) * x;
            out.push_back({0, tau * v * v, w * (hi - lo) * 2 * tau * v, v * v});
        }
        lo = hi;
    }
    for (int i = 1; i < lags; ++i)
        for (const auto& [x, w] : rule6()) out.push_back({i, (i + x) * tau, w * tau, x});
    return out;
}

std::unique_ptr<SideKernel> make_analytic_kernel(const AxisBox& box, const BoundaryCells& cells, const Field0& f,
                                                 int modes) {
    return std::make_unique<AnalyticKernel>(box, cells, f, modes);
}

std::unique_ptr<SideKernel> make_lattice_kernel(const DomainSpec& spec, Side side, int j, const Field0& f) {
    return std::make_unique<LatticeKernel>(spec, side, j, f);
}

int PicardSolution::time_index(double t) const {
    const double k = t / tau;
    const long r = std::lround(k);
    if (r < 0 || r > steps() || std::abs(k - r) > 1e-9) throw Error("ConfigError", "t is not a solver grid time");
    return static_cast<int>(r);
}

double PicardSolution::interface_product(int k, std::size_t c) const { return trace[0](k, c) * trace[1](k, c); }

Eigen::VectorXd PicardSolution::evaluate(Side side, int k, const std::vector<Point>& pts) const {
    const int s = side_index(side);
    Eigen::MatrixXd y = lambda * trace[0].cwiseProduct(trace[1]);
    return evaluate_with(*kernel[s], tau, steps(), y, k, pts);
}

nlohmann::json PicardSolution::metadata() const {
    return {{"kernel_source", kernel_source},
            {"time_steps", steps()},
            {"tau", tau},
            {"cells", kernel[0] ? kernel[0]->cells().size() : 0},
            {"window", window},
            {"boundary_constant", boundary_constant},
            {"contraction_estimate", contraction_estimate},
            {"iterations", iterations},
            {"contraction_ratios", contraction_ratios}};
}

PicardSolution solve_coupled_picard(const PdeProblem& pb, const PicardConfig& cfg) {
    if (cfg.time_steps < 1 || pb.T <= 0) throw Error("ConfigError", "bad time grid");
    if (pb.lambda < 0) throw Error("ConfigError", "lambda must be nonnegative");
    const DomainSpec& spec = pb.spec;
    PicardSolution sol;
    sol.lambda = pb.lambda;
    const int M = cfg.time_steps;
    sol.tau = pb.T / M;
    for (int k = 0; k <= M; ++k) sol.times.push_back(k * sol.tau);

    const bool analytic = cfg.lattice_j == 0 && spec.boxes_plus.size() == 1 && spec.boxes_minus.size() == 1 &&
                          spec.rho_plus.is_uniform() && spec.rho_minus.is_uniform();
    if (analytic) {
        BoundaryCells cells = make_boundary_cells(spec.dimension, interface_boundary_faces(spec), cfg.cells_per_unit);
        sol.kernel[0] = make_analytic_kernel(box_of(spec, Side::plus), cells, pb.f, cfg.modes);
        sol.kernel[1] = make_analytic_kernel(box_of(spec, Side::minus), cells, pb.g, cfg.modes);
    } else {
        if (cfg.lattice_j <= 0) throw Error("ConfigError", "geometry needs the lattice kernel; set lattice_j");
        sol.kernel[0] = make_lattice_kernel(spec, Side::plus, cfg.lattice_j, pb.f);
        sol.kernel[1] = make_lattice_kernel(spec, Side::minus, cfg.lattice_j, pb.g);
    }
    sol.kernel_source = sol.kernel[0]->source();
    const std::size_t C = sol.kernel[0]->cells().size();

    const std::vector<LagNode> nodes = lag_nodes(sol.tau, M);
    std::array<TraceWeights, 2> tw;
    std::array<Eigen::MatrixXd, 2> pf;
    for (int s = 0; s < 2; ++s) {
        tw[s] = trace_weights(*sol.kernel[s], nodes, M);
        auto ev = sol.kernel[s]->free_evolution(trace_targets(*sol.kernel[s]), sol.times);
        pf[s].resize(M + 1, C);
        for (int k = 0; k <= M; ++k) pf[s].row(k) = ev[k].transpose();
    }
    sol.boundary_constant = std::max(tw[0].boundary_constant, tw[1].boundary_constant);
    const double fmax = std::max(sup_on_boxes(spec.boxes_plus, spec.dimension, pb.f),
                                 sup_on_boxes(spec.boxes_minus, spec.dimension, pb.g));
    double T0 = pb.T;
    if (pb.lambda > 0 && fmax > 0) {
        const double c = 2 * sol.boundary_constant * pb.lambda * fmax;
        T0 = std::min(pb.T, 1.0 / (c * c));
    }
    sol.window = T0;
    sol.contraction_estimate = sol.boundary_constant * pb.lambda * std::sqrt(T0) * fmax;
    const int window_steps = std::max(1, static_cast<int>(std::floor(T0 / sol.tau + 1e-9)));

    for (int s = 0; s < 2; ++s) {
        sol.trace[s] = pf[s];  // initial guess: free evolution
    }
    for (int k0 = 1; k0 <= M; k0 += window_steps) {
        const int k1 = std::min(M, k0 + window_steps - 1);
        double prev = -1;
        int it = 0;
        for (;; ++it) {
            if (it >= cfg.max_iterations)
                throw Error("NoConvergence", "window starting at t=" + std::to_string(k0 * sol.tau) + " after " +
                                                 std::to_string(it) + " iterations");
            Eigen::MatrixXd old_p = sol.trace[0].middleRows(k0, k1 - k0 + 1);
            Eigen::MatrixXd old_m = sol.trace[1].middleRows(k0, k1 - k0 + 1);
            march(tw[0], pf[0], pb.lambda * sol.trace[1], sol.trace[0], k0, k1);
            march(tw[1], pf[1], pb.lambda * sol.trace[0], sol.trace[1], k0, k1);
            const double diff = std::max((sol.trace[0].middleRows(k0, k1 - k0 + 1) - old_p).cwiseAbs().maxCoeff(),
                                         (sol.trace[1].middleRows(k0, k1 - k0 + 1) - old_m).cwiseAbs().maxCoeff());
            if (prev > 0 && diff > 0) sol.contraction_ratios.push_back(diff / prev);
            prev = diff;
            if (diff <= cfg.tolerance) break;
        }
        sol.iterations.push_back(it + 1);
        // Carry the last value forward as the next window's initial guess.
        if (k1 < M)
            for (int s = 0; s < 2; ++s)
                for (int k = k1 + 1; k <= std::min(M, k1 + window_steps); ++k) sol.trace[s].row(k) = sol.trace[s].row(k1);
    }
    return sol;
}

Eigen::VectorXd RobinSolution::evaluate(int k, const std::vector<Point>& pts) const {
    Eigen::MatrixXd y = g_values.cwiseProduct(trace);
    return evaluate_with(*kernel, tau, static_cast<int>(times.size()) - 1, y, k, pts);
}

RobinSolution solve_robin(const AxisBox& box, const std::vector<BoundaryFace>& faces, const Field0& phi,
                          const std::function<double(double, const Point&)>& g, double T, int time_steps,
                          int cells_per_unit) {
    if (time_steps < 1 || T <= 0) throw Error("ConfigError", "bad time grid");
    RobinSolution sol;
    const int M = time_steps;
    sol.tau = T / M;
    for (int k = 0; k <= M; ++k) sol.times.push_back(k * sol.tau);
    BoundaryCells cells = make_boundary_cells(box.d, faces, cells_per_unit);
    sol.kernel = make_analytic_kernel(box, cells, phi, 64);
    const std::size_t C = cells.size();
    TraceWeights tw = trace_weights(*sol.kernel, lag_nodes(sol.tau, M), M);
    auto ev = sol.kernel->free_evolution(cells.centers, sol.times);
    Eigen::MatrixXd pf(M + 1, C);
    sol.g_values.resize(M + 1, C);
    for (int k = 0; k <= M; ++k) {
        pf.row(k) = ev[k].transpose();
        for (std::size_t c = 0; c < C; ++c) {
            const double gv = g(sol.times[k], cells.centers[c]);
            if (!(gv >= 0) || !std::isfinite(gv)) throw Error("ConfigError", "g must be finite and nonnegative");
            sol.g_values(k, c) = gv;
        }
    }
    sol.trace = pf;
    march(tw, pf, sol.g_values, sol.trace, 1, M);
    return sol;
}

double MassBalance::max_error() const {
    return std::max(std::abs(left_plus - right), std::abs(left_minus - right));
}

MassBalance mass_balance(const PicardSolution& sol, int k) {
    MassBalance mb;
    const std::size_t C = sol.kernel[0]->cells().size();
    const auto& widths = sol.kernel[0]->cells().widths;
    // Right side: trapezoid in time of sum_c h sigma.
    double integral = 0;
    for (int i = 0; i < k; ++i)
        for (std::size_t c = 0; c < C; ++c)
            integral += 0.5 * sol.tau * (sol.interface_product(i, c) + sol.interface_product(i + 1, c)) * widths[c];
    mb.right = -0.5 * sol.lambda * integral;
    if (k == 0) return mb;
    std::vector<LagNode> nodes;
    for (const auto& n : lag_nodes(sol.tau, sol.steps()))
        if (n.lag < k) nodes.push_back(n);
    for (int s = 0; s < 2; ++s) {
        const SideKernel& K = *sol.kernel[s];
        Eigen::MatrixXd km = K.kernel_mass(nodes);
        double boundary = 0;
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            const auto& nd = nodes[n];
            for (std::size_t c = 0; c < C; ++c) {
                const double h = (1 - nd.v) * sol.interface_product(k - nd.lag, c) +
                                 nd.v * sol.interface_product(k - nd.lag - 1, c);
                boundary += nd.weight * km(n, c) * K.cells().widths[c] * h;
            }
        }
        const double left = K.free_mass(k * sol.tau) - K.free_mass(0) - 0.5 * sol.lambda * boundary;
        (s == 0 ? mb.left_plus : mb.left_minus) = left;
    }
    return mb;
}

double flux_functional(const PicardSolution& sol, int k, const Field0& phi) {
    const auto& cells = sol.kernel[0]->cells();
    double s = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) s += sol.interface_product(k, c) * phi(cells.centers[c]) * cells.widths[c];
    return 0.5 * s;
}

}  // namespace arw
