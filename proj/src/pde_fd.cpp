#include <cmath>
#include <map>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "arw/error.hpp"
#include "arw/pde.hpp"

namespace arw {

namespace {

struct Grid {
    int n[2] = {1, 1};   // nodes per axis
    double lo[2] = {0, 0};
    int offset = 0;      // first unknown index
    int size() const { return n[0] * n[1]; }
    int id(int i, int j) const { return offset + i * n[1] + j; }
};

int cells_along(double len, double h) {
    const double c = len / h;
    const long r = std::lround(c);
    if (r < 1 || std::abs(c - r) > 1e-9) throw Error("ConfigError", "box side is not a multiple of the FD spacing");
    return static_cast<int>(r);
}

}  // namespace

FdSolution solve_coupled_fd(const PdeProblem& pb, const std::vector<double>& output_times, const FdConfig& cfg) {
    const DomainSpec& spec = pb.spec;
    const int d = spec.dimension;
    if (cfg.cells_per_unit < 1 || cfg.time_steps < 2) throw Error("ConfigError", "bad FD resolution");
    FdSolution sol;
    sol.h = 1.0 / cfg.cells_per_unit;
    sol.dt = pb.T / cfg.time_steps;
    const double h = sol.h;

    std::array<Grid, 2> grid;
    std::array<AxisBox, 2> box = {box_of(spec, Side::plus), box_of(spec, Side::minus)};
    int total = 0;
    for (int s = 0; s < 2; ++s) {
        for (int a = 0; a < d; ++a) {
            grid[s].n[a] = cells_along(box[s].hi[a] - box[s].lo[a], h) + 1;
            grid[s].lo[a] = box[s].lo[a];
        }
        grid[s].offset = total;
        total += grid[s].size();
    }
    const int n = total;

    // Nodes, control volumes and the conservative diffusion operator.
    Eigen::VectorXd mass(n);
    std::vector<Eigen::Triplet<double>> trip;
    for (int s = 0; s < 2; ++s) {
        const Side side = s == 0 ? Side::plus : Side::minus;
        const DensitySpec& rho = spec.rho(side);
        const Grid& g = grid[s];
        for (int i = 0; i < g.n[0]; ++i)
            for (int j = 0; j < g.n[1]; ++j) {
                Point p{g.lo[0] + i * h, d == 2 ? g.lo[1] + j * h : 0.0};
                double vol = 1;
                const int idx[2] = {i, j};
                for (int a = 0; a < d; ++a) vol *= (idx[a] == 0 || idx[a] == g.n[a] - 1) ? h / 2 : h;
                sol.nodes[s].push_back(p);
                sol.volume[s].push_back(rho.rho(p) * vol);
                mass(g.id(i, j)) = rho.rho(p) * vol;
                for (int a = 0; a < d; ++a) {
                    if (idx[a] + 1 >= g.n[a]) continue;
                    const int i2 = a == 0 ? i + 1 : i, j2 = a == 1 ? j + 1 : j;
                    Point mid = p;
                    mid[a] += h / 2;
                    // Face area of the dual cell: h^{d-1}, halved on box faces.
                    double area = 1;
                    if (d == 2) {
                        const int b = 1 - a;
                        area = (idx[b] == 0 || idx[b] == g.n[b] - 1) ? h / 2 : h;
                    }
                    const double c = 0.5 * rho.rho(mid) * area / h;
                    const int u = g.id(i, j), v = g.id(i2, j2);
                    trip.emplace_back(u, u, -c);
                    trip.emplace_back(v, v, -c);
                    trip.emplace_back(u, v, c);
                    trip.emplace_back(v, u, c);
                }
            }
    }
    Eigen::SparseMatrix<double> L(n, n);
    L.setFromTriplets(trip.begin(), trip.end());

    // Interface pairs (plus node, minus node, boundary length).
    struct Pair {
        int p, m;
        double ell;
    };
    std::vector<Pair> pairs;
    {
        std::map<std::pair<long, long>, int> minus_at;
        auto key = [&](const Point& x) {
            return std::make_pair(std::lround(x[0] / h * 4), d == 2 ? std::lround(x[1] / h * 4) : 0L);
        };
        for (std::size_t k = 0; k < sol.nodes[1].size(); ++k) minus_at[key(sol.nodes[1][k])] = grid[1].offset + static_cast<int>(k);
        for (const auto& f : interface_boundary_faces(spec)) {
            const int a = f.axis;
            for (std::size_t k = 0; k < sol.nodes[0].size(); ++k) {
                const Point& x = sol.nodes[0][k];
                if (std::abs(x[a] - f.coord) > 1e-9 * h) continue;
                double ell = 1;
                if (d == 2) {
                    const double t = x[1 - a];
                    if (t < f.lo - 1e-9 * h || t > f.hi + 1e-9 * h) continue;
                    ell = (std::abs(t - f.lo) < 1e-9 * h || std::abs(t - f.hi) < 1e-9 * h) ? h / 2 : h;
                }
                auto it = minus_at.find(key(x));
                if (it == minus_at.end()) throw Error("ConfigError", "FD interface nodes do not match across sides");
                pairs.push_back({grid[0].offset + static_cast<int>(k), it->second, ell});
            }
        }
        // Points where two interface faces meet are counted once per face; that is
        // the correct dual length, so no merge is needed.
    }

    auto sink = [&](const Eigen::VectorXd& U) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
        for (const auto& q : pairs) {
            const double r = 0.5 * pb.lambda * q.ell * U(q.p) * U(q.m);
            b(q.p) += r;
            b(q.m) += r;
        }
        return b;
    };
    auto side_loss = [&](const Eigen::VectorXd& U) {
        double s = 0;
        for (const auto& q : pairs) s += 0.5 * pb.lambda * q.ell * U(q.p) * U(q.m);
        return s;
    };

    Eigen::VectorXd U(n);
    for (int s = 0; s < 2; ++s)
        for (std::size_t k = 0; k < sol.nodes[s].size(); ++k)
            U(grid[s].offset + static_cast<int>(k)) = (s == 0 ? pb.f : pb.g)(sol.nodes[s][k]);

    // Output indices.
    std::vector<int> out_step;
    for (double t : output_times) {
        const double k = t / sol.dt;
        const long r = std::lround(k);
        if (r < 0 || r > cfg.time_steps || std::abs(k - r) > 1e-9) throw Error("ConfigError", "output time is not an FD grid time");
        out_step.push_back(static_cast<int>(r));
    }
    sol.output_times = output_times;
    for (int s = 0; s < 2; ++s) sol.values[s].assign(output_times.size(), Eigen::VectorXd());
    sol.mass_loss.assign(output_times.size(), 0.0);
    auto record = [&](int step, double loss) {
        for (std::size_t o = 0; o < out_step.size(); ++o)
            if (out_step[o] == step) {
                for (int s = 0; s < 2; ++s) sol.values[s][o] = U.segment(grid[s].offset, grid[s].size());
                sol.mass_loss[o] = loss;
            }
    };

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool analyzed = false;
    double loss = 0;
    record(0, loss);

    auto theta_step = [&](double dt, double theta) {
        const Eigen::VectorXd U0 = U;
        const Eigen::VectorXd expl = mass.cwiseProduct(U0) / dt + (1 - theta) * (L * U0 - sink(U0));
        Eigen::VectorXd V = U0;
        for (int it = 0;; ++it) {
            if (it >= cfg.newton_max) throw Error("NewtonDivergence", "no convergence at t=" + std::to_string(dt));
            const Eigen::VectorXd F = mass.cwiseProduct(V) / dt - theta * (L * V - sink(V)) - expl;
            std::vector<Eigen::Triplet<double>> jt;
            for (int i = 0; i < n; ++i) jt.emplace_back(i, i, mass(i) / dt);
            for (const auto& q : pairs) {
                const double c = theta * 0.5 * pb.lambda * q.ell;
                jt.emplace_back(q.p, q.p, c * V(q.m));
                jt.emplace_back(q.p, q.m, c * V(q.p));
                jt.emplace_back(q.m, q.m, c * V(q.p));
                jt.emplace_back(q.m, q.p, c * V(q.m));
            }
            Eigen::SparseMatrix<double> J(n, n);
            J.setFromTriplets(jt.begin(), jt.end());
            J -= theta * L;
            J.makeCompressed();
            if (!analyzed) {
                lu.analyzePattern(J);
                analyzed = true;
            }
            lu.factorize(J);
            if (lu.info() != Eigen::Success) throw Error("NewtonDivergence", "singular Jacobian");
            const Eigen::VectorXd delta = lu.solve(F);
            V -= delta;
            if (!V.allFinite()) throw Error("NewtonDivergence", "non-finite iterate");
            sol.max_newton = std::max(sol.max_newton, it + 1);
            if (delta.cwiseAbs().maxCoeff() <= cfg.newton_tol) break;
        }
        loss += dt * (theta * side_loss(V) + (1 - theta) * side_loss(U0));
        U = V;
    };

    // Two steps by four backward-Euler half steps, then Crank-Nicolson.
    for (int k = 1; k <= cfg.time_steps; ++k) {
        if (k <= 2) {
            theta_step(sol.dt / 2, 1.0);
            theta_step(sol.dt / 2, 1.0);
        } else {
            theta_step(sol.dt, 0.5);
        }
        record(k, loss);
    }
    return sol;
}

}  // namespace arw
