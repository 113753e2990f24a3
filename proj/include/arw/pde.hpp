#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "arw/ctrw.hpp"
#include "arw/geometry.hpp"

namespace arw {

using Field0 = std::function<double(const Point&)>;

// Piece of a box side carrying boundary cells: hyperplane x[axis] = coord,
// tangential range [lo, hi] (ignored for d = 1).
struct BoundaryFace {
    int axis = 0;
    double coord = 0.0;
    double lo = 0.0, hi = 0.0;
};

struct BoundaryCells {
    int d = 0;
    std::vector<Point> centers;
    std::vector<double> lo, hi;     // tangential extent (d = 2)
    std::vector<double> widths;     // sigma of the cell (1 for d = 1)
    std::vector<int> face;          // index into faces
    std::vector<BoundaryFace> faces;
    std::size_t size() const { return centers.size(); }
};

// Uniform cells of width <= 1/cells_per_unit on each face.
BoundaryCells make_boundary_cells(int d, const std::vector<BoundaryFace>& faces, int cells_per_unit);
std::vector<BoundaryFace> interface_boundary_faces(const DomainSpec& spec);
std::vector<BoundaryFace> all_box_faces(const AxisBox& box);

// Product-integration nodes in the lag variable r = t - s on a uniform grid of
// step tau: lag 0 uses r = tau v^2 on geometric panels (resolving the r^{-1/2}
// singularity), later lags use Gauss-Legendre.
struct LagNode {
    int lag = 0;
    double r = 0.0;
    double weight = 0.0;   // dr-weight including the Jacobian
    double v = 0.0;        // position inside the lag interval, r = (lag + v) tau
};
std::vector<LagNode> lag_nodes(double tau, int lags);

// Heat kernel of one side integrated over boundary cells:
// K(p, c) = int_{cell c} p(r, x_p, z) sigma(dz), and the free evolution P_t f.
class SideKernel {
public:
    virtual ~SideKernel() = default;
    virtual std::string source() const = 0;
    // Calls visit(node_index, K) for every node in order of increasing r.
    virtual void for_each_node(const std::vector<Point>& targets, const std::vector<LagNode>& nodes,
                               const std::function<void(std::size_t, const Eigen::MatrixXd&)>& visit) const = 0;
    // P_t f at the targets for each of the sorted times.
    virtual std::vector<Eigen::VectorXd> free_evolution(const std::vector<Point>& targets,
                                                        const std::vector<double>& times) const = 0;
    // int_D (P_t f) rho dx at t (for mass accounting).
    virtual double free_mass(double t) const = 0;
    // int_D p(r, x, zeta_c) rho(x) dx per node (rows) and cell (columns).
    virtual Eigen::MatrixXd kernel_mass(const std::vector<LagNode>& nodes) const = 0;
    const BoundaryCells& cells() const { return cells_; }

protected:
    BoundaryCells cells_;
};

// Analytic Neumann kernel on a single box with rho == 1; f expanded in
// `modes` cosine modes per axis.
std::unique_ptr<SideKernel> make_analytic_kernel(const AxisBox& box, const BoundaryCells& cells, const Field0& f,
                                                 int modes = 64);

// Lattice kernel p^eps at level j (general rho, unions of boxes). Cells are
// the interface points of the level-j discretization; targets must be
// lattice vertices.
std::unique_ptr<SideKernel> make_lattice_kernel(const DomainSpec& spec, Side side, int j, const Field0& f);

struct PdeProblem {
    DomainSpec spec;
    Field0 f, g;            // initial data on the plus / minus side
    double lambda = 0.0;    // coupling constant of the equations
    double T = 1.0;
};

struct PicardConfig {
    int time_steps = 128;
    int cells_per_unit = 64;
    int modes = 64;
    int max_iterations = 200;
    double tolerance = 1e-12;
    int lattice_j = 0;      // > 0 forces the lattice kernel at this level
};

struct PicardSolution {
    double lambda = 0.0;
    double tau = 0.0;
    std::vector<double> times;                       // t_k = k tau, k = 0..M
    std::array<std::shared_ptr<SideKernel>, 2> kernel;
    std::array<Eigen::MatrixXd, 2> trace;            // (M+1) x cells: u(t_k, zeta_c)
    std::string kernel_source;
    double window = 0.0;
    double boundary_constant = 0.0;                  // fitted C1
    double contraction_estimate = 0.0;               // C1 lambda sqrt(T0) max(|f|,|g|)
    std::vector<int> iterations;                     // per window
    std::vector<double> contraction_ratios;          // successive-difference ratios
    nlohmann::json metadata() const;

    int steps() const { return static_cast<int>(times.size()) - 1; }
    // Index k with t_k == t (throws ConfigError if t is not a grid time).
    int time_index(double t) const;
    // u_side(t_k, x) for the given points.
    Eigen::VectorXd evaluate(Side side, int k, const std::vector<Point>& pts) const;
    // h(t_k, c) = u+ u- at interface cells.
    double interface_product(int k, std::size_t c) const;
};

// Coupled integral equations solved by windowed alternating fixed point
// (u+, u-) <- (S+ u-, S- u+), each S solved exactly on the time grid.
// Errors: NoConvergence, ConfigError.
PicardSolution solve_coupled_picard(const PdeProblem& problem, const PicardConfig& cfg = {});

// Single-domain Robin problem u = P_t phi - (1/2) int int p g u on the given
// boundary faces of a rho == 1 box, by time marching on the Volterra system.
struct RobinSolution {
    double tau = 0.0;
    std::vector<double> times;
    std::shared_ptr<SideKernel> kernel;
    Eigen::MatrixXd trace;
    Eigen::MatrixXd g_values;   // g(t_k, zeta_c)
    Eigen::VectorXd evaluate(int k, const std::vector<Point>& pts) const;
};
RobinSolution solve_robin(const AxisBox& box, const std::vector<BoundaryFace>& faces, const Field0& phi,
                          const std::function<double(double, const Point&)>& g, double T, int time_steps = 128,
                          int cells_per_unit = 32);

// Mass accounting at grid time t_k:
//   left  = int u_side(t_k) rho dx - int u_side(0) rho dx by spatial quadrature
//   right = -(lambda/2) int_0^t sum_c h sigma ds (trapezoid in time)
struct MassBalance {
    double left_plus = 0.0, left_minus = 0.0, right = 0.0;
    double max_error() const;
};
MassBalance mass_balance(const PicardSolution& sol, int k);

// (1/2) int_I u+ u- phi dsigma at grid time t_k.
double flux_functional(const PicardSolution& sol, int k, const Field0& phi);

// Finite-difference cross-check: vertex-centred grid with half control
// volumes on box faces, Crank-Nicolson with a backward-Euler start, Newton on
// the interface nonlinearity. Requires one box per side with side lengths
// multiple of the spacing.
struct FdConfig {
    int cells_per_unit = 64;
    int time_steps = 512;
    double newton_tol = 1e-10;
    int newton_max = 20;
};

struct FdSolution {
    double h = 0.0, dt = 0.0;
    std::array<std::vector<Point>, 2> nodes;
    std::array<std::vector<double>, 2> volume;   // rho_i V_i
    std::vector<double> output_times;
    std::array<std::vector<Eigen::VectorXd>, 2> values;  // per output time
    std::vector<double> mass_loss;               // (lambda/2) int sum l u+ u- dt per output time
    int max_newton = 0;
};

// Errors: NewtonDivergence, ConfigError.
FdSolution solve_coupled_fd(const PdeProblem& problem, const std::vector<double>& output_times,
                            const FdConfig& cfg = {});

}  // namespace arw
