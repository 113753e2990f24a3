#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "arw/geometry.hpp"

namespace arw {

// Drift-carrying conductances of the eps-approximation walk. Per-edge
// quantities are stored per CSR slot of the lattice adjacency.
struct Conductances {
    int d = 0;
    double eps = 0.0;
    double holding_rate = 0.0;           // d / eps^2
    std::vector<int> nbr_begin, nbr;     // copy of the lattice adjacency
    std::vector<double> mu;              // mu_xy per slot (symmetric)
    std::vector<double> hop;             // p_xy per slot
    std::vector<double> m;               // m_eps(x) = (eps^2/d) sum_y mu_xy

    std::size_t size() const { return m.size(); }
    double total_mass() const;
    // (A_eps f)(x) = (d/eps^2) sum_y p_xy (f(y) - f(x)).
    std::vector<double> generator_apply(const std::vector<double>& f) const;
};

// Errors: NonpositiveWeight when an interior weight is <= 0.
Conductances build_conductances(const LatticeGraph& lat, const DensitySpec& rho);

// Weight of the edge v -> w computed from the interior endpoint v.
double interior_conductance(const LatticeGraph& lat, const DensitySpec& rho, int v, int w);

struct KernelMatrix {
    double t = 0.0;
    Eigen::MatrixXd values;   // p^eps(t, x, y)
    std::vector<double> m;
    double tolerance = 0.0;
    std::size_t terms = 0;    // highest Poisson index used
};

constexpr std::size_t kDenseVertexGuard = 20000;

// Dense p^eps(t,.,.) by uniformization at rate d/eps^2.
// Errors: ToleranceNotReached, ResourceGuard (vertex count above the guard).
KernelMatrix heat_kernel(const Conductances& cond, double t, double tol = 1e-12);

// Rows p^eps(t_k, x_i, .) for the given sources at each of the sorted times.
// Result[k] is a (sources x vertices) matrix.
std::vector<Eigen::MatrixXd> heat_kernel_rows(const Conductances& cond, const std::vector<int>& sources,
                                              const std::vector<double>& times, double tol = 1e-12);

// (P_t f)(x) = sum_y p^eps(t,x,y) f(y) m(y) for each sorted time.
std::vector<Eigen::VectorXd> semigroup_apply(const Conductances& cond, const Eigen::VectorXd& f,
                                             const std::vector<double>& times, double tol = 1e-12);

// Repeated application of the semigroup to blocks of column vectors:
// X <- P_dt X, where columns are functions on vertices (equivalently
// densities against m, by reversibility).
// With forward = true the transpose acts instead: columns are measures and
// X <- P_dt^T X is the forward (Fokker-Planck) evolution.
class Propagator {
public:
    explicit Propagator(const Conductances& cond, double tol = 1e-12, bool forward = false);
    void advance(Eigen::MatrixXd& X, double dt) const;

private:
    Eigen::SparseMatrix<double, Eigen::RowMajor> P_;
    double rate_ = 0.0, tol_ = 0.0;
};

// Kernel invariants on a source subset S, without forming the dense kernel:
// forward rows p(t,x,.) (x in S) from measures, backward columns p(t,.,y)
// (y in S) from functions. All statistics are absolute deviations.
struct KernelInvariants {
    std::size_t vertices = 0, sources = 0;
    double s = 0.0, t = 0.0;
    double symmetry = 0.0;      // max |p(r,x,z) - p(r,z,x)|, x in S, z any, r in {t, s+t}
    double positivity = 0.0;    // max negative part over all computed entries
    double conservation = 0.0;  // max |sum_z p(r,x,z) m(z) - 1|
    double chapman_kolmogorov = 0.0;  // max |p(s+t,x,y) - sum_z p(s,x,z) m(z) p(t,z,y)|, x,y in S
    double sup_p = 0.0;
    nlohmann::json to_json() const;
};
KernelInvariants kernel_invariants(const Conductances& cond, const std::vector<int>& sources, double s, double t,
                                   double tol = 1e-12);

// Poisson(lambda) weights on [first, first + w.size()) whose neglected mass
// is at most tol. Errors: ToleranceNotReached beyond the term cap.
struct PoissonWeights {
    std::size_t first = 0;
    std::vector<double> w;
    std::size_t last() const { return first + w.size() - 1; }
};
PoissonWeights poisson_weights(double lambda, double tol);

// Reflected Brownian motion (generator Delta/2) on an interval [0, L]:
// transition density against Lebesgue measure, and its integral over [y0, y1].
double neumann_1d(double L, double t, double x, double y);
double neumann_1d_cell(double L, double t, double x, double y0, double y1);

struct AxisBox {
    int d = 0;
    std::array<double, kMaxDim> lo{0, 0}, hi{0, 0};
};

// Neumann heat kernel of Delta/2 on a box, product of 1D expansions.
double analytic_neumann_kernel(const AxisBox& box, double t, const Point& x, const Point& y);

AxisBox box_of(const DomainSpec& spec, Side side);  // requires a single box

// One verification record {check, j, statistic, bound, pass}.
struct CheckRecord {
    std::string check;
    int j = 0;
    double statistic = 0.0;
    double bound = 0.0;
    bool pass = false;
    nlohmann::json to_json() const;
};

struct LcltResult {
    double gap = 0.0;     // sup |p^eps - p| over the sampled grid
    double sup_p = 0.0;   // sup p over the same grid
    int sources = 0, times = 0;
};

// Sup over a sampled (t, x, y) grid of |p^(2^-j) - p| on a single rho == 1
// box (side plus of the spec).
LcltResult lclt_gap(const DomainSpec& spec, int j, double a, double b, int n_times = 7, int max_sources = 25);

struct BoundarySumResult {
    double fitted_C = 0.0;  // smallest C with eps^{d-1} sum_{dD} p <= C/(eps v sqrt t)
    std::vector<std::array<double, 3>> probes;  // (t, x_id, value)
};
BoundarySumResult boundary_sum_check(const LatticeGraph& lat, const Conductances& cond,
                                     const std::vector<double>& times, const std::vector<int>& sources);

struct GaussianFit {
    double upper_C1 = 0.0, upper_C2 = 0.0;
    double lower_C1 = 0.0, lower_C2 = 0.0;
};
// Grid search over log-spaced C2 candidates for the two-sided bounds on
// t in [eps, T]; for a fixed C2 the extremal C1 is computed exactly over the
// sample. Pass fixed_upper_C2/fixed_lower_C2 > 0 to pin C2 (for cross-j
// comparison). Errors: FitFailure.
GaussianFit gaussian_bound_fit(const LatticeGraph& lat, const Conductances& cond, double T,
                               double fixed_upper_C2 = 0.0, double fixed_lower_C2 = 0.0);

struct SpectralReport {
    double generator_gap = 0.0;   // smallest positive eigenvalue of -A_eps in l^2(m)
    double poincare_gap = 0.0;    // inf D(f)/Var_pi(f) = m(D) * generator_gap
    double cheeger_I = 0.0;       // min_{pi(A)<=1/2} Q(dA)/pi(A), exhaustive
    double cheeger_bound = 0.0;   // (d m(D)/eps^2) I^2/8
    bool cheeger_ok = false;
    double mixing_max_ratio = 0.0;  // max over probes of |p - 1/m(D)| / envelope
    double mixing_final = 0.0;      // max |p - 1/m(D)| at the largest probe time
    bool mixing_ok = false;
};
// Errors: TooLargeForBruteForce (more than 16 vertices).
SpectralReport spectral_checks(const Conductances& cond);

// int_0^t sum_z p^eps(theta, x, z_side) sigma_eps(z) dtheta by composite
// midpoint in theta (panels >= 64).
double discrete_local_time(const Conductances& cond, const InterfaceDiscretization& iface, Side side,
                           int x, double t, int panels = 64);

// Continuum counterpart int_0^t int_I p(theta, x, z) sigma(dz) dtheta on a
// single rho == 1 box, by graded-panel Gauss quadrature in theta and exact
// cell integrals along the face.
double continuum_local_time(const AxisBox& box, const DomainSpec& spec, const Point& x, double t);

// Finite-difference modulus of p^eps in x and t at a fixed time, used as a
// cross-j regression envelope for Holder continuity.
struct HolderModulus {
    double space = 0.0;  // max |p(t,x,y) - p(t,x',y)| / |x - x'| over lattice neighbours
    double time = 0.0;   // max |p(t,x,y) - p(t+h,x,y)| / sqrt(h)
};
HolderModulus holder_modulus(const Conductances& cond, double t, double h, const std::vector<int>& sources);

}  // namespace arw
