#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <gmpxx.h>
#include <json.hpp>

#include "arw/ctrw.hpp"
#include "arw/particles.hpp"
#include "arw/pde.hpp"

namespace arw {

// Falling factorial n (n-1) ... (n-k+1); 0 for k > n.
std::int64_t poisson_poly(int k, int n);

// Sites of the n plus points and m minus points (with repetition).
struct Multiindex {
    std::vector<int> plus, minus;
    int n() const { return static_cast<int>(plus.size()); }
    int m() const { return static_cast<int>(minus.size()); }
};

using Occupation = std::array<std::vector<int>, 2>;

// prod_x A^{eta+(x)}_{xi+(x)} prod_y A^{eta-(y)}_{xi-(y)}.
std::int64_t pairing_count(const Multiindex& xi, const Occupation& eta);

// Leave-one-out jackknife of stat(mean_1, ..., mean_k) where samples[i][r]
// is the i-th per-replica quantity of replica r.
struct JackknifeResult {
    double value = 0.0;
    double stderr_ = 0.0;
};
JackknifeResult jackknife(const std::vector<std::vector<double>>& samples,
                          const std::function<double(const std::vector<double>&)>& stat);

struct CorrelationEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    int replicas = 0;
    double alpha = 0.0;   // prod m(r_i) prod m(s_j)
    nlohmann::json to_json() const;
};

// eps^{d(n+m)} / alpha(xi) * mean A(xi, eta_t) over the ensemble at the given
// snapshot. Errors: InsufficientReplicas (fewer than 2, or stderr > cap).
CorrelationEstimate estimate_gamma(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                   std::size_t snapshot, const Multiindex& xi,
                                   double stderr_cap = std::numeric_limits<double>::infinity());

// Per-replica scaled pairing counts (the summands of estimate_gamma).
std::vector<double> gamma_samples(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                  std::size_t snapshot, const Multiindex& xi);

// Exact gamma at t = 0 for N iid particles per side with site weights
// proportional to u0 m: eps^{d(n+m)}/alpha * (N)_n (N)_m prod w.
double initial_gamma(const ParticleModel& model, const std::array<std::vector<double>, 2>& weights, long N,
                     const Multiindex& xi);
std::vector<double> placement_weights(const ParticleModel& model, Side side,
                                      const std::function<double(const Point&)>& u0);

// sum_{a,b} gamma(a,b,0) p(t, xi, (a,b)) m(a,b) for a product initial law
// (n + m <= 2): the free (no annihilation) transport of the initial correlation.
double transported_initial_gamma(const ParticleModel& model, const std::array<std::vector<double>, 2>& weights,
                                 long N, const Multiindex& xi, double t);

// Configuration space of k unlabelled particles on S sites.
std::vector<std::vector<int>> enumerate_configurations(int sites, int k);

struct DualityReport {
    double max_deviation = 0.0;
    double max_value = 0.0;
    std::size_t xi_states = 0, eta_states = 0;
    nlohmann::json to_json() const;
};

// Both sides of E[A(xi_t, eta_0)/alpha(xi_t)] = E[A(xi_0, eta_t)/alpha(xi_0)]
// for independent walkers, from dense exponentials of the joint configuration
// generators; max over all xi in class (n, m) and eta in class (N, M).
// Errors: StateSpaceTooLarge.
DualityReport duality_check(const Conductances& plus, const Conductances& minus, int n, int m, int N, int M,
                            double t, std::size_t max_states = 4096);

// Annihilation operator K acting on eta -> A(xi, eta), with per-pair rates c_z
// (lambda/eps Psi(z) for the particle model) at site pairs (z+, z-).
struct PairSites {
    std::vector<int> plus, minus;
    std::vector<mpq_class> rate;
    std::size_t size() const { return rate.size(); }
};
PairSites pair_sites(const ParticleModel& model);   // rates converted exactly from doubles
mpq_class k_action_direct(const PairSites& pairs, const Multiindex& xi, const Occupation& eta);
// sum_z A(xi - xi_(z+,z-), eta) K A(xi_(z+,z-), eta)
mpq_class k_action_factorized(const PairSites& pairs, const Multiindex& xi, const Occupation& eta);
// Three-sum form, valid for xi with xi(z+), xi(z-) <= 1 at paired sites.
mpq_class k_action_three_sum(const PairSites& pairs, const Multiindex& xi, const Occupation& eta);
bool in_xi_class(const PairSites& pairs, const Multiindex& xi);

struct KActionReport {
    std::size_t cases = 0;            // (xi, eta) pairs with xi in the class
    std::size_t mismatches_three = 0, mismatches_factorized = 0;
    nlohmann::json to_json() const;
};
// Exhaustive over xi in class (n, m) restricted to the xi-class and eta in (N, M).
KActionReport k_action_check(const PairSites& pairs, int sites_plus, int sites_minus, int n, int m, int N, int M);

struct ChaosRow {
    int n = 0, m = 0;
    double t = 0.0;
    std::size_t probe = 0;
    double gamma = 0.0, stderr_ = 0.0, target = 0.0, gap = 0.0;
    nlohmann::json to_json() const;
};

// Probe for chaos: a plus site and a minus site with their continuum points.
struct ChaosProbe {
    int site_plus = 0, site_minus = 0;
    Point x_plus{}, x_minus{};
};

// |gamma^{(n,m)} - prod u+ prod u-| for (n,m) in {(1,0),(0,1),(2,0),(1,1)}
// at each probe and snapshot; (2,0) uses the plus site twice. The PDE times
// must be grid times of the solution.
std::vector<ChaosRow> chaos_gap(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                const std::vector<double>& snapshot_times, const PicardSolution& pde,
                                const std::vector<ChaosProbe>& probes);

// gamma^{(1,1)} - gamma^{(1,0)} gamma^{(0,1)} with jackknife error: the part
// of the (1,1) gap not explained by one-point (hydrodynamic) errors.
JackknifeResult chaos_excess(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                             std::size_t snapshot, const ChaosProbe& probe);

// Residual of the limiting hierarchy for (n,m) in {(1,0),(1,1)} with the
// product ansatz from the PDE solution, at grid time index k and the given
// probe points; time quadrature is a graded composite midpoint rule with
// `panels` panels (nodes clustered at the upper limit, exponent 2),
// independent of the solver's product integration.
double hierarchy_residual(const PicardSolution& pde, int n, int m, int k, const std::vector<ChaosProbe>& probes,
                          int panels);

}  // namespace arw
