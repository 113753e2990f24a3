#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "arw/ctrw.hpp"
#include "arw/geometry.hpp"
#include "arw/rng.hpp"

namespace arw {


// Immutable description of the two-species system at one level eps.
struct ParticleModel {
    int d = 0;
    double eps = 0.0;
    double lambda = 0.0;
    double jump_rate = 0.0;                      // d / eps^2 per particle
    std::array<const LatticeGraph*, 2> lat{};
    std::array<const Conductances*, 2> cond{};
    const InterfaceDiscretization* iface = nullptr;
    std::vector<double> psi;                     // Psi_eps(z)
    std::vector<double> pair_rate;               // (lambda / eps) Psi_eps(z)
    std::array<bool, 2> uniform_hops{};
    std::array<std::vector<double>, 2> hop_cdf;  // per CSR slot, cumulative within a vertex
    std::array<std::vector<int>, 2> site_z_begin, site_z;  // interface points paired to each site

    std::size_t interface_size() const { return psi.size(); }
};

ParticleModel make_particle_model(const LatticeGraph& lat_plus, const Conductances& cond_plus,
                                  const LatticeGraph& lat_minus, const Conductances& cond_minus,
                                  const InterfaceDiscretization& iface, double lambda);

// Binary tree of per-interface-point annihilation rates. Parents are always
// recomputed from their children, so the root equals a from-scratch rebuild
// bit for bit.
class RateTree {
public:
    void reset(std::size_t n);
    void set(std::size_t i, double v);
    double get(std::size_t i) const { return tree_[base_ + i]; }
    double total() const { return tree_.empty() ? 0.0 : tree_[1]; }
    std::size_t sample(double u) const;  // u in [0, total)
    std::size_t size() const { return n_; }

private:
    std::size_t n_ = 0, base_ = 1;
    std::vector<double> tree_;
};

// Test functions for the martingale diagnostic, one value per lattice site.
struct MartingaleSpec {
    std::array<std::vector<double>, 2> phi;     // phi on each side's sites
    std::array<std::vector<double>, 2> A_phi;   // A_eps phi (exact from conductances)
    bool enabled() const { return !phi[0].empty(); }
};

MartingaleSpec make_martingale_spec(const ParticleModel& model,
                                    const std::function<double(const Point&)>& phi_plus,
                                    const std::function<double(const Point&)>& phi_minus);

struct ParticleState {
    std::array<std::vector<int>, 2> eta;   // occupation numbers per site
    std::array<std::vector<int>, 2> pos;   // sites of alive particles (unlabelled order)
    RateTree rates;
    double clock = 0.0;
    long N = 0;                            // initial particles per side
    std::uint64_t jumps = 0, annihilations = 0;
    Rng rng;

    // Martingale bookkeeping for each side.
    std::array<double, 2> s_phi{}, s_phi0{}, s_Aphi{}, s_J{}, compensator{};
    std::array<double, 2> sup_m2{};

    long alive(Side s) const { return static_cast<long>(pos[side_index(s)].size()); }
};

// N = eps^{-d} particles per side (strict unless scaling_override > 0), iid
// over sites with weights u0(x) m(x). Errors: BadScaling, ConfigError.
ParticleState init_state(const ParticleModel& model, const std::function<double(const Point&)>& u0_plus,
                         const std::function<double(const Point&)>& u0_minus, std::uint64_t stream,
                         long scaling_override = 0, const MartingaleSpec* mart = nullptr);

// Explicit occupation numbers (N is taken from the plus side's total unless given).
ParticleState init_state_from_counts(const ParticleModel& model, const std::vector<int>& eta_plus,
                                     const std::vector<int>& eta_minus, std::uint64_t stream, long N = 0,
                                     const MartingaleSpec* mart = nullptr);

struct Snapshot {
    double t = 0.0;
    std::array<std::vector<int>, 2> eta;
    std::array<long, 2> alive{};
    double flux = 0.0;                      // <J^{N,+}_t, 1> = <J^{N,-}_t, 1>
    std::array<double, 2> martingale{};     // M_phi(t) per side
};

struct SnapshotSeries {
    std::vector<Snapshot> snapshots;
    std::vector<std::pair<double, int>> annihilation_log;  // (time, z), optional
    std::array<double, 2> sup_m2{};          // sup_{t <= t_end} M_phi(t)^2 at event times
    std::uint64_t jumps = 0, annihilations = 0;
};

struct AdvanceOptions {
    bool record_counts = true;
    bool log_annihilations = false;
    std::uint64_t consistency_every = 0;   // recompute rates from scratch every k events (0 = off)
};

// Exact event-driven simulation up to t_end with snapshots (left limits) at
// the sorted schedule. Errors: ConfigError (unsorted schedule or t_end < clock),
// RateMismatch (consistency check failure).
SnapshotSeries advance(const ParticleModel& model, ParticleState& state, double t_end,
                       const std::vector<double>& schedule, const MartingaleSpec* mart = nullptr,
                       const AdvanceOptions& opt = {});

// Per-site mass 1/N per alive particle.
std::vector<double> empirical_measure(const ParticleState& state, Side side);

// eps^{d-1} sum_z Psi(z) eta+(z+) eta-(z-) phi(z_side).
double annihilation_flux(const ParticleModel& model, const std::array<std::vector<int>, 2>& eta, Side side,
                         const std::function<double(const Point&)>& phi);
double annihilation_flux_total(const ParticleModel& model, const std::array<std::vector<int>, 2>& eta);

// Recompute the full rate tree from the occupation numbers.
void rebuild_rates(const ParticleModel& model, ParticleState& state);

struct EnsembleConfig {
    int replicas = 1;
    std::uint64_t seed = 1;
    int threads = 1;
    double t_end = 1.0;
    std::vector<double> schedule;
    long scaling_override = 0;
    AdvanceOptions advance;
};

// Replica r uses stream_key(seed, r); results are ordered by replica index.
std::vector<SnapshotSeries> run_ensemble(const ParticleModel& model, const EnsembleConfig& cfg,
                                         const std::function<double(const Point&)>& u0_plus,
                                         const std::function<double(const Point&)>& u0_minus,
                                         const MartingaleSpec* mart = nullptr);

}  // namespace arw
