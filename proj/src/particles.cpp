#include "arw/particles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "arw/error.hpp"

namespace arw {

namespace {

constexpr double kScalingRelaxation = 0.5;  // allowed |N eps^d - 1| for explicit overrides

void build_site_lists(const std::vector<int>& sites, std::size_t n, std::vector<int>& begin, std::vector<int>& list) {
    begin.assign(n + 1, 0);
    for (int s : sites) ++begin[s + 1];
    for (std::size_t i = 0; i < n; ++i) begin[i + 1] += begin[i];
    list.assign(sites.size(), 0);
    std::vector<int> fill(begin.begin(), begin.end() - 1);
    for (std::size_t z = 0; z < sites.size(); ++z) list[fill[sites[z]]++] = static_cast<int>(z);
}

const std::vector<int>& paired(const InterfaceDiscretization& iface, int s) {
    return s == 0 ? iface.site_plus : iface.site_minus;
}

double pair_value(const ParticleModel& m, const ParticleState& st, std::size_t z) {
    return m.pair_rate[z] * static_cast<double>(st.eta[0][m.iface->site_plus[z]]) *
           static_cast<double>(st.eta[1][m.iface->site_minus[z]]);
}

// Simulation context for one call of advance().
struct Stepper {
    const ParticleModel& model;
    ParticleState& st;
    const MartingaleSpec* mart;
    double comp_time;

    void integrate_to(double t) {
        if (mart && t > comp_time) {
            const double dt = t - comp_time;
            for (int s = 0; s < 2; ++s) st.compensator[s] += (st.s_Aphi[s] - st.s_J[s]) / st.N * dt;
        }
        comp_time = std::max(comp_time, t);
    }

    double martingale(int s) const { return (st.s_phi[s] - st.s_phi0[s]) / st.N - st.compensator[s]; }

    void update_sup() {
        for (int s = 0; s < 2; ++s) st.sup_m2[s] = std::max(st.sup_m2[s], martingale(s) * martingale(s));
    }

    void refresh_site(int s, int x) {
        const auto& b = model.site_z_begin[s];
        for (int k = b[x]; k < b[x + 1]; ++k) {
            const int z = model.site_z[s][k];
            const double nv = pair_value(model, st, z);
            if (mart) {
                const double old = st.rates.get(z);
                st.s_J[0] += (nv - old) * mart->phi[0][model.iface->site_plus[z]];
                st.s_J[1] += (nv - old) * mart->phi[1][model.iface->site_minus[z]];
            }
            st.rates.set(z, nv);
        }
    }

    void jump() {
        const std::size_t np = st.pos[0].size(), nm = st.pos[1].size();
        std::size_t idx = st.rng.below(np + nm);
        const int s = idx < np ? 0 : 1;
        if (s == 1) idx -= np;
        const int x = st.pos[s][idx];
        const Conductances& c = *model.cond[s];
        const int b = c.nbr_begin[x], deg = c.nbr_begin[x + 1] - b;
        int slot;
        if (model.uniform_hops[s]) {
            slot = b + static_cast<int>(st.rng.below(deg));
        } else {
            const double u = st.rng.uniform();
            slot = b;
            while (slot < b + deg - 1 && u >= model.hop_cdf[s][slot]) ++slot;
        }
        const int y = c.nbr[slot];
        st.pos[s][idx] = y;
        --st.eta[s][x];
        ++st.eta[s][y];
        if (mart) {
            st.s_phi[s] += mart->phi[s][y] - mart->phi[s][x];
            st.s_Aphi[s] += mart->A_phi[s][y] - mart->A_phi[s][x];
        }
        refresh_site(s, x);
        refresh_site(s, y);
        ++st.jumps;
    }

    int annihilate() {
        const std::size_t z = st.rates.sample(st.rng.uniform() * st.rates.total());
        const int sites[2] = {model.iface->site_plus[z], model.iface->site_minus[z]};
        for (int s = 0; s < 2; ++s) {
            auto& p = st.pos[s];
            auto it = std::find(p.begin(), p.end(), sites[s]);
            if (it == p.end()) throw Error("RateMismatch", "annihilation at an empty site");
            *it = p.back();
            p.pop_back();
            --st.eta[s][sites[s]];
            if (mart) {
                st.s_phi[s] -= mart->phi[s][sites[s]];
                st.s_Aphi[s] -= mart->A_phi[s][sites[s]];
            }
        }
        refresh_site(0, sites[0]);
        refresh_site(1, sites[1]);
        ++st.annihilations;
        return static_cast<int>(z);
    }
};

void init_martingale(const ParticleModel& model, ParticleState& st, const MartingaleSpec* mart) {
    st.s_phi = st.s_phi0 = st.s_Aphi = st.s_J = st.compensator = st.sup_m2 = {0.0, 0.0};
    if (!mart) return;
    for (int s = 0; s < 2; ++s) {
        if (mart->phi[s].size() != model.lat[s]->size()) throw Error("ConfigError", "test function size mismatch");
        for (int x : st.pos[s]) {
            st.s_phi[s] += mart->phi[s][x];
            st.s_Aphi[s] += mart->A_phi[s][x];
        }
    }
    st.s_phi0 = st.s_phi;
    for (std::size_t z = 0; z < model.interface_size(); ++z) {
        st.s_J[0] += st.rates.get(z) * mart->phi[0][model.iface->site_plus[z]];
        st.s_J[1] += st.rates.get(z) * mart->phi[1][model.iface->site_minus[z]];
    }
}

void fill_positions(ParticleState& st) {
    for (int s = 0; s < 2; ++s) {
        st.pos[s].clear();
        for (std::size_t x = 0; x < st.eta[s].size(); ++x)
            for (int k = 0; k < st.eta[s][x]; ++k) st.pos[s].push_back(static_cast<int>(x));
    }
}

}  // namespace

ParticleModel make_particle_model(const LatticeGraph& lat_plus, const Conductances& cond_plus,
                                  const LatticeGraph& lat_minus, const Conductances& cond_minus,
                                  const InterfaceDiscretization& iface, double lambda) {
    if (lat_plus.eps != lat_minus.eps || iface.eps != lat_plus.eps)
        throw Error("ConfigError", "lattices and interface must share eps");
    if (lambda < 0) throw Error("ConfigError", "lambda must be nonnegative");
    ParticleModel m;
    m.d = lat_plus.d;
    m.eps = lat_plus.eps;
    m.lambda = lambda;
    m.jump_rate = m.d / (m.eps * m.eps);
    m.lat = {&lat_plus, &lat_minus};
    m.cond = {&cond_plus, &cond_minus};
    m.iface = &iface;
    const double e_dm1 = std::pow(m.eps, m.d - 1), e_2d = std::pow(m.eps, 2 * m.d);
    for (std::size_t z = 0; z < iface.size(); ++z) {
        const double psi = iface.weights[z] / e_dm1 * e_2d /
                           (cond_plus.m[iface.site_plus[z]] * cond_minus.m[iface.site_minus[z]]);
        m.psi.push_back(psi);
        m.pair_rate.push_back(lambda / m.eps * psi);
    }
    for (int s = 0; s < 2; ++s) {
        const Conductances& c = *m.cond[s];
        bool uniform = true;
        m.hop_cdf[s].assign(c.hop.size(), 0.0);
        for (std::size_t x = 0; x < c.size(); ++x) {
            double acc = 0;
            const int b = c.nbr_begin[x], e = c.nbr_begin[x + 1];
            for (int k = b; k < e; ++k) {
                acc += c.hop[k];
                m.hop_cdf[s][k] = acc;
                if (c.mu[k] != c.mu[b]) uniform = false;
            }
        }
        m.uniform_hops[s] = uniform;
        build_site_lists(paired(iface, s), c.size(), m.site_z_begin[s], m.site_z[s]);
    }
    return m;
}

void RateTree::reset(std::size_t n) {
    n_ = n;
    base_ = 1;
    while (base_ < std::max<std::size_t>(n, 1)) base_ <<= 1;
    tree_.assign(2 * base_, 0.0);
}

void RateTree::set(std::size_t i, double v) {
    std::size_t k = base_ + i;
    tree_[k] = v;
    for (k >>= 1; k >= 1; k >>= 1) tree_[k] = tree_[2 * k] + tree_[2 * k + 1];
}

std::size_t RateTree::sample(double u) const {
    std::size_t k = 1;
    while (k < base_) {
        const double left = tree_[2 * k];
        if (u < left || tree_[2 * k + 1] <= 0) {
            k = 2 * k;
        } else {
            u -= left;
            k = 2 * k + 1;
        }
    }
    std::size_t i = k - base_;
    // Guard against rounding landing on a zero-rate leaf.
    if (i >= n_ || tree_[k] <= 0) {
        for (std::size_t j = 0; j < n_; ++j)
            if (tree_[base_ + j] > 0) i = j;
    }
    return i;
}

MartingaleSpec make_martingale_spec(const ParticleModel& model,
                                    const std::function<double(const Point&)>& phi_plus,
                                    const std::function<double(const Point&)>& phi_minus) {
    MartingaleSpec ms;
    for (int s = 0; s < 2; ++s) {
        const auto& f = s == 0 ? phi_plus : phi_minus;
        const LatticeGraph& lat = *model.lat[s];
        ms.phi[s].resize(lat.size());
        for (std::size_t x = 0; x < lat.size(); ++x) ms.phi[s][x] = f(lat.coords[x]);
        ms.A_phi[s] = model.cond[s]->generator_apply(ms.phi[s]);
    }
    return ms;
}

void rebuild_rates(const ParticleModel& model, ParticleState& st) {
    st.rates.reset(model.interface_size());
    for (std::size_t z = 0; z < model.interface_size(); ++z) st.rates.set(z, pair_value(model, st, z));
}

ParticleState init_state_from_counts(const ParticleModel& model, const std::vector<int>& eta_plus,
                                     const std::vector<int>& eta_minus, std::uint64_t stream, long N,
                                     const MartingaleSpec* mart) {
    if (eta_plus.size() != model.lat[0]->size() || eta_minus.size() != model.lat[1]->size())
        throw Error("ConfigError", "occupation vector size mismatch");
    ParticleState st;
    st.eta = {eta_plus, eta_minus};
    for (int s = 0; s < 2; ++s)
        for (int v : st.eta[s])
            if (v < 0) throw Error("ConfigError", "negative occupation number");
    fill_positions(st);
    st.N = N > 0 ? N : std::max<long>(1, static_cast<long>(st.pos[0].size()));
    st.rng.reseed(stream);
    rebuild_rates(model, st);
    init_martingale(model, st, mart);
    return st;
}

ParticleState init_state(const ParticleModel& model, const std::function<double(const Point&)>& u0_plus,
                         const std::function<double(const Point&)>& u0_minus, std::uint64_t stream,
                         long scaling_override, const MartingaleSpec* mart) {
    const double strict = std::pow(model.eps, -model.d);
    long N = std::lround(strict);
    if (scaling_override > 0) {
        if (std::abs(scaling_override / strict - 1.0) > kScalingRelaxation)
            throw Error("BadScaling", "N eps^d = " + std::to_string(scaling_override / strict));
        N = scaling_override;
    }
    Rng rng(stream);
    std::array<std::vector<int>, 2> eta;
    for (int s = 0; s < 2; ++s) {
        const LatticeGraph& lat = *model.lat[s];
        const Conductances& c = *model.cond[s];
        const auto& u0 = s == 0 ? u0_plus : u0_minus;
        std::vector<double> cdf(lat.size());
        double acc = 0;
        for (std::size_t x = 0; x < lat.size(); ++x) {
            const double w = u0(lat.coords[x]);
            if (!(w >= 0) || !std::isfinite(w)) throw Error("ConfigError", "initial density must be finite and >= 0");
            acc += w * c.m[x];
            cdf[x] = acc;
        }
        if (!(acc > 0)) throw Error("ConfigError", "initial density has zero mass");
        eta[s].assign(lat.size(), 0);
        for (long i = 0; i < N; ++i) {
            const double u = rng.uniform() * acc;
            std::size_t x = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
            if (x >= lat.size()) x = lat.size() - 1;
            ++eta[s][x];
        }
    }
    // The dynamics continue on the same stream after placement.
    ParticleState st = init_state_from_counts(model, eta[0], eta[1], 0, N, mart);
    st.rng = rng;
    return st;
}

SnapshotSeries advance(const ParticleModel& model, ParticleState& st, double t_end,
                       const std::vector<double>& schedule, const MartingaleSpec* mart, const AdvanceOptions& opt) {
    if (t_end < st.clock) throw Error("ConfigError", "t_end before current clock");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (schedule[i] < st.clock) throw Error("ConfigError", "snapshot time before current clock");
        if (i > 0 && !(schedule[i] > schedule[i - 1])) throw Error("ConfigError", "schedule must be strictly increasing");
    }
    SnapshotSeries out;
    Stepper step{model, st, mart, st.clock};
    const double q = model.jump_rate;
    std::size_t next_snap = 0;
    std::uint64_t since_check = 0;

    auto record = [&](double t) {
        step.integrate_to(t);
        Snapshot sn;
        sn.t = t;
        if (opt.record_counts) sn.eta = st.eta;
        sn.alive = {st.alive(Side::plus), st.alive(Side::minus)};
        sn.flux = annihilation_flux_total(model, st.eta);
        if (mart) sn.martingale = {step.martingale(0), step.martingale(1)};
        out.snapshots.push_back(std::move(sn));
    };

    while (true) {
        const double n = static_cast<double>(st.pos[0].size() + st.pos[1].size());
        const double Lambda = st.rates.total();
        const double R = q * n + Lambda;
        const double t_next = R > 0 ? st.clock + st.rng.exponential(R) : std::numeric_limits<double>::infinity();
        while (next_snap < schedule.size() && schedule[next_snap] <= t_end && schedule[next_snap] < t_next)
            record(schedule[next_snap++]);
        if (t_next > t_end) {
            step.integrate_to(t_end);
            st.clock = t_end;
            break;
        }
        step.integrate_to(t_next);
        st.clock = t_next;
        if (st.rng.uniform() * R < q * n) {
            step.jump();
        } else {
            const int z = step.annihilate();
            if (opt.log_annihilations) out.annihilation_log.emplace_back(st.clock, z);
        }
        if (mart) step.update_sup();
        if (opt.consistency_every && ++since_check >= opt.consistency_every) {
            since_check = 0;
            RateTree check;
            check.reset(model.interface_size());
            for (std::size_t z = 0; z < model.interface_size(); ++z) check.set(z, pair_value(model, st, z));
            for (std::size_t z = 0; z < model.interface_size(); ++z)
                if (check.get(z) != st.rates.get(z)) throw Error("RateMismatch", "leaf " + std::to_string(z));
            if (check.total() != st.rates.total()) throw Error("RateMismatch", "aggregate rate");
        }
    }
    out.sup_m2 = st.sup_m2;
    out.jumps = st.jumps;
    out.annihilations = st.annihilations;
    return out;
}

std::vector<double> empirical_measure(const ParticleState& st, Side side) {
    const auto& eta = st.eta[side_index(side)];
    std::vector<double> out(eta.size());
    for (std::size_t x = 0; x < eta.size(); ++x) out[x] = static_cast<double>(eta[x]) / st.N;
    return out;
}

double annihilation_flux(const ParticleModel& model, const std::array<std::vector<int>, 2>& eta, Side side,
                         const std::function<double(const Point&)>& phi) {
    const int s = side_index(side);
    const auto& sites = paired(*model.iface, s);
    double total = 0;
    for (std::size_t z = 0; z < model.interface_size(); ++z) {
        const double pairs = static_cast<double>(eta[0][model.iface->site_plus[z]]) *
                             static_cast<double>(eta[1][model.iface->site_minus[z]]);
        if (pairs == 0) continue;
        total += model.psi[z] * pairs * phi(model.lat[s]->coords[sites[z]]);
    }
    return std::pow(model.eps, model.d - 1) * total;
}

double annihilation_flux_total(const ParticleModel& model, const std::array<std::vector<int>, 2>& eta) {
    double total = 0;
    for (std::size_t z = 0; z < model.interface_size(); ++z)
        total += model.psi[z] * static_cast<double>(eta[0][model.iface->site_plus[z]]) *
                 static_cast<double>(eta[1][model.iface->site_minus[z]]);
    return std::pow(model.eps, model.d - 1) * total;
}

std::vector<SnapshotSeries> run_ensemble(const ParticleModel& model, const EnsembleConfig& cfg,
                                         const std::function<double(const Point&)>& u0_plus,
                                         const std::function<double(const Point&)>& u0_minus,
                                         const MartingaleSpec* mart) {
    if (cfg.replicas < 1) throw Error("ConfigError", "replicas must be >= 1");
    std::vector<SnapshotSeries> out(cfg.replicas);
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        try {
            for (int r = next++; r < cfg.replicas; r = next++) {
                ParticleState st = init_state(model, u0_plus, u0_minus, stream_key(cfg.seed, r),
                                              cfg.scaling_override, mart);
                out[r] = advance(model, st, cfg.t_end, cfg.schedule, mart, cfg.advance);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = cfg.replicas;
        }
    };
    const int threads = std::max(1, std::min(cfg.threads, cfg.replicas));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace arw
