#include "arw/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <unsupported/Eigen/MatrixFunctions>

#include "arw/error.hpp"

namespace arw {

std::int64_t poisson_poly(int k, int n) {
    if (k < 0 || n < 0) throw Error("ConfigError", "poisson_poly needs k, n >= 0");
    if (k > n) return 0;
    std::int64_t r = 1;
    for (int i = 0; i < k; ++i) r *= n - i;
    return r;
}

namespace {

// Multiplicity of each site in a tuple.
std::map<int, int> counts(const std::vector<int>& sites) {
    std::map<int, int> c;
    for (int s : sites) ++c[s];
    return c;
}

Multiindex with_extra(const Multiindex& xi, int plus_site, int minus_site) {
    Multiindex r = xi;
    if (plus_site >= 0) r.plus.push_back(plus_site);
    if (minus_site >= 0) r.minus.push_back(minus_site);
    return r;
}

int multiplicity(const std::vector<int>& sites, int x) {
    return static_cast<int>(std::count(sites.begin(), sites.end(), x));
}

}  // namespace

std::int64_t pairing_count(const Multiindex& xi, const Occupation& eta) {
    std::int64_t r = 1;
    for (int s = 0; s < 2; ++s)
        for (const auto& [x, k] : counts(s == 0 ? xi.plus : xi.minus)) {
            if (x < 0 || x >= static_cast<int>(eta[s].size())) throw Error("ConfigError", "multiindex site out of range");
            r *= poisson_poly(k, eta[s][x]);
            if (r == 0) return 0;
        }
    return r;
}

JackknifeResult jackknife(const std::vector<std::vector<double>>& samples,
                          const std::function<double(const std::vector<double>&)>& stat) {
    if (samples.empty()) throw Error("ConfigError", "no samples");
    const std::size_t R = samples[0].size();
    if (R < 2) throw Error("InsufficientReplicas", "jackknife needs at least two replicas");
    const std::size_t k = samples.size();
    std::vector<double> total(k, 0.0), mean(k);
    for (std::size_t i = 0; i < k; ++i) {
        if (samples[i].size() != R) throw Error("ConfigError", "ragged samples");
        for (double v : samples[i]) total[i] += v;
        mean[i] = total[i] / R;
    }
    JackknifeResult res;
    res.value = stat(mean);
    std::vector<double> loo(k);
    std::vector<double> vals(R);
    double avg = 0;
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < k; ++i) loo[i] = (total[i] - samples[i][r]) / (R - 1);
        vals[r] = stat(loo);
        avg += vals[r];
    }
    avg /= R;
    double ss = 0;
    for (double v : vals) ss += (v - avg) * (v - avg);
    res.stderr_ = std::sqrt(ss * (R - 1) / R);
    return res;
}

nlohmann::json CorrelationEstimate::to_json() const {
    return {{"value", value}, {"stderr", stderr_}, {"replicas", replicas}, {"alpha", alpha}};
}

namespace {

double gamma_scale(const ParticleModel& model, const Multiindex& xi) {
    double alpha = 1;
    for (int r : xi.plus) alpha *= model.cond[0]->m[r];
    for (int s : xi.minus) alpha *= model.cond[1]->m[s];
    return std::pow(model.eps, model.d * (xi.n() + xi.m())) / alpha;
}

double alpha_of(const ParticleModel& model, const Multiindex& xi) {
    double alpha = 1;
    for (int r : xi.plus) alpha *= model.cond[0]->m[r];
    for (int s : xi.minus) alpha *= model.cond[1]->m[s];
    return alpha;
}

}  // namespace

std::vector<double> gamma_samples(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                  std::size_t snapshot, const Multiindex& xi) {
    const double scale = gamma_scale(model, xi);
    std::vector<double> out;
    out.reserve(ensemble.size());
    for (const auto& s : ensemble) {
        if (snapshot >= s.snapshots.size()) throw Error("ConfigError", "snapshot index out of range");
        const auto& eta = s.snapshots[snapshot].eta;
        if (eta[0].empty()) throw Error("ConfigError", "ensemble was run without occupation snapshots");
        out.push_back(scale * static_cast<double>(pairing_count(xi, eta)));
    }
    return out;
}

CorrelationEstimate estimate_gamma(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                   std::size_t snapshot, const Multiindex& xi, double stderr_cap) {
    if (ensemble.size() < 2) throw Error("InsufficientReplicas", "need at least two replicas");
    auto v = gamma_samples(model, ensemble, snapshot, xi);
    auto jk = jackknife({v}, [](const std::vector<double>& m) { return m[0]; });
    CorrelationEstimate e;
    e.value = jk.value;
    e.stderr_ = jk.stderr_;
    e.replicas = static_cast<int>(ensemble.size());
    e.alpha = alpha_of(model, xi);
    if (e.stderr_ > stderr_cap)
        throw Error("InsufficientReplicas", "stderr " + std::to_string(e.stderr_) + " exceeds cap");
    return e;
}

std::vector<double> placement_weights(const ParticleModel& model, Side side,
                                      const std::function<double(const Point&)>& u0) {
    const int s = side_index(side);
    const auto& lat = *model.lat[s];
    const auto& m = model.cond[s]->m;
    std::vector<double> w(lat.size());
    double total = 0;
    for (std::size_t x = 0; x < lat.size(); ++x) {
        const double v = u0(lat.coords[x]);
        if (v < 0) throw Error("ConfigError", "initial density must be nonnegative");
        w[x] = v * m[x];
        total += w[x];
    }
    if (total <= 0) throw Error("ConfigError", "initial density has zero mass");
    for (double& v : w) v /= total;
    return w;
}

double initial_gamma(const ParticleModel& model, const std::array<std::vector<double>, 2>& weights, long N,
                     const Multiindex& xi) {
    double v = gamma_scale(model, xi);
    v *= static_cast<double>(poisson_poly(xi.n(), static_cast<int>(N))) *
         static_cast<double>(poisson_poly(xi.m(), static_cast<int>(N)));
    for (int r : xi.plus) v *= weights[0][r];
    for (int s : xi.minus) v *= weights[1][s];
    return v;
}

double transported_initial_gamma(const ParticleModel& model, const std::array<std::vector<double>, 2>& weights,
                                 long N, const Multiindex& xi, double t) {
    if (xi.n() + xi.m() > 2) throw Error("ConfigError", "transport implemented for n + m <= 2");
    double v = std::pow(model.eps, model.d * (xi.n() + xi.m()));
    v *= static_cast<double>(poisson_poly(xi.n(), static_cast<int>(N))) *
         static_cast<double>(poisson_poly(xi.m(), static_cast<int>(N)));
    for (int s = 0; s < 2; ++s) {
        const auto& sites = s == 0 ? xi.plus : xi.minus;
        if (sites.empty()) continue;
        const auto& c = *model.cond[s];
        Eigen::VectorXd f(c.size());
        for (std::size_t x = 0; x < c.size(); ++x) f(x) = weights[s][x] / c.m[x];
        Eigen::VectorXd pf = semigroup_apply(c, f, {t})[0];
        for (int r : sites) v *= pf(r);
    }
    return v;
}

// --- Duality ----------------------------------------------------------------

std::vector<std::vector<int>> enumerate_configurations(int sites, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(sites, 0);
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == sites - 1) {
            cur[i] = left;
            out.push_back(cur);
            return;
        }
        for (int c = left; c >= 0; --c) {
            cur[i] = c;
            rec(i + 1, left - c);
        }
    };
    if (sites <= 0) throw Error("ConfigError", "no sites");
    rec(0, k);
    return out;
}

namespace {

struct SideSpace {
    std::vector<std::vector<int>> configs;
    std::map<std::vector<int>, int> index;
    Eigen::MatrixXd Q;
};

SideSpace side_space(const Conductances& c, int k) {
    SideSpace sp;
    sp.configs = enumerate_configurations(static_cast<int>(c.size()), k);
    for (std::size_t i = 0; i < sp.configs.size(); ++i) sp.index[sp.configs[i]] = static_cast<int>(i);
    const std::size_t S = sp.configs.size();
    sp.Q = Eigen::MatrixXd::Zero(S, S);
    for (std::size_t i = 0; i < S; ++i) {
        const auto& cfg = sp.configs[i];
        for (std::size_t x = 0; x < c.size(); ++x) {
            if (cfg[x] == 0) continue;
            for (int e = c.nbr_begin[x]; e < c.nbr_begin[x + 1]; ++e) {
                auto next = cfg;
                --next[x];
                ++next[c.nbr[e]];
                const double rate = cfg[x] * c.holding_rate * c.hop[e];
                sp.Q(i, sp.index.at(next)) += rate;
                sp.Q(i, i) -= rate;
            }
        }
    }
    return sp;
}

double config_alpha(const Conductances& c, const std::vector<int>& cfg) {
    double a = 1;
    for (std::size_t x = 0; x < cfg.size(); ++x)
        for (int i = 0; i < cfg[x]; ++i) a *= c.m[x];
    return a;
}

double config_pairing(const std::vector<int>& xi, const std::vector<int>& eta) {
    double r = 1;
    for (std::size_t x = 0; x < xi.size(); ++x) r *= static_cast<double>(poisson_poly(xi[x], eta[x]));
    return r;
}

}  // namespace

nlohmann::json DualityReport::to_json() const {
    return {{"max_deviation", max_deviation}, {"max_value", max_value}, {"xi_states", xi_states}, {"eta_states", eta_states}};
}

DualityReport duality_check(const Conductances& plus, const Conductances& minus, int n, int m, int N, int M,
                            double t, std::size_t max_states) {
    if (n < 0 || m < 0 || N < 0 || M < 0 || t < 0) throw Error("ConfigError", "bad duality class");
    const SideSpace xp = side_space(plus, n), xm = side_space(minus, m);
    const SideSpace ep = side_space(plus, N), em = side_space(minus, M);
    DualityReport rep;
    rep.xi_states = xp.configs.size() * xm.configs.size();
    rep.eta_states = ep.configs.size() * em.configs.size();
    if (rep.xi_states > max_states || rep.eta_states > max_states)
        throw Error("StateSpaceTooLarge", std::to_string(std::max(rep.xi_states, rep.eta_states)) + " states");
    // Joint generators on (plus, minus) configurations: Kronecker sums.
    auto joint = [](const SideSpace& a, const SideSpace& b) {
        const Eigen::Index A = a.Q.rows(), B = b.Q.rows();
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(A * B, A * B);
        for (Eigen::Index i = 0; i < A; ++i)
            for (Eigen::Index k = 0; k < A; ++k)
                if (a.Q(i, k) != 0)
                    for (Eigen::Index j = 0; j < B; ++j) Q(i * B + j, k * B + j) += a.Q(i, k);
        for (Eigen::Index i = 0; i < A; ++i)
            for (Eigen::Index j = 0; j < B; ++j)
                for (Eigen::Index l = 0; l < B; ++l)
                    if (b.Q(j, l) != 0) Q(i * B + j, i * B + l) += b.Q(j, l);
        return Q;
    };
    const Eigen::MatrixXd Pxi = (t * joint(xp, xm)).exp();
    const Eigen::MatrixXd Peta = (t * joint(ep, em)).exp();
    const std::size_t Xm = xm.configs.size(), Em = em.configs.size();
    // F(xi, eta) = A(xi, eta) / alpha(xi).
    Eigen::MatrixXd F(rep.xi_states, rep.eta_states);
    for (std::size_t a = 0; a < rep.xi_states; ++a) {
        const auto& xpc = xp.configs[a / Xm];
        const auto& xmc = xm.configs[a % Xm];
        const double alpha = config_alpha(plus, xpc) * config_alpha(minus, xmc);
        for (std::size_t b = 0; b < rep.eta_states; ++b) {
            const auto& epc = ep.configs[b / Em];
            const auto& emc = em.configs[b % Em];
            F(a, b) = config_pairing(xpc, epc) * config_pairing(xmc, emc) / alpha;
        }
    }
    const Eigen::MatrixXd lhs = Pxi * F;               // E_xi[F(xi_t, eta)]
    const Eigen::MatrixXd rhs = F * Peta.transpose();  // E_eta[F(xi, eta_t)]
    rep.max_deviation = (lhs - rhs).cwiseAbs().maxCoeff();
    rep.max_value = std::max(lhs.cwiseAbs().maxCoeff(), rhs.cwiseAbs().maxCoeff());
    return rep;
}

// --- Annihilation action ----------------------------------------------------

PairSites pair_sites(const ParticleModel& model) {
    PairSites p;
    for (std::size_t z = 0; z < model.interface_size(); ++z) {
        p.plus.push_back(model.iface->site_plus[z]);
        p.minus.push_back(model.iface->site_minus[z]);
        p.rate.push_back(mpq_class(model.pair_rate[z]));
    }
    return p;
}

mpq_class k_action_direct(const PairSites& pairs, const Multiindex& xi, const Occupation& eta) {
    mpq_class total = 0;
    const std::int64_t base = pairing_count(xi, eta);
    for (std::size_t z = 0; z < pairs.size(); ++z) {
        const int a = eta[0][pairs.plus[z]], b = eta[1][pairs.minus[z]];
        if (a == 0 || b == 0) continue;
        Occupation next = eta;
        --next[0][pairs.plus[z]];
        --next[1][pairs.minus[z]];
        total += pairs.rate[z] * a * b * mpq_class(mpz_class(std::to_string(pairing_count(xi, next) - base)));
    }
    return total;
}

mpq_class k_action_factorized(const PairSites& pairs, const Multiindex& xi, const Occupation& eta) {
    mpq_class total = 0;
    for (std::size_t z = 0; z < pairs.size(); ++z) {
        const int x = pairs.plus[z], y = pairs.minus[z];
        Multiindex local, rest;
        for (int r : xi.plus) (r == x ? local.plus : rest.plus).push_back(r);
        for (int s : xi.minus) (s == y ? local.minus : rest.minus).push_back(s);
        PairSites one;
        one.plus = {x};
        one.minus = {y};
        one.rate = {pairs.rate[z]};
        total += mpq_class(mpz_class(std::to_string(pairing_count(rest, eta)))) * k_action_direct(one, local, eta);
    }
    return total;
}

bool in_xi_class(const PairSites& pairs, const Multiindex& xi) {
    for (std::size_t z = 0; z < pairs.size(); ++z)
        if (multiplicity(xi.plus, pairs.plus[z]) > 1 || multiplicity(xi.minus, pairs.minus[z]) > 1) return false;
    return true;
}

mpq_class k_action_three_sum(const PairSites& pairs, const Multiindex& xi, const Occupation& eta) {
    if (!in_xi_class(pairs, xi)) throw Error("ConfigError", "three-sum form needs xi(z+), xi(z-) <= 1");
    mpq_class total = 0;
    auto A = [&](const Multiindex& x) { return mpq_class(mpz_class(std::to_string(pairing_count(x, eta)))); };
    for (std::size_t z = 0; z < pairs.size(); ++z) {
        const bool p = multiplicity(xi.plus, pairs.plus[z]) == 1;
        const bool q = multiplicity(xi.minus, pairs.minus[z]) == 1;
        if (p) total -= pairs.rate[z] * A(with_extra(xi, -1, pairs.minus[z]));
        if (q) total -= pairs.rate[z] * A(with_extra(xi, pairs.plus[z], -1));
        if (p && q) total -= pairs.rate[z] * A(xi);
    }
    return total;
}

nlohmann::json KActionReport::to_json() const {
    return {{"cases", cases}, {"mismatches_three_sum", mismatches_three}, {"mismatches_factorized", mismatches_factorized}};
}

KActionReport k_action_check(const PairSites& pairs, int sites_plus, int sites_minus, int n, int m, int N, int M) {
    auto to_sites = [](const std::vector<int>& cfg) {
        std::vector<int> s;
        for (std::size_t x = 0; x < cfg.size(); ++x)
            for (int i = 0; i < cfg[x]; ++i) s.push_back(static_cast<int>(x));
        return s;
    };
    const auto xps = enumerate_configurations(sites_plus, n), xms = enumerate_configurations(sites_minus, m);
    const auto eps_ = enumerate_configurations(sites_plus, N), ems = enumerate_configurations(sites_minus, M);
    if (xps.size() * xms.size() * eps_.size() * ems.size() > 2000000)
        throw Error("StateSpaceTooLarge", "k-action enumeration too large");
    KActionReport rep;
    for (const auto& a : xps)
        for (const auto& b : xms) {
            Multiindex xi{to_sites(a), to_sites(b)};
            if (!in_xi_class(pairs, xi)) continue;
            for (const auto& c : eps_)
                for (const auto& d : ems) {
                    Occupation eta{c, d};
                    const mpq_class direct = k_action_direct(pairs, xi, eta);
                    ++rep.cases;
                    if (direct != k_action_three_sum(pairs, xi, eta)) ++rep.mismatches_three;
                    if (direct != k_action_factorized(pairs, xi, eta)) ++rep.mismatches_factorized;
                }
        }
    return rep;
}

// --- Chaos ------------------------------------------------------------------

nlohmann::json ChaosRow::to_json() const {
    return {{"n", n}, {"m", m}, {"t", t}, {"probe", probe}, {"gamma", gamma}, {"stderr", stderr_}, {"target", target}, {"gap", gap}};
}

std::vector<ChaosRow> chaos_gap(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                                const std::vector<double>& snapshot_times, const PicardSolution& pde,
                                const std::vector<ChaosProbe>& probes) {
    std::vector<Point> xp, xm;
    for (const auto& p : probes) {
        xp.push_back(p.x_plus);
        xm.push_back(p.x_minus);
    }
    std::vector<ChaosRow> rows;
    for (std::size_t s = 0; s < snapshot_times.size(); ++s) {
        const int k = pde.time_index(snapshot_times[s]);
        const Eigen::VectorXd up = pde.evaluate(Side::plus, k, xp), um = pde.evaluate(Side::minus, k, xm);
        for (std::size_t q = 0; q < probes.size(); ++q) {
            const auto& pr = probes[q];
            const std::array<std::pair<int, int>, 4> nm = {{{1, 0}, {0, 1}, {2, 0}, {1, 1}}};
            for (const auto& [n, m] : nm) {
                Multiindex xi;
                for (int i = 0; i < n; ++i) xi.plus.push_back(pr.site_plus);
                for (int i = 0; i < m; ++i) xi.minus.push_back(pr.site_minus);
                const auto e = estimate_gamma(model, ensemble, s, xi);
                ChaosRow row;
                row.n = n;
                row.m = m;
                row.t = snapshot_times[s];
                row.probe = q;
                row.gamma = e.value;
                row.stderr_ = e.stderr_;
                row.target = std::pow(up(q), n) * std::pow(um(q), m);
                row.gap = std::abs(row.gamma - row.target);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

JackknifeResult chaos_excess(const ParticleModel& model, const std::vector<SnapshotSeries>& ensemble,
                             std::size_t snapshot, const ChaosProbe& probe) {
    const auto g11 = gamma_samples(model, ensemble, snapshot, Multiindex{{probe.site_plus}, {probe.site_minus}});
    const auto g10 = gamma_samples(model, ensemble, snapshot, Multiindex{{probe.site_plus}, {}});
    const auto g01 = gamma_samples(model, ensemble, snapshot, Multiindex{{}, {probe.site_minus}});
    return jackknife({g11, g10, g01}, [](const std::vector<double>& v) { return v[0] - v[1] * v[2]; });
}

// --- Hierarchy residual -----------------------------------------------------

double hierarchy_residual(const PicardSolution& pde, int n, int m, int k, const std::vector<ChaosProbe>& probes,
                          int panels) {
    if (!((n == 1 && m == 0) || (n == 1 && m == 1))) throw Error("ConfigError", "hierarchy residual supports (1,0), (1,1)");
    if (panels < 1) throw Error("ConfigError", "panels must be positive");
    const double t = pde.times.at(k);
    std::array<std::vector<Point>, 2> pts;
    for (const auto& p : probes) {
        pts[0].push_back(p.x_plus);
        pts[1].push_back(p.x_minus);
    }
    const std::size_t P = probes.size();
    const std::size_t C = pde.kernel[0]->cells().size();
    const auto& widths = pde.kernel[0]->cells().widths;
    // h(theta) by linear interpolation on the solver grid.
    auto h_at = [&](double theta, std::size_t c) {
        const double x = theta / pde.tau;
        const int i = std::min(static_cast<int>(std::floor(x)), pde.steps() - 1);
        const double v = x - i;
        return (1 - v) * pde.interface_product(i, c) + v * pde.interface_product(i + 1, c);
    };
    (void)widths;
    // Graded midpoint nodes in theta on [0, t], clustered at theta = t:
    // theta = t (1 - (1 - s)^2), s on a uniform midpoint grid.
    std::vector<LagNode> nodes;
    std::vector<double> thetas;
    for (int i = 0; i < panels; ++i) {
        const double s = (i + 0.5) / panels;
        const double theta = t * (1 - (1 - s) * (1 - s));
        const double w = t * 2 * (1 - s) / panels;
        nodes.push_back({0, t - theta, w, 0.0});
        thetas.push_back(theta);
    }
    // A_side(theta) = sum_c K(t - theta, x, c) h(theta, c) at every probe.
    std::array<Eigen::MatrixXd, 2> Aval;
    for (int s = 0; s < (m > 0 ? 2 : 1); ++s) {
        Aval[s] = Eigen::MatrixXd::Zero(panels, P);
        pde.kernel[s]->for_each_node(pts[s], nodes, [&](std::size_t q, const Eigen::MatrixXd& K) {
            Eigen::VectorXd h(C);
            for (std::size_t c = 0; c < C; ++c) h(c) = h_at(thetas[q], c);
            Aval[s].row(q) = (K * h).transpose();
        });
    }
    const double half_lambda = 0.5 * pde.lambda;
    const Eigen::VectorXd up = pde.evaluate(Side::plus, k, pts[0]);
    const Eigen::VectorXd pf = pde.kernel[0]->free_evolution(pts[0], {t})[0];
    double worst = 0;
    if (m == 0) {
        for (std::size_t q = 0; q < P; ++q) {
            double integral = 0;
            for (int i = 0; i < panels; ++i) integral += nodes[i].weight * Aval[0](i, q);
            worst = std::max(worst, std::abs(up(q) - (pf(q) - half_lambda * integral)));
        }
        return worst;
    }
    const Eigen::VectorXd um = pde.evaluate(Side::minus, k, pts[1]);
    const Eigen::VectorXd pg = pde.kernel[1]->free_evolution(pts[1], {t})[0];
    // Gamma^{(1,2)} and gamma^{(2,1)} at the interface are products, so the
    // theta-integrand is A+(theta) Q-(theta) + A-(theta) Q+(theta) with
    // Q(theta) = P_{t-theta} u(theta) = P_t u0 - (lambda/2) int_0^theta A.
    for (std::size_t q = 0; q < P; ++q) {
        double cum_p = 0, cum_m = 0, integral = 0;
        for (int i = 0; i < panels; ++i) {
            // Q at the node: cumulative integral up to the node (half panel).
            const double wi = nodes[i].weight;
            const double Qp = pf(q) - half_lambda * (cum_p + 0.5 * wi * Aval[0](i, q));
            const double Qm = pg(q) - half_lambda * (cum_m + 0.5 * wi * Aval[1](i, q));
            integral += wi * (Aval[0](i, q) * Qm + Aval[1](i, q) * Qp);
            cum_p += wi * Aval[0](i, q);
            cum_m += wi * Aval[1](i, q);
        }
        const double rhs = pf(q) * pg(q) - half_lambda * integral;
        worst = std::max(worst, std::abs(up(q) * um(q) - rhs));
    }
    return worst;
}

}  // namespace arw
