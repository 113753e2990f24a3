#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>

#include "arw/ctrw.hpp"
#include "arw/error.hpp"

namespace arw {

namespace {

std::vector<int> spread_sources(std::size_t n, int max_sources) {
    std::vector<int> out;
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, max_sources)));
    if (k == 1) return {0};
    for (std::size_t i = 0; i < k; ++i) {
        int v = static_cast<int>(i * (n - 1) / (k - 1));
        if (out.empty() || out.back() != v) out.push_back(v);
    }
    return out;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> out;
    if (n == 1) return {a};
    for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * i / (n - 1));
    return out;
}

struct KernelSample {
    double log_p, log_s, r2_over_t;
};

// Extremal C1 for a fixed C2 and the mean log-slack of the resulting envelope.
std::pair<double, double> fit_c1(const std::vector<KernelSample>& s, double c2, bool upper) {
    double best = upper ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (const auto& k : s) {
        // log C1 needed: log p + log s + C2 r^2/t
        double v = k.log_p + k.log_s + c2 * k.r2_over_t;
        best = upper ? std::max(best, v) : std::min(best, v);
    }
    double slack = 0;
    for (const auto& k : s) slack += std::abs(best - k.log_s - c2 * k.r2_over_t - k.log_p);
    return {best, slack / s.size()};
}

}  // namespace

LcltResult lclt_gap(const DomainSpec& spec, int j, double a, double b, int n_times, int max_sources) {
    if (!spec.rho_plus.is_uniform()) throw Error("ConfigError", "local CLT check requires rho == 1");
    LatticeGraph lat = build_lattice(spec, Side::plus, j);
    Conductances cond = build_conductances(lat, spec.rho_plus);
    AxisBox box = box_of(spec, Side::plus);
    std::vector<int> sources = spread_sources(lat.size(), max_sources);
    std::vector<double> times = linspace(a, b, n_times);
    auto rows = heat_kernel_rows(cond, sources, times);
    LcltResult r;
    r.sources = static_cast<int>(sources.size());
    r.times = n_times;
    for (std::size_t k = 0; k < times.size(); ++k)
        for (std::size_t i = 0; i < sources.size(); ++i)
            for (std::size_t y = 0; y < lat.size(); ++y) {
                double p = analytic_neumann_kernel(box, times[k], lat.coords[sources[i]], lat.coords[y]);
                r.gap = std::max(r.gap, std::abs(rows[k](i, y) - p));
                r.sup_p = std::max(r.sup_p, p);
            }
    return r;
}

BoundarySumResult boundary_sum_check(const LatticeGraph& lat, const Conductances& cond,
                                     const std::vector<double>& times, const std::vector<int>& sources) {
    BoundarySumResult r;
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    auto rows = heat_kernel_rows(cond, sources, sorted);
    const double scale = std::pow(lat.eps, lat.d - 1);
    for (std::size_t k = 0; k < sorted.size(); ++k)
        for (std::size_t i = 0; i < sources.size(); ++i) {
            double s = 0;
            for (int y : lat.boundary) s += rows[k](i, y);
            s *= scale;
            r.probes.push_back({sorted[k], static_cast<double>(sources[i]), s});
            r.fitted_C = std::max(r.fitted_C, s * std::max(lat.eps, std::sqrt(sorted[k])));
        }
    return r;
}

GaussianFit gaussian_bound_fit(const LatticeGraph& lat, const Conductances& cond, double T,
                               double fixed_upper_C2, double fixed_lower_C2) {
    if (T < lat.eps) throw Error("ConfigError", "horizon shorter than eps");
    std::vector<double> times;
    const int nt = 8;
    for (int i = 0; i < nt; ++i) times.push_back(lat.eps * std::pow(T / lat.eps, i / double(nt - 1)));
    std::vector<int> sources = spread_sources(lat.size(), 16);
    auto rows = heat_kernel_rows(cond, sources, times);
    std::vector<KernelSample> samples;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        const double log_s = lat.d * std::log(std::max(lat.eps, std::sqrt(t)));
        for (std::size_t i = 0; i < sources.size(); ++i)
            for (std::size_t y = 0; y < lat.size(); ++y) {
                double p = rows[k](i, y);
                if (!(p > 0)) throw Error("FitFailure", "nonpositive kernel value");
                double r = distance(lat.coords[sources[i]], lat.coords[y], lat.d);
                samples.push_back({std::log(p), log_s, r * r / t});
            }
    }
    // Log-spaced candidate grid for C2.
    std::vector<double> grid;
    for (int i = 0; i <= 160; ++i) grid.push_back(1e-3 * std::pow(10.0, i * 5.0 / 160));
    GaussianFit fit;
    auto choose = [&](bool upper, double fixed, double& c1, double& c2) {
        if (fixed > 0) {
            c2 = fixed;
            c1 = std::exp(fit_c1(samples, fixed, upper).first);
            return;
        }
        double best_slack = std::numeric_limits<double>::infinity();
        for (double g : grid) {
            auto [lc1, slack] = fit_c1(samples, g, upper);
            if (slack < best_slack) {
                best_slack = slack;
                c1 = std::exp(lc1);
                c2 = g;
            }
        }
        if (!std::isfinite(c1) || !(c1 > 0)) throw Error("FitFailure", "no constants in the search box");
    };
    choose(true, fixed_upper_C2, fit.upper_C1, fit.upper_C2);
    choose(false, fixed_lower_C2, fit.lower_C1, fit.lower_C2);
    return fit;
}

SpectralReport spectral_checks(const Conductances& cond) {
    const std::size_t n = cond.size();
    if (n > 16) throw Error("TooLargeForBruteForce", std::to_string(n) + " vertices");
    const double q = cond.holding_rate;
    // -A_eps symmetrized in l^2(m).
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t x = 0; x < n; ++x) {
        S(x, x) = q;
        for (int k = cond.nbr_begin[x]; k < cond.nbr_begin[x + 1]; ++k) {
            const int y = cond.nbr[k];
            S(x, y) -= q * cond.hop[k] * std::sqrt(cond.m[x] / cond.m[y]);
        }
    }
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    SpectralReport r;
    const double mD = cond.total_mass();
    r.generator_gap = n > 1 ? es.eigenvalues()(1) : 0.0;
    r.poincare_gap = mD * r.generator_gap;

    // Exhaustive isoperimetric constant with pi = m / m(D), Q(x,y) = pi(x) p_xy.
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        double piA = 0, flow = 0;
        for (std::size_t x = 0; x < n; ++x) {
            if (!(mask >> x & 1u)) continue;
            piA += cond.m[x] / mD;
            for (int k = cond.nbr_begin[x]; k < cond.nbr_begin[x + 1]; ++k)
                if (!(mask >> cond.nbr[k] & 1u)) flow += cond.m[x] / mD * cond.hop[k];
        }
        if (piA <= 0.5 + 1e-15) best = std::min(best, flow / piA);
    }
    r.cheeger_I = std::isfinite(best) ? best : 0.0;
    r.cheeger_bound = cond.d * mD / (cond.eps * cond.eps) * r.cheeger_I * r.cheeger_I / 8.0;
    r.cheeger_ok = r.poincare_gap >= r.cheeger_bound;

    // Spectral mixing envelope |p - 1/m(D)| <= exp(-gap t) / sqrt(m(x) m(y)).
    r.mixing_ok = true;
    if (r.generator_gap > 0) {
        double prev = std::numeric_limits<double>::infinity();
        for (int k = 1; k <= 8; ++k) {
            const double t = k / r.generator_gap;
            KernelMatrix K = heat_kernel(cond, t);
            double worst = 0, ratio = 0;
            for (std::size_t x = 0; x < n; ++x)
                for (std::size_t y = 0; y < n; ++y) {
                    double dev = std::abs(K.values(x, y) - 1.0 / mD);
                    worst = std::max(worst, dev);
                    ratio = std::max(ratio, dev / (std::exp(-r.generator_gap * t) / std::sqrt(cond.m[x] * cond.m[y])));
                }
            r.mixing_max_ratio = std::max(r.mixing_max_ratio, ratio);
            if (worst > prev * (1 + 1e-9) + 1e-12) r.mixing_ok = false;
            prev = worst;
            r.mixing_final = worst;
        }
        if (r.mixing_max_ratio > 1 + 1e-8) r.mixing_ok = false;
    }
    return r;
}

double discrete_local_time(const Conductances& cond, const InterfaceDiscretization& iface, Side side, int x,
                           double t, int panels) {
    if (t <= 0) return 0.0;
    panels = std::max(panels, 64);
    const double h = t / panels;
    std::vector<double> times;
    for (int k = 0; k < panels; ++k) times.push_back((k + 0.5) * h);
    auto rows = heat_kernel_rows(cond, {x}, times);
    const auto& sites = side == Side::plus ? iface.site_plus : iface.site_minus;
    double total = 0;
    for (int k = 0; k < panels; ++k) {
        double s = 0;
        for (std::size_t z = 0; z < iface.size(); ++z) s += rows[k](0, sites[z]) * iface.weights[z];
        total += s * h;
    }
    return total;
}

double continuum_local_time(const AxisBox& box, const DomainSpec& spec, const Point& x, double t) {
    if (t <= 0) return 0.0;
    const auto faces = interface_faces(spec);
    auto integrand = [&](double theta) {
        double s = 0;
        for (const auto& f : faces) {
            const int n = f.normal_axis;
            const double Ln = box.hi[n] - box.lo[n];
            double v = neumann_1d(Ln, theta, x[n] - box.lo[n], f.normal_coord.get_d() - box.lo[n]);
            if (box.d == 2) {
                const int a = 1 - n;
                const double La = box.hi[a] - box.lo[a];
                v *= neumann_1d_cell(La, theta, x[a] - box.lo[a], f.lo.get_d() - box.lo[a], f.hi.get_d() - box.lo[a]);
            }
            s += v;
        }
        return s;
    };
    // theta = t v^2 removes a possible theta^{-1/2} endpoint singularity.
    const int panels = 64;
    double total = 0;
    for (int p = 0; p < panels; ++p) {
        const double a = double(p) / panels, b = double(p + 1) / panels;
        total += boost::math::quadrature::gauss<double, 10>::integrate(
            [&](double v) {
                if (v <= 0) return 0.0;
                return integrand(t * v * v) * 2 * t * v;
            },
            a, b);
    }
    return total;
}

HolderModulus holder_modulus(const Conductances& cond, double t, double h, const std::vector<int>& sources) {
    auto rows = heat_kernel_rows(cond, sources, {t, t + h});
    HolderModulus r;
    for (std::size_t i = 0; i < sources.size(); ++i)
        for (std::size_t x = 0; x < cond.size(); ++x) {
            for (int k = cond.nbr_begin[x]; k < cond.nbr_begin[x + 1]; ++k)
                r.space = std::max(r.space, std::abs(rows[0](i, x) - rows[0](i, cond.nbr[k])) / cond.eps);
            r.time = std::max(r.time, std::abs(rows[0](i, x) - rows[1](i, x)) / std::sqrt(h));
        }
    return r;
}

KernelInvariants kernel_invariants(const Conductances& cond, const std::vector<int>& sources, double s, double t,
                                   double tol) {
    if (s <= 0 || t <= 0) throw Error("ConfigError", "kernel invariants need positive times");
    const std::size_t n = cond.size(), k = sources.size();
    Eigen::MatrixXd fwd = Eigen::MatrixXd::Zero(n, k), bwd = Eigen::MatrixXd::Zero(n, k);
    for (std::size_t i = 0; i < k; ++i) {
        fwd(sources[i], i) = 1.0;
        bwd(sources[i], i) = 1.0 / cond.m[sources[i]];
    }
    Propagator forward(cond, tol, true), backward(cond, tol);
    Eigen::VectorXd inv_m(n), m(n);
    for (std::size_t z = 0; z < n; ++z) {
        m[z] = cond.m[z];
        inv_m[z] = 1.0 / cond.m[z];
    }
    // rows[r](z, i) = p(r, x_i, z); cols[r](z, i) = p(r, z, y_i)
    std::array<Eigen::MatrixXd, 2> rows, cols;
    const double times[2] = {s, s + t};
    double prev = 0;
    for (int r = 0; r < 2; ++r) {
        forward.advance(fwd, times[r] - prev);
        prev = times[r];
        rows[r] = inv_m.asDiagonal() * fwd;
    }
    backward.advance(bwd, t);
    Eigen::MatrixXd cols_t = bwd;
    backward.advance(bwd, s);
    cols[1] = bwd;
    cols[0] = cols_t;

    KernelInvariants r;
    r.vertices = n;
    r.sources = k;
    r.s = s;
    r.t = t;
    // Symmetry at s+t: forward row of x against backward column into x.
    r.symmetry = (rows[1] - cols[1]).cwiseAbs().maxCoeff();
    // At t: p(t, x, .) is not computed forward, so compare columns on S x S.
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            r.symmetry = std::max(r.symmetry, std::abs(cols_t(sources[a], b) - cols_t(sources[b], a)));
    for (const auto* M : {&rows[0], &rows[1], &cols[0], &cols[1]}) {
        r.positivity = std::max(r.positivity, -M->minCoeff());
        r.sup_p = std::max(r.sup_p, M->maxCoeff());
    }
    for (int q = 0; q < 2; ++q) {
        Eigen::VectorXd mass = rows[q].transpose() * m;
        r.conservation = std::max(r.conservation, (mass.array() - 1.0).abs().maxCoeff());
    }
    Eigen::MatrixXd composed = rows[0].transpose() * m.asDiagonal() * cols_t;   // (x, y)
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            r.chapman_kolmogorov =
                std::max(r.chapman_kolmogorov, std::abs(composed(a, b) - rows[1](sources[b], a)));
    return r;
}

nlohmann::json KernelInvariants::to_json() const {
    return {{"vertices", vertices}, {"sources", sources}, {"s", s}, {"t", t}, {"symmetry", symmetry},
            {"positivity", positivity}, {"conservation", conservation},
            {"chapman_kolmogorov", chapman_kolmogorov}, {"sup_p", sup_p}};
}

}  // namespace arw
