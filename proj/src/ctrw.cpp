#include "arw/ctrw.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Sparse>

#include "arw/error.hpp"

namespace arw {

namespace {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SpMat step_matrix(const Conductances& c) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(c.hop.size());
    for (std::size_t x = 0; x < c.size(); ++x)
        for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s)
            trip.emplace_back(static_cast<int>(x), c.nbr[s], c.hop[s]);
    SpMat P(static_cast<int>(c.size()), static_cast<int>(c.size()));
    P.setFromTriplets(trip.begin(), trip.end());
    return P;
}

// X <- sum_k w_k P^k X, with P acting on densities (column action).
void uniformize_block(const SpMat& P, Eigen::MatrixXd& X, double lambda, double tol) {
    if (lambda <= 0) return;
    PoissonWeights pw = poisson_weights(lambda, tol);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(X.rows(), X.cols());
    Eigen::MatrixXd cur = X, next(X.rows(), X.cols());
    for (std::size_t k = 0;; ++k) {
        if (k >= pw.first) acc.noalias() += pw.w[k - pw.first] * cur;
        if (k == pw.last()) break;
        next.noalias() = P * cur;
        cur.swap(next);
    }
    X.swap(acc);
}

void check_sorted(const std::vector<double>& times) {
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < 0) throw Error("ConfigError", "negative time");
        if (i > 0 && times[i] < times[i - 1]) throw Error("ConfigError", "times must be sorted");
    }
}

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kPi = 3.141592653589793;

// P(lo < Z < hi) for standard normal Z, without cancellation in the tails.
double normal_mass(double lo, double hi) {
    if (lo >= 0) return 0.5 * (std::erfc(lo / kSqrt2) - std::erfc(hi / kSqrt2));
    if (hi <= 0) return 0.5 * (std::erfc(-hi / kSqrt2) - std::erfc(-lo / kSqrt2));
    return 1.0 - 0.5 * std::erfc(-lo / kSqrt2) - 0.5 * std::erfc(hi / kSqrt2);
}

}  // namespace

Propagator::Propagator(const Conductances& cond, double tol, bool forward)
    : P_(step_matrix(cond)), rate_(cond.holding_rate), tol_(tol) {
    if (forward) P_ = SpMat(P_.transpose());
}

void Propagator::advance(Eigen::MatrixXd& X, double dt) const {
    if (dt < 0) throw Error("ConfigError", "negative time step");
    uniformize_block(P_, X, rate_ * dt, tol_);
}

double Conductances::total_mass() const {
    double s = 0;
    for (double v : m) s += v;
    return s;
}

std::vector<double> Conductances::generator_apply(const std::vector<double>& f) const {
    std::vector<double> out(size(), 0.0);
    for (std::size_t x = 0; x < size(); ++x) {
        double s = 0;
        for (int k = nbr_begin[x]; k < nbr_begin[x + 1]; ++k) s += hop[k] * (f[nbr[k]] - f[x]);
        out[x] = holding_rate * s;
    }
    return out;
}

double interior_conductance(const LatticeGraph& lat, const DensitySpec& rho, int v, int w) {
    const int d = lat.d;
    const double base = std::pow(lat.eps, d - 2) / 2.0;
    // Direction of w relative to v along the single differing axis.
    int sign = 0;
    for (int a = 0; a < d; ++a)
        if (lat.keys[w][a] != lat.keys[v][a]) sign = lat.keys[w][a] > lat.keys[v][a] ? +1 : -1;
    const double Pv = rho.log_rho(lat.coords[v]);
    const double Pw = rho.log_rho(lat.coords[w]);
    const double log_ratio = sign > 0 ? Pw - Pv : Pv - Pw;
    return (1.0 + 0.5 * log_ratio) * ((std::exp(Pv) + std::exp(Pw)) / 2.0) * base;
}

Conductances build_conductances(const LatticeGraph& lat, const DensitySpec& rho) {
    Conductances c;
    c.d = lat.d;
    c.eps = lat.eps;
    c.holding_rate = lat.d / (lat.eps * lat.eps);
    c.nbr_begin = lat.nbr_begin;
    c.nbr = lat.nbr;
    const std::size_t n = lat.size();
    c.mu.assign(c.nbr.size(), 0.0);
    c.hop.assign(c.nbr.size(), 0.0);
    c.m.assign(n, 0.0);
    const double base = std::pow(lat.eps, lat.d - 2) / 2.0;
    for (std::size_t x = 0; x < n; ++x) {
        for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s) {
            const int y = c.nbr[s];
            double mu;
            if (!lat.is_boundary[x]) mu = interior_conductance(lat, rho, static_cast<int>(x), y);
            else if (!lat.is_boundary[y]) mu = interior_conductance(lat, rho, y, static_cast<int>(x));
            else mu = base;
            if (!(mu > 0))
                throw Error("NonpositiveWeight", "edge (" + std::to_string(x) + "," + std::to_string(y) +
                                                     ") has weight " + std::to_string(mu) +
                                                     "; eps too coarse for this density");
            c.mu[s] = mu;
        }
    }
    for (std::size_t x = 0; x < n; ++x) {
        double sum = 0;
        for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s) sum += c.mu[s];
        c.m[x] = lat.eps * lat.eps / lat.d * sum;
        for (int s = c.nbr_begin[x]; s < c.nbr_begin[x + 1]; ++s) c.hop[s] = c.mu[s] / sum;
    }
    return c;
}

PoissonWeights poisson_weights(double lambda, double tol) {
    PoissonWeights pw;
    if (lambda <= 0) {
        pw.w = {1.0};
        return pw;
    }
    constexpr std::size_t cap = 100000000;
    const std::size_t mode = static_cast<std::size_t>(std::floor(lambda));
    const double wmode = std::exp(-lambda + mode * std::log(lambda) - std::lgamma(mode + 1.0));
    std::vector<double> right{wmode};
    for (std::size_t k = mode + 1;; ++k) {
        double w = right.back() * lambda / k;
        right.push_back(w);
        double ratio = lambda / (k + 1.0);
        if (ratio < 1 && w / (1 - ratio) < tol / 2) break;
        if (right.size() > cap) throw Error("ToleranceNotReached", "Poisson right tail exceeds term cap");
    }
    std::vector<double> left;
    std::size_t first = mode;
    double w = wmode;
    while (first > 0) {
        double ratio = first / lambda;
        if (ratio < 1 && w * ratio / (1 - ratio) < tol / 2) break;
        w = w * first / lambda;
        --first;
        left.push_back(w);
        if (left.size() > cap) throw Error("ToleranceNotReached", "Poisson left tail exceeds term cap");
    }
    pw.first = first;
    pw.w.assign(left.rbegin(), left.rend());
    pw.w.insert(pw.w.end(), right.begin(), right.end());
    return pw;
}

KernelMatrix heat_kernel(const Conductances& cond, double t, double tol) {
    const std::size_t n = cond.size();
    if (n > kDenseVertexGuard)
        throw Error("ResourceGuard", "dense kernel for " + std::to_string(n) + " vertices exceeds guard");
    if (t < 0) throw Error("ConfigError", "negative time");
    KernelMatrix K;
    K.t = t;
    K.m = cond.m;
    K.tolerance = tol;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) X(i, i) = 1.0 / cond.m[i];
    SpMat P = step_matrix(cond);
    const double lambda = cond.holding_rate * t;
    if (lambda > 0) K.terms = poisson_weights(lambda, tol).last();
    uniformize_block(P, X, lambda, tol);
    // Column i holds p(t, ., i) as a density; the kernel is symmetric, but
    // store rows as sources explicitly.
    K.values = X.transpose();
    return K;
}

std::vector<Eigen::MatrixXd> heat_kernel_rows(const Conductances& cond, const std::vector<int>& sources,
                                              const std::vector<double>& times, double tol) {
    check_sorted(times);
    const std::size_t n = cond.size();
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) X(sources[i], i) = 1.0 / cond.m[sources[i]];
    SpMat P = step_matrix(cond);
    std::vector<Eigen::MatrixXd> out;
    double prev = 0;
    for (double t : times) {
        uniformize_block(P, X, cond.holding_rate * (t - prev), tol);
        prev = t;
        out.push_back(X.transpose());
    }
    return out;
}

std::vector<Eigen::VectorXd> semigroup_apply(const Conductances& cond, const Eigen::VectorXd& f,
                                             const std::vector<double>& times, double tol) {
    check_sorted(times);
    Eigen::MatrixXd X = f;
    SpMat P = step_matrix(cond);
    std::vector<Eigen::VectorXd> out;
    double prev = 0;
    for (double t : times) {
        uniformize_block(P, X, cond.holding_rate * (t - prev), tol);
        prev = t;
        out.push_back(X.col(0));
    }
    return out;
}

double neumann_1d(double L, double t, double x, double y) {
    if (t < 0.5 * L * L) {
        const double norm = 1.0 / std::sqrt(2 * kPi * t);
        double s = 0;
        for (int n = 0;; ++n) {
            double add = 0;
            for (int sgn : {+1, -1}) {
                if (n == 0 && sgn < 0) continue;
                const double c = 2.0 * n * L * sgn;
                const double r1 = x - y + c, r2 = x + y + c;
                add += std::exp(-r1 * r1 / (2 * t)) + std::exp(-r2 * r2 / (2 * t));
            }
            s += add;
            if (n >= 1 && (2.0 * n - 1) * (2.0 * n - 1) * L * L / (2 * t) > 45) break;
        }
        return norm * s;
    }
    double s = 1.0;
    for (int k = 1;; ++k) {
        const double a = k * kPi / L;
        const double e = std::exp(-a * a * t / 2);
        s += 2 * e * std::cos(a * x) * std::cos(a * y);
        if (a * a * t / 2 > 45) break;
    }
    return s / L;
}

double neumann_1d_cell(double L, double t, double x, double y0, double y1) {
    if (t <= 0) return (x >= y0 && x < y1) ? 1.0 : 0.0;
    if (t < 0.5 * L * L) {
        const double st = std::sqrt(t);
        double s = 0;
        for (int n = 0;; ++n) {
            for (int sgn : {+1, -1}) {
                if (n == 0 && sgn < 0) continue;
                const double c = 2.0 * n * L * sgn;
                s += normal_mass((y0 - x - c) / st, (y1 - x - c) / st);
                s += normal_mass((x + y0 + c) / st, (x + y1 + c) / st);
            }
            if (n >= 1 && (2.0 * n - 1) * (2.0 * n - 1) * L * L / (2 * t) > 45) break;
        }
        return s;
    }
    double s = (y1 - y0) / L;
    for (int k = 1;; ++k) {
        const double a = k * kPi / L;
        const double e = std::exp(-a * a * t / 2);
        s += 2.0 / L * e * std::cos(a * x) * (std::sin(a * y1) - std::sin(a * y0)) / a;
        if (a * a * t / 2 > 45) break;
    }
    return s;
}

double analytic_neumann_kernel(const AxisBox& box, double t, const Point& x, const Point& y) {
    double v = 1.0;
    for (int a = 0; a < box.d; ++a) {
        const double L = box.hi[a] - box.lo[a];
        v *= neumann_1d(L, t, x[a] - box.lo[a], y[a] - box.lo[a]);
    }
    return v;
}

AxisBox box_of(const DomainSpec& spec, Side side) {
    const auto& bs = spec.boxes(side);
    if (bs.size() != 1) throw Error("ConfigError", "analytic kernel requires a single box per side");
    AxisBox b;
    b.d = spec.dimension;
    for (int a = 0; a < b.d; ++a) {
        b.lo[a] = bs[0].lo[a].get_d();
        b.hi[a] = bs[0].hi[a].get_d();
    }
    return b;
}

nlohmann::json CheckRecord::to_json() const {
    return {{"check", check}, {"j", j}, {"statistic", statistic}, {"bound", bound}, {"pass", pass}};
}

}  // namespace arw
