#pragma once

// Carleman weight l = lambda (d(x) - c1 (t - T/2)^2), theta = e^l, and the
// derived fields Psi, A, B. Analytic weights are differentiated with nested
// forward-mode duals; tabulated weights fall back to grid differences.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "obswave/ad.hpp"
#include "obswave/ensemble.hpp"
#include "obswave/errors.hpp"
#include "obswave/geometry.hpp"
#include "obswave/rng.hpp"

namespace obswave {

struct CarlemanWeight {
    WeightSpec weight;
    MetricField metric;
    double lambda = 1.0;
    double c0 = 0.0;
    double c1 = 0.0;
    double T = 1.0;
    int dim = 1;

    double phi(double t, const Vec2& x) const {
        const double s = t - 0.5 * T;
        return weight.value_at(x, dim) - c1 * s * s;
    }
    double l(double t, const Vec2& x) const { return lambda * phi(t, x); }
    double theta(double t, const Vec2& x) const { return std::exp(l(t, x)); }
    double l_t(double t) const { return -lambda * c1 * (2.0 * t - T); }
    double l_tt() const { return -2.0 * lambda * c1; }
};

/// Weight without the time-horizon gate; the pointwise identities hold for any l.
inline CarlemanWeight make_weight(const WeightSpec& weight, const MetricField& metric, int dim, double T, double lambda,
                                  double c0, double c1) {
    if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidParameters, "lambda must be positive");
    CarlemanWeight cw;
    cw.weight = weight;
    cw.metric = metric;
    cw.lambda = lambda;
    cw.c0 = c0;
    cw.c1 = c1;
    cw.T = T;
    cw.dim = dim;
    return cw;
}

inline CarlemanWeight build_weight(const WeightSpec& weight, const MetricField& metric, const Grid& grid, double lambda,
                                   double c0, double c1) {
    if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidParameters, "lambda must be positive");
    const auto rep = check_condition2(weight, metric, grid, c0, c1);
    if (!rep.ok()) throw Error(ErrorKind::InvalidParameters, "weight geometry rejected: " + rep.failures());
    CarlemanWeight cw = make_weight(weight, metric, grid.dim, grid.T, lambda, c0, c1);
    cw.weight.mu0 = rep.mu0;
    return cw;
}

namespace detail {
template <class P>
using elem_t = std::decay_t<decltype(std::declval<P>()[0])>;
}

/// Space-time derivatives of the weight fields. Point X = (t, x_1, .., x_Dim);
/// spatial indices below run over 0..Dim-1 and map to X[1 + i].
template <int Dim>
class CarlemanCalculus {
public:
    static constexpr int N = Dim + 1;
    template <class S>
    using Point = std::array<S, N>;

    explicit CarlemanCalculus(const CarlemanWeight& cw) : cw_(cw) {
        if (!cw.weight.analytic()) throw Error(ErrorKind::InvalidParameters, "exact derivatives need an analytic weight");
    }

    const CarlemanWeight& weight() const { return cw_; }

    template <class S>
    static std::array<S, Dim> space(const Point<S>& X) {
        std::array<S, Dim> x;
        for (int i = 0; i < Dim; ++i) x[i] = X[i + 1];
        return x;
    }

    template <class S>
    S l(const Point<S>& X) const {
        const S s = X[0] - 0.5 * cw_.T;
        return cw_.lambda * (cw_.weight.template eval<S, Dim>(space(X)) - cw_.c1 * s * s);
    }
    template <class S>
    S b(const Point<S>& X, int i, int j) const {
        return cw_.metric.template at<S, Dim>(space(X))[i][j];
    }
    template <class S>
    S db(const Point<S>& X, int i, int j, int k) const {
        return ad::partial<N>([this, i, j](const auto& Y) { return b(Y, i, j); }, X, k + 1);
    }
    template <class S>
    Point<S> dl(const Point<S>& X) const {
        return ad::gradient<N>([this](const auto& Y) { return l(Y); }, X);
    }
    /// l_{ac} with a, c indexing X (0 = t).
    template <class S>
    S d2l(const Point<S>& X, int a, int c) const {
        return ad::partial<N>([this, a](const auto& Y) { return dl(Y)[a]; }, X, c);
    }
    /// sum_ij (b^{ij} l_i)_j
    template <class S>
    S div_b_grad_l(const Point<S>& X) const {
        S r(0.0);
        for (int j = 0; j < Dim; ++j)
            r = r + ad::partial<N>([this, j](const auto& Y) { return flux_l(Y, j); }, X, j + 1);
        return r;
    }
    template <class S>
    S psi(const Point<S>& X) const {
        return d2l(X, 0, 0) + div_b_grad_l(X) - cw_.lambda * cw_.c0;
    }
    template <class S>
    S A(const Point<S>& X) const {
        const auto g = dl(X);
        S r = g[0] * g[0] - d2l(X, 0, 0) - psi(X);
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j)
                r = r - (b(X, i, j) * g[i + 1] * g[j + 1] - db(X, i, j, j) * g[i + 1] - b(X, i, j) * d2l(X, i + 1, j + 1));
        return r;
    }
    template <class S>
    S B(const Point<S>& X) const {
        S r = A(X) * psi(X);
        r = r + ad::partial<N>([this](const auto& Y) { return A(Y) * dl(Y)[0]; }, X, 0);
        for (int j = 0; j < Dim; ++j)
            r = r - ad::partial<N>(
                        [this, j](const auto& Y) {
                            using T = detail::elem_t<decltype(Y)>;
                            const auto g = dl(Y);
                            const T a = A(Y);
                            T s(0.0);
                            for (int i = 0; i < Dim; ++i) s = s + a * b(Y, i, j) * g[i + 1];
                            return s;
                        },
                        X, j + 1);
        const S psi_tt = ad::partial<N>([this](const auto& Y) { return dpsi(Y, 0); }, X, 0);
        S div(0.0);
        for (int j = 0; j < Dim; ++j)
            div = div + ad::partial<N>(
                            [this, j](const auto& Y) {
                                using T = detail::elem_t<decltype(Y)>;
                                T s(0.0);
                                for (int i = 0; i < Dim; ++i) s = s + b(Y, i, j) * dpsi(Y, i + 1);
                                return s;
                            },
                            X, j + 1);
        return r + 0.5 * (psi_tt - div);
    }
    template <class S>
    S dpsi(const Point<S>& X, int a) const {
        return ad::partial<N>([this](const auto& Y) { return psi(Y); }, X, a);
    }

    /// Coefficient of v_t^2: l_tt + sum (b^{ij} l_i)_j - Psi.
    double coeff_vt(const Point<double>& X) const { return d2l(X, 0, 0) + div_b_grad_l(X) - psi(X); }

    /// sum_j [(b^{ij} l_j)_t + b^{ij} l_{tj}] for each i.
    std::array<double, Dim> coeff_vt_vi(const Point<double>& X) const {
        std::array<double, Dim> out{};
        for (int i = 0; i < Dim; ++i) {
            double s = 0.0;
            for (int j = 0; j < Dim; ++j) {
                s += ad::partial<N>([this, i, j](const auto& Y) { return b(Y, i, j) * dl(Y)[j + 1]; }, X, 0);
                s += b(X, i, j) * d2l(X, 0, j + 1);
            }
            out[i] = s;
        }
        return out;
    }

    /// Matrix of the v_i v_j form.
    Eigen::Matrix<double, Dim, Dim> coeff_vivj(const Point<double>& X) const {
        Eigen::Matrix<double, Dim, Dim> C;
        const double ps = psi(X);
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j) {
                double c = ad::partial<N>([this, i, j](const auto& Y) { return b(Y, i, j) * dl(Y)[0]; }, X, 0);
                for (int ip = 0; ip < Dim; ++ip)
                    for (int jp = 0; jp < Dim; ++jp) {
                        c += 2.0 * b(X, i, jp) *
                             ad::partial<N>([this, ip, j](const auto& Y) { return b(Y, ip, j) * dl(Y)[ip + 1]; }, X, jp + 1);
                        c -= ad::partial<N>(
                            [this, i, j, ip, jp](const auto& Y) { return b(Y, i, j) * b(Y, ip, jp) * dl(Y)[ip + 1]; }, X,
                            jp + 1);
                    }
                C(i, j) = c + ps * b(X, i, j);
            }
        return C;
    }

private:
    const CarlemanWeight& cw_;

    template <class S>
    S flux_l(const Point<S>& X, int j) const {
        const auto g = dl(X);
        S s(0.0);
        for (int i = 0; i < Dim; ++i) s = s + b(X, i, j) * g[i + 1];
        return s;
    }
};

/// A and B on the space-time grid. Both are stored through time-independent
/// nodal fields: with s = 2t - T,
///   A = lambda^2 c1^2 s^2 + A0(x),
///   B = beta(x) A - 4 lambda^3 c1^3 s^2 - gamma(x).
struct ABFields {
    Grid grid;
    double lambda = 0.0;
    double c1 = 0.0;
    bool exact = true;  // false when spatial derivatives came from differences
    std::vector<double> psi, A0, beta, gamma;

    double A(int k, int p) const {
        const double s = 2.0 * grid.time(k) - grid.T;
        return lambda * lambda * c1 * c1 * s * s + A0[p];
    }
    double B(int k, int p) const {
        const double s = 2.0 * grid.time(k) - grid.T;
        return beta[p] * A(k, p) - 4.0 * std::pow(lambda * c1, 3) * s * s - gamma[p];
    }
    double min_B() const {
        double m = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= grid.nt; ++k)
            for (int p = 0; p < grid.size(); ++p) m = std::min(m, B(k, p));
        return m;
    }
};

namespace detail {

template <int Dim>
void assemble_exact(const CarlemanWeight& cw, ABFields& f) {
    CarlemanCalculus<Dim> calc(cw);
    const auto& g = f.grid;
    for (int p = 0; p < g.size(); ++p) {
        const auto x = g.coords(p);
        typename CarlemanCalculus<Dim>::template Point<double> X;
        X[0] = 0.5 * cw.T;
        for (int i = 0; i < Dim; ++i) X[i + 1] = x[i];
        const double ps = calc.psi(X);
        f.psi[p] = ps;
        f.A0[p] = calc.A(X);
        f.beta[p] = ps + cw.l_tt() - calc.div_b_grad_l(X);
        const auto gl = calc.dl(X);
        double gam = 0.0;
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j) {
                const double Aj = ad::partial<Dim + 1>([&calc](const auto& Y) { return calc.A(Y); }, X, j + 1);
                gam += calc.b(X, i, j) * gl[i + 1] * Aj;
            }
        double div = 0.0;
        for (int j = 0; j < Dim; ++j)
            div += ad::partial<Dim + 1>(
                [&calc, j](const auto& Y) {
                    using T = elem_t<decltype(Y)>;
                    T s(0.0);
                    for (int i = 0; i < Dim; ++i) s = s + calc.b(Y, i, j) * calc.dpsi(Y, i + 1);
                    return s;
                },
                X, j + 1);
        f.gamma[p] = gam + 0.5 * div;
    }
}

inline void assemble_differenced(const CarlemanWeight& cw, ABFields& f) {
    const auto& g = f.grid;
    const int n = g.size();
    const double lam = cw.lambda;
    const WeightSample w = cw.weight.sample(g);
    std::vector<double> divpl(n);
    for (int p = 0; p < n; ++p) {
        const auto x = g.coords(p);
        double div = 0.0, quad = 0.0, drift = 0.0, hess = 0.0;
        for (int i = 0; i < g.dim; ++i)
            for (int j = 0; j < g.dim; ++j) {
                const double bij = cw.metric.entry(i, j, x);
                const double bij_j = cw.metric.derivative(i, j, j);
                div += bij_j * w.grad[p][i] + bij * w.hess[p][i][j];
                quad += bij * w.grad[p][i] * w.grad[p][j];
                drift += bij_j * w.grad[p][i];
                hess += bij * w.hess[p][i][j];
            }
        divpl[p] = lam * div;
        f.psi[p] = cw.l_tt() + lam * div - lam * cw.c0;
        // at t = T/2: l_t = 0
        f.A0[p] = -cw.l_tt() - (lam * lam * quad - lam * drift - lam * hess) - f.psi[p];
        f.beta[p] = f.psi[p] + cw.l_tt() - divpl[p];
    }
    std::array<std::vector<double>, 2> dA, dpsi;
    for (int k = 0; k < g.dim; ++k) {
        dA[k] = WeightSpec::differentiate(g, f.A0, k);
        dpsi[k] = WeightSpec::differentiate(g, f.psi, k);
    }
    std::array<std::vector<double>, 2> flux;
    for (int j = 0; j < g.dim; ++j) {
        flux[j].assign(n, 0.0);
        for (int p = 0; p < n; ++p)
            for (int i = 0; i < g.dim; ++i) flux[j][p] += cw.metric.entry(i, j, g.coords(p)) * dpsi[i][p];
    }
    std::vector<double> div(n, 0.0);
    for (int j = 0; j < g.dim; ++j) {
        const auto d = WeightSpec::differentiate(g, flux[j], j);
        for (int p = 0; p < n; ++p) div[p] += d[p];
    }
    for (int p = 0; p < n; ++p) {
        const auto x = g.coords(p);
        double gam = 0.0;
        for (int i = 0; i < g.dim; ++i)
            for (int j = 0; j < g.dim; ++j) gam += cw.metric.entry(i, j, x) * lam * w.grad[p][i] * dA[j][p];
        f.gamma[p] = gam + 0.5 * div[p];
    }
}

}  // namespace detail

inline ABFields assemble_AB(const CarlemanWeight& cw, const Grid& grid) {
    ABFields f;
    f.grid = grid;
    f.lambda = cw.lambda;
    f.c1 = cw.c1;
    const int n = grid.size();
    for (auto* v : {&f.psi, &f.A0, &f.beta, &f.gamma}) v->assign(static_cast<std::size_t>(n), 0.0);
    if (cw.weight.analytic()) {
        f.exact = true;
        if (grid.dim == 1) detail::assemble_exact<1>(cw, f);
        else detail::assemble_exact<2>(cw, f);
    } else {
        f.exact = false;
        detail::assemble_differenced(cw, f);
    }
    return f;
}

/// Right side of the B lower bound: 8 c1 (4 R1^2 - c1^2 T^2) lambda^3.
inline double b_lower_bound(double R1, double c1, double T, double lambda) {
    return 8.0 * c1 * (4.0 * R1 * R1 - c1 * c1 * T * T) * lambda * lambda * lambda;
}

struct Lambda0Report {
    double lambda0 = 0.0;
    double R1 = 0.0;
    std::vector<double> checked;  // lambdas >= lambda0 where the bound was re-verified
    std::vector<double> margin;   // min B / bound at each checked lambda
    bool ok = false;
};

/// Smallest lambda in [lo, hi] with min B >= 8 c1 (4 R1^2 - c1^2 T^2) lambda^3, by bisection,
/// followed by a re-check on a geometric ladder above it.
inline Lambda0Report bisect_lambda0(const WeightSpec& weight, const MetricField& metric, const Grid& grid, double c0,
                                    double c1, double lo = 1e-3, double hi = 1e4, double rtol = 1e-6) {
    const auto rep = check_condition2(weight, metric, grid, c0, c1);
    Lambda0Report out;
    out.R1 = rep.R1;
    auto holds = [&](double lam) {
        const auto f = assemble_AB(make_weight(weight, metric, grid.dim, grid.T, lam, c0, c1), grid);
        return f.min_B() >= b_lower_bound(rep.R1, c1, grid.T, lam);
    };
    if (!holds(hi)) throw Error(ErrorKind::NoConvergence, "B bound fails even at the upper lambda bracket");
    if (holds(lo)) {
        hi = lo;
    } else {
        while ((hi - lo) > rtol * hi) {
            const double mid = 0.5 * (lo + hi);
            (holds(mid) ? hi : lo) = mid;
        }
    }
    out.lambda0 = hi;
    out.ok = true;
    for (double f : {1.0, 1.5, 2.0, 4.0, 8.0, 16.0, 64.0}) {
        const double lam = hi * f;
        const auto ab = assemble_AB(make_weight(weight, metric, grid.dim, grid.T, lam, c0, c1), grid);
        const double m = ab.min_B() / b_lower_bound(rep.R1, c1, grid.T, lam);
        out.checked.push_back(lam);
        out.margin.push_back(m);
        out.ok = out.ok && m >= 1.0;
    }
    return out;
}

/// Cubic least-squares fit of B(lambda) at one space-time node; returns coefficients of 1, lambda, lambda^2, lambda^3.
inline std::array<double, 4> fit_B_polynomial(const WeightSpec& weight, const MetricField& metric, const Grid& grid,
                                              double c0, double c1, int k, int p, const std::vector<double>& lambdas) {
    Eigen::MatrixXd V(lambdas.size(), 4);
    Eigen::VectorXd y(lambdas.size());
    for (std::size_t r = 0; r < lambdas.size(); ++r) {
        const double lam = lambdas[r];
        // scale columns to keep the Vandermonde system well conditioned
        for (int c = 0; c < 4; ++c) V(r, c) = std::pow(lam / lambdas.back(), c);
        y[r] = assemble_AB(make_weight(weight, metric, grid.dim, grid.T, lam, c0, c1), grid).B(k, p);
    }
    const Eigen::VectorXd a = V.colPivHouseholderQr().solve(y);
    std::array<double, 4> out{};
    for (int c = 0; c < 4; ++c) out[c] = a[c] / std::pow(lambdas.back(), c);
    return out;
}

namespace detail {
/// Gradient of q = sum b^{ij} d_i d_j for an analytic weight.
template <int Dim>
Vec2 grad_q(const WeightSpec& weight, const MetricField& metric, const Vec2& x) {
    auto q = [&](const auto& y) {
        using S = elem_t<decltype(y)>;
        const auto gd = ad::gradient<Dim>([&](const auto& u) { return weight.eval<elem_t<decltype(u)>, Dim>(u); }, y);
        const auto b = metric.at<S, Dim>(y);
        S s(0.0);
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j) s = s + b[i][j] * gd[i] * gd[j];
        return s;
    };
    std::array<double, Dim> y;
    for (int i = 0; i < Dim; ++i) y[i] = x[i];
    const auto g = ad::gradient<Dim>(q, y);
    Vec2 out{0.0, 0.0};
    for (int i = 0; i < Dim; ++i) out[i] = g[i];
    return out;
}
}  // namespace detail

/// Leading lambda^3 coefficient of B in closed form:
/// (4c1 + c0) q + sum b^{ij} d_i q_j - (8c1^3 + c0 c1^2)(2t - T)^2, q = sum b^{ij} d_i d_j.
inline double leading_B_coefficient(const WeightSpec& weight, const MetricField& metric, const Grid& grid, double c0,
                                    double c1, int k, int p) {
    const WeightSample w = weight.sample(grid);
    std::vector<double> q(static_cast<std::size_t>(grid.size()), 0.0);
    for (int r = 0; r < grid.size(); ++r) {
        const auto x = grid.coords(r);
        for (int i = 0; i < grid.dim; ++i)
            for (int j = 0; j < grid.dim; ++j) q[r] += metric.entry(i, j, x) * w.grad[r][i] * w.grad[r][j];
    }
    double transport = 0.0;
    const auto x = grid.coords(p);
    if (weight.analytic()) {
        const auto dq = grid.dim == 1 ? detail::grad_q<1>(weight, metric, x) : detail::grad_q<2>(weight, metric, x);
        for (int i = 0; i < grid.dim; ++i)
            for (int j = 0; j < grid.dim; ++j) transport += metric.entry(i, j, x) * w.grad[p][i] * dq[j];
    } else {
        for (int j = 0; j < grid.dim; ++j) {
            const auto dq = WeightSpec::differentiate(grid, q, j);
            for (int i = 0; i < grid.dim; ++i) transport += metric.entry(i, j, x) * w.grad[p][i] * dq[p];
        }
    }
    const double s = 2.0 * grid.time(k) - grid.T;
    return (4.0 * c1 + c0) * q[p] + transport - (8.0 * c1 * c1 * c1 + c0 * c1 * c1) * s * s;
}

/// Nodewise certificates of the energy coefficients.
struct CoefficientCertificate {
    double max_vt_error = 0.0;      // max |coeff(v_t^2) - lambda c0|
    double max_cross = 0.0;         // max |coeff(v_i v_t)|
    double min_vivj_margin = 0.0;   // min eigenvalue of coeff(v_i v_j) - lambda (mu0 - 4c1 - c0) b
    double scale = 0.0;             // max |coeff(v_i v_j)| for relative tolerances
};

namespace detail {
template <int Dim>
CoefficientCertificate certify(const CarlemanWeight& cw, const Grid& grid, double mu0) {
    CarlemanCalculus<Dim> calc(cw);
    CoefficientCertificate c;
    c.min_vivj_margin = std::numeric_limits<double>::infinity();
    const std::array<double, 3> times{0.0, 0.5 * cw.T, cw.T};
    for (double t : times)
        for (int p = 0; p < grid.size(); ++p) {
            const auto x = grid.coords(p);
            std::array<double, Dim + 1> X;
            X[0] = t;
            for (int i = 0; i < Dim; ++i) X[i + 1] = x[i];
            c.max_vt_error = std::max(c.max_vt_error, std::fabs(calc.coeff_vt(X) - cw.lambda * cw.c0));
            for (double v : calc.coeff_vt_vi(X)) c.max_cross = std::max(c.max_cross, std::fabs(v));
            const auto C = calc.coeff_vivj(X);
            Eigen::Matrix<double, Dim, Dim> Bm;
            for (int i = 0; i < Dim; ++i)
                for (int j = 0; j < Dim; ++j) Bm(i, j) = calc.b(X, i, j);
            const Eigen::Matrix<double, Dim, Dim> D = C - cw.lambda * (mu0 - 4 * cw.c1 - cw.c0) * Bm;
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, Dim, Dim>> es(0.5 * (D + D.transpose()));
            c.min_vivj_margin = std::min(c.min_vivj_margin, es.eigenvalues().minCoeff());
            c.scale = std::max(c.scale, C.cwiseAbs().maxCoeff());
        }
    return c;
}
}  // namespace detail

inline CoefficientCertificate certify_coefficients(const CarlemanWeight& cw, const Grid& grid, double mu0) {
    return grid.dim == 1 ? detail::certify<1>(cw, grid, mu0) : detail::certify<2>(cw, grid, mu0);
}

/// Terms of the pointwise weighted identity at one point.
struct IdentityTerms {
    double multiplier = 0.0;       // theta M (u_tt - div(b grad u))
    double divergence = 0.0;       // sum_j d_j V_j
    double time_derivative = 0.0;  // d_t W
    double rhs = 0.0;
    double scale = 0.0;            // sum of magnitudes of all contributions

    double residual() const { return multiplier + divergence + time_derivative - rhs; }
    double relative() const { return scale > 0.0 ? std::fabs(residual()) / scale : 0.0; }
};

/// step > 0 replaces the outer divergence, d/dt and the wave operator by
/// centered differences of that step; step == 0 differentiates exactly.
template <int Dim, class U>
IdentityTerms identity_residual(const CarlemanWeight& cw, const U& u, const std::array<double, Dim + 1>& X0,
                                double step = 0.0) {
    constexpr int N = Dim + 1;
    CarlemanCalculus<Dim> calc(cw);

    auto v = [&](const auto& X) { return exp(calc.l(X)) * u(X); };
    auto parts = [&](const auto& X) {
        using S = detail::elem_t<decltype(X)>;
        struct P {
            S v;
            std::array<S, N> dv, dl;
            S psi, A;
        } q{v(X), ad::gradient<N>(v, X), calc.dl(X), calc.psi(X), calc.A(X)};
        return q;
    };
    auto V = [&](const auto& X, int j) {
        using S = detail::elem_t<decltype(X)>;
        const auto q = parts(X);
        S r(0.0);
        for (int i = 0; i < Dim; ++i) {
            const S bij = calc.b(X, i, j);
            for (int ip = 0; ip < Dim; ++ip)
                for (int jp = 0; jp < Dim; ++jp) {
                    const S bb = bij * calc.b(X, ip, jp);
                    r = r + 2.0 * bb * q.dl[ip + 1] * q.dv[i + 1] * q.dv[jp + 1] -
                        bb * q.dl[i + 1] * q.dv[ip + 1] * q.dv[jp + 1];
                }
            r = r - 2.0 * bij * q.dl[0] * q.dv[i + 1] * q.dv[0] + bij * q.dl[i + 1] * q.dv[0] * q.dv[0] +
                q.psi * bij * q.dv[i + 1] * q.v -
                (q.A * q.dl[i + 1] + 0.5 * calc.dpsi(X, i + 1)) * bij * q.v * q.v;
        }
        return r;
    };
    auto W = [&](const auto& X) {
        using S = detail::elem_t<decltype(X)>;
        const auto q = parts(X);
        S r(0.0);
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j) {
                const S bij = calc.b(X, i, j);
                r = r + bij * q.dl[0] * q.dv[i + 1] * q.dv[j + 1] - 2.0 * bij * q.dl[i + 1] * q.dv[j + 1] * q.dv[0];
            }
        return r + q.dl[0] * q.dv[0] * q.dv[0] - q.psi * q.dv[0] * q.v +
               (q.A * q.dl[0] + 0.5 * calc.dpsi(X, 0)) * q.v * q.v;
    };
    auto flux_u = [&](const auto& X, int j) {
        using S = detail::elem_t<decltype(X)>;
        const auto du = ad::gradient<N>(u, X);
        S s(0.0);
        for (int i = 0; i < Dim; ++i) s = s + calc.b(X, i, j) * du[i + 1];
        return s;
    };
    auto shifted = [&](int a, double by) {
        auto X = X0;
        X[a] += by;
        return X;
    };

    IdentityTerms out;
    const auto q = parts(X0);
    double Lu, div = 0.0, dtW;
    if (step > 0.0) {
        const double h = step;
        Lu = (u(shifted(0, h)) - 2.0 * u(X0) + u(shifted(0, -h))) / (h * h);
        for (int j = 0; j < Dim; ++j) {
            Lu -= (flux_u(shifted(j + 1, h), j) - flux_u(shifted(j + 1, -h), j)) / (2.0 * h);
            div += (V(shifted(j + 1, h), j) - V(shifted(j + 1, -h), j)) / (2.0 * h);
        }
        dtW = (W(shifted(0, h)) - W(shifted(0, -h))) / (2.0 * h);
    } else {
        Lu = ad::partial<N>([&](const auto& X) { return ad::gradient<N>(u, X)[0]; }, X0, 0);
        for (int j = 0; j < Dim; ++j) {
            Lu -= ad::partial<N>([&, j](const auto& X) { return flux_u(X, j); }, X0, j + 1);
            div += ad::partial<N>([&, j](const auto& X) { return V(X, j); }, X0, j + 1);
        }
        dtW = ad::partial<N>(W, X0, 0);
    }
    double M = -2.0 * q.dl[0] * q.dv[0] + q.psi * q.v;
    for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) M += 2.0 * calc.b(X0, i, j) * q.dl[i + 1] * q.dv[j + 1];
    const double theta = std::exp(calc.l(X0));
    out.multiplier = theta * M * Lu;
    out.divergence = div;
    out.time_derivative = dtW;

    const double vt2 = calc.coeff_vt(X0) * q.dv[0] * q.dv[0];
    const auto cross = calc.coeff_vt_vi(X0);
    double cr = 0.0;
    for (int i = 0; i < Dim; ++i) cr -= 2.0 * cross[i] * q.dv[i + 1] * q.dv[0];
    const auto C = calc.coeff_vivj(X0);
    double form = 0.0;
    for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) form += C(i, j) * q.dv[i + 1] * q.dv[j + 1];
    const double Bv2 = calc.B(X0) * q.v * q.v;
    out.rhs = vt2 + cr + form + Bv2 + M * M;
    out.scale = std::fabs(out.multiplier) + std::fabs(div) + std::fabs(dtW) + std::fabs(vt2) + std::fabs(cr) +
                std::fabs(form) + std::fabs(Bv2) + M * M;
    return out;
}

struct MultiplierTerms {
    double lhs = 0.0;
    double rhs = 0.0;
    double scale = 0.0;
    double residual() const { return lhs - rhs; }
    double relative() const { return scale > 0.0 ? std::fabs(residual()) / scale : 0.0; }
};

/// Multiplier identity for the hidden-regularity argument with vector field h(t, x).
template <int Dim, class U, class H>
MultiplierTerms multiplier_identity_residual(const MetricField& metric, const U& z, const H& hfield,
                                             const std::array<double, Dim + 1>& X0, double step = 0.0) {
    constexpr int N = Dim + 1;
    auto b = [&](const auto& X, int i, int j) {
        using S = detail::elem_t<decltype(X)>;
        std::array<S, Dim> x;
        for (int k = 0; k < Dim; ++k) x[k] = X[k + 1];
        return metric.at<S, Dim>(x)[i][j];
    };
    auto hgrad = [&](const auto& X) {
        using S = detail::elem_t<decltype(X)>;
        const auto dz = ad::gradient<N>(z, X);
        const auto h = hfield(X);
        S s(0.0);
        for (int k = 0; k < Dim; ++k) s = s + h[k] * dz[k + 1];
        return s;
    };
    auto flux = [&](const auto& X, int i) {
        using S = detail::elem_t<decltype(X)>;
        const auto dz = ad::gradient<N>(z, X);
        const auto h = hfield(X);
        const S hz = hgrad(X);
        S bz(0.0), q(0.0);
        for (int j = 0; j < Dim; ++j) bz = bz + b(X, i, j) * dz[j + 1];
        for (int a = 0; a < Dim; ++a)
            for (int c = 0; c < Dim; ++c) q = q + b(X, a, c) * dz[a + 1] * dz[c + 1];
        return 2.0 * hz * bz + h[i] * (dz[0] * dz[0] - q);
    };
    auto flux_z = [&](const auto& X, int j) {
        using S = detail::elem_t<decltype(X)>;
        const auto dz = ad::gradient<N>(z, X);
        S s(0.0);
        for (int i = 0; i < Dim; ++i) s = s + b(X, i, j) * dz[i + 1];
        return s;
    };
    auto zt_hz = [&](const auto& X) { return ad::gradient<N>(z, X)[0] * hgrad(X); };
    auto shifted = [&](int a, double by) {
        auto X = X0;
        X[a] += by;
        return X;
    };

    double div = 0.0, Lz, dt_term;
    if (step > 0.0) {
        const double h = step;
        Lz = (z(shifted(0, h)) - 2.0 * z(X0) + z(shifted(0, -h))) / (h * h);
        for (int i = 0; i < Dim; ++i) {
            div += (flux(shifted(i + 1, h), i) - flux(shifted(i + 1, -h), i)) / (2.0 * h);
            Lz -= (flux_z(shifted(i + 1, h), i) - flux_z(shifted(i + 1, -h), i)) / (2.0 * h);
        }
        dt_term = (zt_hz(shifted(0, h)) - zt_hz(shifted(0, -h))) / (2.0 * h);
    } else {
        Lz = ad::partial<N>([&](const auto& X) { return ad::gradient<N>(z, X)[0]; }, X0, 0);
        for (int i = 0; i < Dim; ++i) {
            div += ad::partial<N>([&, i](const auto& X) { return flux(X, i); }, X0, i + 1);
            Lz -= ad::partial<N>([&, i](const auto& X) { return flux_z(X, i); }, X0, i + 1);
        }
        dt_term = ad::partial<N>(zt_hz, X0, 0);
    }
    const auto dz = ad::gradient<N>(z, X0);
    const double hz = hgrad(X0);
    // h_t . grad z, sum b^{ij} z_i z_k h^k_j, div h, div(b^{ij} h)
    double ht_gz = 0.0, shear = 0.0, divh = 0.0, stretch = 0.0;
    for (int k = 0; k < Dim; ++k) {
        ht_gz += ad::partial<N>([&, k](const auto& X) { return hfield(X)[k]; }, X0, 0) * dz[k + 1];
        divh += ad::partial<N>([&, k](const auto& X) { return hfield(X)[k]; }, X0, k + 1);
    }
    for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) {
            for (int k = 0; k < Dim; ++k) {
                const double hkj = ad::partial<N>([&, k](const auto& X) { return hfield(X)[k]; }, X0, j + 1);
                shear += b(X0, i, j) * dz[i + 1] * dz[k + 1] * hkj;
                stretch += dz[j + 1] * dz[i + 1] *
                           ad::partial<N>([&, i, j, k](const auto& X) { return b(X, i, j) * hfield(X)[k]; }, X0, k + 1);
            }
        }
    MultiplierTerms out;
    out.lhs = -div;
    const double a = Lz * hz, c = dz[0] * ht_gz;
    out.rhs = 2.0 * (a - dt_term + c - shear) - divh * dz[0] * dz[0] + stretch;
    out.scale = std::fabs(div) + 2.0 * (std::fabs(a) + std::fabs(dt_term) + std::fabs(c) + std::fabs(shear)) +
                std::fabs(divh * dz[0] * dz[0]) + std::fabs(stretch);
    return out;
}

struct ItoReport {
    double estimate = 0.0;
    double exact = 0.0;
    double standard_error = 0.0;
    double relative_error = 0.0;
    std::size_t n_paths = 0;
    bool ok = false;  // |estimate - exact| <= 3 standard errors
};

/// Quadratic-variation term E int_Q theta^2 l_t (du_t)^2 for u_t = sigma(x) B(t).
/// Each path evaluates sum_k g_{k+1} (U_{k+1} - U_k) with g = int_G theta^2 l_t sigma^2 dx
/// and U = B^2, i.e. the Ito formula for theta^2 l_t u_t^2 without its drift part;
/// its expectation sum_k g_{k+1} dt is the oracle.
template <class Sigma>
ItoReport ito_correction_check(const Sigma& sigma, const CarlemanWeight& cw, const Grid& grid, std::size_t n_paths,
                               std::uint64_t seed = 1) {
    std::vector<double> g(static_cast<std::size_t>(grid.nt + 1));
    for (int k = 0; k <= grid.nt; ++k) {
        const double t = grid.time(k);
        CompensatedSum s;
        for (int p = 0; p < grid.size(); ++p) {
            const auto x = grid.coords(p);
            const double th = cw.theta(t, x), sg = sigma(x);
            s.add(grid.node_weight(p) * th * th * cw.l_t(t) * sg * sg);
        }
        g[static_cast<std::size_t>(k)] = s.value();
    }
    ItoReport r;
    r.n_paths = n_paths;
    CompensatedSum ex;
    for (int k = 0; k < grid.nt; ++k) ex.add(g[static_cast<std::size_t>(k + 1)] * grid.dt);
    r.exact = ex.value();
    const auto est = parallel_map<double>(n_paths, [&](std::size_t i) {
        const auto path = sample_brownian(seed, i, grid.nt, grid.dt);
        CompensatedSum s;
        double B = 0.0;
        for (int k = 0; k < grid.nt; ++k) {
            const double Bn = B + path.increments[static_cast<std::size_t>(k)];
            s.add(g[static_cast<std::size_t>(k + 1)] * (Bn * Bn - B * B));
            B = Bn;
        }
        return s.value();
    });
    const auto st = sample_stats(est);
    r.estimate = st.mean;
    r.standard_error = st.standard_error;
    r.relative_error = r.exact != 0.0 ? std::fabs(r.estimate - r.exact) / std::fabs(r.exact) : std::fabs(r.estimate);
    r.ok = std::fabs(r.estimate - r.exact) <= 3.0 * r.standard_error;
    return r;
}

}  // namespace obswave
