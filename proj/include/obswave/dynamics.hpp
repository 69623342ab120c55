#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "obswave/expr.hpp"
#include "obswave/grid.hpp"
#include "obswave/metric.hpp"

namespace obswave {

enum class DynamicsMode { Linear, Nonlinear };

/// Lower-order terms of dz_t - div(b grad z) dt = [b1 z_t + b2.grad z + b3 z + f] dt + (b4 z + g) dB.
struct LinearCoefficients {
    Expr b1{"0"};
    std::array<Expr, 2> b2{Expr("0"), Expr("0")};
    Expr b3{"0"};
    double b3_p = std::numeric_limits<double>::infinity();  // exponent of the L^p_x norm used for r2
    Expr b4{"0"};
    Expr f{"0"};
    Expr g{"0"};

    bool depends_on_time() const {
        return b1.depends_on_time() || b2[0].depends_on_time() || b2[1].depends_on_time() ||
               b3.depends_on_time() || b4.depends_on_time() || f.depends_on_time() || g.depends_on_time();
    }
};

/// F(eta, rho, zeta) = f_sin sin(eta) + f_linear eta + f_velocity rho + f_gradient . zeta
/// K(eta) = k_linear eta + k_sin sin(eta)
struct Nonlinearity {
    double f_sin = 0.0;
    double f_linear = 0.0;
    double f_velocity = 0.0;
    std::array<double, 2> f_gradient{0.0, 0.0};
    double k_linear = 0.0;
    double k_sin = 0.0;

    double F(double eta, double rho, double zx, double zy) const {
        return f_sin * std::sin(eta) + f_linear * eta + f_velocity * rho + f_gradient[0] * zx + f_gradient[1] * zy;
    }
    double dF_deta(double eta) const { return f_sin * std::cos(eta) + f_linear; }
    double K(double eta) const { return k_linear * eta + k_sin * std::sin(eta); }
    double dK(double eta) const { return k_linear + k_sin * std::cos(eta); }

    /// Lipschitz constant L of the growth assumptions on F and K.
    double lipschitz() const {
        const double grad = std::hypot(f_gradient[0], f_gradient[1]);
        return std::max({std::fabs(f_sin) + std::fabs(f_linear), std::fabs(f_velocity) + grad,
                         std::fabs(k_linear) + std::fabs(k_sin)});
    }
};

struct ProblemSpec {
    MetricField metric;
    DynamicsMode mode = DynamicsMode::Linear;
    LinearCoefficients linear;
    Nonlinearity nonlinear;
    bool noise = true;
    int picard = 0;  // extra predictor sub-iterations for the velocity estimate

    std::string canonical() const {
        char buf[96];
        std::string s = mode == DynamicsMode::Linear ? "linear" : "nonlinear";
        auto num = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.17g,", v);
            s += buf;
        };
        s += "|metric:";
        num(metric.dim);
        for (double v : metric.base) num(v);
        for (const auto& sl : metric.slope)
            for (double v : sl) num(v);
        if (mode == DynamicsMode::Linear) {
            s += "|" + linear.b1.source() + "|" + linear.b2[0].source() + "|" + linear.b2[1].source() + "|" +
                 linear.b3.source() + "|" + linear.b4.source() + "|" + linear.f.source() + "|" + linear.g.source() + "|";
            num(linear.b3_p);
        } else {
            s += "|";
            for (double v : {nonlinear.f_sin, nonlinear.f_linear, nonlinear.f_velocity, nonlinear.f_gradient[0],
                             nonlinear.f_gradient[1], nonlinear.k_linear, nonlinear.k_sin})
                num(v);
        }
        s += noise ? "|noise" : "|quiet";
        num(picard);
        return s;
    }

    /// FNV-1a of the canonical description.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : canonical()) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }
};

/// r1 = |b2|_inf + |(b1, b4)|_inf and r2 = |b3|_{L^inf_t L^p_x}, recomputed from
/// the fields. In nonlinear mode the sup-norms of the linearized coefficients
/// (partial derivatives of F and K) take their place.
struct CoefficientNorms {
    double r1 = 0.0;
    double r2 = 0.0;
    double p = std::numeric_limits<double>::infinity();

    /// Exponent weight r2^{2/(2 - n/p)} of the z^2 term in the energy functional.
    double energy_weight(int n) const { return r2 > 0.0 ? std::pow(r2, 2.0 / (2.0 - n / p)) : 0.0; }
};

inline CoefficientNorms coefficient_norms(const ProblemSpec& spec, const Grid& grid) {
    CoefficientNorms r;
    if (spec.mode == DynamicsMode::Nonlinear) {
        const auto& nl = spec.nonlinear;
        const double k = spec.noise ? std::fabs(nl.k_linear) + std::fabs(nl.k_sin) : 0.0;
        r.r1 = std::hypot(nl.f_gradient[0], nl.f_gradient[1]) + std::hypot(nl.f_velocity, k);
        r.r2 = std::fabs(nl.f_sin) + std::fabs(nl.f_linear);
        return r;
    }
    const auto& c = spec.linear;
    r.p = c.b3_p;
    const int levels = c.depends_on_time() ? grid.nt + 1 : 1;
    double sup_b2 = 0.0, sup_b14 = 0.0, sup_b3 = 0.0;
    for (int k = 0; k < levels; ++k) {
        const double t = grid.time(k);
        double lp = 0.0;
        for (int p = 0; p < grid.size(); ++p) {
            const auto x = grid.coords(p);
            const double b2 = std::hypot(c.b2[0].at(t, x), grid.dim > 1 ? c.b2[1].at(t, x) : 0.0);
            const double b4 = spec.noise ? c.b4.at(t, x) : 0.0;
            sup_b2 = std::max(sup_b2, b2);
            sup_b14 = std::max(sup_b14, std::hypot(c.b1.at(t, x), b4));
            const double b3 = std::fabs(c.b3.at(t, x));
            if (std::isinf(r.p)) lp = std::max(lp, b3);
            else lp += grid.node_weight(p) * std::pow(b3, r.p);
        }
        sup_b3 = std::max(sup_b3, std::isinf(r.p) ? lp : std::pow(lp, 1.0 / r.p));
    }
    r.r1 = sup_b2 + sup_b14;
    r.r2 = sup_b3;
    return r;
}

} // namespace obswave
