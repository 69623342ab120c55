#pragma once

// Explicit solver for dz_t - div(b grad z) dt = R dt + sigma dB with Dirichlet data.
//
// Velocity lives on half levels (leapfrog); the level-k velocity zt^k is the
// half-step predictor v^{k-1/2} + dt/2 (L z^k + R), so the damping term b1 z_t
// stays explicit. The noise multiplies sigma(z^k) (left point).

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "obswave/dynamics.hpp"
#include "obswave/ensemble.hpp"
#include "obswave/errors.hpp"
#include "obswave/operators.hpp"
#include "obswave/rng.hpp"

namespace obswave {

struct StateSnapshot {
    Vector z;
    Vector zt;
    Vector vhalf;  // v^{k-1/2}; unused at level 0
    int level = 0;
};

struct Trajectory {
    std::vector<StateSnapshot> levels;
    BrownianPath path;
    std::uint64_t spec_hash = 0;

    const StateSnapshot& operator[](int k) const { return levels[static_cast<std::size_t>(k)]; }
    int nt() const { return static_cast<int>(levels.size()) - 1; }
};

/// Coefficient fields at one time level, stored per node.
struct LevelCoefficients {
    Vector b1, b3, b4, f, g;
    std::array<Vector, 2> b2;
};

/// Partial derivatives of the drift R(eta, rho, zeta) and diffusion sigma(eta).
struct DriftPartials {
    Vector r_eta, r_rho, s_eta;
    std::array<Vector, 2> r_zeta;
};

class WaveSolver {
public:
    /// homogeneous = true drops f and g (the difference dynamics of the linear map).
    WaveSolver(const Grid& grid, const ProblemSpec& spec, bool homogeneous = false)
        : grid_(grid), spec_(spec), homogeneous_(homogeneous), ops_((spec.metric.check_ellipticity(grid), grid), spec.metric) {
        cfl_ = cfl_number(grid_, spec_.metric);
        if (cfl_ > 1.0)
            throw Error(ErrorKind::CflViolation, "CFL number " + std::to_string(cfl_) + " exceeds 1; refine nt");
        if (spec_.picard < 0) throw Error(ErrorKind::InvalidParameters, "picard must be >= 0");
        time_dependent_ = spec_.mode == DynamicsMode::Linear && spec_.linear.depends_on_time();
        if (spec_.mode == DynamicsMode::Linear) fill_coefficients(0, static_);
    }

    const Grid& grid() const { return grid_; }
    const ProblemSpec& spec() const { return spec_; }
    const Operators& ops() const { return ops_; }
    double cfl() const { return cfl_; }
    bool homogeneous() const { return homogeneous_; }

    StateSnapshot initial(Vector z0, Vector z1) const {
        StateSnapshot s;
        ops_.zero_boundary(z0);
        ops_.zero_boundary(z1);
        s.z = std::move(z0);
        s.zt = std::move(z1);
        s.vhalf = Vector::Zero(grid_.size());
        s.level = 0;
        return s;
    }

    StateSnapshot initial_from(const std::function<double(double, double)>& z0,
                               const std::function<double(double, double)>& z1) const {
        Vector a(grid_.size()), b(grid_.size());
        for (int p = 0; p < grid_.size(); ++p) {
            const auto x = grid_.coords(p);
            a[p] = z0(x[0], x[1]);
            b[p] = z1(x[0], x[1]);
        }
        return initial(std::move(a), std::move(b));
    }

    /// Advances state (at level k = state.level) to level k + 1.
    StateSnapshot step(const StateSnapshot& s, const BrownianPath& path) const {
        const int k = s.level;
        if (k < 0 || k >= grid_.nt) throw Error(ErrorKind::InvalidParameters, "step: level out of range");
        if (static_cast<int>(path.increments.size()) < grid_.nt)
            throw Error(ErrorKind::InvalidParameters, "step: Brownian path shorter than nt");
        const double dt = grid_.dt;
        LevelCoefficients scratch;
        const auto& c = coefficients(k, scratch);

        const Vector lz = ops_.laplacian * s.z;
        const auto gz = gradient(s.z);
        Vector a = lz + drift(c, s.z, s.zt, gz);
        Vector v = (k == 0 ? Vector(s.zt + 0.5 * dt * a) : Vector(s.vhalf + dt * a));
        if (spec_.noise) v += path.increments[static_cast<std::size_t>(k)] * diffusion(c, s.z);
        ops_.zero_boundary(v);

        StateSnapshot next;
        next.level = k + 1;
        next.z = s.z + dt * v;
        ops_.zero_boundary(next.z);
        next.vhalf = std::move(v);
        if (!next.z.allFinite() || !next.vhalf.allFinite())
            throw Error(ErrorKind::NonFiniteState, "non-finite state at level " + std::to_string(k + 1));
        next.zt = predictor(next.z, next.vhalf, k + 1);
        return next;
    }

    /// Runs to level nt, handing every snapshot (including the initial one) to obs.
    template <class Observer>
    void run(const StateSnapshot& init, const BrownianPath& path, Observer&& obs) const {
        StateSnapshot s = init;
        obs(static_cast<const StateSnapshot&>(s));
        for (int k = s.level; k < grid_.nt; ++k) {
            s = step(s, path);
            obs(static_cast<const StateSnapshot&>(s));
        }
    }

    Trajectory solve(const StateSnapshot& init, const BrownianPath& path) const {
        Trajectory traj;
        traj.path = path;
        traj.spec_hash = spec_.hash();
        traj.levels.reserve(static_cast<std::size_t>(grid_.nt + 1));
        run(init, path, [&](const StateSnapshot& s) { traj.levels.push_back(s); });
        return traj;
    }

    /// Reverse sweep of the discrete scheme. inject(k, zbar) adds dJ/dz^k into
    /// zbar at each level, from nt down to 0. Returns (dJ/dz0, dJ/dz1) as
    /// Euclidean gradients on nodal vectors.
    template <class Injection>
    std::pair<Vector, Vector> adjoint(const Trajectory& traj, Injection&& inject) const {
        const int nt = grid_.nt;
        const int n = grid_.size();
        const double dt = grid_.dt;
        const auto& path = traj.path;
        Vector zbar = Vector::Zero(n);
        Vector vbar = Vector::Zero(n);
        Vector z1bar = Vector::Zero(n);
        inject(nt, zbar);
        ops_.zero_boundary(zbar);
        for (int k = nt - 1; k >= 0; --k) {
            const auto& s = traj[k];
            LevelCoefficients scratch;
            const auto& c = coefficients(k, scratch);
            const Vector lz = ops_.laplacian * s.z;
            const auto gz = gradient(s.z);

            Vector vp = vbar + dt * zbar;
            ops_.zero_boundary(vp);
            Vector zk = zbar;
            Vector vm = Vector::Zero(n);
            const Vector abar = (k == 0 ? 0.5 * dt : dt) * vp;
            if (k == 0) z1bar = vp;
            else vm = vp;

            DriftPartials dp = partials(c, s.z, s.zt, gz);
            if (spec_.noise) zk += path.increments[static_cast<std::size_t>(k)] * dp.s_eta.cwiseProduct(vp);
            Vector lzbar = abar;
            std::array<Vector, 2> gzbar;
            zk += dp.r_eta.cwiseProduct(abar);
            Vector qbar = dp.r_rho.cwiseProduct(abar);
            for (int m = 0; m < grid_.dim; ++m) gzbar[m] = dp.r_zeta[m].cwiseProduct(abar);

            if (k == 0) {
                z1bar += qbar;
            } else {
                // zt^k = q_{M+1}, q_{m+1} = v + dt/2 (Lz + R(z, q_m, Gz)), q_0 = v
                std::vector<Vector> q{s.vhalf};
                for (int m = 0; m < spec_.picard; ++m)
                    q.push_back(predictor_iterate(c, s.z, s.vhalf, q.back(), lz, gz));
                for (int m = static_cast<int>(q.size()) - 1; m >= 0; --m) {
                    vm += qbar;
                    lzbar += 0.5 * dt * qbar;
                    DriftPartials dq = partials(c, s.z, q[static_cast<std::size_t>(m)], gz);
                    zk += 0.5 * dt * dq.r_eta.cwiseProduct(qbar);
                    for (int d = 0; d < grid_.dim; ++d) gzbar[d] += 0.5 * dt * dq.r_zeta[d].cwiseProduct(qbar);
                    qbar = 0.5 * dt * dq.r_rho.cwiseProduct(qbar);
                }
                vm += qbar;
            }
            zk += ops_.laplacian.transpose() * lzbar;
            for (int d = 0; d < grid_.dim; ++d) zk += ops_.gradient[d].transpose() * gzbar[d];
            ops_.zero_boundary(zk);
            ops_.zero_boundary(vm);
            inject(k, zk);
            ops_.zero_boundary(zk);
            zbar = std::move(zk);
            vbar = std::move(vm);
        }
        ops_.zero_boundary(z1bar);
        return {zbar, z1bar};
    }

    const LevelCoefficients& coefficients(int k, LevelCoefficients& scratch) const {
        if (!time_dependent_) return static_;
        fill_coefficients(k, scratch);
        return scratch;
    }

    std::array<Vector, 2> gradient(const Vector& z) const {
        std::array<Vector, 2> g;
        for (int d = 0; d < grid_.dim; ++d) g[d] = ops_.gradient[d] * z;
        return g;
    }

    /// R(eta, rho, zeta) at interior nodes, 0 on the boundary.
    Vector drift(const LevelCoefficients& c, const Vector& eta, const Vector& rho, const std::array<Vector, 2>& zeta) const {
        const int n = grid_.size();
        Vector r = Vector::Zero(n);
        const bool two = grid_.dim > 1;
        if (spec_.mode == DynamicsMode::Linear) {
            for (int p : ops_.interior) {
                double v = c.b1[p] * rho[p] + c.b2[0][p] * zeta[0][p] + c.b3[p] * eta[p];
                if (two) v += c.b2[1][p] * zeta[1][p];
                if (!homogeneous_) v += c.f[p];
                r[p] = v;
            }
        } else {
            const auto& nl = spec_.nonlinear;
            for (int p : ops_.interior) r[p] = nl.F(eta[p], rho[p], zeta[0][p], two ? zeta[1][p] : 0.0);
        }
        return r;
    }

    Vector diffusion(const LevelCoefficients& c, const Vector& eta) const {
        Vector s = Vector::Zero(grid_.size());
        if (spec_.mode == DynamicsMode::Linear) {
            for (int p : ops_.interior) s[p] = c.b4[p] * eta[p] + (homogeneous_ ? 0.0 : c.g[p]);
        } else {
            for (int p : ops_.interior) s[p] = spec_.nonlinear.K(eta[p]);
        }
        return s;
    }

    DriftPartials partials(const LevelCoefficients& c, const Vector& eta, const Vector& rho,
                           const std::array<Vector, 2>& zeta) const {
        (void)rho;
        (void)zeta;
        const int n = grid_.size();
        DriftPartials d;
        if (spec_.mode == DynamicsMode::Linear) {
            d.r_eta = c.b3;
            d.r_rho = c.b1;
            d.s_eta = c.b4;
            d.r_zeta = c.b2;
        } else {
            const auto& nl = spec_.nonlinear;
            d.r_eta.resize(n);
            d.s_eta.resize(n);
            for (int p = 0; p < n; ++p) {
                d.r_eta[p] = nl.dF_deta(eta[p]);
                d.s_eta[p] = nl.dK(eta[p]);
            }
            d.r_rho = Vector::Constant(n, nl.f_velocity);
            d.r_zeta[0] = Vector::Constant(n, nl.f_gradient[0]);
            d.r_zeta[1] = Vector::Constant(n, nl.f_gradient[1]);
        }
        if (!spec_.noise) d.s_eta = Vector::Zero(n);
        for (int p = 0; p < n; ++p) {
            if (ops_.is_interior[static_cast<std::size_t>(p)]) continue;
            d.r_eta[p] = d.r_rho[p] = d.s_eta[p] = 0.0;
            d.r_zeta[0][p] = 0.0;
            if (grid_.dim > 1) d.r_zeta[1][p] = 0.0;
        }
        return d;
    }

private:
    Grid grid_;
    ProblemSpec spec_;
    bool homogeneous_;
    Operators ops_;
    double cfl_ = 0.0;
    bool time_dependent_ = false;
    LevelCoefficients static_;

    void fill_coefficients(int k, LevelCoefficients& c) const {
        const int n = grid_.size();
        const double t = grid_.time(k);
        const auto& lc = spec_.linear;
        for (Vector* v : {&c.b1, &c.b3, &c.b4, &c.f, &c.g, &c.b2[0], &c.b2[1]}) v->setZero(n);
        for (int p = 0; p < n; ++p) {
            const auto x = grid_.coords(p);
            c.b1[p] = lc.b1.at(t, x);
            c.b3[p] = lc.b3.at(t, x);
            c.b4[p] = lc.b4.at(t, x);
            c.f[p] = lc.f.at(t, x);
            c.g[p] = lc.g.at(t, x);
            c.b2[0][p] = lc.b2[0].at(t, x);
            if (grid_.dim > 1) c.b2[1][p] = lc.b2[1].at(t, x);
        }
    }

    Vector predictor_iterate(const LevelCoefficients& c, const Vector& z, const Vector& v, const Vector& q,
                             const Vector& lz, const std::array<Vector, 2>& gz) const {
        Vector out = v + 0.5 * grid_.dt * (lz + drift(c, z, q, gz));
        ops_.zero_boundary(out);
        return out;
    }

    Vector predictor(const Vector& z, const Vector& v, int k) const {
        LevelCoefficients scratch;
        const auto& c = coefficients(k, scratch);
        const Vector lz = ops_.laplacian * z;
        const auto gz = gradient(z);
        Vector q = v;
        for (int m = 0; m <= spec_.picard; ++m) q = predictor_iterate(c, z, v, q, lz, gz);
        return q;
    }
};

/// Integrand of the energy functional: int (z_t^2 + |grad z|^2 + r2^{2/(2-n/p)} z^2) dx.
inline double energy(const Operators& ops, const StateSnapshot& s, double r2, double p, int n) {
    CoefficientNorms r;
    r.r2 = r2;
    r.p = p;
    return ops.l2_norm2(s.zt) + ops.h1_seminorm2(s.z) + r.energy_weight(n) * ops.l2_norm2(s.z);
}

/// Kinetic plus gradient part only.
inline double energy_h(const Operators& ops, const StateSnapshot& s) { return ops.l2_norm2(s.zt) + ops.h1_seminorm2(s.z); }

struct EnergyReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;
    double C = 10.0;
    double empirical_C = 0.0;  // smallest C for which the inequality holds
    bool ok = false;
};

/// lhs = E|(z, z_t)(t)|^2; rhs = C exp(C K T) E|(z, z_t)(s)|^2 + C E int int (f^2 + g^2),
/// K = r1^2 + r2^{1/(2-n/p)} + 1. Energies are supplied per path at s and t.
inline EnergyReport energy_report(const std::vector<double>& e_t, const std::vector<double>& e_s, double forcing,
                                  const CoefficientNorms& r, int n, double T, double C) {
    EnergyReport rep;
    rep.C = C;
    rep.lhs = compensated_sum(e_t) / static_cast<double>(std::max<std::size_t>(1, e_t.size()));
    const double es = compensated_sum(e_s) / static_cast<double>(std::max<std::size_t>(1, e_s.size()));
    const double K = r.r1 * r.r1 + (r.r2 > 0.0 ? std::pow(r.r2, 1.0 / (2.0 - n / r.p)) : 0.0) + 1.0;
    auto rhs = [&](double c) { return c * std::exp(c * K * T) * es + c * forcing; };
    rep.rhs = rhs(C);
    rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : (rep.lhs > 0.0 ? INFINITY : 0.0);
    rep.ok = rep.lhs <= rep.rhs;
    if (rep.lhs <= 0.0) {
        rep.empirical_C = 0.0;
    } else if (es <= 0.0 && forcing <= 0.0) {
        rep.empirical_C = INFINITY;
    } else {
        double lo = 0.0, hi = 1.0;
        while (rhs(hi) < rep.lhs && hi < 1e6) hi *= 2.0;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (rhs(mid) >= rep.lhs ? hi : lo) = mid;
        }
        rep.empirical_C = hi;
    }
    return rep;
}

/// Squared L^2 norms of f and g over (0,T) x G.
struct ForcingNorms {
    double f2 = 0.0;
    double g2 = 0.0;
};

inline ForcingNorms forcing_norms(const WaveSolver& solver) {
    ForcingNorms out;
    const auto& g = solver.grid();
    if (solver.spec().mode != DynamicsMode::Linear || solver.homogeneous()) return out;
    const auto& lc = solver.spec().linear;
    CompensatedSum sf, sg;
    for (int k = 0; k <= g.nt; ++k) {
        const double t = g.time(k);
        for (int p = 0; p < g.size(); ++p) {
            const auto x = g.coords(p);
            const double w = g.time_weight(k) * g.node_weight(p);
            const double f = lc.f.at(t, x);
            sf.add(w * f * f);
            if (solver.spec().noise) {
                const double gg = lc.g.at(t, x);
                sg.add(w * gg * gg);
            }
        }
    }
    out.f2 = sf.value();
    out.g2 = sg.value();
    return out;
}

/// Space-time integral int_0^T int_G (f^2 + g^2) for the linear forcings.
inline double forcing_norm2(const WaveSolver& solver) {
    const auto n = forcing_norms(solver);
    return n.f2 + n.g2;
}

/// Checks the energy inequality between levels ks <= kt on an ensemble.
inline EnergyReport verify_energy_estimate(const std::vector<Trajectory>& ensemble, const WaveSolver& solver, int ks,
                                           int kt, double C) {
    const auto& g = solver.grid();
    if (ks < 0 || kt > g.nt || ks > kt) throw Error(ErrorKind::InvalidParameters, "verify_energy_estimate: need 0 <= s <= t <= T");
    std::vector<double> es, et;
    for (const auto& tr : ensemble) {
        es.push_back(energy_h(solver.ops(), tr[ks]));
        et.push_back(energy_h(solver.ops(), tr[kt]));
    }
    return energy_report(et, es, forcing_norm2(solver), coefficient_norms(solver.spec(), g), g.dim, g.T, C);
}

} // namespace obswave
