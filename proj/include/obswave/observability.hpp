#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "obswave/ensemble.hpp"
#include "obswave/geometry.hpp"
#include "obswave/solver.hpp"

namespace obswave {

enum class ObservationKind { Boundary, Internal };

inline const char* to_string(ObservationKind k) { return k == ObservationKind::Boundary ? "boundary" : "internal"; }

/// Linear map from a nodal field z to its observation at one time level,
/// with the spatial quadrature weight of every row.
/// Boundary rows: dz/dnu at Gamma_0 nodes (3-point one-sided stencil).
/// Internal rows: each component of grad z at collar nodes.
struct TraceOperator {
    ObservationKind kind = ObservationKind::Boundary;
    int components = 1;
    std::vector<int> nodes;
    SparseMatrix matrix;
    Vector weights;

    TraceOperator() = default;
    TraceOperator(ObservationKind k, const BoundaryPartition& part, const Operators& ops) : kind(k) {
        using Triplet = Eigen::Triplet<double>;
        const Grid& g = ops.grid;
        std::vector<Triplet> t;
        std::vector<double> w;
        auto copy_row = [&](const SparseMatrix& m, int p, int row, double scale) {
            for (SparseMatrix::InnerIterator it(m, p); it; ++it) t.emplace_back(row, it.col(), scale * it.value());
        };
        if (k == ObservationKind::Boundary) {
            if (part.gamma0.empty()) throw Error(ErrorKind::EmptyGamma0, "boundary observation needs a nonempty Gamma_0");
            nodes = part.gamma0;
            for (std::size_t n = 0; n < nodes.size(); ++n) {
                const int p = nodes[n];
                const Vec2& nu = part.gamma0_normals[n];
                double wt = 1.0;
                for (int a = 0; a < g.dim; ++a) {
                    if (nu[a] != 0.0) copy_row(ops.gradient[a], p, static_cast<int>(n), nu[a]);
                    else wt *= g.h[a];
                }
                w.push_back(wt);
            }
        } else {
            if (part.collar.empty()) throw Error(ErrorKind::EmptyGamma0, "internal observation needs a nonempty collar");
            components = g.dim;
            nodes = part.collar;
            for (std::size_t n = 0; n < nodes.size(); ++n) {
                const int p = nodes[n];
                for (int a = 0; a < g.dim; ++a) {
                    copy_row(ops.gradient[a], p, static_cast<int>(n) * g.dim + a, 1.0);
                    w.push_back(g.node_weight(p) * part.collar_factor[n]);
                }
            }
        }
        matrix.resize(static_cast<Eigen::Index>(w.size()), g.size());
        matrix.setFromTriplets(t.begin(), t.end());
        weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    }

    int rows() const { return static_cast<int>(matrix.rows()); }
    Vector apply(const Vector& z) const { return matrix * z; }
};

/// Observation time series, one vector of trace rows per time level.
struct ObservationTrace {
    ObservationKind kind = ObservationKind::Boundary;
    int components = 1;
    std::vector<int> nodes;
    Vector weights;
    std::vector<Vector> levels;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;

    int nt() const { return static_cast<int>(levels.size()) - 1; }
    double time_weight(int k) const { return (k == 0 || k == nt()) ? 0.5 * dt : dt; }

    /// Trapezoid-in-time, trapezoid-in-space squared norm.
    double norm2() const { return inner(*this); }

    double inner(const ObservationTrace& o) const {
        if (o.levels.size() != levels.size() || (!levels.empty() && o.levels[0].size() != levels[0].size()))
            throw Error(ErrorKind::InvalidParameters, "trace shapes differ");
        CompensatedSum s;
        for (int k = 0; k <= nt(); ++k) s.add(time_weight(k) * levels[k].cwiseProduct(weights).dot(o.levels[k]));
        return s.value();
    }

    ObservationTrace& operator-=(const ObservationTrace& o) {
        for (std::size_t k = 0; k < levels.size(); ++k) levels[k] -= o.levels[k];
        return *this;
    }
    ObservationTrace& operator+=(const ObservationTrace& o) {
        for (std::size_t k = 0; k < levels.size(); ++k) levels[k] += o.levels[k];
        return *this;
    }
    ObservationTrace& operator*=(double a) {
        for (auto& v : levels) v *= a;
        return *this;
    }
};

/// Builds a trace level by level; usable as a WaveSolver::run observer.
class TraceRecorder {
public:
    TraceRecorder(const TraceOperator& op, const Grid& grid, const BrownianPath& path) : op_(op) {
        trace_.kind = op.kind;
        trace_.components = op.components;
        trace_.nodes = op.nodes;
        trace_.weights = op.weights;
        trace_.dt = grid.dt;
        trace_.seed = path.seed;
        trace_.path_index = path.path_index;
        trace_.levels.reserve(static_cast<std::size_t>(grid.nt + 1));
    }

    void operator()(const StateSnapshot& s) { trace_.levels.push_back(op_.apply(s.z)); }
    ObservationTrace take() { return std::move(trace_); }

private:
    const TraceOperator& op_;
    ObservationTrace trace_;
};

inline ObservationTrace observe(const Trajectory& traj, const TraceOperator& op, const Grid& grid) {
    if (traj.nt() != grid.nt) throw Error(ErrorKind::InvalidParameters, "trajectory length does not match the grid");
    TraceRecorder rec(op, grid, traj.path);
    for (const auto& s : traj.levels) rec(s);
    return rec.take();
}

inline ObservationTrace observe_boundary(const Trajectory& traj, const BoundaryPartition& part, const Operators& ops) {
    return observe(traj, TraceOperator(ObservationKind::Boundary, part, ops), ops.grid);
}

inline ObservationTrace observe_internal(const Trajectory& traj, const BoundaryPartition& part, const Operators& ops) {
    return observe(traj, TraceOperator(ObservationKind::Internal, part, ops), ops.grid);
}

/// Brownian path summed down to a grid with `factor` times fewer steps.
inline BrownianPath coarsen(const BrownianPath& fine, int factor) {
    if (factor < 1 || fine.increments.size() % static_cast<std::size_t>(factor) != 0)
        throw Error(ErrorKind::InvalidParameters, "coarsen: factor must divide the number of increments");
    BrownianPath c = fine;
    c.dt = fine.dt * factor;
    c.increments.assign(fine.increments.size() / static_cast<std::size_t>(factor), 0.0);
    for (std::size_t k = 0; k < fine.increments.size(); ++k) c.increments[k / static_cast<std::size_t>(factor)] += fine.increments[k];
    return c;
}

/// Path i on `grid`, sampled at `refine` times the resolution and summed back,
/// so a grid and its refinements see the same Brownian motion.
inline BrownianPath ensemble_path(std::uint64_t seed, std::uint64_t i, const Grid& grid, int refine = 1) {
    return coarsen(sample_brownian(seed, i, grid.nt * refine, grid.dt / refine), refine);
}

/// Truncated Fourier series with unit-normal coefficients:
/// z0 = sum_m a_m e_m, z1 = sum_m b_m e_m, e_m = prod_k sin(m_k pi (x_k - lo_k) / L_k), 1 <= m_k <= modes.
/// The coefficients depend only on (seed, index, modes), never on the grid.
inline std::pair<Vector, Vector> fourier_initial_data(const Grid& grid, int modes, std::uint64_t seed, std::uint64_t index,
                                                      StreamDomain domain = StreamDomain::InitialData) {
    if (modes < 1) throw Error(ErrorKind::InvalidParameters, "need at least one Fourier mode");
    NormalStream rng(seed, domain, index);
    const int n2 = grid.dim == 2 ? modes : 1;
    std::vector<double> a, b;
    for (int m = 0; m < modes * n2; ++m) {
        a.push_back(rng.next());
        b.push_back(rng.next());
    }
    Vector z0 = Vector::Zero(grid.size()), z1 = Vector::Zero(grid.size());
    for (int p = 0; p < grid.size(); ++p) {
        if (grid.on_boundary(p)) continue;
        const auto x = grid.coords(p);
        for (int m1 = 1; m1 <= modes; ++m1)
            for (int m2 = 1; m2 <= n2; ++m2) {
                double e = std::sin(m1 * M_PI * (x[0] - grid.lo[0]) / (grid.hi[0] - grid.lo[0]));
                if (grid.dim == 2) e *= std::sin(m2 * M_PI * (x[1] - grid.lo[1]) / (grid.hi[1] - grid.lo[1]));
                const std::size_t c = static_cast<std::size_t>((m1 - 1) * n2 + (m2 - 1));
                z0[p] += a[c] * e;
                z1[p] += b[c] * e;
            }
    }
    return {z0, z1};
}

/// One initial datum observed along n_paths noise paths.
struct ObservabilityMember {
    std::size_t index = 0;
    double data_norm2 = 0.0;     // |(z0, z1)|^2 in H^1_0 x L^2
    double observation = 0.0;    // path mean of the squared trace norm
    double observation_se = 0.0;
    double constant = 0.0;       // lhs / (sqrt(obs) + |f| + |g|)^2
};

struct ObservabilityReport {
    ObservationKind kind = ObservationKind::Boundary;
    double lhs = 0.0;              // ensemble mean of |(z0, z1)|^2
    double lhs_se = 0.0;
    double rhs_observation = 0.0;  // ensemble mean of the squared trace norm
    double rhs_observation_se = 0.0;
    double rhs_f = 0.0;            // |f|^2 over (0,T) x G
    double rhs_g = 0.0;
    double empirical_constant = 0.0;  // max over members
    double theorem_constant = 0.0;    // smallest C with prefactor(C) >= empirical_constant
    double C_max = std::numeric_limits<double>::infinity();
    bool pass = false;
    std::vector<ObservabilityMember> members;
};

namespace detail {

/// Smallest C >= 0 with f(C) >= target for f increasing; inf if none below 1e6.
template <class F>
double smallest_constant(F&& f, double target) {
    if (target <= 0.0 || f(0.0) >= target) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (f(hi) < target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) return std::numeric_limits<double>::infinity();
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) >= target ? hi : lo) = mid;
    }
    return hi;
}

inline double exponent_norm(const CoefficientNorms& r, int n, double denom_shift) {
    // r1^2 + r2^{1/(shift - n/p)} + 1
    const double e = denom_shift - n / r.p;
    return r.r1 * r.r1 + (r.r2 > 0.0 ? std::pow(r.r2, 1.0 / e) : 0.0) + 1.0;
}

}  // namespace detail

/// Assembles the report from per-member values. Throws DegenerateEnsemble when
/// some datum is nonzero while its whole right side vanishes.
inline ObservabilityReport observability_report(ObservationKind kind, std::vector<ObservabilityMember> members,
                                                const ForcingNorms& forcing, const CoefficientNorms& r, int n,
                                                double C_max) {
    ObservabilityReport rep;
    rep.kind = kind;
    rep.rhs_f = forcing.f2;
    rep.rhs_g = forcing.g2;
    rep.C_max = C_max;
    const double ff = std::sqrt(forcing.f2) + std::sqrt(forcing.g2);
    std::vector<double> lhs, obs;
    for (auto& m : members) {
        const double rhs = std::sqrt(m.observation) + ff;
        if (m.data_norm2 > 0.0 && !(rhs > 0.0))
            throw Error(ErrorKind::DegenerateEnsemble,
                        std::string(to_string(kind)) + " observation vanishes for member " + std::to_string(m.index) +
                            " with |(z0,z1)|^2 = " + std::to_string(m.data_norm2) + "; unique continuation fails");
        m.constant = m.data_norm2 > 0.0 ? m.data_norm2 / (rhs * rhs) : 0.0;
        rep.empirical_constant = std::max(rep.empirical_constant, m.constant);
        lhs.push_back(m.data_norm2);
        obs.push_back(m.observation);
    }
    const auto ls = sample_stats(lhs), os = sample_stats(obs);
    rep.lhs = ls.mean;
    rep.lhs_se = ls.standard_error;
    rep.rhs_observation = os.mean;
    rep.rhs_observation_se = os.standard_error;
    // |data| <= P(C) (|obs| + |f| + |g|), P = C e^{CK} (boundary) or e^{CK} (internal)
    const double K = detail::exponent_norm(r, n, 1.5);
    const double target = std::sqrt(rep.empirical_constant);
    rep.theorem_constant = kind == ObservationKind::Boundary
                               ? detail::smallest_constant([&](double c) { return c * std::exp(c * K); }, target)
                               : detail::smallest_constant([&](double c) { return std::exp(c * K); }, target);
    rep.pass = std::isfinite(rep.empirical_constant) && rep.empirical_constant <= C_max;
    rep.members = std::move(members);
    return rep;
}

/// Grouped trajectories: groups[i] holds the paths of datum i.
inline ObservabilityReport verify_observability(const std::vector<std::vector<Trajectory>>& groups, const WaveSolver& solver,
                                                const BoundaryPartition& part, ObservationKind kind,
                                                double C_max = std::numeric_limits<double>::infinity()) {
    const TraceOperator op(kind, part, solver.ops());
    std::vector<ObservabilityMember> members(groups.size());
    parallel_for(groups.size(), [&](std::size_t i) {
        if (groups[i].empty()) throw Error(ErrorKind::InvalidParameters, "empty trajectory group");
        std::vector<double> norms;
        for (const auto& tr : groups[i]) norms.push_back(observe(tr, op, solver.grid()).norm2());
        const auto st = sample_stats(norms);
        auto& m = members[i];
        m.index = i;
        m.data_norm2 = solver.ops().data_norm2(groups[i][0][0].z, groups[i][0][0].zt);
        m.observation = st.mean;
        m.observation_se = st.standard_error;
    });
    return observability_report(kind, std::move(members), forcing_norms(solver),
                                coefficient_norms(solver.spec(), solver.grid()), solver.grid().dim, C_max);
}

struct ObservabilityStudy {
    int n_data = 50;
    int modes = 5;
    std::size_t n_paths = 200;
    std::uint64_t seed = 1;
    int path_refine = 1;  // sample paths this many times finer, for refinement studies
    double C_max = std::numeric_limits<double>::infinity();
};

/// Streams solves for Fourier data x noise paths without storing trajectories.
/// Returns one report per requested kind, all from the same solves.
inline std::vector<ObservabilityReport> run_observability_study(const WaveSolver& solver, const BoundaryPartition& part,
                                                                const std::vector<ObservationKind>& kinds,
                                                                const ObservabilityStudy& study) {
    const Grid& g = solver.grid();
    std::vector<TraceOperator> ops;
    for (auto k : kinds) ops.emplace_back(k, part, solver.ops());
    const std::size_t n_paths = solver.spec().noise ? study.n_paths : 1;
    const std::size_t n_data = static_cast<std::size_t>(study.n_data);
    const std::size_t nk = kinds.size();
    std::vector<std::vector<double>> norms = parallel_map<std::vector<double>>(n_data * n_paths, [&](std::size_t job) {
        const std::size_t i = job / n_paths, j = job % n_paths;
        const auto [z0, z1] = fourier_initial_data(g, study.modes, study.seed, i);
        const BrownianPath path =
            solver.spec().noise ? ensemble_path(study.seed, j, g, study.path_refine) : BrownianPath::zero(g.nt, g.dt);
        std::vector<CompensatedSum> acc(nk);
        int k = 0;
        solver.run(solver.initial(z0, z1), path, [&](const StateSnapshot& s) {
            const double tw = (k == 0 || k == g.nt) ? 0.5 * g.dt : g.dt;
            for (std::size_t m = 0; m < nk; ++m) {
                const Vector v = ops[m].apply(s.z);
                acc[m].add(tw * v.cwiseProduct(ops[m].weights).dot(v));
            }
            ++k;
        });
        std::vector<double> out(nk);
        for (std::size_t m = 0; m < nk; ++m) out[m] = acc[m].value();
        return out;
    });
    const ForcingNorms fn = forcing_norms(solver);
    const auto r = coefficient_norms(solver.spec(), g);
    std::vector<ObservabilityReport> reps;
    for (std::size_t m = 0; m < nk; ++m) {
        std::vector<ObservabilityMember> members(n_data);
        for (std::size_t i = 0; i < n_data; ++i) {
            const auto [z0, z1] = fourier_initial_data(g, study.modes, study.seed, i);
            std::vector<double> x;
            for (std::size_t j = 0; j < n_paths; ++j) x.push_back(norms[i * n_paths + j][m]);
            const auto st = sample_stats(x);
            members[i].index = i;
            members[i].data_norm2 = solver.ops().data_norm2(z0, z1);
            members[i].observation = st.mean;
            members[i].observation_se = st.standard_error;
        }
        reps.push_back(observability_report(kinds[m], std::move(members), fn, r, g.dim, study.C_max));
    }
    return reps;
}

struct HiddenRegularityReport {
    double trace = 0.0;  // E|dz/dnu|^2
    double data = 0.0;   // E|(z0, z1)|^2 + |f|^2 + |g|^2
    double C = 1.0;
    double rhs = 0.0;    // C exp(C (r1^2 + r2^2 + 1)) * data
    double empirical_C = 0.0;
    bool ok = false;
};

/// E|dz/dnu|^2 <= C exp(C (r1^2 + r2^2 + 1)) (E|(z0,z1)|^2 + |f|^2 + |g|^2).
inline HiddenRegularityReport hidden_regularity_report(double trace, double data_norm2, const ForcingNorms& fn,
                                                       const CoefficientNorms& r, double C) {
    HiddenRegularityReport rep;
    rep.trace = trace;
    rep.data = data_norm2 + fn.f2 + fn.g2;
    rep.C = C;
    const double K = r.r1 * r.r1 + r.r2 * r.r2 + 1.0;
    auto pref = [&](double c) { return c * std::exp(c * K) * rep.data; };
    rep.rhs = pref(C);
    rep.ok = trace <= rep.rhs;
    if (trace > 0.0)
        rep.empirical_C = rep.data > 0.0 ? detail::smallest_constant(pref, trace) : std::numeric_limits<double>::infinity();
    return rep;
}

inline HiddenRegularityReport check_hidden_regularity(const std::vector<Trajectory>& ensemble, const WaveSolver& solver,
                                                      const BoundaryPartition& part, double C) {
    const TraceOperator op(ObservationKind::Boundary, part, solver.ops());
    const auto tr = parallel_map<double>(ensemble.size(), [&](std::size_t i) { return observe(ensemble[i], op, solver.grid()).norm2(); });
    const auto dn = parallel_map<double>(ensemble.size(), [&](std::size_t i) {
        return solver.ops().data_norm2(ensemble[i][0].z, ensemble[i][0].zt);
    });
    const double n = static_cast<double>(std::max<std::size_t>(1, ensemble.size()));
    return hidden_regularity_report(compensated_sum(tr) / n, compensated_sum(dn) / n, forcing_norms(solver),
                                    coefficient_norms(solver.spec(), solver.grid()), C);
}

struct UniqueContinuationResult {
    bool antecedent = false;  // observation below tol
    bool holds = true;        // antecedent implies small state
    double observation = 0.0; // RMS trace norm
    double state = 0.0;       // RMS of the H^1_0 x L^2 norm over time
};

/// If the observation is below tol (in the RMS sense over (0,T) x region), the
/// whole trajectory must be below K tol. A violated implication means the
/// observation missed a nonzero solution.
inline UniqueContinuationResult unique_continuation_probe(const Trajectory& traj, const ObservationTrace& trace,
                                                          const Operators& ops, double tol, double K) {
    const Grid& g = ops.grid;
    double vol = 1.0;
    for (int a = 0; a < g.dim; ++a) vol *= g.hi[a] - g.lo[a];
    UniqueContinuationResult r;
    r.observation = std::sqrt(trace.norm2() / (g.T * vol));
    CompensatedSum s;
    for (int k = 0; k <= traj.nt(); ++k) s.add(g.time_weight(k) * ops.data_norm2(traj[k].z, traj[k].zt));
    r.state = std::sqrt(s.value() / g.T);
    r.antecedent = r.observation <= tol;
    r.holds = !r.antecedent || r.state <= K * tol;
    return r;
}

inline UniqueContinuationResult unique_continuation_probe(const Trajectory& traj, const BoundaryPartition& part,
                                                          const Operators& ops, double tol, double K) {
    return unique_continuation_probe(traj, observe_internal(traj, part, ops), ops, tol, K);
}

} // namespace obswave
