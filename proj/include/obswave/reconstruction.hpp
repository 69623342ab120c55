#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "obswave/observability.hpp"

namespace obswave {

/// Candidate initial data (w0, w1) as nodal vectors.
struct InitialData {
    Vector w0;
    Vector w1;

    InitialData& operator+=(const InitialData& o) {
        w0 += o.w0;
        w1 += o.w1;
        return *this;
    }
    InitialData& operator-=(const InitialData& o) {
        w0 -= o.w0;
        w1 -= o.w1;
        return *this;
    }
    InitialData& operator*=(double a) {
        w0 *= a;
        w1 *= a;
        return *this;
    }
    friend InitialData operator+(InitialData a, const InitialData& b) { return a += b; }
    friend InitialData operator-(InitialData a, const InitialData& b) { return a -= b; }
    friend InitialData operator*(double s, InitialData a) { return a *= s; }

    static InitialData zero(int n) { return {Vector::Zero(n), Vector::Zero(n)}; }
};

struct InverseProblem {
    ProblemSpec spec;
    Grid grid;
    BoundaryPartition partition;
    ObservationKind kind = ObservationKind::Boundary;
    ObservationTrace target;
    BrownianPath path;  // known realization on `grid`
    double regularization = 0.0;
    int max_iterations = 200;
    double gradient_tol = 1e-10;  // relative to the first gradient
    double objective_tol = 0.0;
    bool throw_on_cap = true;
    std::optional<InitialData> truth;
};

struct IterationRecord {
    int iteration = 0;
    double objective = 0.0;
    double gradient_norm = 0.0;
};

struct ReconstructionResult {
    InitialData recovered;
    std::vector<IterationRecord> history;
    double final_residual = 0.0;  // trace-space norm of F(w) - target
    double relative_error = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    int null_space_estimate = 0;  // small Ritz values of the normal operator when CG stalls
    std::string method;
};

/// Forward map, objective, adjoint gradient and solvers for one inverse problem.
/// All gradients are Riesz representers in the discrete H^1_0 x L^2 product.
class InverseSolver {
public:
    explicit InverseSolver(InverseProblem p)
        : prob_(std::move(p)),
          full_(prob_.grid, prob_.spec),
          hom_(prob_.grid, prob_.spec, true),
          op_(prob_.kind, prob_.partition, full_.ops()) {
        if (prob_.regularization < 0.0) throw Error(ErrorKind::InvalidParameters, "regularization weight must be >= 0");
        if (prob_.max_iterations < 1) throw Error(ErrorKind::InvalidParameters, "max_iterations must be >= 1");
        if (static_cast<int>(prob_.path.increments.size()) != prob_.grid.nt)
            throw Error(ErrorKind::InvalidParameters, "Brownian path length does not match nt");
        if (prob_.target.nt() != prob_.grid.nt || prob_.target.levels[0].size() != op_.rows())
            throw Error(ErrorKind::InvalidParameters, "target trace does not match grid and partition");
        build_riesz();
    }

    const InverseProblem& problem() const { return prob_; }
    const WaveSolver& solver() const { return full_; }
    const TraceOperator& trace_operator() const { return op_; }
    int size() const { return prob_.grid.size(); }

    /// <u, v> in H^1_0 x L^2.
    double inner(const InitialData& u, const InitialData& v) const {
        const auto& ops = full_.ops();
        return u.w0.dot(ops.stiffness * v.w0) + u.w1.cwiseProduct(ops.mass).dot(v.w1);
    }
    double norm(const InitialData& u) const { return std::sqrt(std::max(0.0, inner(u, u))); }

    /// Solve then observe along the known path.
    ObservationTrace forward(const InitialData& w) const { return observe_with(full_, w, nullptr); }

    /// Linear part A of the affine map: forcing dropped, same path.
    ObservationTrace forward_linear(const InitialData& w) const { return observe_with(hom_, w, nullptr); }

    /// A^* r as a Riesz representer.
    InitialData adjoint(const ObservationTrace& r) const {
        check_linear();
        return riesz(adjoint_euclidean(zero_trajectory(), r, 1.0));
    }

    /// J = |F(w) - target|^2 + reg |w|^2.
    double objective(const InitialData& w) const {
        ObservationTrace res = forward(w);
        res -= prob_.target;
        return res.norm2() + prob_.regularization * inner(w, w);
    }

    /// Riesz gradient of J, linearizing about the trajectory from w.
    InitialData gradient(const InitialData& w) const {
        Trajectory traj;
        ObservationTrace res = observe_with(full_, w, &traj);
        res -= prob_.target;
        InitialData g = riesz(adjoint_euclidean(traj, res, 2.0));
        if (prob_.regularization > 0.0) g += (2.0 * prob_.regularization) * w;
        return g;
    }

    InitialData riesz(const std::pair<Vector, Vector>& e) const {
        InitialData g = InitialData::zero(size());
        Vector e0(static_cast<Eigen::Index>(interior_.size()));
        for (std::size_t i = 0; i < interior_.size(); ++i) e0[static_cast<Eigen::Index>(i)] = e.first[interior_[i]];
        const Vector g0 = ldlt_.solve(e0);
        for (std::size_t i = 0; i < interior_.size(); ++i) {
            const int p = interior_[i];
            g.w0[p] = g0[static_cast<Eigen::Index>(i)];
            g.w1[p] = e.second[p] / full_.ops().mass[p];
        }
        return g;
    }

    /// Linear mode: CG on (A^*A + reg) w = A^*(target - F(0)).
    ReconstructionResult conjugate_gradient(const InitialData& guess) const {
        check_linear();
        ReconstructionResult out;
        out.method = "cgnr";
        ObservationTrace d = prob_.target;
        d -= forward(InitialData::zero(size()));
        InitialData x = guess;
        ObservationTrace Ax = forward_linear(x);
        auto normal = [&](const ObservationTrace& Ap, const InitialData& p) {
            InitialData n = adjoint(Ap);
            if (prob_.regularization > 0.0) n += prob_.regularization * p;
            return n;
        };
        const InitialData b = adjoint(d);
        InitialData r = b - normal(Ax, x);
        InitialData p = r;
        double rr = inner(r, r);
        const double stop = prob_.gradient_tol * std::max(std::sqrt(inner(b, b)), std::sqrt(rr));
        auto objective_of = [&](const ObservationTrace& ax, const InitialData& xx) {
            ObservationTrace res = ax;
            res -= d;
            return res.norm2() + prob_.regularization * inner(xx, xx);
        };
        out.history.push_back({0, objective_of(Ax, x), 2.0 * std::sqrt(rr)});
        std::vector<double> alphas, betas;
        for (int it = 1; it <= prob_.max_iterations; ++it) {
            if (std::sqrt(rr) <= stop || out.history.back().objective <= prob_.objective_tol) {
                out.converged = true;
                break;
            }
            const ObservationTrace Ap = forward_linear(p);
            const double pAp = Ap.norm2() + prob_.regularization * inner(p, p);
            if (!(pAp > 0.0)) break;
            const double alpha = rr / pAp;
            x += alpha * p;
            ObservationTrace step = Ap;
            step *= alpha;
            Ax += step;
            r -= alpha * normal(Ap, p);
            const double rr_new = inner(r, r);
            const double beta = rr_new / rr;
            alphas.push_back(alpha);
            betas.push_back(beta);
            p = r + beta * p;
            rr = rr_new;
            out.history.push_back({it, objective_of(Ax, x), 2.0 * std::sqrt(rr)});
        }
        if (!out.converged && std::sqrt(rr) <= stop) out.converged = true;
        if (!out.converged) out.null_space_estimate = small_ritz_values(alphas, betas);
        finish(out, x);
        return out;
    }

    /// Gradient descent with Armijo backtracking, re-linearizing at each iterate.
    ReconstructionResult gradient_descent(const InitialData& guess) const {
        ReconstructionResult out;
        out.method = "gradient-descent";
        InitialData x = guess;
        double J = objective(x);
        InitialData g = gradient(x);
        double gn = norm(g);
        const double stop = prob_.gradient_tol * gn;
        out.history.push_back({0, J, gn});
        double alpha = gn > 0.0 ? 0.1 * std::max(norm(x), 1.0) / gn : 0.0;
        for (int it = 1; it <= prob_.max_iterations; ++it) {
            if (gn <= stop || J <= prob_.objective_tol) {
                out.converged = true;
                break;
            }
            bool accepted = false;
            InitialData xn;
            double Jn = J;
            for (int bt = 0; bt < 60; ++bt) {
                xn = x - alpha * g;
                Jn = objective(xn);
                if (Jn <= J - 1e-4 * alpha * gn * gn) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
            InitialData gnew = gradient(xn);
            // Barzilai-Borwein trial step for the next iteration
            const InitialData s = xn - x, y = gnew - g;
            const double sy = inner(s, y);
            alpha = sy > 0.0 ? inner(s, s) / sy : 2.0 * alpha;
            x = std::move(xn);
            g = std::move(gnew);
            J = Jn;
            gn = norm(g);
            out.history.push_back({it, J, gn});
        }
        if (!out.converged && (gn <= stop || J <= prob_.objective_tol)) out.converged = true;
        finish(out, x);
        return out;
    }

    /// CG in linear mode, gradient descent otherwise. Throws NoConvergence on
    /// an exhausted cap when the problem asks for it.
    ReconstructionResult reconstruct(const InitialData& guess) const {
        ReconstructionResult r = prob_.spec.mode == DynamicsMode::Linear ? conjugate_gradient(guess) : gradient_descent(guess);
        if (!r.converged && prob_.throw_on_cap)
            throw Error(ErrorKind::NoConvergence,
                        r.method + " stopped after " + std::to_string(r.history.back().iteration) +
                            " iterations with gradient norm " + std::to_string(r.history.back().gradient_norm) +
                            "; estimated null-space dimension " + std::to_string(r.null_space_estimate));
        return r;
    }

    double relative_error(const InitialData& w, const InitialData& truth) const {
        const double t = norm(truth);
        const double e = norm(w - truth);
        return t > 0.0 ? e / t : e;
    }

private:
    InverseProblem prob_;
    WaveSolver full_;
    WaveSolver hom_;
    TraceOperator op_;
    std::vector<int> interior_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;

    void check_linear() const {
        if (prob_.spec.mode != DynamicsMode::Linear)
            throw Error(ErrorKind::InvalidParameters, "operation needs linear dynamics");
    }

    void build_riesz() {
        const auto& ops = full_.ops();
        interior_ = ops.interior;
        std::vector<int> pos(static_cast<std::size_t>(size()), -1);
        for (std::size_t i = 0; i < interior_.size(); ++i) pos[static_cast<std::size_t>(interior_[i])] = static_cast<int>(i);
        std::vector<Eigen::Triplet<double>> t;
        for (int r = 0; r < ops.stiffness.outerSize(); ++r)
            for (SparseMatrix::InnerIterator it(ops.stiffness, r); it; ++it) {
                const int a = pos[static_cast<std::size_t>(it.row())], b = pos[static_cast<std::size_t>(it.col())];
                if (a >= 0 && b >= 0) t.emplace_back(a, b, it.value());
            }
        const auto n = static_cast<Eigen::Index>(interior_.size());
        Eigen::SparseMatrix<double> S(n, n);
        S.setFromTriplets(t.begin(), t.end());
        ldlt_.compute(S);
        if (ldlt_.info() != Eigen::Success) throw Error(ErrorKind::DegenerateMetric, "H^1_0 Gram matrix is not positive definite");
    }

    ObservationTrace observe_with(const WaveSolver& s, const InitialData& w, Trajectory* keep) const {
        TraceRecorder rec(op_, prob_.grid, prob_.path);
        const auto init = s.initial(w.w0, w.w1);
        if (keep) {
            *keep = s.solve(init, prob_.path);
            for (const auto& st : keep->levels) rec(st);
        } else {
            s.run(init, prob_.path, rec);
        }
        return rec.take();
    }

    /// In linear mode the reverse sweep never reads the state.
    Trajectory zero_trajectory() const {
        Trajectory t;
        t.path = prob_.path;
        StateSnapshot z{Vector::Zero(size()), Vector::Zero(size()), Vector::Zero(size()), 0};
        for (int k = 0; k <= prob_.grid.nt; ++k) {
            z.level = k;
            t.levels.push_back(z);
        }
        return t;
    }

    std::pair<Vector, Vector> adjoint_euclidean(const Trajectory& traj, const ObservationTrace& r, double scale) const {
        return full_.adjoint(traj, [&](int k, Vector& zbar) {
            const Vector wr = r.levels[static_cast<std::size_t>(k)].cwiseProduct(op_.weights);
            zbar += (scale * r.time_weight(k)) * (op_.matrix.transpose() * wr);
        });
    }

    void finish(ReconstructionResult& out, const InitialData& x) const {
        ObservationTrace res = forward(x);
        res -= prob_.target;
        out.final_residual = std::sqrt(res.norm2());
        if (prob_.truth) out.relative_error = relative_error(x, *prob_.truth);
        out.recovered = x;
    }

    /// Lanczos matrix of the CG run; counts Ritz values below 1e-8 of the largest.
    static int small_ritz_values(const std::vector<double>& alpha, const std::vector<double>& beta) {
        const auto m = static_cast<Eigen::Index>(alpha.size());
        if (m == 0) return 0;
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            T(i, i) = 1.0 / alpha[static_cast<std::size_t>(i)] + (i > 0 ? beta[static_cast<std::size_t>(i - 1)] / alpha[static_cast<std::size_t>(i - 1)] : 0.0);
            if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = std::sqrt(beta[static_cast<std::size_t>(i)]) / alpha[static_cast<std::size_t>(i)];
        }
        const Vector ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(T, Eigen::EigenvaluesOnly).eigenvalues();
        int count = 0;
        for (Eigen::Index i = 0; i < m; ++i)
            if (ev[i] < 1e-8 * ev.maxCoeff()) ++count;
        return count;
    }
};

inline ObservationTrace forward_map(const InitialData& w, const InverseSolver& s) { return s.forward(w); }
inline double objective(const InitialData& w, const InverseSolver& s) { return s.objective(w); }
inline InitialData gradient(const InitialData& w, const InverseSolver& s) { return s.gradient(w); }
inline ReconstructionResult reconstruct(const InverseSolver& s, const InitialData& guess) { return s.reconstruct(guess); }

using DataFn = std::function<double(double, double)>;

inline InitialData sample_data(const Grid& g, const DataFn& w0, const DataFn& w1) {
    InitialData d = InitialData::zero(g.size());
    for (int p = 0; p < g.size(); ++p) {
        if (g.on_boundary(p)) continue;
        const auto x = g.coords(p);
        d.w0[p] = w0(x[0], x[1]);
        d.w1[p] = w1(x[0], x[1]);
    }
    return d;
}

/// Trace of the truth on `grid`. With `honest`, the data come from a solve on
/// grid.refined() driven by `path` (which then has 2 nt increments) and are
/// restricted to the coarse nodes and even time levels.
inline ObservationTrace synthetic_target(const ProblemSpec& spec, const Grid& grid, const WeightSpec& weight,
                                         const BoundaryPartition& part, ObservationKind kind, const DataFn& w0,
                                         const DataFn& w1, const BrownianPath& path, bool honest) {
    const Grid g = honest ? grid.refined() : grid;
    WaveSolver solver(g, spec);
    const auto d = sample_data(g, w0, w1);
    const BoundaryPartition fpart = honest ? compute_gamma0(weight, spec.metric, g, part.delta) : part;
    const TraceOperator fop(kind, fpart, solver.ops());
    TraceRecorder rec(fop, g, path);
    solver.run(solver.initial(d.w0, d.w1), path, rec);
    ObservationTrace fine = rec.take();
    if (!honest) return fine;

    const Operators cops(grid, spec.metric);
    const TraceOperator cop(kind, part, cops);
    std::vector<int> row_of(static_cast<std::size_t>(g.size()), -1);
    for (std::size_t n = 0; n < fop.nodes.size(); ++n) row_of[static_cast<std::size_t>(fop.nodes[n])] = static_cast<int>(n);
    ObservationTrace out;
    out.kind = kind;
    out.components = cop.components;
    out.nodes = cop.nodes;
    out.weights = cop.weights;
    out.dt = grid.dt;
    out.seed = path.seed;
    out.path_index = path.path_index;
    for (int k = 0; k <= grid.nt; ++k) {
        Vector v(cop.rows());
        for (std::size_t n = 0; n < cop.nodes.size(); ++n) {
            const auto c = grid.ij(cop.nodes[n]);
            const int fp = g.index(2 * c[0], 2 * c[1]);
            const int row = row_of[static_cast<std::size_t>(fp)];
            if (row < 0) throw Error(ErrorKind::InvalidParameters, "coarse observation node missing on the refined grid");
            for (int a = 0; a < cop.components; ++a)
                v[static_cast<Eigen::Index>(n) * cop.components + a] = fine.levels[static_cast<std::size_t>(2 * k)][row * cop.components + a];
        }
        out.levels.push_back(std::move(v));
    }
    return out;
}

struct StabilityReport {
    double max_ratio = 0.0;  // empirical C~
    std::vector<double> ratios;
    std::vector<double> data_gaps;
    std::vector<double> observation_gaps;
};

/// |(w - v)| / |M w - M v| over pairs, same path for both members.
inline StabilityReport stability_probe(const std::vector<std::pair<InitialData, InitialData>>& pairs, const InverseSolver& s) {
    StabilityReport rep;
    rep.ratios.resize(pairs.size());
    rep.data_gaps.resize(pairs.size());
    rep.observation_gaps.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto& [a, b] = pairs[i];
        const double gap = s.norm(a - b);
        if (!(gap > 0.0)) throw Error(ErrorKind::InvalidParameters, "stability pair " + std::to_string(i) + " is not distinct");
        ObservationTrace ta = s.forward(a);
        const ObservationTrace tb = s.forward(b);
        const double scale = std::max(std::sqrt(ta.norm2()), std::sqrt(tb.norm2()));
        ta -= tb;
        const double obs = std::sqrt(ta.norm2());
        if (!(obs > 1e-14 * scale))
            throw Error(ErrorKind::DegenerateEnsemble, "pair " + std::to_string(i) + " has distinct data (gap " +
                                                           std::to_string(gap) + ") but identical observations");
        rep.data_gaps[i] = gap;
        rep.observation_gaps[i] = obs;
        rep.ratios[i] = gap / obs;
    });
    for (double r : rep.ratios) rep.max_ratio = std::max(rep.max_ratio, r);
    return rep;
}

/// Pairs of Fourier data, members 2i and 2i+1 of the stream.
inline std::vector<std::pair<InitialData, InitialData>> fourier_pairs(const Grid& g, std::size_t n, int modes, std::uint64_t seed) {
    std::vector<std::pair<InitialData, InitialData>> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto [a0, a1] = fourier_initial_data(g, modes, seed, 2 * i);
        auto [b0, b1] = fourier_initial_data(g, modes, seed, 2 * i + 1);
        out.push_back({{a0, a1}, {b0, b1}});
    }
    return out;
}

} // namespace obswave
