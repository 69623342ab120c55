#include <gtest/gtest.h>

#include <cmath>

#include "obswave/observability.hpp"

using namespace obswave;

namespace {

const WeightSpec kWeight = WeightSpec::quadratic(4.0, {-1.0, 0.0});

ProblemSpec free_wave() {
    ProblemSpec s;
    s.metric = MetricField::identity(1);
    s.noise = false;
    return s;
}

ProblemSpec noisy(double b4) {
    ProblemSpec s;
    s.metric = MetricField::identity(1);
    s.linear.b4 = Expr::constant(b4);
    return s;
}

Trajectory standing_wave(const WaveSolver& solver) {
    const auto& g = solver.grid();
    const auto init = solver.initial_from([](double x, double) { return std::sin(M_PI * x); },
                                          [](double, double) { return 0.0; });
    return solver.solve(init, BrownianPath::zero(g.nt, g.dt));
}

double boundary_trace_error(int nx) {
    const auto g = Grid::line(0, 1, nx, 2.0, 2 * (nx - 1));
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.0);
    const auto tr = observe_boundary(standing_wave(solver), part, solver.ops());
    double err = 0.0;
    for (int k = 0; k <= g.nt; ++k) err = std::max(err, std::fabs(tr.levels[k][0] + M_PI * std::cos(M_PI * g.time(k))));
    return err;
}

std::vector<std::vector<Trajectory>> scaled_groups(const WaveSolver& solver, double alpha, int n_data, int n_paths) {
    const auto& g = solver.grid();
    std::vector<std::vector<Trajectory>> groups;
    for (int i = 0; i < n_data; ++i) {
        auto [z0, z1] = fourier_initial_data(g, 3, 1, static_cast<std::uint64_t>(i));
        std::vector<Trajectory> paths;
        for (int j = 0; j < n_paths; ++j)
            paths.push_back(solver.solve(solver.initial(alpha * z0, alpha * z1), sample_brownian(1, static_cast<std::uint64_t>(j), g.nt, g.dt)));
        groups.push_back(std::move(paths));
    }
    return groups;
}

}  // namespace

TEST(Trace, ZeroTrajectoryGivesZeroTrace) {
    const auto g = Grid::line(0, 1, 21, 2.0, 40);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    const auto tr = solver.solve(solver.initial(Vector::Zero(g.size()), Vector::Zero(g.size())), BrownianPath::zero(g.nt, g.dt));
    EXPECT_EQ(observe_boundary(tr, part, solver.ops()).norm2(), 0.0);
    EXPECT_EQ(observe_internal(tr, part, solver.ops()).norm2(), 0.0);
}

TEST(Trace, StandingWaveNormalDerivativeSecondOrder) {
    const double e1 = boundary_trace_error(41), e2 = boundary_trace_error(81);
    EXPECT_LT(e1, 1e-2);
    EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

TEST(Trace, StandingWaveBoundaryNorm) {
    const auto g = Grid::line(0, 1, 201, 10.0, 2000);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.0);
    ASSERT_EQ(part.gamma0.size(), 1u);
    EXPECT_EQ(g.coords(part.gamma0[0])[0], 1.0);
    const double n2 = observe_boundary(standing_wave(solver), part, solver.ops()).norm2();
    EXPECT_NEAR(n2 / (5 * M_PI * M_PI), 1.0, 2e-3);
}

TEST(Trace, StandingWaveCollarNorm) {
    const auto g = Grid::line(0, 1, 201, 10.0, 2000);
    WaveSolver solver(g, free_wave());
    const auto tr = standing_wave(solver);
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    // int_{0.8}^{1} pi^2 cos^2(pi x) dx * int_0^10 cos^2(pi t) dt
    const double exact = M_PI * M_PI * (0.1 - std::sin(1.6 * M_PI) / (4 * M_PI)) * 5.0;
    const double n2 = observe_internal(tr, part, solver.ops()).norm2();
    EXPECT_NEAR(n2 / exact, 1.0, 2e-3);
    const auto whole = compute_gamma0(kWeight, solver.spec().metric, g, 1.5);
    EXPECT_GE(observe_internal(tr, whole, solver.ops()).norm2(), n2);
}

TEST(Trace, LinearPerPath) {
    const auto g = Grid::line(0, 1, 31, 2.0, 60);
    ProblemSpec s = noisy(0.7);
    s.linear.b1 = Expr("0.3");
    WaveSolver solver(g, s);
    const auto part = compute_gamma0(kWeight, s.metric, g, 0.25);
    const auto path = sample_brownian(1, 3, g.nt, g.dt);
    const auto [u0, u1] = fourier_initial_data(g, 4, 1, 0);
    const auto [v0, v1] = fourier_initial_data(g, 4, 1, 1);
    const double a = 1.7, b = -0.4;
    for (auto kind : {ObservationKind::Boundary, ObservationKind::Internal}) {
        const TraceOperator op(kind, part, solver.ops());
        auto tu = observe(solver.solve(solver.initial(u0, u1), path), op, g);
        auto tv = observe(solver.solve(solver.initial(v0, v1), path), op, g);
        auto tw = observe(solver.solve(solver.initial(a * u0 + b * v0, a * u1 + b * v1), path), op, g);
        tu *= a;
        tv *= b;
        tu += tv;
        tw -= tu;
        EXPECT_LT(std::sqrt(tw.norm2()), 1e-10 * std::sqrt(tu.norm2()));
    }
}

TEST(Trace, TwoDimBoundaryWeightsSumToGammaLength) {
    const auto g = Grid::square({0, 0}, {1, 1}, {11, 11}, 2.0, 40);
    const auto part = compute_gamma0(WeightSpec::quadratic(1.0, {-1.0, -1.0}), MetricField::identity(2), g, 0.2);
    const Operators ops(g, MetricField::identity(2));
    const TraceOperator op(ObservationKind::Boundary, part, ops);
    // Gamma_0 = {x = 1} u {y = 1} minus corners: 18 nodes of weight h
    EXPECT_EQ(op.rows(), 18);
    EXPECT_NEAR(op.weights.sum(), 1.8, 1e-12);
    const TraceOperator in(ObservationKind::Internal, part, ops);
    EXPECT_EQ(in.components, 2);
}

TEST(FourierData, GridIndependentCoefficients) {
    const auto g = Grid::square({0, 0}, {1, 2}, {6, 6}, 1.0, 10);
    const auto f = g.refined();
    const auto [c0, c1] = fourier_initial_data(g, 3, 7, 2);
    const auto [f0, f1] = fourier_initial_data(f, 3, 7, 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            EXPECT_NEAR(c0[g.index(i, j)], f0[f.index(2 * i, 2 * j)], 1e-13);
            EXPECT_NEAR(c1[g.index(i, j)], f1[f.index(2 * i, 2 * j)], 1e-13);
        }
    EXPECT_EQ(c0[g.index(0, 3)], 0.0);
}

TEST(FourierData, RefinedPathsAgree) {
    const auto g = Grid::line(0, 1, 11, 2.0, 20);
    const auto a = ensemble_path(1, 4, g, 2);
    const auto b = coarsen(ensemble_path(1, 4, g.refined(), 1), 2);
    ASSERT_EQ(a.increments.size(), 20u);
    EXPECT_EQ(a.increments, b.increments);
    EXPECT_NEAR(a.value_at(20), sample_brownian(1, 4, 40, 0.05).value_at(40), 1e-14);
}

TEST(Observability, ZeroDataTriviallyPasses) {
    const auto g = Grid::line(0, 1, 21, 10.0, 200);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    std::vector<std::vector<Trajectory>> groups(1);
    groups[0].push_back(solver.solve(solver.initial(Vector::Zero(g.size()), Vector::Zero(g.size())), BrownianPath::zero(g.nt, g.dt)));
    const auto rep = verify_observability(groups, solver, part, ObservationKind::Boundary, 1.0);
    EXPECT_EQ(rep.lhs, 0.0);
    EXPECT_EQ(rep.empirical_constant, 0.0);
    EXPECT_TRUE(rep.pass);
}

TEST(Observability, DegenerateEnsembleAborts) {
    ObservabilityMember m;
    m.index = 3;
    m.data_norm2 = 2.0;
    try {
        observability_report(ObservationKind::Internal, {m}, {}, CoefficientNorms{}, 1, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateEnsemble);
    }
}

TEST(Observability, ConstantInvariantUnderScaling) {
    const auto g = Grid::line(0, 1, 21, 10.0, 200);
    WaveSolver solver(g, noisy(0.5));
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    for (auto kind : {ObservationKind::Boundary, ObservationKind::Internal}) {
        const double c = verify_observability(scaled_groups(solver, 1.0, 3, 5), solver, part, kind).empirical_constant;
        ASSERT_GT(c, 0.0);
        for (double a : {0.1, 10.0}) {
            const double ca = verify_observability(scaled_groups(solver, a, 3, 5), solver, part, kind).empirical_constant;
            EXPECT_NEAR(ca / c, 1.0, 1e-8);
        }
    }
}

TEST(Observability, InternalConstantMonotoneInDelta) {
    const auto g = Grid::line(0, 1, 41, 10.0, 400);
    WaveSolver solver(g, free_wave());
    ObservabilityStudy st;
    st.n_data = 8;
    double prev = INFINITY;
    for (double delta : {0.1, 0.2, 0.4, 0.8}) {
        const auto part = compute_gamma0(kWeight, solver.spec().metric, g, delta);
        const double c = run_observability_study(solver, part, {ObservationKind::Internal}, st)[0].empirical_constant;
        EXPECT_LE(c, prev * (1 + 1e-12));
        prev = c;
    }
}

TEST(Observability, StudyMatchesStoredTrajectories) {
    const auto g = Grid::line(0, 1, 21, 10.0, 200);
    WaveSolver solver(g, noisy(0.5));
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    ObservabilityStudy st;
    st.n_data = 2;
    st.n_paths = 4;
    st.modes = 3;
    const auto reps = run_observability_study(solver, part, {ObservationKind::Boundary, ObservationKind::Internal}, st);
    const auto groups = scaled_groups(solver, 1.0, 2, 4);
    for (int m = 0; m < 2; ++m) {
        const auto kind = m == 0 ? ObservationKind::Boundary : ObservationKind::Internal;
        const auto direct = verify_observability(groups, solver, part, kind);
        EXPECT_NEAR(reps[m].empirical_constant / direct.empirical_constant, 1.0, 1e-12);
        EXPECT_NEAR(reps[m].lhs / direct.lhs, 1.0, 1e-12);
    }
}

TEST(Observability, RefinementStableWithoutNoise) {
    auto constant = [](int nx, ObservationKind kind) {
        const auto g = Grid::line(0, 1, nx, 10.0, 10 * (nx - 1));
        WaveSolver solver(g, free_wave());
        const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
        ObservabilityStudy st;
        st.n_data = 10;
        return run_observability_study(solver, part, {kind}, st)[0].empirical_constant;
    };
    for (auto kind : {ObservationKind::Boundary, ObservationKind::Internal}) {
        const double c1 = constant(41, kind), c2 = constant(81, kind);
        EXPECT_TRUE(std::isfinite(c1));
        EXPECT_NEAR(c2 / c1, 1.0, 0.2);
    }
}

TEST(HiddenRegularity, ZeroDataPasses) {
    const auto r = hidden_regularity_report(0.0, 0.0, {}, CoefficientNorms{}, 1.0);
    EXPECT_TRUE(r.ok);
    EXPECT_EQ(r.empirical_C, 0.0);
}

TEST(HiddenRegularity, StandingWaveRatio) {
    const auto g = Grid::line(0, 1, 101, 10.0, 1000);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.0);
    const auto rep = check_hidden_regularity({standing_wave(solver)}, solver, part, 1.0);
    // direct ratio: trace ~ 5 pi^2, data ~ pi^2 / 2, K = 1
    EXPECT_NEAR(rep.trace / rep.data, 10.0, 0.05);
    EXPECT_NEAR(rep.empirical_C * std::exp(rep.empirical_C), rep.trace / rep.data, 1e-9);
}

TEST(HiddenRegularity, NoisyEnsemble) {
    const auto g = Grid::line(0, 1, 41, 10.0, 400);
    ProblemSpec s = noisy(1.0);
    s.linear.g = Expr("sin(pi*x)");
    WaveSolver solver(g, s);
    const auto part = compute_gamma0(kWeight, s.metric, g, 0.0);
    std::vector<Trajectory> ens(200);
    const auto init = solver.initial_from([](double x, double) { return std::sin(M_PI * x); },
                                          [](double, double) { return 0.0; });
    parallel_for(ens.size(), [&](std::size_t i) { ens[i] = solver.solve(init, sample_brownian(1, i, g.nt, g.dt)); });
    const auto rep = check_hidden_regularity(ens, solver, part, 1.0);
    ASSERT_TRUE(std::isfinite(rep.empirical_C));
    EXPECT_GT(rep.empirical_C, 0.0);
    EXPECT_TRUE(check_hidden_regularity(ens, solver, part, rep.empirical_C * (1 + 1e-9)).ok);
    EXPECT_FALSE(check_hidden_regularity(ens, solver, part, 0.9 * rep.empirical_C).ok);
}

TEST(UniqueContinuation, ZeroTrajectoryHolds) {
    const auto g = Grid::line(0, 1, 21, 10.0, 200);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    const auto tr = solver.solve(solver.initial(Vector::Zero(g.size()), Vector::Zero(g.size())), BrownianPath::zero(g.nt, g.dt));
    const auto r = unique_continuation_probe(tr, part, solver.ops(), 1e-8, 10.0);
    EXPECT_TRUE(r.antecedent);
    EXPECT_TRUE(r.holds);
}

TEST(UniqueContinuation, StandingWaveVacuous) {
    const auto g = Grid::line(0, 1, 41, 10.0, 400);
    WaveSolver solver(g, free_wave());
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    const auto r = unique_continuation_probe(standing_wave(solver), part, solver.ops(), 1e-8, 10.0);
    EXPECT_FALSE(r.antecedent);
    EXPECT_TRUE(r.holds);
}

TEST(UniqueContinuation, InjectedZeroObservationViolates) {
    const auto g = Grid::line(0, 1, 41, 10.0, 400);
    WaveSolver solver(g, noisy(0.5));
    const auto part = compute_gamma0(kWeight, solver.spec().metric, g, 0.2);
    const auto [z0, z1] = fourier_initial_data(g, 5, 1, 0);
    const auto tr = solver.solve(solver.initial(z0, z1), sample_brownian(1, 0, g.nt, g.dt));
    auto obs = observe_internal(tr, part, solver.ops());
    obs *= 0.0;
    const auto r = unique_continuation_probe(tr, obs, solver.ops(), 1e-8, 10.0);
    EXPECT_TRUE(r.antecedent);
    EXPECT_FALSE(r.holds);
}
