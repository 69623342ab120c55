#pragma once

// Subcommands of the obswave executable. Each writes its artifacts and a
// manifest into the output directory and returns the process exit status:
// 0 all checks passed, 1 a check failed, 2 the run could not be carried out.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "obswave/carleman.hpp"
#include "obswave/config.hpp"
#include "obswave/fields.hpp"
#include "obswave/io.hpp"
#include "obswave/manifest.hpp"
#include "obswave/reconstruction.hpp"

namespace obswave::cli {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    // subcommand extras
    std::string mode = "both";
    int points = 100;
    int n_data = 0;
    int modes = 0;
    long n_paths = 0;
    int pairs = 0;
    bool refine = false;
    bool honest = false;
    double tol = 0.0;
    int max_iter = 0;
    double reg = -1.0;
    std::string target;
    std::string artifact;
    std::string kind;
    std::string dir;
};

class Run {
public:
    Run(const std::string& name, const Options& o, std::ostream& log) : o_(o), log_(log) {
        cfg = load_config(o.config);
        if (o.seed) cfg.ensemble.seed = *o.seed;
        if (o.n_paths > 0) cfg.ensemble.n_paths = static_cast<std::size_t>(o.n_paths);
        if (o.n_data > 0) cfg.ensemble.n_data = o.n_data;
        if (o.modes > 0) cfg.ensemble.modes = o.modes;
        out = o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out);
        fs::create_directories(out);
        manifest.subcommand = name;
        manifest.started = utc_timestamp();
        manifest.config = resolved_json(cfg);
    }

    ExperimentConfig cfg;
    fs::path out;
    RunManifest manifest;

    fs::path file(const std::string& name) const { return out / name; }
    void record(const fs::path& f) { manifest.add(out, f); }
    void record(CsvWriter& w) {
        w.close();
        record(w.path());
    }

    /// Writes a key=value section to `name` and echoes it on the log.
    void report(const std::string& name, const KeyValue& kv) {
        kv.write(file(name));
        record(file(name));
        log_ << "[" << name << "]\n" << kv.str();
    }

    int finish(int code) {
        manifest.finished = utc_timestamp();
        manifest.exit_code = code;
        manifest.write(out);
        log_ << (code == 0 ? "PASS" : "FAIL") << " " << manifest.subcommand << "\n";
        return code;
    }

    std::size_t paths() const { return cfg.spec.noise ? cfg.ensemble.n_paths : 1; }
    std::ostream& log() { return log_; }
    const Options& opts() const { return o_; }

    std::vector<ObservationKind> kinds(const std::string& fallback = "both") const {
        const std::string m = o_.mode == "both" && fallback != "both" ? fallback : o_.mode;
        if (m == "boundary") return {ObservationKind::Boundary};
        if (m == "internal") return {ObservationKind::Internal};
        if (m == "both") return {ObservationKind::Boundary, ObservationKind::Internal};
        throw Error(ErrorKind::ConfigError, "--mode must be boundary, internal or both");
    }

private:
    const Options& o_;
    std::ostream& log_;
};

inline KeyValue geometry_section(const ExperimentConfig& c, const ConditionReport& d, const Condition2Report& r2,
                                 const BoundaryPartition* part) {
    KeyValue kv;
    kv.add("mu0", d.mu0).add("min_grad_d", d.min_grad).add("condition_d", d.ok);
    kv.add("R0", r2.R0).add("R1", r2.R1).add("T0", r2.T0).add("T", c.grid.T).add("c0", c.carleman.c0).add("c1", c.carleman.c1);
    for (int k = 0; k < 4; ++k) kv.add("flag" + std::to_string(k + 1), r2.checks[static_cast<std::size_t>(k)]);
    if (part) {
        std::string g0;
        for (int p : part->gamma0) {
            const auto x = c.grid.coords(p);
            g0 += (g0.empty() ? "" : ";") + fmt(x[0]) + (c.grid.dim == 2 ? " " + fmt(x[1]) : "");
        }
        kv.add("gamma0_nodes", part->gamma0.size()).add("gamma0", g0).add("collar_nodes", part->collar.size()).add("delta", part->delta);
    }
    return kv;
}

/// Geometry hypotheses needed by the observability-based subcommands.
inline bool geometry_ok(Run& run, std::string& why) {
    const auto& c = run.cfg;
    const auto d = check_condition_d(c.metric, c.weight, c.grid);
    const auto r2 = check_condition2(c.weight, c.metric, c.grid, c.carleman.c0, c.carleman.c1);
    if (!d.ok) why = "weight has a critical point or mu0 <= 0";
    else if (!r2.ok()) why = r2.failures();
    return d.ok && r2.ok();
}

inline int check_geometry(Run& run) {
    const auto& c = run.cfg;
    const auto d = check_condition_d(c.metric, c.weight, c.grid);
    const auto r2 = check_condition2(c.weight, c.metric, c.grid, c.carleman.c0, c.carleman.c1);
    std::optional<BoundaryPartition> part;
    std::string err;
    try {
        part = compute_gamma0(c.weight, c.metric, c.grid, c.delta);
    } catch (const Error& e) {
        err = e.what();
    }
    const KeyValue kv = geometry_section(c, d, r2, part ? &*part : nullptr);
    run.report("geometry.txt", kv);
    {
        std::vector<std::string> header;
        for (const auto& [k, v] : kv.items()) header.push_back(k);
        CsvWriter csv(run.file("geometry.csv"), header);
        std::vector<std::string> cells;
        for (const auto& [k, v] : kv.items()) cells.push_back(v);
        csv.cells(cells);
    }
    run.record(run.file("geometry.csv"));
    bool ok = d.ok && r2.ok() && part.has_value();
    if (!r2.ok()) run.log() << "geometry check failed: " << r2.failures() << "\n";
    if (!d.ok) run.log() << "geometry check failed: weight condition (mu0 = " << fmt(d.mu0) << ", min |grad d| = " << fmt(d.min_grad) << ")\n";
    if (!err.empty()) run.log() << "geometry check failed: " << err << "\n";
    return run.finish(ok ? 0 : 1);
}

inline StateSnapshot initial_state(const WaveSolver& s, const ExperimentConfig& c) {
    return s.initial_from([&](double x, double y) { return c.z0.at(0.0, {x, y}); },
                          [&](double x, double y) { return c.z1.at(0.0, {x, y}); });
}

inline BrownianPath path_for(const ExperimentConfig& c, const Grid& g, std::uint64_t i, int refine = 1) {
    return c.spec.noise ? ensemble_path(c.ensemble.seed, i, g, refine) : BrownianPath::zero(g.nt, g.dt);
}

inline int solve(Run& run) {
    const auto& c = run.cfg;
    WaveSolver solver(c.grid, c.spec);
    const auto init = initial_state(solver, c);
    std::optional<BoundaryPartition> part;
    try {
        part = compute_gamma0(c.weight, c.metric, c.grid, 0.0);
    } catch (const Error&) {
    }
    const std::size_t n = run.paths();
    std::vector<double> final_energy(n);
    std::vector<TrajectoryFile> first(1);
    std::vector<std::vector<std::array<double, 2>>> summary(1);
    const std::optional<TraceOperator> flux =
        part ? std::optional<TraceOperator>(TraceOperator(ObservationKind::Boundary, *part, solver.ops())) : std::nullopt;
    parallel_for(n, [&](std::size_t i) {
        const auto path = path_for(c, c.grid, i);
        double e = 0.0;
        solver.run(init, path, [&](const StateSnapshot& s) {
            e = energy_h(solver.ops(), s);
            if (i != 0) return;
            first[0].levels.emplace_back(s.z, s.zt);
            double fl = 0.0;
            if (flux) fl = flux->weights.dot(flux->apply(s.z));
            summary[0].push_back({e, fl});
        });
        final_energy[i] = e;
    });
    TrajectoryFile& tf = first[0];
    tf.dim = c.grid.dim;
    tf.nx = c.grid.nx;
    tf.nt = c.grid.nt;
    tf.dt = c.grid.dt;
    write_trajectory(run.file("trajectory.bin"), tf);
    run.record(run.file("trajectory.bin"));
    {
        CsvWriter csv(run.file("summary.csv"), {"time", "energy", "boundary_flux"});
        for (int k = 0; k <= c.grid.nt; ++k) csv.row(c.grid.time(k), summary[0][static_cast<std::size_t>(k)][0], summary[0][static_cast<std::size_t>(k)][1]);
    }
    run.record(run.file("summary.csv"));
    {
        CsvWriter csv(run.file("ensemble.csv"), {"path_index", "seed", "final_energy"});
        for (std::size_t i = 0; i < n; ++i) csv.row(i, c.ensemble.seed, final_energy[i]);
    }
    run.record(run.file("ensemble.csv"));
    const auto st = sample_stats(final_energy);
    KeyValue kv;
    kv.add("paths", n).add("cfl", solver.cfl()).add("initial_energy", energy_h(solver.ops(), init));
    kv.add("final_energy_mean", st.mean).add("final_energy_se", st.standard_error);
    run.report("solve.txt", kv);
    return run.finish(0);
}

inline int observe_cmd(Run& run) {
    const auto& c = run.cfg;
    WaveSolver solver(c.grid, c.spec);
    const auto part = compute_gamma0(c.weight, c.metric, c.grid, c.delta);
    const auto init = initial_state(solver, c);
    const auto kinds = run.kinds();
    std::vector<TraceOperator> ops;
    for (auto k : kinds) ops.emplace_back(k, part, solver.ops());
    const std::size_t n = run.paths();
    std::vector<ObservationTrace> first(kinds.size());
    const auto norms = parallel_map<std::vector<double>>(n, [&](std::size_t i) {
        const auto tr = solver.solve(init, path_for(c, c.grid, i));
        std::vector<double> v;
        for (std::size_t m = 0; m < kinds.size(); ++m) {
            auto t = observe(tr, ops[m], c.grid);
            v.push_back(t.norm2());
            if (i == 0) first[m] = std::move(t);
        }
        return v;
    });
    KeyValue kv;
    kv.add("paths", n).add("data_norm2", solver.ops().data_norm2(init.z, init.zt));
    for (std::size_t m = 0; m < kinds.size(); ++m) {
        const std::string name = to_string(kinds[m]);
        CsvWriter csv(run.file("trace_" + name + ".csv"), {"level", "time", "node", "component", "x", "y", "value"});
        const auto& t = first[m];
        for (int k = 0; k <= t.nt(); ++k)
            for (std::size_t r = 0; r < t.nodes.size(); ++r)
                for (int a = 0; a < t.components; ++a) {
                    const auto x = c.grid.coords(t.nodes[r]);
                    csv.row(k, c.grid.time(k), t.nodes[r], a, x[0], x[1], t.levels[static_cast<std::size_t>(k)][static_cast<Eigen::Index>(r) * t.components + a]);
                }
        run.record(csv);
        std::vector<double> x;
        for (const auto& v : norms) x.push_back(v[m]);
        const auto st = sample_stats(x);
        kv.add(name + "_norm2_mean", st.mean).add(name + "_norm2_se", st.standard_error);
        if (kinds[m] == ObservationKind::Boundary) {
            const double C = c.task_value<double>("hidden_regularity", "C", 10.0);
            const auto hr = hidden_regularity_report(st.mean, solver.ops().data_norm2(init.z, init.zt), forcing_norms(solver),
                                                     coefficient_norms(c.spec, c.grid), C);
            kv.add("hidden_regularity_C", C).add("hidden_regularity_rhs", hr.rhs).add("hidden_regularity_empirical_C", hr.empirical_C).add("hidden_regularity_ok", hr.ok);
        }
    }
    run.report("observe.txt", kv);
    bool ok = true;
    for (const auto& [k, v] : kv.items())
        if (k == "hidden_regularity_ok" && v != "true") ok = false;
    return run.finish(ok ? 0 : 1);
}

template <int Dim>
int verify_identity_dim(Run& run) {
    const auto& c = run.cfg;
    if (!c.weight.analytic()) throw Error(ErrorKind::InvalidParameters, "verify-identity needs a quadratic weight");
    const auto cw = make_weight(c.weight, c.metric, Dim, c.grid.T, c.carleman.lambda, c.carleman.c0, c.carleman.c1);
    const double tol = c.task_value<double>("identity", "max_relative", 1e-8);
    const int npts = run.opts().points;
    NormalStream rng(c.ensemble.seed, StreamDomain::SamplePoints, 0);
    std::vector<std::array<double, Dim + 1>> pts(static_cast<std::size_t>(npts));
    for (auto& X : pts) {
        X[0] = c.grid.T * (0.05 + 0.9 * rng.uniform());
        for (int k = 0; k < Dim; ++k) {
            const double L = c.grid.hi[static_cast<std::size_t>(k)] - c.grid.lo[static_cast<std::size_t>(k)];
            X[static_cast<std::size_t>(k) + 1] = c.grid.lo[static_cast<std::size_t>(k)] + L * (0.05 + 0.9 * rng.uniform());
        }
    }
    const fields::WeightGradient<Dim> h(c.weight);
    struct Row {
        double res[2][2];
        double scale[2][2];
        double rel[2][2];
    };
    const auto rows = parallel_map<Row>(pts.size(), [&](std::size_t i) {
        Row r{};
        for (int f = 0; f < 2; ++f) {
            IdentityTerms a = f == 0 ? identity_residual<Dim>(cw, fields::SinCos{}, pts[i]) : identity_residual<Dim>(cw, fields::Poly{}, pts[i]);
            MultiplierTerms b = f == 0 ? multiplier_identity_residual<Dim>(c.metric, fields::SinCos{}, h, pts[i])
                                       : multiplier_identity_residual<Dim>(c.metric, fields::Poly{}, h, pts[i]);
            r.res[f][0] = a.residual();
            r.scale[f][0] = a.scale;
            r.rel[f][0] = a.relative();
            r.res[f][1] = b.residual();
            r.scale[f][1] = b.scale;
            r.rel[f][1] = b.relative();
        }
        return r;
    });
    double worst = 0.0;
    {
        CsvWriter csv(run.file("identity.csv"), {"point", "family", "identity", "t", "x", "y", "residual", "scale", "relative"});
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int f = 0; f < 2; ++f)
                for (int id = 0; id < 2; ++id) {
                    csv.row(i, fields::family_name(f), id == 0 ? "weighted" : "multiplier", pts[i][0], pts[i][1],
                            Dim == 2 ? pts[i][Dim] : 0.0, rows[i].res[f][id], rows[i].scale[f][id], rows[i].rel[f][id]);
                    worst = std::max(worst, rows[i].rel[f][id]);
                }
        run.record(csv);
    }
    // finite-difference residual against the step at the first sample point; the
    // asymptotic range shrinks like 1/lambda
    const double h0 = 0.04 * std::min(1.0, 1.0 / c.carleman.lambda);
    const std::vector<double> steps{h0, h0 / 2, h0 / 4, h0 / 8};
    std::vector<double> fd[2];
    {
        CsvWriter csv(run.file("refinement.csv"), {"family", "h", "relative_residual"});
        for (int f = 0; f < 2; ++f)
            for (double s : steps) {
                const double r = std::fabs(f == 0 ? identity_residual<Dim>(cw, fields::SinCos{}, pts[0], s).relative()
                                                  : identity_residual<Dim>(cw, fields::Poly{}, pts[0], s).relative());
                fd[f].push_back(r);
                csv.row(fields::family_name(f), s, r);
            }
        run.record(csv);
    }
    auto slope = [&](const std::vector<double>& r) {
        // least-squares slope of log r against log h
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double x = std::log(steps[i]), y = std::log(r[i]);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    };
    const auto cert = certify_coefficients(cw, c.grid, check_condition_d(c.metric, c.weight, c.grid).mu0);
    KeyValue kv;
    kv.add("points", npts).add("lambda", c.carleman.lambda).add("max_relative_residual", worst).add("tolerance", tol);
    const double s0 = slope(fd[0]), s1 = slope(fd[1]);
    kv.add("fd_slope_sincos", s0).add("fd_slope_poly", s1);
    kv.add("coeff_vt_max_error", cert.max_vt_error).add("coeff_cross_max", cert.max_cross).add("coeff_vivj_min_margin", cert.min_vivj_margin);
    const bool slopes_ok = s0 >= 1.8 && s0 <= 2.2 && s1 >= 1.8 && s1 <= 2.2;
    // B-field certificate: lambda0 by bisection, then the cubic fit at the node where B is smallest
    const auto l0 = bisect_lambda0(c.weight, c.metric, c.grid, c.carleman.c0, c.carleman.c1, c.carleman.lambda_lo, c.carleman.lambda_hi);
    const auto ab = assemble_AB(build_weight(c.weight, c.metric, c.grid, c.carleman.lambda, c.carleman.c0, c.carleman.c1), c.grid);
    int kmin = 0, pmin = 0;
    for (int k = 0; k <= c.grid.nt; ++k)
        for (int p = 0; p < c.grid.size(); ++p)
            if (ab.B(k, p) < ab.B(kmin, pmin)) {
                kmin = k;
                pmin = p;
            }
    const double lam = c.carleman.lambda;
    const auto fit = fit_B_polynomial(c.weight, c.metric, c.grid, c.carleman.c0, c.carleman.c1, kmin, pmin, {lam / 2, lam, 2 * lam, 4 * lam});
    const double lead = leading_B_coefficient(c.weight, c.metric, c.grid, c.carleman.c0, c.carleman.c1, kmin, pmin);
    const double fit_gap = std::fabs(fit[3] / lead - 1.0);
    double margin = std::numeric_limits<double>::infinity();
    for (double m : l0.margin) margin = std::min(margin, m);
    kv.add("lambda0", l0.lambda0).add("b_bound_min_margin", margin).add("b_bound_ok", l0.ok);
    kv.add("b_min_time", c.grid.time(kmin)).add("b_min_x", c.grid.coords(pmin)[0]);
    kv.add("b_fit_cubic", fit[3]).add("b_leading_closed_form", lead).add("b_fit_relative_gap", fit_gap);
    const bool ok = worst <= tol && slopes_ok && l0.ok && fit_gap <= 0.05;
    kv.add("pass", ok);
    run.report("identity.txt", kv);
    run.log() << (ok ? "PASS" : "FAIL") << " max relative residual " << fmt(worst) << "\n";
    return run.finish(ok ? 0 : 1);
}

inline int verify_identity(Run& run) {
    return run.cfg.grid.dim == 1 ? verify_identity_dim<1>(run) : verify_identity_dim<2>(run);
}

struct EnergyRun {
    EnergyReport report;
    std::vector<double> mean;  // per level
    std::vector<double> se;
};

inline EnergyRun energy_run(const ExperimentConfig& c, const Grid& g, int path_refine, double C) {
    WaveSolver solver(g, c.spec);
    const auto init = initial_state(solver, c);
    const std::size_t n = c.spec.noise ? c.ensemble.n_paths : 1;
    const auto series = parallel_map<std::vector<double>>(n, [&](std::size_t i) {
        std::vector<double> e;
        solver.run(init, path_for(c, g, i, path_refine), [&](const StateSnapshot& s) { e.push_back(energy_h(solver.ops(), s)); });
        return e;
    });
    EnergyRun out;
    std::vector<double> es, et;
    for (const auto& s : series) {
        es.push_back(s.front());
        et.push_back(s.back());
    }
    out.report = energy_report(et, es, forcing_norm2(solver), coefficient_norms(c.spec, g), g.dim, g.T, C);
    for (int k = 0; k <= g.nt; ++k) {
        std::vector<double> x;
        for (const auto& s : series) x.push_back(s[static_cast<std::size_t>(k)]);
        const auto st = sample_stats(x);
        out.mean.push_back(st.mean);
        out.se.push_back(st.standard_error);
    }
    return out;
}

inline int verify_energy(Run& run) {
    const auto& c = run.cfg;
    const double C = c.task_value<double>("energy", "C", 10.0);
    const bool refine = run.opts().refine || c.task_value<bool>("energy", "refine", false);
    const double rtol = c.task_value<double>("energy", "refine_tol", 0.2);
    const auto coarse = energy_run(c, c.grid, refine ? 2 : 1, C);
    {
        CsvWriter csv(run.file("energy_series.csv"), {"time", "mean_energy", "standard_error"});
        for (int k = 0; k <= c.grid.nt; ++k) csv.row(c.grid.time(k), coarse.mean[static_cast<std::size_t>(k)], coarse.se[static_cast<std::size_t>(k)]);
        run.record(csv);
    }
    KeyValue kv;
    const auto& r = coarse.report;
    kv.add("paths", run.paths()).add("C", C).add("lhs", r.lhs).add("rhs", r.rhs).add("ratio", r.ratio).add("empirical_C", r.empirical_C).add("ok", r.ok);
    bool ok = r.ok;
    if (refine) {
        const auto fine = energy_run(c, c.grid.refined(), 1, C);
        const double change = std::fabs(fine.report.empirical_C / r.empirical_C - 1.0);
        kv.add("refined_empirical_C", fine.report.empirical_C).add("refined_ok", fine.report.ok).add("refinement_change", change).add("refinement_tol", rtol);
        ok = ok && fine.report.ok && change <= rtol;
    }
    run.report("energy.txt", kv);
    return run.finish(ok ? 0 : 1);
}

inline void write_observability(Run& run, const ObservabilityReport& rep, const std::string& suffix) {
    const std::string name = to_string(rep.kind);
    CsvWriter csv(run.file("observability_" + name + suffix + ".csv"), {"member", "data_norm2", "observation", "observation_se", "constant"});
    for (const auto& m : rep.members) csv.row(m.index, m.data_norm2, m.observation, m.observation_se, m.constant);
    run.record(csv);
    if (!suffix.empty()) return;
    CsvWriter cs(run.file("constant_vs_ensemble_" + name + ".csv"), {"members", "constant"});
    double mx = 0.0;
    for (std::size_t i = 0; i < rep.members.size(); ++i) {
        mx = std::max(mx, rep.members[i].constant);
        cs.row(i + 1, mx);
    }
    run.record(cs);
}

inline int verify_observability(Run& run) {
    const auto& c = run.cfg;
    std::string why;
    if (!geometry_ok(run, why)) {
        run.log() << "geometry hypotheses fail: " << why << "\n";
        return run.finish(1);
    }
    const bool refine = run.opts().refine || c.task_value<bool>("observability", "refine", false);
    const double rtol = c.task_value<double>("observability", "refine_tol", 0.2);
    ObservabilityStudy st;
    st.n_data = c.ensemble.n_data;
    st.modes = c.ensemble.modes;
    st.n_paths = c.ensemble.n_paths;
    st.seed = c.ensemble.seed;
    st.C_max = c.task_value<double>("observability", "C_max", std::numeric_limits<double>::infinity());
    st.path_refine = refine ? 2 : 1;
    const auto kinds = run.kinds();
    WaveSolver solver(c.grid, c.spec);
    const auto part = compute_gamma0(c.weight, c.metric, c.grid, c.delta);
    const auto reps = run_observability_study(solver, part, kinds, st);
    std::vector<ObservabilityReport> fine;
    if (refine) {
        const Grid g2 = c.grid.refined();
        WaveSolver s2(g2, c.spec);
        ObservabilityStudy st2 = st;
        st2.path_refine = 1;
        fine = run_observability_study(s2, compute_gamma0(c.weight, c.metric, g2, c.delta), kinds, st2);
    }
    bool ok = true;
    for (std::size_t m = 0; m < reps.size(); ++m) {
        const auto& r = reps[m];
        write_observability(run, r, "");
        KeyValue kv;
        kv.add("kind", to_string(r.kind)).add("members", r.members.size()).add("paths", solver.spec().noise ? st.n_paths : 1);
        kv.add("lhs", r.lhs).add("lhs_se", r.lhs_se).add("rhs_observation", r.rhs_observation).add("rhs_observation_se", r.rhs_observation_se);
        kv.add("rhs_f", r.rhs_f).add("rhs_g", r.rhs_g).add("empirical_constant", r.empirical_constant).add("theorem_constant", r.theorem_constant);
        kv.add("C_max", r.C_max).add("pass", r.pass);
        bool this_ok = r.pass;
        if (refine) {
            write_observability(run, fine[m], "_refined");
            const double change = std::fabs(fine[m].empirical_constant / r.empirical_constant - 1.0);
            kv.add("refined_empirical_constant", fine[m].empirical_constant).add("refinement_change", change).add("refinement_tol", rtol);
            this_ok = this_ok && fine[m].pass && change <= rtol;
        }
        run.report("observability_" + std::string(to_string(r.kind)) + ".txt", kv);
        ok = ok && this_ok;
    }
    return run.finish(ok ? 0 : 1);
}

inline ObservationTrace zero_target(const ProblemSpec& spec, const Grid& g, const BoundaryPartition& part, ObservationKind kind) {
    const TraceOperator op(kind, part, Operators(g, spec.metric));
    ObservationTrace t;
    t.kind = kind;
    t.components = op.components;
    t.nodes = op.nodes;
    t.weights = op.weights;
    t.dt = g.dt;
    t.levels.assign(static_cast<std::size_t>(g.nt + 1), Vector::Zero(op.rows()));
    return t;
}

/// Target rebuilt from a trace CSV written by `observe`.
inline ObservationTrace read_target(const fs::path& path, ObservationTrace shape) {
    const auto tab = read_csv(path);
    const int cl = tab.column("level"), cn = tab.column("node"), cc = tab.column("component"), cv = tab.column("value");
    std::map<int, std::size_t> row_of;
    for (std::size_t r = 0; r < shape.nodes.size(); ++r) row_of[shape.nodes[r]] = r;
    std::size_t filled = 0;
    for (const auto& row : tab.rows) {
        const int k = std::stoi(row[static_cast<std::size_t>(cl)]), node = std::stoi(row[static_cast<std::size_t>(cn)]);
        const int a = std::stoi(row[static_cast<std::size_t>(cc)]);
        const auto it = row_of.find(node);
        if (k < 0 || k > shape.nt() || it == row_of.end() || a < 0 || a >= shape.components)
            throw Error(ErrorKind::ConfigError, path.string() + ": trace row does not match the configured grid and partition");
        shape.levels[static_cast<std::size_t>(k)][static_cast<Eigen::Index>(it->second) * shape.components + a] =
            std::stod(row[static_cast<std::size_t>(cv)]);
        ++filled;
    }
    if (filled != shape.levels.size() * static_cast<std::size_t>(shape.levels[0].size()))
        throw Error(ErrorKind::ConfigError, path.string() + ": trace has " + std::to_string(filled) + " values, expected " +
                                                std::to_string(shape.levels.size() * static_cast<std::size_t>(shape.levels[0].size())));
    return shape;
}

inline int reconstruct_cmd(Run& run) {
    const auto& c = run.cfg;
    std::string why;
    if (!geometry_ok(run, why)) {
        run.log() << "geometry hypotheses fail: " << why << "\n";
        return run.finish(1);
    }
    const auto kinds = run.kinds(c.task_value<std::string>("reconstruction", "mode", "boundary"));
    if (kinds.size() != 1) throw Error(ErrorKind::ConfigError, "reconstruct needs --mode boundary or internal");
    const ObservationKind kind = kinds[0];
    const bool honest = run.opts().honest || c.task_value<bool>("reconstruction", "honest", false);
    const auto path_index = c.task_value<std::uint64_t>("reconstruction", "path_index", 0);

    InverseProblem p;
    p.spec = c.spec;
    p.grid = c.grid;
    p.kind = kind;
    p.partition = compute_gamma0(c.weight, c.metric, c.grid, c.delta);
    p.regularization = run.opts().reg >= 0.0 ? run.opts().reg : c.task_value<double>("reconstruction", "regularization", 0.0);
    p.max_iterations = run.opts().max_iter > 0 ? run.opts().max_iter : c.task_value<int>("reconstruction", "max_iterations", 200);
    p.gradient_tol = run.opts().tol > 0.0 ? run.opts().tol : c.task_value<double>("reconstruction", "tolerance", 1e-10);
    p.throw_on_cap = false;
    const DataFn w0 = [&](double x, double y) { return c.z0.at(0.0, {x, y}); };
    const DataFn w1 = [&](double x, double y) { return c.z1.at(0.0, {x, y}); };
    const BrownianPath data_path = path_for(c, honest ? c.grid.refined() : c.grid, path_index);
    p.path = honest ? coarsen(data_path, 2) : data_path;
    if (!run.opts().target.empty()) {
        p.target = read_target(run.opts().target, zero_target(c.spec, c.grid, p.partition, kind));
    } else {
        p.target = synthetic_target(c.spec, c.grid, c.weight, p.partition, kind, w0, w1, data_path, honest);
    }
    p.truth = sample_data(c.grid, w0, w1);
    InverseSolver solver(p);
    InitialData guess = InitialData::zero(c.grid.size());
    const double pert = c.task_value<double>("reconstruction", "guess_perturbation", 0.0);
    if (pert > 0.0) {
        auto [a, b] = fourier_initial_data(c.grid, c.ensemble.modes, c.ensemble.seed, 0, StreamDomain::Perturbation);
        InitialData d{a, b};
        guess = *p.truth + (pert * solver.norm(*p.truth) / solver.norm(d)) * d;
    }
    const auto r = solver.reconstruct(guess);
    {
        CsvWriter csv(run.file("reconstruction.csv"), {"iteration", "objective", "gradient_norm"});
        for (const auto& h : r.history) csv.row(h.iteration, h.objective, h.gradient_norm);
        run.record(csv);
    }
    TrajectoryFile tf;
    tf.dim = c.grid.dim;
    tf.nx = c.grid.nx;
    tf.nt = 0;
    tf.dt = 0.0;
    tf.levels.emplace_back(r.recovered.w0, r.recovered.w1);
    write_trajectory(run.file("recovered.bin"), tf);
    run.record(run.file("recovered.bin"));
    const double max_err = c.task_value<double>("reconstruction", "max_relative_error", std::numeric_limits<double>::infinity());
    KeyValue kv;
    kv.add("method", r.method).add("kind", to_string(kind)).add("honest", honest).add("iterations", r.history.back().iteration);
    kv.add("objective_initial", r.history.front().objective).add("objective_final", r.history.back().objective);
    kv.add("gradient_norm_final", r.history.back().gradient_norm).add("final_residual", r.final_residual);
    kv.add("relative_error", r.relative_error).add("initial_error", solver.relative_error(guess, *p.truth));
    kv.add("converged", r.converged).add("null_space_estimate", r.null_space_estimate).add("max_relative_error", max_err);
    const bool ok = r.converged && !(r.relative_error > max_err);
    if (!r.converged) run.log() << "NoConvergence: iteration cap reached; estimated null-space dimension " << r.null_space_estimate << "\n";
    run.report("reconstruction.txt", kv);
    return run.finish(ok ? 0 : 1);
}

inline StabilityReport stability_on(const ExperimentConfig& c, const Grid& g, ObservationKind kind, std::size_t pairs, int path_refine) {
    InverseProblem p;
    p.spec = c.spec;
    p.grid = g;
    p.kind = kind;
    p.partition = compute_gamma0(c.weight, c.metric, g, c.delta);
    p.path = path_for(c, g, 0, path_refine);
    p.target = zero_target(c.spec, g, p.partition, kind);
    InverseSolver s(p);
    return stability_probe(fourier_pairs(g, pairs, c.ensemble.modes, c.ensemble.seed), s);
}

inline int stability_cmd(Run& run) {
    const auto& c = run.cfg;
    std::string why;
    if (!geometry_ok(run, why)) {
        run.log() << "geometry hypotheses fail: " << why << "\n";
        return run.finish(1);
    }
    const std::size_t pairs = static_cast<std::size_t>(run.opts().pairs > 0 ? run.opts().pairs : c.task_value<int>("stability", "pairs", 30));
    const bool refine = run.opts().refine || c.task_value<bool>("stability", "refine", false);
    const double rtol = c.task_value<double>("stability", "refine_tol", 0.2);
    KeyValue kv;
    kv.add("pairs", pairs);
    bool ok = true;
    for (auto kind : run.kinds()) {
        const std::string name = to_string(kind);
        const auto rep = stability_on(c, c.grid, kind, pairs, refine ? 2 : 1);
        CsvWriter csv(run.file("stability_" + name + ".csv"), {"pair", "data_gap", "observation_gap", "ratio"});
        for (std::size_t i = 0; i < rep.ratios.size(); ++i) csv.row(i, rep.data_gaps[i], rep.observation_gaps[i], rep.ratios[i]);
        run.record(csv);
        kv.add(name + "_empirical_C", rep.max_ratio);
        ok = ok && std::isfinite(rep.max_ratio);
        if (refine) {
            const auto fine = stability_on(c, c.grid.refined(), kind, pairs, 1);
            const double change = std::fabs(fine.max_ratio / rep.max_ratio - 1.0);
            kv.add(name + "_refined_empirical_C", fine.max_ratio).add(name + "_refinement_change", change);
            ok = ok && change <= rtol;
        }
    }
    if (refine) kv.add("refinement_tol", rtol);
    kv.add("pass", ok);
    run.report("stability.txt", kv);
    return run.finish(ok ? 0 : 1);
}

/// Long-format plot data (series, x, value) from an earlier run's CSVs.
inline int emit_plotdata(const Options& o, std::ostream& log) {
    const fs::path dir = o.artifact;
    const fs::path out = o.out.empty() ? dir : fs::path(o.out);
    if (!fs::is_directory(dir)) throw Error(ErrorKind::MissingArtifact, "no artifact directory " + dir.string());
    fs::create_directories(out);
    struct Source {
        std::string file, series_col, x_col;
        std::vector<std::string> values;
    };
    std::vector<Source> src;
    if (o.kind == "energy") src = {{"energy_series.csv", "", "time", {"mean_energy"}}};
    else if (o.kind == "refinement") src = {{"refinement.csv", "family", "h", {"relative_residual"}}};
    else if (o.kind == "objective") src = {{"reconstruction.csv", "", "iteration", {"objective", "gradient_norm"}}};
    else if (o.kind == "constant")
        src = {{"constant_vs_ensemble_boundary.csv", "", "members", {"constant"}}, {"constant_vs_ensemble_internal.csv", "", "members", {"constant"}}};
    else throw Error(ErrorKind::ConfigError, "--kind must be energy, refinement, objective or constant");
    const fs::path target = out / ("plot_" + o.kind + ".csv");
    std::size_t found = 0;
    {
        CsvWriter csv(target, {"series", "x", "value"});
        for (const auto& s : src) {
            if (!fs::exists(dir / s.file)) continue;
            ++found;
            const auto tab = read_csv(dir / s.file);
            const int xc = tab.column(s.x_col);
            const int sc = s.series_col.empty() ? -1 : tab.column(s.series_col);
            for (const auto& v : s.values) {
                const int vc = tab.column(v);
                std::string series = v;
                if (o.kind == "constant") series = s.file.find("boundary") != std::string::npos ? "boundary" : "internal";
                for (const auto& row : tab.rows)
                    csv.row(sc >= 0 ? row[static_cast<std::size_t>(sc)] : series, row[static_cast<std::size_t>(xc)], row[static_cast<std::size_t>(vc)]);
            }
        }
    }
    if (found == 0) {
        fs::remove(target);
        throw Error(ErrorKind::MissingArtifact, "no " + o.kind + " artifact in " + dir.string());
    }
    // register in the run's manifest when writing next to it
    if (fs::exists(out / RunManifest::filename)) {
        std::ifstream in(out / RunManifest::filename);
        Json j = Json::parse(in);
        const std::string rel = target.filename().string();
        Json entries = Json::array();
        for (const auto& e : j["outputs"])
            if (e["file"] != rel) entries.push_back(e);
        entries.push_back({{"file", rel}, {"sha256", sha256_file(target)}, {"bytes", fs::file_size(target)}});
        j["outputs"] = entries;
        std::ofstream(out / RunManifest::filename, std::ios::binary) << j.dump(2) << '\n';
    }
    log << "wrote " << target.string() << "\n";
    return 0;
}

inline int verify_manifest_cmd(const Options& o, std::ostream& log) {
    const auto c = verify_manifest(o.dir);
    for (const auto& p : c.problems) log << p << "\n";
    log << (c.ok ? "PASS" : "FAIL") << " verify-manifest " << o.dir << "\n";
    return c.ok ? 0 : 1;
}

/// Entry point shared by the executable and the tests.
inline int main(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Stochastic wave laboratory: simulation, Carleman checks, observability and reconstruction"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sc) {
        sc->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sc->add_option("--out", o.out, "output directory (default: task.output_dir)");
        sc->add_option("--seed", o.seed, "override the master seed");
    };
    using Handler = int (*)(Run&);
    std::vector<std::pair<CLI::App*, Handler>> runs;
    auto add = [&](const char* name, const char* help, Handler h) {
        CLI::App* sc = app.add_subcommand(name, help);
        common(sc);
        runs.emplace_back(sc, h);
        return sc;
    };
    add("check-geometry", "certify the weight, Gamma_0 and the time horizon", check_geometry);
    add("solve", "simulate an ensemble and export trajectory and energy", solve)->add_option("--paths", o.n_paths, "number of noise paths");
    add("observe", "extract boundary/internal traces and check hidden regularity", observe_cmd)
        ->add_option("--mode", o.mode, "boundary | internal | both");
    add("verify-identity", "check the pointwise weighted and multiplier identities", verify_identity)
        ->add_option("--points", o.points, "number of random sample points");
    auto* ve = add("verify-energy", "check the energy estimate on an ensemble", verify_energy);
    ve->add_flag("--refine", o.refine, "repeat on the refined grid");
    ve->add_option("--paths", o.n_paths, "number of noise paths");
    auto* vo = add("verify-observability", "empirical observability constants", verify_observability);
    vo->add_option("--mode", o.mode, "boundary | internal | both");
    vo->add_option("--n-data", o.n_data, "number of random initial data");
    vo->add_option("--modes", o.modes, "Fourier modes per datum");
    vo->add_option("--paths", o.n_paths, "noise paths per datum");
    vo->add_flag("--refine", o.refine, "repeat on the refined grid");
    auto* rc = add("reconstruct", "recover initial data from observations", reconstruct_cmd);
    rc->add_option("--mode", o.mode, "boundary | internal");
    rc->add_option("--tol", o.tol, "relative gradient tolerance");
    rc->add_option("--max-iter", o.max_iter, "iteration cap");
    rc->add_option("--reg", o.reg, "Tikhonov weight");
    rc->add_option("--target", o.target, "trace CSV from `observe` to invert")->check(CLI::ExistingFile);
    rc->add_flag("--honest", o.honest, "generate synthetic data on the refined grid");
    auto* sp = add("stability-probe", "empirical stability constant over data pairs", stability_cmd);
    sp->add_option("--mode", o.mode, "boundary | internal | both");
    sp->add_option("--pairs", o.pairs, "number of data pairs");
    sp->add_flag("--refine", o.refine, "repeat on the refined grid");
    auto* ep = app.add_subcommand("emit-plotdata", "long-format CSV for plotting from a run directory");
    ep->add_option("--artifact", o.artifact, "run output directory")->required();
    ep->add_option("--kind", o.kind, "energy | refinement | objective | constant")->required();
    ep->add_option("--out", o.out, "where to write plot_<kind>.csv (default: the artifact directory)");
    auto* vm = app.add_subcommand("verify-manifest", "re-hash the outputs listed in a run manifest");
    vm->add_option("--dir", o.dir, "run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, log, err);
        return code == 0 ? 0 : 2;
    }
    try {
        if (ep->parsed()) return emit_plotdata(o, log);
        if (vm->parsed()) return verify_manifest_cmd(o, log);
        for (const auto& [sc, h] : runs) {
            if (!sc->parsed()) continue;
            Run run(sc->get_name(), o, log);
            try {
                return h(run);
            } catch (const Error& e) {
                err << e.what() << "\n";
                run.finish(2);
                return 2;
            }
        }
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

} // namespace obswave::cli
