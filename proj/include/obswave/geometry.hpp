#pragma once

// Weight-function certificates and the observation geometry: the boundary
// part Gamma_0 where the metric flux of grad d leaves the domain, and the
// interior collar O_delta(Gamma_0).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "obswave/errors.hpp"
#include "obswave/grid.hpp"
#include "obswave/metric.hpp"
#include "obswave/weight.hpp"

namespace obswave {

struct ConditionReport {
    double mu0 = 0.0;
    double min_grad = 0.0;
    bool ok = false;
};

/// The matrix M^{ij} = sum_{i',j'} [2 b^{ij'} (b^{i'j} d_{i'})_{j'} - b^{ij}_{j'} b^{i'j'} d_{i'}]
/// at node p, symmetrized.
inline Eigen::MatrixXd condition_d_matrix(const MetricField& metric, const WeightSample& w, const Grid& grid, int p) {
    const int n = grid.dim;
    const auto x = grid.coords(p);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int ip = 0; ip < n; ++ip)
                for (int jp = 0; jp < n; ++jp) {
                    const double flux_deriv = metric.derivative(ip, j, jp) * w.grad[p][ip] +
                                              metric.entry(ip, j, x) * w.hess[p][ip][jp];
                    s += 2.0 * metric.entry(i, jp, x) * flux_deriv -
                         metric.derivative(i, j, jp) * metric.entry(ip, jp, x) * w.grad[p][ip];
                }
            M(i, j) = s;
        }
    return 0.5 * (M + M.transpose());
}

inline ConditionReport check_condition_d(const MetricField& metric, const WeightSpec& weight, const Grid& grid) {
    metric.check_ellipticity(grid);
    const WeightSample w = weight.sample(grid);
    ConditionReport r;
    r.mu0 = std::numeric_limits<double>::infinity();
    r.min_grad = std::numeric_limits<double>::infinity();
    for (int p = 0; p < grid.size(); ++p) {
        if (!(w.d[p] > 0.0))
            throw Error(ErrorKind::NonPositiveWeight, "d is not positive at node " + std::to_string(p));
        double g2 = 0.0;
        for (int k = 0; k < grid.dim; ++k) g2 += w.grad[p][k] * w.grad[p][k];
        r.min_grad = std::min(r.min_grad, std::sqrt(g2));
        const Eigen::MatrixXd M = condition_d_matrix(metric, w, grid, p);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(M, metric.matrix(grid.coords(p)),
                                                                        Eigen::EigenvaluesOnly);
        r.mu0 = std::min(r.mu0, ges.eigenvalues().minCoeff());
    }
    r.ok = r.mu0 > 0.0 && r.min_grad > 0.0;
    return r;
}

/// Weight for a*d + b. The certified mu0 scales by a.
inline WeightSpec dilate_weight(const WeightSpec& weight, double a, double b, const Grid& grid) {
    if (!(a >= 1.0)) throw Error(ErrorKind::InvalidParameters, "dilation factor must satisfy a >= 1");
    WeightSpec out = weight;
    if (weight.kind == WeightSpec::Kind::Quadratic) {
        out.a = a * weight.a;
        out.shift = a * weight.shift + b;
    } else {
        for (auto& v : out.values) v = a * v + b;
    }
    if (weight.mu0) out.mu0 = a * *weight.mu0;
    const WeightSample s = out.sample(grid);
    for (int p = 0; p < grid.size(); ++p)
        if (!(s.d[p] > 0.0))
            throw Error(ErrorKind::NonPositiveWeight, "dilated weight is not positive at node " + std::to_string(p));
    return out;
}

struct Condition2Report {
    double R0 = 0.0;
    double R1 = 0.0;
    double T0 = 0.0;
    double mu0 = 0.0;
    double min_flux = 0.0;              // min over nodes of (1/4) b grad d . grad d
    std::array<bool, 4> checks{};

    bool ok() const { return checks[0] && checks[1] && checks[2] && checks[3]; }

    std::string failures() const {
        static const char* what[4] = {
            "flag (1): (1/4) b^ij d_i d_j >= R1^2 fails somewhere",
            "flag (2): T > T0 = 2 R1 fails",
            "flag (3): (2 R1 / T)^2 < c1 < 2 R1 / T fails",
            "flag (4): mu0 - 4 c1 - c0 > 0 fails",
        };
        std::string s;
        for (int k = 0; k < 4; ++k)
            if (!checks[k]) s += std::string(s.empty() ? "" : "; ") + what[k];
        return s;
    }
};

inline Condition2Report check_condition2(const WeightSpec& weight, const MetricField& metric, const Grid& grid,
                                         double c0, double c1) {
    const WeightSample w = weight.sample(grid);
    const double mu0 = weight.mu0 ? *weight.mu0 : check_condition_d(metric, weight, grid).mu0;
    double dmax = -std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    double fmin = std::numeric_limits<double>::infinity();
    for (int p = 0; p < grid.size(); ++p) {
        dmax = std::max(dmax, w.d[p]);
        dmin = std::min(dmin, w.d[p]);
        const auto x = grid.coords(p);
        double q = 0.0;
        for (int i = 0; i < grid.dim; ++i)
            for (int j = 0; j < grid.dim; ++j) q += metric.entry(i, j, x) * w.grad[p][i] * w.grad[p][j];
        fmin = std::min(fmin, 0.25 * q);
    }
    Condition2Report r;
    r.R1 = std::sqrt(std::max(dmax, 0.0));
    r.R0 = std::sqrt(std::max(dmin, 0.0));
    r.T0 = 2.0 * r.R1;
    r.mu0 = mu0;
    r.min_flux = fmin;
    const double ratio = 2.0 * r.R1 / grid.T;
    // Relative slack of 1e-12 on flag (1) absorbs round-off when the bound is attained.
    r.checks[0] = fmin >= dmax * (1.0 - 1e-12);
    r.checks[1] = grid.T > r.T0;
    r.checks[2] = ratio * ratio < c1 && c1 < ratio;
    r.checks[3] = mu0 - 4.0 * c1 - c0 > 0.0;
    return r;
}

/// Boundary nodes with outward normals, their Gamma_0 tags and the collar.
/// In 2-D the four corner nodes carry no normal and are left out.
struct BoundaryPartition {
    std::vector<int> nodes;
    std::vector<Vec2> normals;
    std::vector<bool> in_gamma0;
    std::vector<double> flux;           // b^{ij} d_i nu^j per boundary node
    std::vector<int> gamma0;            // grid indices of tagged nodes
    std::vector<Vec2> gamma0_normals;
    std::vector<int> collar;            // grid nodes within delta of Gamma_0
    std::vector<double> collar_factor;  // 1/2 on the outer rim dist == delta
    double delta = 0.0;
};

inline std::vector<std::pair<int, Vec2>> boundary_normals(const Grid& grid) {
    std::vector<std::pair<int, Vec2>> out;
    for (int p = 0; p < grid.size(); ++p) {
        if (!grid.on_boundary(p)) continue;
        const auto c = grid.ij(p);
        Vec2 nu{0.0, 0.0};
        int hits = 0;
        for (int k = 0; k < grid.dim; ++k) {
            if (c[k] == 0) { nu[k] = -1.0; ++hits; }
            else if (c[k] == grid.nx[k] - 1) { nu[k] = 1.0; ++hits; }
        }
        if (hits == 1) out.emplace_back(p, nu);
    }
    return out;
}

inline BoundaryPartition compute_gamma0(const WeightSpec& weight, const MetricField& metric, const Grid& grid,
                                        double delta) {
    if (!(delta >= 0.0)) throw Error(ErrorKind::InvalidParameters, "collar width delta must be nonnegative");
    const WeightSample w = weight.sample(grid);
    BoundaryPartition bp;
    bp.delta = delta;
    for (const auto& [p, nu] : boundary_normals(grid)) {
        const auto x = grid.coords(p);
        double flux = 0.0;
        for (int i = 0; i < grid.dim; ++i)
            for (int j = 0; j < grid.dim; ++j) flux += metric.entry(i, j, x) * w.grad[p][i] * nu[j];
        const bool tagged = flux > 0.0;
        bp.nodes.push_back(p);
        bp.normals.push_back(nu);
        bp.flux.push_back(flux);
        bp.in_gamma0.push_back(tagged);
        if (tagged) {
            bp.gamma0.push_back(p);
            bp.gamma0_normals.push_back(nu);
        }
    }
    if (bp.gamma0.empty())
        throw Error(ErrorKind::EmptyGamma0, "no boundary node has b^ij d_i nu^j > 0");
    double hmax = 0.0;
    for (int k = 0; k < grid.dim; ++k) hmax = std::max(hmax, grid.h[k]);
    const double rim = 1e-9 * hmax;
    for (int p = 0; p < grid.size(); ++p) {
        const auto x = grid.coords(p);
        double best = std::numeric_limits<double>::infinity();
        for (int q : bp.gamma0) {
            const auto y = grid.coords(q);
            double r2 = 0.0;
            for (int k = 0; k < grid.dim; ++k) r2 += (x[k] - y[k]) * (x[k] - y[k]);
            best = std::min(best, std::sqrt(r2));
        }
        if (best <= delta + rim) {
            bp.collar.push_back(p);
            bp.collar_factor.push_back(std::fabs(best - delta) <= rim && delta > 0.0 ? 0.5 : 1.0);
        }
    }
    return bp;
}

} // namespace obswave
