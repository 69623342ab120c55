#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "obswave/errors.hpp"
#include "obswave/grid.hpp"

namespace obswave {

/// Symmetric coefficient matrix b^{ij}(x) = B0 + sum_k x_k * B1[k], stored as
/// upper triangles so b^{ij} = b^{ji} holds by construction.
struct MetricField {
    int dim = 1;
    std::array<double, 3> base{1.0, 0.0, 1.0};                     // (11, 12, 22)
    std::array<std::array<double, 3>, 2> slope{};                  // d/dx_k of (11, 12, 22)
    double s0 = 1e-3;                                              // ellipticity floor

    static MetricField identity(int dim) {
        MetricField m;
        m.dim = dim;
        return m;
    }

    static int slot(int i, int j) { return (i == j) ? (i == 0 ? 0 : 2) : 1; }

    bool is_constant() const {
        for (const auto& s : slope)
            for (double v : s)
                if (v != 0.0) return false;
        return true;
    }

    template <class S, int Dim>
    std::array<std::array<S, Dim>, Dim> at(const std::array<S, Dim>& x) const {
        std::array<std::array<S, Dim>, Dim> b{};
        for (int i = 0; i < Dim; ++i)
            for (int j = 0; j < Dim; ++j) {
                const int s = slot(i, j);
                S v(base[s]);
                for (int k = 0; k < Dim; ++k) v = v + x[k] * slope[k][s];
                b[i][j] = v;
            }
        return b;
    }

    double entry(int i, int j, const std::array<double, 2>& x) const {
        const int s = slot(i, j);
        double v = base[s];
        for (int k = 0; k < dim; ++k) v += x[k] * slope[k][s];
        return v;
    }

    /// d b^{ij} / d x_k (constant for this affine family).
    double derivative(int i, int j, int k) const { return slope[k][slot(i, j)]; }

    Eigen::MatrixXd matrix(const std::array<double, 2>& x) const {
        Eigen::MatrixXd b(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) b(i, j) = entry(i, j, x);
        return b;
    }

    struct Spectrum {
        double min_eig = std::numeric_limits<double>::infinity();
        double max_eig = 0.0;
    };

    Spectrum spectrum(const Grid& grid) const {
        Spectrum s;
        for (int p = 0; p < grid.size(); ++p) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix(grid.coords(p)), Eigen::EigenvaluesOnly);
            s.min_eig = std::min(s.min_eig, es.eigenvalues().minCoeff());
            s.max_eig = std::max(s.max_eig, es.eigenvalues().maxCoeff());
        }
        return s;
    }

    /// Throws DegenerateMetric unless the smallest eigenvalue at every node
    /// is at least s0.
    void check_ellipticity(const Grid& grid) const {
        if (dim != grid.dim) throw Error(ErrorKind::DegenerateMetric, "metric dimension does not match grid");
        if (!(s0 > 0.0)) throw Error(ErrorKind::DegenerateMetric, "ellipticity floor s0 must be positive");
        const auto s = spectrum(grid);
        if (s.min_eig < s0)
            throw Error(ErrorKind::DegenerateMetric,
                        "smallest metric eigenvalue " + std::to_string(s.min_eig) + " is below s0 = " + std::to_string(s0));
    }
};

/// Courant number dt * sqrt(max eig b) * sqrt(sum_k 1/h_k^2); explicit
/// leapfrog is stable for values <= 1.
inline double cfl_number(const Grid& grid, const MetricField& metric) {
    double inv = 0.0;
    for (int k = 0; k < grid.dim; ++k) inv += 1.0 / (grid.h[k] * grid.h[k]);
    return grid.dt * std::sqrt(metric.spectrum(grid).max_eig * inv);
}

} // namespace obswave
