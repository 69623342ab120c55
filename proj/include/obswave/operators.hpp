#pragma once

// Sparse finite-difference operators on full-grid nodal vectors. Boundary
// nodes carry the Dirichlet value 0, so every operator drops boundary
// columns; transposes are then exact discrete adjoints.

#include <array>
#include <vector>

#include <Eigen/Sparse>

#include "obswave/grid.hpp"
#include "obswave/metric.hpp"

namespace obswave {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Operators {
    Grid grid;
    SparseMatrix laplacian;                 // sum_{ij} (b^{ij} z_i)_j, interior rows
    std::array<SparseMatrix, 2> gradient;   // d/dx_k at every node, one-sided at the axis ends
    SparseMatrix stiffness;                 // discrete H^1_0 Gram matrix (identity metric, edge differences)
    Vector mass;                            // trapezoid node weights
    std::vector<int> interior;
    std::vector<char> is_interior;

    Operators(const Grid& g, const MetricField& metric) : grid(g) {
        const int n = grid.size();
        interior = grid.interior();
        is_interior.assign(static_cast<std::size_t>(n), 0);
        for (int p : interior) is_interior[static_cast<std::size_t>(p)] = 1;
        mass.resize(n);
        for (int p = 0; p < n; ++p) mass[p] = grid.node_weight(p);
        build_laplacian(metric);
        build_gradient();
        build_stiffness();
    }

    int size() const { return grid.size(); }

    double h1_seminorm2(const Vector& z) const { return z.dot(stiffness * z); }
    double l2_norm2(const Vector& z) const { return z.cwiseProduct(z).dot(mass); }

    /// |(z0, z1)|^2 in H^1_0 x L^2.
    double data_norm2(const Vector& z0, const Vector& z1) const { return h1_seminorm2(z0) + l2_norm2(z1); }

    void zero_boundary(Vector& v) const {
        for (int p = 0; p < size(); ++p)
            if (!is_interior[static_cast<std::size_t>(p)]) v[p] = 0.0;
    }

private:
    using Triplet = Eigen::Triplet<double>;

    int stride(int axis) const { return axis == 0 ? 1 : grid.nx[0]; }

    void add(std::vector<Triplet>& t, int row, int col, double v) const {
        if (is_interior[static_cast<std::size_t>(col)]) t.emplace_back(row, col, v);
    }

    void build_laplacian(const MetricField& metric) {
        std::vector<Triplet> t;
        for (int p : interior) {
            const auto x = grid.coords(p);
            for (int k = 0; k < grid.dim; ++k) {
                const double h = grid.h[k];
                const int s = stride(k);
                auto xp = x, xm = x;
                xp[k] += 0.5 * h;
                xm[k] -= 0.5 * h;
                const double bp = metric.entry(k, k, xp) / (h * h);
                const double bm = metric.entry(k, k, xm) / (h * h);
                add(t, p, p + s, bp);
                add(t, p, p - s, bm);
                add(t, p, p, -(bp + bm));
            }
            if (grid.dim == 2) {
                const double hx = grid.h[0], hy = grid.h[1];
                const int sx = stride(0), sy = stride(1);
                const double c = 1.0 / (4.0 * hx * hy);
                // d_y (b^{xy} d_x z)
                auto xu = x, xd = x;
                xu[1] += hy;
                xd[1] -= hy;
                const double bu = metric.entry(0, 1, xu) * c, bd = metric.entry(0, 1, xd) * c;
                add(t, p, p + sy + sx, bu);
                add(t, p, p + sy - sx, -bu);
                add(t, p, p - sy + sx, -bd);
                add(t, p, p - sy - sx, bd);
                // d_x (b^{yx} d_y z)
                auto xr = x, xl = x;
                xr[0] += hx;
                xl[0] -= hx;
                const double br = metric.entry(1, 0, xr) * c, bl = metric.entry(1, 0, xl) * c;
                add(t, p, p + sx + sy, br);
                add(t, p, p + sx - sy, -br);
                add(t, p, p - sx + sy, -bl);
                add(t, p, p - sx - sy, bl);
            }
        }
        laplacian.resize(size(), size());
        laplacian.setFromTriplets(t.begin(), t.end());
        laplacian.prune(0.0);
    }

    void build_gradient() {
        for (int k = 0; k < 2; ++k) gradient[k].resize(size(), size());
        for (int k = 0; k < grid.dim; ++k) {
            std::vector<Triplet> t;
            const double h = grid.h[k];
            const int s = stride(k);
            const int n = grid.nx[k];
            for (int p = 0; p < size(); ++p) {
                const int c = grid.ij(p)[k];
                if (c == 0) {
                    add(t, p, p, -3.0 / (2.0 * h));
                    add(t, p, p + s, 4.0 / (2.0 * h));
                    add(t, p, p + 2 * s, -1.0 / (2.0 * h));
                } else if (c == n - 1) {
                    add(t, p, p, 3.0 / (2.0 * h));
                    add(t, p, p - s, -4.0 / (2.0 * h));
                    add(t, p, p - 2 * s, 1.0 / (2.0 * h));
                } else {
                    add(t, p, p + s, 1.0 / (2.0 * h));
                    add(t, p, p - s, -1.0 / (2.0 * h));
                }
            }
            gradient[k].setFromTriplets(t.begin(), t.end());
        }
    }

    void build_stiffness() {
        std::vector<Triplet> t;
        for (int k = 0; k < grid.dim; ++k) {
            const int s = stride(k);
            const double h = grid.h[k];
            for (int p = 0; p < size(); ++p) {
                const auto c = grid.ij(p);
                if (c[k] == grid.nx[k] - 1) continue;
                double w = 1.0 / h;
                for (int m = 0; m < grid.dim; ++m) {
                    if (m == k) continue;
                    w *= (c[m] == 0 || c[m] == grid.nx[m] - 1) ? 0.5 * grid.h[m] : grid.h[m];
                }
                const int q = p + s;
                if (is_interior[static_cast<std::size_t>(p)]) {
                    t.emplace_back(p, p, w);
                    add(t, p, q, -w);
                }
                if (is_interior[static_cast<std::size_t>(q)]) {
                    t.emplace_back(q, q, w);
                    add(t, q, p, -w);
                }
            }
        }
        stiffness.resize(size(), size());
        stiffness.setFromTriplets(t.begin(), t.end());
        stiffness.prune(0.0);
    }
};

} // namespace obswave
