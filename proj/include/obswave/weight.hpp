#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

#include "obswave/errors.hpp"
#include "obswave/grid.hpp"

namespace obswave {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

/// Nodal values of d, grad d and the Hessian of d on a grid.
struct WeightSample {
    std::vector<double> d;
    std::vector<Vec2> grad;
    std::vector<Mat2> hess;
};

/// The weight function d of the Carleman construction. The quadratic family
/// d(x) = a |x - center|^2 + shift is evaluated analytically; a tabulated
/// field on a fixed grid uses second-order finite differences.
struct WeightSpec {
    enum class Kind { Quadratic, Tabulated };

    Kind kind = Kind::Quadratic;
    double a = 1.0;
    Vec2 center{-1.0, -1.0};
    double shift = 0.0;

    Grid table_grid;
    std::vector<double> values;

    std::optional<double> mu0;  // set by check_condition_d or dilate_weight

    static WeightSpec quadratic(double a, Vec2 center, double shift = 0.0) {
        WeightSpec w;
        w.a = a;
        w.center = center;
        w.shift = shift;
        return w;
    }

    static WeightSpec tabulated(const Grid& grid, std::vector<double> values) {
        if (static_cast<int>(values.size()) != grid.size())
            throw Error(ErrorKind::InvalidParameters, "tabulated weight size does not match grid");
        WeightSpec w;
        w.kind = Kind::Tabulated;
        w.table_grid = grid;
        w.values = std::move(values);
        return w;
    }

    bool analytic() const { return kind == Kind::Quadratic; }

    template <class S, int Dim>
    S eval(const std::array<S, Dim>& x) const {
        S r(shift);
        for (int k = 0; k < Dim; ++k) {
            const S dx = x[k] - center[k];
            r = r + a * dx * dx;
        }
        return r;
    }

    /// d(x) for either kind; tabulated weights interpolate (bi)linearly.
    double value_at(const Vec2& x, int dim) const {
        if (kind == Kind::Quadratic)
            return dim == 1 ? eval<double, 1>(std::array<double, 1>{x[0]}) : eval<double, 2>(x);
        const auto& g = table_grid;
        std::array<int, 2> i0{0, 0};
        std::array<double, 2> f{0.0, 0.0};
        for (int k = 0; k < g.dim; ++k) {
            const double u = std::clamp((x[k] - g.lo[k]) / g.h[k], 0.0, double(g.nx[k] - 1));
            i0[k] = std::min(static_cast<int>(u), g.nx[k] - 2);
            f[k] = u - i0[k];
        }
        auto at = [&](int di, int dj) { return values[static_cast<std::size_t>(g.index(i0[0] + di, i0[1] + dj))]; };
        if (g.dim == 1) return (1 - f[0]) * at(0, 0) + f[0] * at(1, 0);
        return (1 - f[0]) * (1 - f[1]) * at(0, 0) + f[0] * (1 - f[1]) * at(1, 0) + (1 - f[0]) * f[1] * at(0, 1) +
               f[0] * f[1] * at(1, 1);
    }

    WeightSample sample(const Grid& grid) const {
        WeightSample s;
        const int n = grid.size();
        s.d.resize(n);
        s.grad.assign(n, Vec2{0.0, 0.0});
        s.hess.assign(n, Mat2{});
        if (kind == Kind::Quadratic) {
            for (int p = 0; p < n; ++p) {
                const auto x = grid.coords(p);
                double r = shift;
                for (int k = 0; k < grid.dim; ++k) {
                    r += a * (x[k] - center[k]) * (x[k] - center[k]);
                    s.grad[p][k] = 2.0 * a * (x[k] - center[k]);
                    s.hess[p][k][k] = 2.0 * a;
                }
                s.d[p] = r;
            }
            return s;
        }
        if (!(grid == table_grid))
            throw Error(ErrorKind::InvalidParameters, "tabulated weight sampled on a different grid");
        s.d = values;
        for (int k = 0; k < grid.dim; ++k) {
            const auto g = differentiate(grid, values, k);
            for (int p = 0; p < n; ++p) s.grad[p][k] = g[p];
        }
        for (int k = 0; k < grid.dim; ++k) {
            std::vector<double> gk(n);
            for (int p = 0; p < n; ++p) gk[p] = s.grad[p][k];
            for (int l = 0; l < grid.dim; ++l) {
                const auto gkl = differentiate(grid, gk, l);
                for (int p = 0; p < n; ++p) s.hess[p][k][l] = gkl[p];
            }
        }
        for (int p = 0; p < n; ++p) {
            const double m = 0.5 * (s.hess[p][0][1] + s.hess[p][1][0]);
            s.hess[p][0][1] = s.hess[p][1][0] = m;
        }
        return s;
    }

    /// Centered difference along `axis`, second-order one-sided at the ends.
    static std::vector<double> differentiate(const Grid& grid, const std::vector<double>& f, int axis) {
        std::vector<double> out(f.size());
        const int n = grid.nx[axis];
        const double h = grid.h[axis];
        const int stride = axis == 0 ? 1 : grid.nx[0];
        for (int p = 0; p < grid.size(); ++p) {
            const int i = grid.ij(p)[axis];
            if (i == 0)
                out[p] = (-3.0 * f[p] + 4.0 * f[p + stride] - f[p + 2 * stride]) / (2.0 * h);
            else if (i == n - 1)
                out[p] = (3.0 * f[p] - 4.0 * f[p - stride] + f[p - 2 * stride]) / (2.0 * h);
            else
                out[p] = (f[p + stride] - f[p - stride]) / (2.0 * h);
        }
        return out;
    }
};

} // namespace obswave
