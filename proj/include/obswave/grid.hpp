#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "obswave/errors.hpp"

namespace obswave {

/// Rectangular node grid on G (dimension 1 or 2) with a uniform partition of
/// [0, T]. Nodes are numbered row-major with x fastest: p = i + nx[0] * j.
struct Grid {
    int dim = 1;
    std::array<double, 2> lo{0.0, 0.0};
    std::array<double, 2> hi{1.0, 1.0};
    std::array<int, 2> nx{1, 1};
    std::array<double, 2> h{0.0, 0.0};
    double T = 1.0;
    int nt = 2;
    double dt = 0.5;

    static Grid make(int dim, std::array<double, 2> lo, std::array<double, 2> hi,
                     std::array<int, 2> nx, double T, int nt) {
        if (dim != 1 && dim != 2)
            throw Error(ErrorKind::InvalidParameters, "grid dimension must be 1 or 2");
        if (!(T > 0.0)) throw Error(ErrorKind::InvalidParameters, "final time T must be positive");
        if (nt < 2) throw Error(ErrorKind::InvalidParameters, "need nt >= 2 time steps");
        Grid g;
        g.dim = dim;
        g.T = T;
        g.nt = nt;
        g.dt = T / nt;
        for (int k = 0; k < 2; ++k) {
            if (k >= dim) {
                g.lo[k] = g.hi[k] = 0.0;
                g.nx[k] = 1;
                g.h[k] = 0.0;
                continue;
            }
            if (nx[k] < 3) throw Error(ErrorKind::InvalidParameters, "need nx >= 3 nodes per axis");
            if (!(hi[k] > lo[k])) throw Error(ErrorKind::InvalidParameters, "empty extent on axis " + std::to_string(k));
            g.lo[k] = lo[k];
            g.hi[k] = hi[k];
            g.nx[k] = nx[k];
            g.h[k] = (hi[k] - lo[k]) / (nx[k] - 1);
        }
        return g;
    }

    static Grid line(double lo, double hi, int nx, double T, int nt) {
        return make(1, {lo, 0.0}, {hi, 0.0}, {nx, 1}, T, nt);
    }
    static Grid square(std::array<double, 2> lo, std::array<double, 2> hi, std::array<int, 2> nx, double T, int nt) {
        return make(2, lo, hi, nx, T, nt);
    }

    /// Same domain, spacing and time step halved.
    Grid refined() const {
        std::array<int, 2> n = nx;
        for (int k = 0; k < dim; ++k) n[k] = 2 * (nx[k] - 1) + 1;
        return make(dim, lo, hi, n, T, 2 * nt);
    }

    int size() const { return nx[0] * nx[1]; }
    int index(int i, int j = 0) const { return i + nx[0] * j; }
    std::array<int, 2> ij(int p) const { return {p % nx[0], p / nx[0]}; }
    double time(int k) const { return k * dt; }

    std::array<double, 2> coords(int p) const {
        const auto c = ij(p);
        std::array<double, 2> x{0.0, 0.0};
        for (int k = 0; k < dim; ++k) x[k] = lo[k] + c[k] * h[k];
        return x;
    }

    bool on_boundary(int p) const {
        const auto c = ij(p);
        for (int k = 0; k < dim; ++k)
            if (c[k] == 0 || c[k] == nx[k] - 1) return true;
        return false;
    }

    std::vector<int> interior() const {
        std::vector<int> r;
        for (int p = 0; p < size(); ++p)
            if (!on_boundary(p)) r.push_back(p);
        return r;
    }

    /// Trapezoid weight of node p over the closed domain.
    double node_weight(int p) const {
        const auto c = ij(p);
        double w = 1.0;
        for (int k = 0; k < dim; ++k) w *= (c[k] == 0 || c[k] == nx[k] - 1) ? 0.5 * h[k] : h[k];
        return w;
    }

    /// Trapezoid weight of time level k over [0, T].
    double time_weight(int k) const { return (k == 0 || k == nt) ? 0.5 * dt : dt; }

    double cell_volume() const {
        double v = 1.0;
        for (int k = 0; k < dim; ++k) v *= h[k];
        return v;
    }
};

inline bool operator==(const Grid& a, const Grid& b) {
    return a.dim == b.dim && a.lo == b.lo && a.hi == b.hi && a.nx == b.nx && a.T == b.T && a.nt == b.nt;
}

} // namespace obswave
