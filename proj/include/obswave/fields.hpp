#pragma once

// Closed-form space-time fields for identity checks. Call operators take
// X = (t, x[, y]) with any scalar type the AD layer supports.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "obswave/ad.hpp"
#include "obswave/errors.hpp"
#include "obswave/weight.hpp"

namespace obswave::fields {

/// sin(pi x) cos(t), times sin(pi y) in 2-D.
struct SinCos {
    template <class S, std::size_t N>
    S operator()(const std::array<S, N>& X) const {
        using namespace obswave::ad;
        S r = sin(M_PI * X[1]) * cos(X[0]);
        if constexpr (N == 3) r = r * sin(M_PI * X[2]);
        return r;
    }
};

/// t^2 x^2 (1 - x)^2, times y^2 (1 - y)^2 in 2-D.
struct Poly {
    template <class S, std::size_t N>
    S operator()(const std::array<S, N>& X) const {
        S r = X[0] * X[0] * X[1] * X[1] * (1.0 - X[1]) * (1.0 - X[1]);
        if constexpr (N == 3) r = r * X[2] * X[2] * (1.0 - X[2]) * (1.0 - X[2]);
        return r;
    }
};

/// grad d for a quadratic weight, the multiplier field of the hidden-regularity argument.
template <int Dim>
struct WeightGradient {
    double a = 1.0;
    Vec2 center{0.0, 0.0};

    explicit WeightGradient(const WeightSpec& w) : a(w.a), center(w.center) {
        if (!w.analytic()) throw Error(ErrorKind::InvalidParameters, "multiplier field needs an analytic weight");
    }

    template <class S, std::size_t N>
    std::array<S, Dim> operator()(const std::array<S, N>& X) const {
        std::array<S, Dim> h;
        for (int k = 0; k < Dim; ++k) h[static_cast<std::size_t>(k)] = 2.0 * a * (X[static_cast<std::size_t>(k) + 1] - center[static_cast<std::size_t>(k)]);
        return h;
    }
};

inline const char* family_name(int i) { return i == 0 ? "sincos" : "poly"; }

} // namespace obswave::fields
