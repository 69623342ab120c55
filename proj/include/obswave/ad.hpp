#pragma once

// Forward-mode automatic differentiation with nestable dual numbers.
//
// Dual<S, N> carries a value and its gradient with respect to N seeded
// directions. Nesting (Dual<Dual<double, N>, N>) yields higher derivatives,
// which the Carleman identity checks rely on: the weight enters those
// identities through derivatives of up to fourth order.

#include <array>
#include <cmath>
#include <type_traits>

namespace obswave::ad {

template <class S, int N>
struct Dual {
    S v{};
    std::array<S, N> d{};

    Dual() = default;
    Dual(double c) : v(c) { d.fill(S(0.0)); }  // NOLINT: implicit from constants
    Dual(const S& value, const std::array<S, N>& grad) : v(value), d(grad) {}

    template <class U = S, std::enable_if_t<!std::is_same_v<U, double>, int> = 0>
    explicit Dual(const S& value) : v(value) { d.fill(S(0.0)); }

    Dual& operator+=(const Dual& o) { v += o.v; for (int k = 0; k < N; ++k) d[k] += o.d[k]; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; for (int k = 0; k < N; ++k) d[k] -= o.d[k]; return *this; }
    Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
    Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }
};

template <class T> struct is_dual : std::false_type {};
template <class S, int N> struct is_dual<Dual<S, N>> : std::true_type {};

template <class S, int N>
Dual<S, N> operator-(const Dual<S, N>& a) {
    Dual<S, N> r;
    r.v = -a.v;
    for (int k = 0; k < N; ++k) r.d[k] = -a.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> operator+(const Dual<S, N>& a) { return a; }

template <class S, int N>
Dual<S, N> operator+(const Dual<S, N>& a, const Dual<S, N>& b) {
    Dual<S, N> r;
    r.v = a.v + b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] + b.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> operator-(const Dual<S, N>& a, const Dual<S, N>& b) {
    Dual<S, N> r;
    r.v = a.v - b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] - b.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> operator*(const Dual<S, N>& a, const Dual<S, N>& b) {
    Dual<S, N> r;
    r.v = a.v * b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] * b.v + a.v * b.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> operator/(const Dual<S, N>& a, const Dual<S, N>& b) {
    Dual<S, N> r;
    r.v = a.v / b.v;
    const S inv2 = S(1.0) / (b.v * b.v);
    for (int k = 0; k < N; ++k) r.d[k] = (a.d[k] * b.v - a.v * b.d[k]) * inv2;
    return r;
}

template <class S, int N> Dual<S, N> operator+(const Dual<S, N>& a, double c) { Dual<S, N> r = a; r.v = r.v + c; return r; }
template <class S, int N> Dual<S, N> operator+(double c, const Dual<S, N>& a) { return a + c; }
template <class S, int N> Dual<S, N> operator-(const Dual<S, N>& a, double c) { Dual<S, N> r = a; r.v = r.v - c; return r; }
template <class S, int N> Dual<S, N> operator-(double c, const Dual<S, N>& a) { return -(a - c); }
template <class S, int N>
Dual<S, N> operator*(const Dual<S, N>& a, double c) {
    Dual<S, N> r;
    r.v = a.v * c;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] * c;
    return r;
}
template <class S, int N> Dual<S, N> operator*(double c, const Dual<S, N>& a) { return a * c; }
template <class S, int N> Dual<S, N> operator/(const Dual<S, N>& a, double c) { return a * (1.0 / c); }
template <class S, int N> Dual<S, N> operator/(double c, const Dual<S, N>& a) { return Dual<S, N>(c) / a; }

template <class S, int N>
bool operator<(const Dual<S, N>& a, const Dual<S, N>& b) { return a.v < b.v; }

// Elementary functions; chain rule f(a) -> f'(a) * da.
template <class S, int N, class F, class DF>
Dual<S, N> chain(const Dual<S, N>& a, F f, DF df) {
    Dual<S, N> r;
    r.v = f(a.v);
    const S g = df(a.v);
    for (int k = 0; k < N; ++k) r.d[k] = g * a.d[k];
    return r;
}

using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;
using std::tanh;

template <class S, int N>
Dual<S, N> sin(const Dual<S, N>& a) {
    return chain(a, [](const S& x) { return sin(x); }, [](const S& x) { return cos(x); });
}
template <class S, int N>
Dual<S, N> cos(const Dual<S, N>& a) {
    return chain(a, [](const S& x) { return cos(x); }, [](const S& x) { return -sin(x); });
}
template <class S, int N>
Dual<S, N> exp(const Dual<S, N>& a) {
    Dual<S, N> r;
    r.v = exp(a.v);
    for (int k = 0; k < N; ++k) r.d[k] = r.v * a.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> log(const Dual<S, N>& a) {
    return chain(a, [](const S& x) { return log(x); }, [](const S& x) { return S(1.0) / x; });
}
template <class S, int N>
Dual<S, N> sqrt(const Dual<S, N>& a) {
    Dual<S, N> r;
    r.v = sqrt(a.v);
    const S g = S(0.5) / r.v;
    for (int k = 0; k < N; ++k) r.d[k] = g * a.d[k];
    return r;
}
template <class S, int N>
Dual<S, N> tanh(const Dual<S, N>& a) {
    Dual<S, N> r;
    r.v = tanh(a.v);
    const S g = S(1.0) - r.v * r.v;
    for (int k = 0; k < N; ++k) r.d[k] = g * a.d[k];
    return r;
}

inline double primal(double x) { return x; }
template <class S, int N>
double primal(const Dual<S, N>& x) { return primal(x.v); }

// |x| with the derivative sign(x); not differentiable at 0.
inline double fabs_ad(double x) { return std::fabs(x); }
template <class S, int N>
Dual<S, N> fabs_ad(const Dual<S, N>& a) { return primal(a) < 0.0 ? -a : a; }

template <class T>
T ipow(const T& x, int p) {
    if (p < 0) return T(1.0) / ipow(x, -p);
    T r(1.0);
    for (int k = 0; k < p; ++k) r = r * x;
    return r;
}

/// Lift each coordinate to a dual number seeded along its own axis.
template <int N, class S>
std::array<Dual<S, N>, N> seed(const std::array<S, N>& x) {
    std::array<Dual<S, N>, N> r;
    for (int k = 0; k < N; ++k) {
        r[k] = Dual<S, N>(x[k], std::array<S, N>{});
        r[k].d.fill(S(0.0));
        r[k].d[k] = S(1.0);
    }
    return r;
}

/// Gradient of a scalar function f: std::array<T, N> -> T at x.
template <int N, class S, class F>
std::array<S, N> gradient(F&& f, const std::array<S, N>& x) {
    return f(seed<N>(x)).d;
}

/// Partial derivative along axis k.
template <int N, class S, class F>
S partial(F&& f, const std::array<S, N>& x, int k) {
    return f(seed<N>(x)).d[k];
}

} // namespace obswave::ad
