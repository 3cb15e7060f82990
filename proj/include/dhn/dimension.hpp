#pragma once
// Dimension-tagged scalar (mass, length, time exponents) for compile-time unit
// checks of the constitutive laws. Mixing incompatible units in + or - does not
// compile.

#include <cmath>

namespace dhn::units {

template <int M, int L, int T>
struct Quantity {
    double v = 0.0;

    constexpr Quantity() = default;
    constexpr explicit Quantity(double x) : v(x) {}

    constexpr Quantity operator-() const { return Quantity(-v); }
    constexpr Quantity& operator+=(Quantity o) { v += o.v; return *this; }
    constexpr Quantity& operator-=(Quantity o) { v -= o.v; return *this; }
};

template <int M, int L, int T>
constexpr Quantity<M, L, T> operator+(Quantity<M, L, T> a, Quantity<M, L, T> b) {
    return Quantity<M, L, T>(a.v + b.v);
}
template <int M, int L, int T>
constexpr Quantity<M, L, T> operator-(Quantity<M, L, T> a, Quantity<M, L, T> b) {
    return Quantity<M, L, T>(a.v - b.v);
}
template <int M1, int L1, int T1, int M2, int L2, int T2>
constexpr Quantity<M1 + M2, L1 + L2, T1 + T2> operator*(Quantity<M1, L1, T1> a,
                                                        Quantity<M2, L2, T2> b) {
    return Quantity<M1 + M2, L1 + L2, T1 + T2>(a.v * b.v);
}
template <int M1, int L1, int T1, int M2, int L2, int T2>
constexpr Quantity<M1 - M2, L1 - L2, T1 - T2> operator/(Quantity<M1, L1, T1> a,
                                                        Quantity<M2, L2, T2> b) {
    return Quantity<M1 - M2, L1 - L2, T1 - T2>(a.v / b.v);
}
template <int M, int L, int T>
Quantity<M, L, T> abs(Quantity<M, L, T> a) {
    return Quantity<M, L, T>(std::fabs(a.v));
}

using Scalar = Quantity<0, 0, 0>;
using Pressure = Quantity<1, -1, -2>;          // Pa
using Flow = Quantity<0, 3, -1>;               // m^3/s
using Resistance = Quantity<1, -4, -1>;        // Pa s/m^3
using Inertance = Quantity<1, -4, 0>;          // Pa s^2/m^3
using Capacitance = Quantity<-1, 4, 2>;        // m^3/Pa
using TurbulentCoeff = Quantity<1, -7, 0>;     // Pa s^2/m^6
using ValveCoeff = Quantity<1, -7, 0>;         // 1/C_v^2, Pa s^2/m^6
using Time = Quantity<0, 0, 1>;

}  // namespace dhn::units
