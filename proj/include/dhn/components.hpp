#pragma once
// Constitutive laws and open-loop right-hand sides of the hydraulic subsystems.
//
// The templated laws in `dhn::law` are written once and instantiated both with
// double and with the dimension-checked scalar in dimension.hpp.

#include <array>
#include <cmath>

namespace dhn {

inline constexpr double kWaterDensity = 983.0;         // kg/m^3, water at 55 C
inline constexpr double kKinematicViscosity = 4.7e-7;  // m^2/s
inline constexpr double kPumpRatioRJ = 7.2878;         // R_P / J_P
inline constexpr double kPumpRatioJC = 341.4283;       // 1 / (J_P C_P)

struct PumpParams {
    double R_P = 0.0;  // Pa s/m^3
    double J_P = 0.0;  // Pa s^2/m^3
    double C_P = 0.0;  // m^3/Pa

    /// J_P and C_P from the fixed ratios of the reference pump.
    static PumpParams from_resistance(double R_P);
    void check() const;
};

enum class ValveCharacteristic { Linear, EqualPercentage };

struct ValveParams {
    double C_v = 0.0;  // m^3/(s Pa^0.5)
    ValveCharacteristic characteristic = ValveCharacteristic::EqualPercentage;
    double rangeability = 50.0;
    double s_min = 0.05;

    void check() const;
    double inv_cv2() const { return 1.0 / (C_v * C_v); }
    /// u_v = 1 / f_v(s)^2
    double input_of_stem(double s) const;
    double u_max() const { return input_of_stem(s_min); }
};

struct FrictionLaw {
    double a = 0.0;  // Pa s^2/m^6
    double b = 0.0;  // Pa s/m^3
};

struct PipeHydraulics {
    double J = 0.0;  // Pa s^2/m^3
    FrictionLaw friction;

    void check() const;
};

namespace law {

using std::abs;

template <class A, class B, class Q>
auto friction(const A& a, const B& b, const Q& q) {
    return a * abs(q) * q + b * q;
}

template <class K, class Q>
auto valve_mu_hat(const K& inv_cv2, const Q& q) {
    return inv_cv2 * abs(q) * q;
}

/// d/dt (J_P q_P)
template <class R, class Q, class P>
P pump_momentum(const R& R_P, const Q& q_P, const P& p_P, const P& u_P) {
    return -p_P - R_P * q_P + u_P;
}

/// d/dt (C_P p_P)
template <class Q>
Q pump_volume(const Q& q_P, const Q& d) {
    return q_P + d;
}

inline std::array<double, 2> pump(double R_P, double q_P, double p_P, double u_P, double d) {
    return {pump_momentum(R_P, q_P, p_P, u_P), pump_volume(q_P, d)};
}

/// J q' of an edge whose pump (if any) sits in series with friction and valve.
template <class P, class U>
P edge_momentum(const P& p_P, const P& lambda, const P& mu_hat, const U& u_v, const P& d) {
    return p_P - lambda - mu_hat * u_v + d;
}

}  // namespace law

double friction(const FrictionLaw& f, double q);
double friction(const PipeHydraulics& pipe, double q);
double friction_slope(const FrictionLaw& f, double q);
/// Unique q with friction(f, q) = dp.
double friction_inverse(const FrictionLaw& f, double dp);

/// Least-squares fit of a|q|q + bq to Darcy-Weisbach (Swamee-Jain above
/// Re = 2000, 64/Re below) on q in [1e-5, 0.03] m^3/s. b is kept at or above
/// the Hagen-Poiseuille coefficient.
FrictionLaw fit_friction(double diameter, double length, double roughness);
/// Darcy-Weisbach pressure drop used as the fit target.
double darcy_weisbach_drop(double diameter, double length, double roughness, double q);
PipeHydraulics pipe_from_geometry(double diameter, double length, double roughness);
double pipe_inertance(double diameter, double length);

double mu_hat(const ValveParams& v, double q);
/// u_v(s) * mu_hat(q); throws std::domain_error("stem out of range").
double valve_drop(const ValveParams& v, double s, double q);
/// Inverse of u_v(s); throws std::domain_error when u_v is outside [1, u_max].
double stem_from_input(const ValveParams& v, double u_v);

/// d/dt (J_P q_P, C_P p_P); interaction output is p_P.
std::array<double, 2> pump_rhs(const PumpParams& p, double q_P, double p_P, double u_P, double d);

/// DGU / consumer circuit: d/dt (J q, J_P q_P, C_P p_P). Without a pump the
/// last two entries are zero and p_P is taken as 0.
std::array<double, 3> dgu_consumer_rhs(const PipeHydraulics& pipe, const PumpParams* pump,
                                       const ValveParams* valve, double q, double q_P,
                                       double p_P, double u_v, double u_P, double d);

/// Pipe with optional booster: d/dt (J q[, J_P q_P, C_P p_P]).
std::array<double, 3> pipe_rhs(const PipeHydraulics& pipe, const PumpParams* booster, double q,
                               double q_P, double p_P, double u_P, double d);

/// Mixing connection: d/dt (J q).
double mixing_rhs(const PipeHydraulics& pipe, const ValveParams& valve, double q, double u_v,
                  double d);

/// Pressure holding node, d = net inflow: d/dt (J_P q_P, C_P p).
std::array<double, 2> holding_rhs(const PumpParams& p, double q_P, double pressure, double u_P,
                                  double d);

/// Capacitive node: d/dt (C p) = net inflow.
inline double capacitive_rhs(double d) { return d; }

}  // namespace dhn
