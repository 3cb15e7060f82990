#include "dhn/components.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dhn {

namespace {

constexpr double kFitLow = 1e-5;
constexpr double kFitHigh = 0.03;
constexpr int kFitPoints = 400;

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string(what) + " must be positive");
    }
}

}  // namespace

PumpParams PumpParams::from_resistance(double R_P) {
    require_positive(R_P, "R_P");
    PumpParams p;
    p.R_P = R_P;
    p.J_P = R_P / kPumpRatioRJ;
    p.C_P = 1.0 / (kPumpRatioJC * p.J_P);
    return p;
}

void PumpParams::check() const {
    require_positive(R_P, "R_P");
    require_positive(J_P, "J_P");
    require_positive(C_P, "C_P");
}

void ValveParams::check() const {
    require_positive(C_v, "C_v");
    if (!(s_min > 0.0 && s_min <= 1.0)) throw std::invalid_argument("s_min must lie in (0, 1]");
    if (characteristic == ValveCharacteristic::EqualPercentage && !(rangeability > 1.0)) {
        throw std::invalid_argument("rangeability must exceed 1");
    }
}

double ValveParams::input_of_stem(double s) const {
    if (characteristic == ValveCharacteristic::Linear) return 1.0 / (s * s);
    return std::pow(rangeability, 2.0 * (1.0 - s));
}

void PipeHydraulics::check() const {
    require_positive(J, "pipe inertance J");
    if (!(friction.a >= 0.0)) throw std::invalid_argument("friction a must be non-negative");
    require_positive(friction.b, "friction b");
}

double friction(const FrictionLaw& f, double q) { return law::friction(f.a, f.b, q); }

double friction(const PipeHydraulics& pipe, double q) { return friction(pipe.friction, q); }

double friction_slope(const FrictionLaw& f, double q) { return 2.0 * f.a * std::abs(q) + f.b; }

double friction_inverse(const FrictionLaw& f, double dp) {
    // a q^2 + b q = |dp| rewritten to avoid cancellation
    const double m = std::abs(dp);
    const double q = 2.0 * m / (f.b + std::sqrt(f.b * f.b + 4.0 * f.a * m));
    return dp < 0.0 ? -q : q;
}

double darcy_weisbach_drop(double diameter, double length, double roughness, double q) {
    const double area = std::numbers::pi * diameter * diameter / 4.0;
    const double v = std::abs(q) / area;
    if (v == 0.0) return 0.0;
    const double re = v * diameter / kKinematicViscosity;
    double f;
    if (re < 2000.0) {
        f = 64.0 / re;
    } else {
        const double lg = std::log10(roughness / (3.7 * diameter) + 5.74 / std::pow(re, 0.9));
        f = 0.25 / (lg * lg);
    }
    const double dp = f * length / diameter * kWaterDensity * v * v / 2.0;
    return q < 0.0 ? -dp : dp;
}

FrictionLaw fit_friction(double diameter, double length, double roughness) {
    require_positive(diameter, "diameter");
    require_positive(length, "length");
    if (!(roughness >= 0.0)) throw std::invalid_argument("roughness must be non-negative");

    Eigen::MatrixXd A(kFitPoints, 2);
    Eigen::VectorXd y(kFitPoints);
    for (int i = 0; i < kFitPoints; ++i) {
        const double q = kFitLow + (kFitHigh - kFitLow) * i / (kFitPoints - 1);
        A(i, 0) = q * q;
        A(i, 1) = q;
        y(i) = darcy_weisbach_drop(diameter, length, roughness, q);
    }
    Eigen::Vector2d ab = A.colPivHouseholderQr().solve(y);

    const double mu = kWaterDensity * kKinematicViscosity;
    const double b_laminar =
        128.0 * mu * length / (std::numbers::pi * std::pow(diameter, 4));
    FrictionLaw out{ab(0), ab(1)};
    if (out.b < b_laminar) {
        out.b = b_laminar;
        out.a = A.col(0).dot(y - b_laminar * A.col(1)) / A.col(0).squaredNorm();
    }
    if (out.a < 0.0) out.a = 0.0;
    return out;
}

double pipe_inertance(double diameter, double length) {
    require_positive(diameter, "diameter");
    require_positive(length, "length");
    return kWaterDensity * length / (std::numbers::pi * diameter * diameter / 4.0);
}

PipeHydraulics pipe_from_geometry(double diameter, double length, double roughness) {
    return PipeHydraulics{pipe_inertance(diameter, length),
                          fit_friction(diameter, length, roughness)};
}

double mu_hat(const ValveParams& v, double q) { return law::valve_mu_hat(v.inv_cv2(), q); }

double valve_drop(const ValveParams& v, double s, double q) {
    if (!(s >= v.s_min && s <= 1.0)) throw std::domain_error("stem out of range");
    return v.input_of_stem(s) * mu_hat(v, q);
}

double stem_from_input(const ValveParams& v, double u_v) {
    const double tol = 1e-12;
    if (!(u_v >= 1.0 - tol && u_v <= v.u_max() * (1.0 + tol))) {
        throw std::domain_error("valve input out of range");
    }
    if (u_v <= 1.0) return 1.0;
    if (v.characteristic == ValveCharacteristic::Linear) return 1.0 / std::sqrt(u_v);
    return 1.0 - std::log(u_v) / (2.0 * std::log(v.rangeability));
}

std::array<double, 2> pump_rhs(const PumpParams& p, double q_P, double p_P, double u_P, double d) {
    return law::pump(p.R_P, q_P, p_P, u_P, d);
}

std::array<double, 3> dgu_consumer_rhs(const PipeHydraulics& pipe, const PumpParams* pump,
                                       const ValveParams* valve, double q, double q_P,
                                       double p_P, double u_v, double u_P, double d) {
    const double mu = valve ? mu_hat(*valve, q) : 0.0;
    if (!pump) {
        return {law::edge_momentum(0.0, friction(pipe, q), mu, u_v, d), 0.0, 0.0};
    }
    // the pump sees the circuit flow as its load, d_pump = -q
    const auto pd = law::pump(pump->R_P, q_P, p_P, u_P, -q);
    return {law::edge_momentum(p_P, friction(pipe, q), mu, u_v, d), pd[0], pd[1]};
}

std::array<double, 3> pipe_rhs(const PipeHydraulics& pipe, const PumpParams* booster, double q,
                               double q_P, double p_P, double u_P, double d) {
    return dgu_consumer_rhs(pipe, booster, nullptr, q, q_P, p_P, 0.0, u_P, d);
}

double mixing_rhs(const PipeHydraulics& pipe, const ValveParams& valve, double q, double u_v,
                  double d) {
    return law::edge_momentum(0.0, friction(pipe, q), mu_hat(valve, q), u_v, d);
}

std::array<double, 2> holding_rhs(const PumpParams& p, double q_P, double pressure, double u_P,
                                  double d) {
    return law::pump(p.R_P, q_P, pressure, u_P, d);
}

}  // namespace dhn
