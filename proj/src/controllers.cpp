#include "dhn/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dhn {

void PumpPressureCtl::check() const {
    if (!(setpoint > 0.0)) throw std::invalid_argument("pressure setpoint must be positive");
    if (!(R_p > 0.0)) throw std::invalid_argument("pressure controller R_p must be positive");
    if (!(Q_I > 0.0)) throw std::invalid_argument("pressure controller Q_I must be positive");
}

PumpFlowCtl::PumpFlowCtl(double sp, double K_P, double Q_I, double C_P)
    : setpoint(sp), k_p_(K_P), q_i_(Q_I), kappa_(0.0) {
    if (!(Q_I > 0.0)) throw std::invalid_argument("flow controller Q_I must be positive");
    rebind(C_P);
}

void PumpFlowCtl::rebind(double C_P) {
    const double kappa = q_i_ * (k_p_ + 1.0) - C_P;
    if (!(kappa > 0.0)) {
        throw std::invalid_argument("flow controller gains violate Q_I (K_P + 1) - C_P > 0");
    }
    kappa_ = kappa;
}

void ValveFlowCtl::check() const {
    if (!(K_P > 0.0)) throw std::invalid_argument("valve controller K_P must be positive");
    if (!(Q_I > 0.0)) throw std::invalid_argument("valve controller Q_I must be positive");
}

PumpCommand pump_pressure_control(const PumpPressureCtl& ctl, const PumpParams& pump, double q_P,
                                  double p_P, double r) {
    const double e = ctl.setpoint - p_P;
    const double u = (pump.R_P - ctl.R_p) * q_P - ctl.R_p * r + pump.J_P / ctl.Q_I * e;
    return {u, -e / ctl.Q_I};
}

PumpCommand pump_flow_control(const PumpFlowCtl& ctl, double q, double p_P, double r) {
    return {-ctl.K_P() * p_P - r, (q - ctl.setpoint) / ctl.Q_I()};
}

ValveCommand valve_flow_control(const ValveFlowCtl& ctl, const ValveParams& valve, double q,
                                double r) {
    const double y = -mu_hat(valve, q) * (q - ctl.setpoint);
    const double v = -ctl.K_P * y + r;
    double r_dot = -y / ctl.Q_I;
    if (!ctl.saturate) return {v, r_dot, y, false};

    const double hi = valve.u_max();
    const double u = std::clamp(v, 1.0, hi);
    const bool clamped = u != v;
    // conditional integration: hold r while the clamp is active and the
    // integrator would push further outside the box
    if (ctl.anti_windup && ((v > hi && r_dot > 0.0) || (v < 1.0 && r_dot < 0.0))) r_dot = 0.0;
    return {u, r_dot, y, clamped};
}

}  // namespace dhn
