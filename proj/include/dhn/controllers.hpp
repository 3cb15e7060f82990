#pragma once
// Decentralized pressure and flow controllers. Each law sees local
// measurements only.

#include "dhn/components.hpp"

namespace dhn {

/// Pump differential-pressure control with integrator r [m^3/s].
struct PumpPressureCtl {
    double setpoint = 0.0;  // p* [Pa]
    double R_p = 0.0;       // damping gain [Pa s/m^3]
    double Q_I = 0.0;       // integral weight [Pa s^2/m^3]

    void check() const;
};

/// Pump flow control with integrator r [Pa]. Construction enforces
/// kappa = Q_I (K_P + 1) - C_P > 0.
class PumpFlowCtl {
public:
    PumpFlowCtl(double setpoint, double K_P, double Q_I, double C_P);

    double setpoint = 0.0;  // q* [m^3/s]

    double K_P() const { return k_p_; }
    double Q_I() const { return q_i_; }
    double kappa() const { return kappa_; }
    /// Re-check the gain condition against a changed pump capacitance.
    void rebind(double C_P);

private:
    double k_p_;
    double q_i_;
    double kappa_;
};

/// Valve flow control with integrator r [-] and optional input box [1, u_max].
struct ValveFlowCtl {
    double setpoint = 0.0;  // q* [m^3/s]
    double K_P = 0.0;
    double Q_I = 0.0;
    bool saturate = false;
    bool anti_windup = true;

    void check() const;
};

struct PumpCommand {
    double u_P;
    double r_dot;
};

struct ValveCommand {
    double u_v;
    double r_dot;
    double y_hat;
    bool clamped;
};

PumpCommand pump_pressure_control(const PumpPressureCtl& ctl, const PumpParams& pump, double q_P,
                                  double p_P, double r);
PumpCommand pump_flow_control(const PumpFlowCtl& ctl, double q, double p_P, double r);
ValveCommand valve_flow_control(const ValveFlowCtl& ctl, const ValveParams& valve, double q,
                                double r);

}  // namespace dhn
