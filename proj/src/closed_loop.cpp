#include "dhn/closed_loop.hpp"

namespace dhn {

const char* to_string(LoopKind k) {
    switch (k) {
        case LoopKind::Pipe: return "pipe";
        case LoopKind::PressurePump: return "pressure_pump";
        case LoopKind::PressurePumpValve: return "pressure_pump_valve";
        case LoopKind::FlowPump: return "flow_pump";
        case LoopKind::Valve: return "valve";
        case LoopKind::Holding: return "holding";
        case LoopKind::Capacitive: return "capacitive";
    }
    return "?";
}

int loop_size(LoopKind k) {
    switch (k) {
        case LoopKind::Pipe: return 1;
        case LoopKind::PressurePump: return 4;
        case LoopKind::PressurePumpValve: return 5;
        case LoopKind::FlowPump: return 4;
        case LoopKind::Valve: return 2;
        case LoopKind::Holding: return 3;
        case LoopKind::Capacitive: return 1;
    }
    return 0;
}

int output_index(LoopKind k) { return k == LoopKind::Holding ? 1 : 0; }

LoopKind loop_kind(const Edge& e) {
    switch (e.kind) {
        case EdgeKind::Pipe:
            if (e.mode == EdgeMode::Plain) return LoopKind::Pipe;
            if (e.mode == EdgeMode::Boost) return LoopKind::PressurePump;
            break;
        case EdgeKind::Dgu:
            if (e.mode == EdgeMode::Form) return LoopKind::PressurePump;
            if (e.mode == EdgeMode::Valve) return LoopKind::PressurePumpValve;
            if (e.mode == EdgeMode::Vsp) return LoopKind::FlowPump;
            break;
        case EdgeKind::Consumer:
            if (e.mode == EdgeMode::Boost) return LoopKind::PressurePumpValve;
            if (e.mode == EdgeMode::Valve) return LoopKind::Valve;
            if (e.mode == EdgeMode::Vsp) return LoopKind::FlowPump;
            break;
        case EdgeKind::Mixing:
            if (e.mode == EdgeMode::Valve) return LoopKind::Valve;
            break;
    }
    throw std::invalid_argument("unsupported mode " + std::string(to_string(e.mode)) + " for " +
                                to_string(e.kind) + " edge " + std::to_string(e.id));
}

LoopKind loop_kind(const Node& n) {
    switch (n.kind) {
        case NodeKind::Holding: return LoopKind::Holding;
        case NodeKind::Capacitive: return LoopKind::Capacitive;
        case NodeKind::Junction: break;
    }
    throw std::invalid_argument("junction node " + std::to_string(n.id) + " carries no state");
}

namespace {

double fixed_valve_term(const Edge& e, double q) {
    return e.valve ? mu_hat(*e.valve, q) * kOpenValveInput : 0.0;
}

}  // namespace

double applied_valve_input(const Edge& e, const double* x) {
    switch (loop_kind(e)) {
        case LoopKind::PressurePumpValve:
            return valve_flow_control(*e.valve_ctl, *e.valve, x[0], x[4]).u_v;
        case LoopKind::Valve:
            return valve_flow_control(*e.valve_ctl, *e.valve, x[0], x[1]).u_v;
        default:
            return e.valve ? kOpenValveInput : 0.0;
    }
}

void closed_loop_rhs(const Edge& e, const double* x, double d, double* dx, LoopSignals* sig) {
    const double q = x[0];
    const double J = e.pipe.J;
    const double lam = friction(e.pipe, q);
    LoopSignals s;

    switch (loop_kind(e)) {
        case LoopKind::Pipe:
            dx[0] = law::edge_momentum(0.0, lam, 0.0, 0.0, d) / J;
            break;

        case LoopKind::PressurePump:
        case LoopKind::PressurePumpValve: {
            const PumpParams& pp = *e.pump;
            const double q_P = x[1], p_P = x[2], r = x[3];
            const auto pc = pump_pressure_control(*e.pressure_ctl, pp, q_P, p_P, r);
            s.u_P = pc.u_P;
            double valve = 0.0;
            if (e.valve_ctl) {
                const auto vc = valve_flow_control(*e.valve_ctl, *e.valve, q, x[4]);
                s.u_v = vc.u_v;
                s.y_hat = vc.y_hat;
                s.clamped = vc.clamped;
                valve = mu_hat(*e.valve, q) * vc.u_v;
                dx[4] = vc.r_dot;
            } else {
                s.u_v = e.valve ? kOpenValveInput : 0.0;
                valve = fixed_valve_term(e, q);
            }
            const auto pd = law::pump(pp.R_P, q_P, p_P, pc.u_P, -q);
            dx[0] = (p_P - lam - valve + d) / J;
            dx[1] = pd[0] / pp.J_P;
            dx[2] = pd[1] / pp.C_P;
            dx[3] = pc.r_dot;
            break;
        }

        case LoopKind::FlowPump: {
            const PumpParams& pp = *e.pump;
            const double q_P = x[1], p_P = x[2], r = x[3];
            const auto fc = pump_flow_control(*e.flow_ctl, q, p_P, r);
            s.u_P = fc.u_P;
            s.u_v = e.valve ? kOpenValveInput : 0.0;
            const auto pd = law::pump(pp.R_P, q_P, p_P, fc.u_P, -q);
            dx[0] = (p_P - lam - fixed_valve_term(e, q) + d) / J;
            dx[1] = pd[0] / pp.J_P;
            dx[2] = pd[1] / pp.C_P;
            dx[3] = fc.r_dot;
            break;
        }

        case LoopKind::Valve: {
            const auto vc = valve_flow_control(*e.valve_ctl, *e.valve, q, x[1]);
            s.u_v = vc.u_v;
            s.y_hat = vc.y_hat;
            s.clamped = vc.clamped;
            dx[0] = law::edge_momentum(0.0, lam, mu_hat(*e.valve, q), vc.u_v, d) / J;
            dx[1] = vc.r_dot;
            break;
        }

        default:
            throw std::invalid_argument("edge closed loop with node kind");
    }
    if (sig) *sig = s;
}

void closed_loop_rhs(const Node& n, const double* x, double d, double* dx, LoopSignals* sig) {
    LoopSignals s;
    switch (loop_kind(n)) {
        case LoopKind::Holding: {
            const PumpParams& pp = *n.pump;
            const double q_P = x[0], p = x[1], r = x[2];
            const auto pc = pump_pressure_control(*n.pressure_ctl, pp, q_P, p, r);
            s.u_P = pc.u_P;
            const auto pd = law::pump(pp.R_P, q_P, p, pc.u_P, d);
            dx[0] = pd[0] / pp.J_P;
            dx[1] = pd[1] / pp.C_P;
            dx[2] = pc.r_dot;
            break;
        }
        case LoopKind::Capacitive:
            dx[0] = capacitive_rhs(d) / n.capacitance;
            break;
        default:
            throw std::invalid_argument("node closed loop with edge kind");
    }
    if (sig) *sig = s;
}

}  // namespace dhn
