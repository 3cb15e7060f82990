#include <algorithm>
#include <cmath>
#include <sstream>

#include "dhn/passivity.hpp"

namespace dhn {

namespace {

// Steady flow of an edge as a function of its pressure difference d.
struct SteadyFlow {
    bool fixed = true;
    double q = 0.0;         // fixed flow
    FrictionLaw law;        // otherwise law(q) = head + d
    double head = 0.0;
};

SteadyFlow steady_flow(const Edge& e) {
    SteadyFlow s;
    switch (loop_kind(e)) {
        case LoopKind::Pipe:
            s.fixed = false;
            s.law = e.pipe.friction;
            break;
        case LoopKind::PressurePump:
            s.fixed = false;
            s.law = e.pipe.friction;
            if (e.valve) s.law.a += e.valve->inv_cv2() * kOpenValveInput;
            s.head = e.pressure_ctl->setpoint;
            break;
        case LoopKind::PressurePumpValve:
        case LoopKind::Valve:
            s.q = e.valve_ctl->setpoint;
            break;
        case LoopKind::FlowPump:
            s.q = e.flow_ctl->setpoint;
            break;
        default:
            break;
    }
    return s;
}

double holding_mean(const NetworkGraph& g) {
    double p = 0.0;
    int n = 0;
    for (const auto& [id, node] : g.nodes) {
        if (node.active && node.kind == NodeKind::Holding) {
            p += node.pressure_ctl->setpoint;
            ++n;
        }
    }
    return n ? p / n : 0.0;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

Eigen::VectorXd state_scale(const Assembly& a, const Eigen::VectorXd& x) {
    Eigen::VectorXd s(a.layout.size);
    constexpr double kFlow = 1e-3, kPressure = 1e5, kUnit = 1.0;
    for (const Slot& sl : a.layout.slots) {
        std::vector<double> floor;
        switch (sl.loop) {
            case LoopKind::Pipe: floor = {kFlow}; break;
            case LoopKind::PressurePump: floor = {kFlow, kFlow, kPressure, kFlow}; break;
            case LoopKind::PressurePumpValve: floor = {kFlow, kFlow, kPressure, kFlow, kUnit}; break;
            case LoopKind::FlowPump: floor = {kFlow, kFlow, kPressure, kPressure}; break;
            case LoopKind::Valve: floor = {kFlow, kUnit}; break;
            case LoopKind::Holding: floor = {kFlow, kPressure, kFlow}; break;
            case LoopKind::Capacitive: floor = {kPressure}; break;
        }
        for (int j = 0; j < sl.size; ++j) {
            s(sl.offset + j) = std::max(std::abs(x(sl.offset + j)), floor[j]);
        }
    }
    return s;
}

double scaled_residual(const Assembly& a, const Eigen::VectorXd& x) {
    return vector_field(a, x).cwiseQuotient(state_scale(a, x)).cwiseAbs().maxCoeff();
}

int newton_polish(const Assembly& a, Eigen::VectorXd& x, const EquilibriumOptions& opt) {
    const int n = a.layout.size;
    const int nk = a.junctions.size();
    const Eigen::VectorXd scale = state_scale(a, x);
    auto residual = [&](const Eigen::VectorXd& y) {
        Eigen::VectorXd r(n + nk);
        r.head(n) = vector_field(a, y).cwiseQuotient(scale);
        if (nk) r.tail(nk) = a.incidence.B_junction * a.flows(y) / 1e-3;
        return r;
    };
    Eigen::VectorXd r = residual(x);
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        if (r.head(n).cwiseAbs().maxCoeff() <= opt.tolerance &&
            (nk == 0 || r.tail(nk).cwiseAbs().maxCoeff() <= 1e-12)) {
            return it;
        }
        Eigen::MatrixXd Jac(n + nk, n);
        for (int j = 0; j < n; ++j) {
            const double h = 1e-6 * scale(j);
            Eigen::VectorXd xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            Jac.col(j) = (residual(xp) - residual(xm)) * (scale(j) / (2.0 * h));
        }
        const Eigen::VectorXd step = Jac.colPivHouseholderQr().solve(-r);
        double t = 1.0;
        bool improved = false;
        for (int k = 0; k < 30; ++k, t *= 0.5) {
            Eigen::VectorXd xt = x + t * step.cwiseProduct(scale);
            Eigen::VectorXd rt = residual(xt);
            if (rt.allFinite() && rt.norm() < r.norm()) {
                x = xt;
                r = rt;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    if (r.head(n).cwiseAbs().maxCoeff() > opt.tolerance) {
        throw InfeasibleError("equilibrium Newton stalled at scaled residual " +
                              fmt(r.head(n).cwiseAbs().maxCoeff()));
    }
    return it;
}

EquilibriumSolution solve_equilibrium(const NetworkGraph& g, const Assembly& a,
                                      const EquilibriumOptions& opt,
                                      const std::map<int, double>* guess) {
    const auto& inc = a.incidence;
    const int ne = a.layout.n_edges;

    // unknown pressures: capacitive and junction nodes
    std::map<int, int> unknown;
    std::vector<int> unknown_ids;
    std::map<int, double> fixed_p;
    for (int id : inc.delta_order) {
        const Node& n = g.node(id);
        if (n.kind == NodeKind::Holding) {
            fixed_p[id] = n.pressure_ctl->setpoint;
        } else {
            unknown[id] = static_cast<int>(unknown_ids.size());
            unknown_ids.push_back(id);
        }
    }
    for (int id : inc.junction_order) {
        unknown[id] = static_cast<int>(unknown_ids.size());
        unknown_ids.push_back(id);
    }
    const int nu = static_cast<int>(unknown_ids.size());

    std::vector<SteadyFlow> flow(ne);
    for (int i = 0; i < ne; ++i) flow[i] = steady_flow(*a.edges[i]);

    Eigen::VectorXd p(nu);
    const double p0 = holding_mean(g);
    for (int k = 0; k < nu; ++k) {
        p(k) = p0;
        if (guess) {
            auto it = guess->find(unknown_ids[k]);
            if (it != guess->end()) p(k) = it->second;
        }
    }
    auto pressure = [&](const Eigen::VectorXd& pv, int node) {
        auto it = unknown.find(node);
        return it == unknown.end() ? fixed_p.at(node) : pv(it->second);
    };
    auto edge_flow = [&](const Eigen::VectorXd& pv, int i, double* slope) {
        const Edge& e = *a.edges[i];
        const SteadyFlow& s = flow[i];
        if (s.fixed) {
            if (slope) *slope = 0.0;
            return s.q;
        }
        const double d = pressure(pv, e.source) - pressure(pv, e.target);
        const double q = friction_inverse(s.law, s.head + d);
        if (slope) *slope = 1.0 / friction_slope(s.law, q);
        return q;
    };
    auto kcl = [&](const Eigen::VectorXd& pv, Eigen::MatrixXd* jac) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(nu);
        if (jac) jac->setZero(nu, nu);
        for (int i = 0; i < ne; ++i) {
            const Edge& e = *a.edges[i];
            double gq = 0.0;
            const double q = edge_flow(pv, i, jac ? &gq : nullptr);
            auto s = unknown.find(e.source);
            auto t = unknown.find(e.target);
            if (t != unknown.end()) r(t->second) += q;
            if (s != unknown.end()) r(s->second) -= q;
            if (!jac || gq == 0.0) continue;
            // dq/dp_source = g, dq/dp_target = -g
            if (t != unknown.end()) {
                if (s != unknown.end()) (*jac)(t->second, s->second) += gq;
                (*jac)(t->second, t->second) -= gq;
            }
            if (s != unknown.end()) {
                (*jac)(s->second, s->second) -= gq;
                if (t != unknown.end()) (*jac)(s->second, t->second) += gq;
            }
        }
        return r;
    };

    double flow_scale = 1e-3;
    for (const auto& s : flow) flow_scale = std::max(flow_scale, std::abs(s.q));

    EquilibriumSolution sol;
    Eigen::MatrixXd jac;
    Eigen::VectorXd r = kcl(p, &jac);
    int it = 0;
    bool converged = false;
    for (; it < opt.max_iterations; ++it) {
        if (r.size() == 0 || r.cwiseAbs().maxCoeff() <= 1e-15 * flow_scale) {
            converged = true;
            break;
        }
        const Eigen::VectorXd step = jac.colPivHouseholderQr().solve(-r);
        if (!step.allFinite()) break;
        double t = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k, t *= 0.5) {
            const Eigen::VectorXd pt = p + t * step;
            const Eigen::VectorXd rt = kcl(pt, nullptr);
            if (rt.allFinite() && rt.norm() < r.norm()) {
                p = pt;
                improved = true;
                break;
            }
        }
        r = kcl(p, &jac);
        if (!improved) {
            converged = r.cwiseAbs().maxCoeff() <= 1e-12 * flow_scale;
            break;
        }
    }
    if (!converged) {
        throw InfeasibleError("hydraulic balance did not converge (max KCL residual " +
                              fmt(r.size() ? r.cwiseAbs().maxCoeff() : 0.0) + " m^3/s)");
    }
    sol.iterations = it;

    // reconstruct local equilibrium states
    Eigen::VectorXd x = Eigen::VectorXd::Zero(a.layout.size);
    Eigen::VectorXd net_in = Eigen::VectorXd::Zero(inc.delta_order.size());
    std::vector<double> q_bar(ne), d_bar(ne);
    for (int i = 0; i < ne; ++i) {
        const Edge& e = *a.edges[i];
        q_bar[i] = edge_flow(p, i, nullptr);
        d_bar[i] = pressure(p, e.source) - pressure(p, e.target);
    }
    net_in = inc.B_delta * Eigen::Map<Eigen::VectorXd>(q_bar.data(), ne);

    auto violation = [&](const std::string& m) { sol.violations.push_back(m); };
    for (int i = 0; i < ne; ++i) {
        const Edge& e = *a.edges[i];
        const Slot& sl = a.layout.slots[i];
        double* xs = x.data() + sl.offset;
        const double q = q_bar[i], d = d_bar[i];
        const std::string who = std::string(to_string(e.kind)) + " " + std::to_string(e.id);
        xs[0] = q;
        auto valve_input = [&](double available) {
            const double mu = mu_hat(*e.valve, q);
            if (mu <= 0.0) {
                violation(who + ": zero flow setpoint leaves the valve input undetermined");
                return 1.0;
            }
            if (!(available > 0.0)) {
                violation(who + ": non-positive differential pressure " + fmt(available) + " Pa");
            }
            const double u = (available - friction(e.pipe, q)) / mu;
            if (!(u > 0.0)) violation(who + ": valve input " + fmt(u) + " is not positive");
            if (u < 1.0 || u > e.valve->u_max()) {
                const std::string m = who + ": valve input " + fmt(u) + " outside [1, " +
                                      fmt(e.valve->u_max()) + "]";
                if (e.valve_ctl->saturate) violation(m);
                else sol.warnings.push_back(m);
            }
            sol.valve_input[e.id] = u;
            return u;
        };
        switch (sl.loop) {
            case LoopKind::Pipe:
                break;
            case LoopKind::PressurePump:
            case LoopKind::PressurePumpValve: {
                const auto& pc = *e.pressure_ctl;
                xs[1] = q;
                xs[2] = pc.setpoint;
                xs[3] = -pc.setpoint / pc.R_p - q;
                if (sl.loop == LoopKind::PressurePumpValve) xs[4] = valve_input(pc.setpoint + d);
                break;
            }
            case LoopKind::FlowPump: {
                const double mu = e.valve ? mu_hat(*e.valve, q) * kOpenValveInput : 0.0;
                const double p_P = friction(e.pipe, q) + mu - d;
                xs[1] = q;
                xs[2] = p_P;
                xs[3] = -(e.flow_ctl->K_P() + 1.0) * p_P - e.pump->R_P * q;
                if (!(p_P > 0.0)) {
                    sol.warnings.push_back(who + ": pump pressure " + fmt(p_P) + " Pa is not positive");
                }
                break;
            }
            case LoopKind::Valve:
                xs[1] = valve_input(d);
                break;
            default:
                break;
        }
    }
    for (int j = 0; j < static_cast<int>(inc.delta_order.size()); ++j) {
        const Node& n = *a.nodes[j];
        const Slot& sl = a.layout.slots[ne + j];
        double* xs = x.data() + sl.offset;
        if (sl.loop == LoopKind::Holding) {
            const auto& pc = *n.pressure_ctl;
            xs[0] = -net_in(j);
            xs[1] = pc.setpoint;
            xs[2] = -pc.setpoint / pc.R_p - xs[0];
        } else {
            xs[0] = pressure(p, n.id);
        }
    }

    if (opt.polish) sol.iterations += newton_polish(a, x, opt);

    sol.x = x;
    sol.residual = scaled_residual(a, x);
    sol.converged = sol.residual <= opt.tolerance;
    vector_field(a, x, &sol.ports);
    sol.z_junction = sol.ports.z_junction;
    for (int j = 0; j < static_cast<int>(inc.delta_order.size()); ++j) {
        sol.node_pressure[inc.delta_order[j]] = sol.ports.z_node(j);
    }
    for (int k = 0; k < static_cast<int>(inc.junction_order.size()); ++k) {
        sol.node_pressure[inc.junction_order[k]] = sol.z_junction(k);
    }
    for (int i = 0; i < ne; ++i) {
        if (a.edges[i]->valve_ctl) sol.valve_input[a.edges[i]->id] = sol.ports.edge_signals[i].u_v;
    }
    sol.feasible = sol.violations.empty() && sol.converged;
    return sol;
}

}  // namespace dhn
