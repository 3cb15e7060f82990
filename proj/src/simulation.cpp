#include "dhn/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dhn {

std::string SubsystemKey::str() const {
    return (is_edge ? "e" : "n") + std::to_string(id);
}

const Slot* StateLayout::find(const SubsystemKey& k) const {
    for (const auto& s : slots) {
        if (s.key == k) return &s;
    }
    return nullptr;
}

JunctionSolver::JunctionSolver(const Eigen::MatrixXd& B_junction, const Eigen::VectorXd& inv_J)
    : B_(B_junction), inv_J_(inv_J) {
    if (B_.rows() == 0) return;
    L_ = B_ * inv_J_.asDiagonal() * B_.transpose();
    llt_.compute(L_);
    if (llt_.info() != Eigen::Success) {
        throw std::invalid_argument("junction Laplacian is singular (disconnected junction)");
    }
}

Eigen::VectorXd JunctionSolver::pressures(const Eigen::VectorXd& f) const {
    if (B_.rows() == 0) return Eigen::VectorXd();
    return llt_.solve(B_ * inv_J_.cwiseProduct(f));
}

Eigen::VectorXd JunctionSolver::project_flows(const Eigen::VectorXd& q) const {
    if (B_.rows() == 0) return q;
    const Eigen::VectorXd lam = llt_.solve(B_ * q);
    return q - inv_J_.cwiseProduct(B_.transpose() * lam);
}

Eigen::VectorXd Assembly::flows(const Eigen::VectorXd& x) const {
    Eigen::VectorXd q(layout.n_edges);
    for (int i = 0; i < layout.n_edges; ++i) q(i) = x(layout.slots[i].offset);
    return q;
}

Assembly assemble(const NetworkGraph& g) {
    const auto rep = validate_network(g);
    if (!rep.ok()) throw std::invalid_argument("network validation failed:\n" + rep.str());

    Assembly a;
    a.incidence = partition_incidence(g);
    const auto& inc = a.incidence;
    const int ne = static_cast<int>(inc.edge_order.size());

    int offset = 0;
    for (int id : inc.edge_order) {
        const Edge& e = g.edge(id);
        const LoopKind k = loop_kind(e);
        a.layout.slots.push_back({{true, id}, k, offset, loop_size(k)});
        offset += loop_size(k);
        a.edges.push_back(&e);
    }
    for (int id : inc.delta_order) {
        const Node& n = g.node(id);
        const LoopKind k = loop_kind(n);
        a.layout.slots.push_back({{false, id}, k, offset, loop_size(k)});
        offset += loop_size(k);
        a.nodes.push_back(&n);
    }
    a.layout.n_edges = ne;
    a.layout.size = offset;

    a.src_delta.assign(ne, -1);
    a.tgt_delta.assign(ne, -1);
    a.src_junction.assign(ne, -1);
    a.tgt_junction.assign(ne, -1);
    for (int c = 0; c < ne; ++c) {
        for (int r = 0; r < inc.B_delta.rows(); ++r) {
            if (inc.B_delta(r, c) < 0) a.src_delta[c] = r;
            if (inc.B_delta(r, c) > 0) a.tgt_delta[c] = r;
        }
        for (int r = 0; r < inc.B_junction.rows(); ++r) {
            if (inc.B_junction(r, c) < 0) a.src_junction[c] = r;
            if (inc.B_junction(r, c) > 0) a.tgt_junction[c] = r;
        }
    }
    Eigen::VectorXd inv_J(ne);
    for (int c = 0; c < ne; ++c) inv_J(c) = 1.0 / a.edges[c]->pipe.J;
    a.junctions = JunctionSolver(inc.B_junction, inv_J);
    return a;
}

double Ports::power() const {
    return z_edge.dot(d_edge) + z_node.dot(d_node) + z_junction.dot(d_junction);
}

double Ports::power_scale() const {
    return z_edge.cwiseProduct(d_edge).cwiseAbs().sum() +
           z_node.cwiseProduct(d_node).cwiseAbs().sum() +
           z_junction.cwiseProduct(d_junction).cwiseAbs().sum();
}

namespace {

struct Eval {
    Eigen::VectorXd dx;
    Eigen::VectorXd z_node;
    Eigen::VectorXd z_k;
    Eigen::VectorXd d_edge;
};

// One pass: local rhs with d = 0, junction solve, then patch the flow rows.
Eval evaluate(const Assembly& a, const Eigen::VectorXd& x, Ports* ports) {
    const auto& L = a.layout;
    const int ne = L.n_edges;
    const int nd = static_cast<int>(a.nodes.size());
    Eval ev;
    ev.dx.resize(L.size);
    ev.z_node.resize(nd);
    for (int j = 0; j < nd; ++j) {
        const Slot& s = L.slots[ne + j];
        ev.z_node(j) = x(s.offset + output_index(s.loop));
    }

    if (ports) {
        ports->edge_signals.resize(ne);
        ports->node_signals.resize(nd);
    }

    Eigen::VectorXd f(ne);  // J q' without the junction term
    ev.d_edge.resize(ne);
    for (int i = 0; i < ne; ++i) {
        const Slot& s = L.slots[i];
        closed_loop_rhs(*a.edges[i], x.data() + s.offset, 0.0, ev.dx.data() + s.offset,
                        ports ? &ports->edge_signals[i] : nullptr);
        double d = 0.0;
        if (a.src_delta[i] >= 0) d += ev.z_node(a.src_delta[i]);
        if (a.tgt_delta[i] >= 0) d -= ev.z_node(a.tgt_delta[i]);
        ev.d_edge(i) = d;
        f(i) = a.edges[i]->pipe.J * ev.dx(s.offset) + d;
    }
    ev.z_k = a.junctions.pressures(f);
    for (int i = 0; i < ne; ++i) {
        if (a.src_junction[i] >= 0) ev.d_edge(i) += ev.z_k(a.src_junction[i]);
        if (a.tgt_junction[i] >= 0) ev.d_edge(i) -= ev.z_k(a.tgt_junction[i]);
        ev.dx(L.slots[i].offset) += ev.d_edge(i) / a.edges[i]->pipe.J;
    }

    const Eigen::VectorXd q = a.flows(x);
    const Eigen::VectorXd d_node = a.incidence.B_delta * q;
    for (int j = 0; j < nd; ++j) {
        const Slot& s = L.slots[ne + j];
        closed_loop_rhs(*a.nodes[j], x.data() + s.offset, d_node(j), ev.dx.data() + s.offset,
                        ports ? &ports->node_signals[j] : nullptr);
    }

    if (ports) {
        ports->d_edge = ev.d_edge;
        ports->z_edge = q;
        ports->d_node = d_node;
        ports->z_node = ev.z_node;
        ports->z_junction = ev.z_k;
        ports->d_junction = a.incidence.B_junction * q;
    }
    return ev;
}

}  // namespace

Eigen::VectorXd junction_pressures(const Assembly& a, const Eigen::VectorXd& x) {
    return evaluate(a, x, nullptr).z_k;
}

Eigen::VectorXd vector_field(const Assembly& a, const Eigen::VectorXd& x, Ports* ports) {
    return evaluate(a, x, ports).dx;
}

Eigen::VectorXd project_onto_manifold(const Assembly& a, const Eigen::VectorXd& x) {
    if (a.junctions.size() == 0) return x;
    const Eigen::VectorXd q = a.junctions.project_flows(a.flows(x));
    Eigen::VectorXd out = x;
    for (int i = 0; i < a.layout.n_edges; ++i) out(a.layout.slots[i].offset) = q(i);
    return out;
}

double manifold_residual(const Assembly& a, const Eigen::VectorXd& x) {
    if (a.junctions.size() == 0) return 0.0;
    return (a.incidence.B_junction * a.flows(x)).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

const Tableau& rk4_tableau() {
    static const Tableau t{4,
                           {0.0, 0.5, 0.5, 1.0},
                           {{}, {0.5}, {0.0, 0.5}, {0.0, 0.0, 1.0}},
                           {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6},
                           {},
                           4};
    return t;
}

const Tableau& dopri5_tableau() {
    static const Tableau t{
        7,
        {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0},
        {{},
         {1.0 / 5},
         {3.0 / 40, 9.0 / 40},
         {44.0 / 45, -56.0 / 15, 32.0 / 9},
         {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
         {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
         {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}},
        {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0},
        {35.0 / 384 - 5179.0 / 57600, 0.0, 500.0 / 1113 - 7571.0 / 16695,
         125.0 / 192 - 393.0 / 640, -2187.0 / 6784 + 92097.0 / 339200, 11.0 / 84 - 187.0 / 2100,
         -1.0 / 40},
        5};
    return t;
}

StepResult rk_step(const Tableau& tab, const StageFunction& f, double t, const Eigen::VectorXd& y,
                   double h) {
    std::vector<Eigen::VectorXd> k(tab.stages);
    for (int s = 0; s < tab.stages; ++s) {
        Eigen::VectorXd ys = y;
        for (int j = 0; j < s; ++j) {
            if (tab.a[s][j] != 0.0) ys.noalias() += h * tab.a[s][j] * k[j];
        }
        k[s] = f(s, t + tab.c[s] * h, ys);
    }
    StepResult r;
    r.y = y;
    for (int s = 0; s < tab.stages; ++s) {
        if (tab.b[s] != 0.0) r.y.noalias() += h * tab.b[s] * k[s];
    }
    if (!tab.b_err.empty()) {
        r.err = Eigen::VectorXd::Zero(y.size());
        for (int s = 0; s < tab.stages; ++s) {
            if (tab.b_err[s] != 0.0) r.err.noalias() += h * tab.b_err[s] * k[s];
        }
    }
    return r;
}

// ---------------------------------------------------------------------------

void Scenario::check(const NetworkGraph& g) const {
    auto exists = [&](const SubsystemKey& k) {
        return k.is_edge ? g.edges.count(k.id) > 0 : g.nodes.count(k.id) > 0;
    };
    for (const auto& k : initially_disconnected) {
        if (!exists(k)) throw std::invalid_argument("scenario references missing " + k.str());
    }
    double last = 0.0;
    for (const auto& ev : events) {
        if (ev.time < last) throw std::invalid_argument("scenario events are not time-sorted");
        last = ev.time;
        const auto& a = ev.action;
        switch (a.type) {
            case Action::Type::Connect:
            case Action::Type::Disconnect:
            case Action::Type::SetpointStep:
            case Action::Type::SetpointRamp:
                if (!exists(a.target)) {
                    throw std::invalid_argument("event references missing " + a.target.str());
                }
                break;
            case Action::Type::PerturbParams:
                for (const auto& k : a.targets) {
                    if (!exists(k)) throw std::invalid_argument("event references missing " + k.str());
                }
                break;
            case Action::Type::Saturation:
                break;
        }
        if (a.type == Action::Type::SetpointRamp && !(a.duration > 0.0)) {
            throw std::invalid_argument("ramp duration must be positive");
        }
    }
    if (!(t_end >= 0.0)) throw std::invalid_argument("t_end must be non-negative");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (stride < 1) throw std::invalid_argument("stride must be at least 1");
}

namespace {

PumpPressureCtl* pressure_ctl_of(NetworkGraph& g, const SubsystemKey& k) {
    auto& opt = k.is_edge ? g.edge(k.id).pressure_ctl : g.node(k.id).pressure_ctl;
    return opt ? &*opt : nullptr;
}

}  // namespace

double setpoint(const NetworkGraph& g, const SubsystemKey& k, SetpointField f) {
    auto& gg = const_cast<NetworkGraph&>(g);
    if (f == SetpointField::Pressure) {
        if (auto* pc = pressure_ctl_of(gg, k)) return pc->setpoint;
    } else if (k.is_edge) {
        const Edge& e = g.edge(k.id);
        if (e.flow_ctl) return e.flow_ctl->setpoint;
        if (e.valve_ctl) return e.valve_ctl->setpoint;
    }
    throw std::invalid_argument(k.str() + " has no such setpoint");
}

void set_setpoint(NetworkGraph& g, const SubsystemKey& k, SetpointField f, double value) {
    if (f == SetpointField::Pressure) {
        if (auto* pc = pressure_ctl_of(g, k)) {
            pc->setpoint = value;
            return;
        }
    } else if (k.is_edge) {
        Edge& e = g.edge(k.id);
        if (e.flow_ctl) {
            e.flow_ctl->setpoint = value;
            return;
        }
        if (e.valve_ctl) {
            e.valve_ctl->setpoint = value;
            return;
        }
    }
    throw std::invalid_argument(k.str() + " has no such setpoint");
}

std::vector<std::string> perturb_parameters(NetworkGraph& g, const std::vector<SubsystemKey>& ids,
                                            double magnitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // explicit mapping keeps the stream identical across standard libraries
    auto factor = [&] {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return 1.0 + magnitude * (2.0 * u - 1.0);
    };
    std::vector<SubsystemKey> keys = ids;
    if (keys.empty()) {
        for (const auto& [id, e] : g.edges) keys.push_back({true, id});
        for (const auto& [id, n] : g.nodes) keys.push_back({false, id});
    }
    std::vector<std::string> log;
    auto fmt = [](const std::string& who, const char* what, double f) {
        std::ostringstream os;
        os.precision(17);
        os << who << "." << what << " *= " << f;
        return os.str();
    };
    for (const auto& k : keys) {
        std::optional<PumpParams>* pump = k.is_edge ? &g.edge(k.id).pump : &g.node(k.id).pump;
        if (*pump) {
            const double fr = factor(), fj = factor(), fc = factor();
            (*pump)->R_P *= fr;
            (*pump)->J_P *= fj;
            (*pump)->C_P *= fc;
            log.push_back(fmt(k.str(), "R_P", fr));
            log.push_back(fmt(k.str(), "J_P", fj));
            log.push_back(fmt(k.str(), "C_P", fc));
            if (k.is_edge && g.edge(k.id).flow_ctl) g.edge(k.id).flow_ctl->rebind((*pump)->C_P);
        }
        if (k.is_edge && g.edge(k.id).valve) {
            const double fv = factor();
            g.edge(k.id).valve->C_v *= fv;
            log.push_back(fmt(k.str(), "C_v", fv));
        }
    }
    return log;
}

void set_valve_saturation(NetworkGraph& g, bool on) {
    for (auto& [id, e] : g.edges) {
        if (e.valve_ctl) e.valve_ctl->saturate = on;
    }
}

Eigen::VectorXd rest_state(LoopKind k, const NetworkGraph& g, const SubsystemKey& key) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(loop_size(k));
    double p_hold = 0.0;
    int n_hold = 0;
    for (const auto& [id, n] : g.nodes) {
        if (n.kind == NodeKind::Holding && n.pressure_ctl) {
            p_hold += n.pressure_ctl->setpoint;
            ++n_hold;
        }
    }
    if (n_hold) p_hold /= n_hold;
    if (k == LoopKind::Holding) {
        const auto& pc = *g.node(key.id).pressure_ctl;
        x(1) = pc.setpoint;
        x(2) = -pc.setpoint / pc.R_p;  // r such that chi sits at its resting value
    } else if (k == LoopKind::Capacitive) {
        x(0) = p_hold;
    }
    // valves start fully open
    if (k == LoopKind::Valve) x(1) = 1.0;
    if (k == LoopKind::PressurePumpValve) x(4) = 1.0;
    return x;
}

}  // namespace dhn
