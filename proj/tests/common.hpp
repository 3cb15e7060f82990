#pragma once
// Shared fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "dhn/closed_loop.hpp"
#include "dhn/io.hpp"
#include "dhn/network.hpp"
#include "dhn/passivity.hpp"
#include "dhn/simulation.hpp"

namespace dhn::test {

inline std::string data_path(const std::string& name) { return std::string(DHN_DATA_DIR) + "/" + name; }

inline NetworkGraph bundled(const std::string& name) { return load_network(data_path(name)); }

inline const std::vector<std::string>& bundled_networks() {
    static const std::vector<std::string> names = {"reference_network.json", "reference_network_high_gain.json",
                                                   "minimal_loop.json"};
    return names;
}

inline PumpPressureCtl pressure_ctl(double setpoint, const PumpParams& p) {
    return {setpoint, p.R_P, 1.0 / 3.64e-7};
}

inline Edge make_pipe(int id, int s, int t, double length = 100.0) {
    Edge e;
    e.id = id;
    e.kind = EdgeKind::Pipe;
    e.mode = EdgeMode::Plain;
    e.source = s;
    e.target = t;
    e.pipe = pipe_from_geometry(0.0825, length, 4.5e-5);
    return e;
}

inline ValveParams consumer_valve(double rangeability = 150.0) {
    return {7.9e-5, ValveCharacteristic::EqualPercentage, rangeability, 0.05};
}

inline Edge make_form_dgu(int id, int s, int t, double setpoint = 5e5) {
    Edge e;
    e.id = id;
    e.kind = EdgeKind::Dgu;
    e.mode = EdgeMode::Form;
    e.source = s;
    e.target = t;
    e.pipe = pipe_from_geometry(0.0359, 25.0, 4.5e-5);
    e.pump = PumpParams::from_resistance(1e6);
    e.valve = consumer_valve();
    e.pressure_ctl = pressure_ctl(setpoint, *e.pump);
    return e;
}

inline Edge make_valve_consumer(int id, int s, int t, double q_set = 2e-3) {
    Edge e;
    e.id = id;
    e.kind = EdgeKind::Consumer;
    e.mode = EdgeMode::Valve;
    e.source = s;
    e.target = t;
    e.pipe = pipe_from_geometry(0.0359, 25.0, 4.5e-5);
    e.valve = consumer_valve();
    e.valve_ctl = ValveFlowCtl{q_set, 1e4, 1e-4, false, true};
    return e;
}

inline Node make_capacitive(int id) {
    Node n;
    n.id = id;
    n.kind = NodeKind::Capacitive;
    n.capacitance = 5e-10;
    return n;
}

inline Node make_holding(int id, double setpoint = 2e5) {
    Node n;
    n.id = id;
    n.kind = NodeKind::Holding;
    n.pump = PumpParams::from_resistance(1e6);
    n.pressure_ctl = pressure_ctl(setpoint, *n.pump);
    return n;
}

inline Node make_junction(int id) {
    Node n;
    n.id = id;
    n.kind = NodeKind::Junction;
    return n;
}

struct RandomNetwork {
    NetworkGraph g;
    std::vector<int> form_dgus;  // bridging grid-forming DGUs
};

/// Two pipe layers (random trees plus extra pipes) bridged by grid-forming
/// DGUs and valve consumers; 4 to max_nodes nodes.
inline RandomNetwork random_network(std::mt19937_64& rng, int max_nodes = 12) {
    std::uniform_int_distribution<int> total(4, max_nodes);
    const int n = total(rng);
    std::uniform_int_distribution<int> split(2, n - 2);
    const int n_supply = split(rng);

    RandomNetwork out;
    std::vector<int> supply, ret;
    for (int id = 1; id <= n; ++id) (id <= n_supply ? supply : ret).push_back(id);
    std::shuffle(supply.begin(), supply.end(), rng);
    std::shuffle(ret.begin(), ret.end(), rng);

    int eid = 1;
    auto pick = [&](const std::vector<int>& v) {
        return v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)];
    };
    for (const auto* layer : {&supply, &ret}) {
        for (size_t i = 1; i < layer->size(); ++i) {
            const int a = (*layer)[i];
            const int b = (*layer)[std::uniform_int_distribution<size_t>(0, i - 1)(rng)];
            out.g.edges[eid] = make_pipe(eid, b, a);
            ++eid;
        }
        const int extra = std::uniform_int_distribution<int>(0, 2)(rng);
        for (int k = 0; k < extra; ++k) {
            const int a = pick(*layer), b = pick(*layer);
            if (a == b) continue;
            out.g.edges[eid] = make_pipe(eid, a, b);
            ++eid;
        }
    }
    const int n_form = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int k = 0; k < n_form; ++k) {
        out.g.edges[eid] = make_form_dgu(eid, pick(ret), pick(supply));
        out.form_dgus.push_back(eid);
        ++eid;
    }
    const int n_cons = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int k = 0; k < n_cons; ++k) {
        out.g.edges[eid] = make_valve_consumer(eid, pick(supply), pick(ret));
        ++eid;
    }

    const int holding = ret.front();
    for (int id = 1; id <= n; ++id) out.g.nodes[id] = id == holding ? make_holding(id) : make_capacitive(id);
    // an occasional junction on a node that is not the holding node
    if (std::bernoulli_distribution(0.3)(rng)) {
        const int j = supply.front();
        out.g.nodes[j] = make_junction(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// isolated pressure-controlled pump (holding node, d = 0)

/// Linear closed loop written from the control law by hand in balanced
/// coordinates y = (R_P q_P, p_P, R_P r): y' = A y + b.
struct IsolatedPump {
    Node node;
    Eigen::Matrix3d A;
    Eigen::Vector3d b;
    double R;

    explicit IsolatedPump(double p_set = 15e5) : node(make_holding(4, p_set)) {
        const PumpParams& p = *node.pump;
        const double Rp = node.pressure_ctl->R_p, QI = node.pressure_ctl->Q_I;
        R = p.R_P;
        // J q_P' = -p - R q_P + u, u = (R - Rp) q_P - Rp r + J/QI (p* - p)
        // C p' = q_P, r' = (p - p*) / QI
        A << -Rp / p.J_P, -R / p.J_P * (1.0 + p.J_P / QI), -Rp / p.J_P,
             1.0 / (R * p.C_P), 0.0, 0.0,
             0.0, R / QI, 0.0;
        b << R / QI * p_set, 0.0, -R / QI * p_set;
    }

    Eigen::Vector3d to_balanced(const Eigen::Vector3d& x) const { return {R * x(0), x(1), R * x(2)}; }

    /// Exact solution from x0 in natural coordinates, returned balanced.
    Eigen::Vector3d exact(const Eigen::Vector3d& x0, double t) const {
        const Eigen::Vector3d y_inf = -A.fullPivLu().solve(b);
        return y_inf + (A * t).exp() * (to_balanced(x0) - y_inf);
    }

    /// Fixed-step RK4 of the library closed loop, returned balanced.
    Eigen::Vector3d rk4(const Eigen::Vector3d& x0, double t_end, double h) const {
        const StageFunction f = [&](int, double, const Eigen::VectorXd& x) {
            Eigen::VectorXd dx(3);
            closed_loop_rhs(node, x.data(), 0.0, dx.data());
            return dx;
        };
        Eigen::VectorXd x = x0;
        const long n = std::lround(t_end / h);
        for (long k = 0; k < n; ++k) x = rk_step(rk4_tableau(), f, k * h, x, h).y;
        return to_balanced(x);
    }

    /// max component error relative to the largest balanced magnitude
    static double error(const Eigen::Vector3d& y, const Eigen::Vector3d& ref) {
        return (y - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
    }
};

// ---------------------------------------------------------------------------
// minimal loop oracle: holding node 4, DGU e1 (4 -> 1), pipe e3 (1 -> 2),
// valve consumer e2 (2 -> 3), pipe e4 (3 -> 4); one loop flow q

template <class F>
double bisect(F g, double lo, double hi) {
    double glo = g(lo);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if ((gm > 0) == (glo > 0)) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-15 * std::abs(mid)) break;
    }
    return 0.5 * (lo + hi);
}

struct LoopOracle {
    double q = 0.0;     // loop flow
    double u_v = 0.0;   // consumer valve input
    std::map<int, double> p;  // node pressures
    StateMap states;
};

inline LoopOracle minimal_loop_oracle(const NetworkGraph& g) {
    const Edge& dgu = g.edge(1);
    const Edge& cons = g.edge(2);
    const Edge& p12 = g.edge(3);
    const Edge& p34 = g.edge(4);
    const Node& hold = g.node(4);
    const double p_set = dgu.pressure_ctl->setpoint;
    const double q_set = cons.valve_ctl->setpoint;

    auto drop = [&](double q, double u) {
        return friction(dgu.pipe, q) + mu_hat(*dgu.valve, q) + friction(p12.pipe, q) + friction(cons.pipe, q) +
               mu_hat(*cons.valve, q) * u + friction(p34.pipe, q);
    };
    LoopOracle o;
    // valve input that balances the loop at the regulated flow ...
    o.u_v = bisect([&](double u) { return p_set - drop(q_set, u); }, 0.0, 1e7);
    // ... and the loop flow that this input admits
    o.q = bisect([&](double q) { return p_set - drop(q, o.u_v); }, 0.0, 0.1);

    const double q = o.q;
    o.p[4] = hold.pressure_ctl->setpoint;
    o.p[1] = o.p[4] + p_set - friction(dgu.pipe, q) - mu_hat(*dgu.valve, q);
    o.p[2] = o.p[1] - friction(p12.pipe, q);
    o.p[3] = o.p[2] - friction(cons.pipe, q) - mu_hat(*cons.valve, q) * o.u_v;

    Eigen::VectorXd xd(4);  // q, q_P, p_P, r with chi = -p*/R^p
    xd << q, q, p_set, -p_set / dgu.pressure_ctl->R_p - q;
    o.states[{true, 1}] = xd;
    Eigen::VectorXd xc(2);
    xc << q, o.u_v;
    o.states[{true, 2}] = xc;
    o.states[{true, 3}] = Eigen::VectorXd::Constant(1, q);
    o.states[{true, 4}] = Eigen::VectorXd::Constant(1, q);
    Eigen::VectorXd xh(3);  // q_P = 0, p = p*, r = -p*/R^p
    xh << 0.0, o.p[4], -o.p[4] / hold.pressure_ctl->R_p;
    o.states[{false, 4}] = xh;
    for (int n : {1, 2, 3}) o.states[{false, n}] = Eigen::VectorXd::Constant(1, o.p[n]);
    return o;
}

/// Worst relative deviation of a state map from the oracle; entries are
/// compared against max(|oracle|, floor) with floors for flows, pressures and
/// integrators of their natural magnitude.
inline double oracle_deviation(const StateMap& got, const LoopOracle& o) {
    double worst = 0.0;
    for (const auto& [key, ref] : o.states) {
        const auto it = got.find(key);
        if (it == got.end() || it->second.size() != ref.size()) return INFINITY;
        for (int i = 0; i < ref.size(); ++i) {
            worst = std::max(worst, std::abs(it->second(i) - ref(i)) / std::max(std::abs(ref(i)), 1e-3));
        }
    }
    return worst;
}

/// Relative difference with an absolute floor.
inline double rel(double a, double b, double floor = 1e-300) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace dhn::test
