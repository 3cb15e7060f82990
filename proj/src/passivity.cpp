#include "dhn/passivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dhn {

namespace {

double psi_friction(const Edge& e, double q, double q_bar) {
    return (q - q_bar) * (friction(e.pipe, q) - friction(e.pipe, q_bar));
}

double psi_open_valve(const Edge& e, double q, double q_bar) {
    if (!e.valve) return 0.0;
    return kOpenValveInput * (q - q_bar) * (mu_hat(*e.valve, q) - mu_hat(*e.valve, q_bar));
}

// Valve loop part; reduces to K_P y^2 + u_bar (q - q_bar)(mu(q) - mu(q_bar))
// when the input box is inactive.
double psi_valve(const Edge& e, const StorageSpec& s, const double* x, int r_index) {
    const double q = x[0], q_bar = s.x_bar(0);
    const ValveFlowCtl& ctl = *e.valve_ctl;
    const auto now = valve_flow_control(ctl, *e.valve, q, x[r_index]);
    const auto ref = valve_flow_control(ctl, *e.valve, q_bar, s.x_bar(r_index));
    const double mu_term = ref.u_v * (q - q_bar) * (mu_hat(*e.valve, q) - mu_hat(*e.valve, q_bar));
    const double r_dot_raw = -now.y_hat / ctl.Q_I;
    if (!now.clamped && now.r_dot == r_dot_raw) return mu_term + ctl.K_P * now.y_hat * now.y_hat;
    return mu_term - now.y_hat * (now.u_v - ref.u_v) -
           (x[r_index] - s.x_bar(r_index)) * ctl.Q_I * now.r_dot;
}

StorageSpec base_spec(SubsystemKey key, LoopKind loop, const Eigen::VectorXd& x_bar,
                      double d_bar) {
    if (x_bar.size() != loop_size(loop)) throw std::invalid_argument("equilibrium size mismatch");
    StorageSpec s;
    s.key = key;
    s.loop = loop;
    s.x_bar = x_bar;
    s.d_bar = d_bar;
    s.z_bar = x_bar(output_index(loop));
    return s;
}

void finish(StorageSpec& s) { s.W = s.T.transpose() * s.Q * s.T; }

void require_loop(const StorageSpec& s, LoopKind k) {
    if (s.loop != k) throw std::invalid_argument("storage spec does not match subsystem mode");
}

}  // namespace

double StorageSpec::min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    return es.eigenvalues().minCoeff();
}

StorageSpec make_storage(const Edge& e, const Eigen::VectorXd& x_bar, double d_bar) {
    const LoopKind k = loop_kind(e);
    StorageSpec s = base_spec({true, e.id}, k, x_bar, d_bar);
    const int n = loop_size(k);
    s.T = Eigen::MatrixXd::Zero(n, n);
    s.Q = Eigen::MatrixXd::Zero(n, n);
    const double J = e.pipe.J;
    s.T(0, 0) = J;
    s.Q(0, 0) = 1.0 / J;
    switch (k) {
        case LoopKind::Pipe:
            break;
        case LoopKind::PressurePumpValve:
            s.T(4, 4) = e.valve_ctl->Q_I;
            s.Q(4, 4) = 1.0 / e.valve_ctl->Q_I;
            [[fallthrough]];
        case LoopKind::PressurePump: {
            const PumpParams& p = *e.pump;
            const double QI = e.pressure_ctl->Q_I;
            s.T(1, 1) = p.J_P;  // J_P chi, chi = q_P + r
            s.T(1, 3) = p.J_P;
            s.T(2, 2) = p.C_P;
            s.T(3, 3) = QI;
            s.Q(1, 1) = 1.0 / p.J_P;
            s.Q(2, 2) = 1.0 / p.C_P;
            s.Q(3, 3) = 1.0 / QI;
            break;
        }
        case LoopKind::FlowPump: {
            const PumpParams& p = *e.pump;
            const double QI = e.flow_ctl->Q_I();
            const double kappa = QI * (e.flow_ctl->K_P() + 1.0) - p.C_P;
            s.T(1, 1) = p.J_P;
            s.T(2, 2) = p.C_P;
            s.T(3, 3) = QI;
            s.Q(1, 1) = QI / (p.J_P * kappa);
            s.Q(2, 2) = 1.0 / p.C_P + 1.0 / kappa;
            s.Q(2, 3) = s.Q(3, 2) = 1.0 / kappa;
            s.Q(3, 3) = 1.0 / kappa;
            break;
        }
        case LoopKind::Valve:
            s.T(1, 1) = e.valve_ctl->Q_I;
            s.Q(1, 1) = 1.0 / e.valve_ctl->Q_I;
            break;
        default:
            throw std::invalid_argument("edge with node loop kind");
    }
    finish(s);
    return s;
}

StorageSpec make_storage(const Node& n, const Eigen::VectorXd& x_bar, double d_bar) {
    const LoopKind k = loop_kind(n);
    StorageSpec s = base_spec({false, n.id}, k, x_bar, d_bar);
    const int m = loop_size(k);
    s.T = Eigen::MatrixXd::Zero(m, m);
    s.Q = Eigen::MatrixXd::Zero(m, m);
    if (k == LoopKind::Holding) {
        const PumpParams& p = *n.pump;
        const double QI = n.pressure_ctl->Q_I;
        s.T(0, 0) = p.J_P;
        s.T(0, 2) = p.J_P;
        s.T(1, 1) = p.C_P;
        s.T(2, 2) = QI;
        s.Q(0, 0) = 1.0 / p.J_P;
        s.Q(1, 1) = 1.0 / p.C_P;
        s.Q(2, 2) = 1.0 / QI;
    } else {
        s.T(0, 0) = n.capacitance;
        s.Q(0, 0) = 1.0 / n.capacitance;
    }
    finish(s);
    return s;
}

double storage_value(const StorageSpec& s, const double* x) {
    const int n = static_cast<int>(s.x_bar.size());
    const Eigen::VectorXd dx = Eigen::Map<const Eigen::VectorXd>(x, n) - s.x_bar;
    return 0.5 * dx.dot(s.W * dx);
}

Eigen::VectorXd storage_gradient(const StorageSpec& s, const double* x) {
    const int n = static_cast<int>(s.x_bar.size());
    return s.W * (Eigen::Map<const Eigen::VectorXd>(x, n) - s.x_bar);
}

double dissipation(const StorageSpec& s, const Edge& e, const double* x) {
    const LoopKind k = loop_kind(e);
    require_loop(s, k);
    if (s.key != SubsystemKey{true, e.id}) throw std::invalid_argument("storage spec id mismatch");
    const double q = x[0], q_bar = s.x_bar(0);
    double psi = psi_friction(e, q, q_bar);
    switch (k) {
        case LoopKind::Pipe:
            break;
        case LoopKind::PressurePump: {
            const double chi = x[1] + x[3] - s.x_bar(1) - s.x_bar(3);
            psi += e.pressure_ctl->R_p * chi * chi + psi_open_valve(e, q, q_bar);
            break;
        }
        case LoopKind::PressurePumpValve: {
            const double chi = x[1] + x[3] - s.x_bar(1) - s.x_bar(3);
            psi += e.pressure_ctl->R_p * chi * chi + psi_valve(e, s, x, 4);
            break;
        }
        case LoopKind::FlowPump: {
            const double QI = e.flow_ctl->Q_I();
            const double kappa = QI * (e.flow_ctl->K_P() + 1.0) - e.pump->C_P;
            const double dq = x[1] - s.x_bar(1);
            psi += psi_open_valve(e, q, q_bar) + e.pump->R_P * QI / kappa * dq * dq;
            break;
        }
        case LoopKind::Valve:
            psi += psi_valve(e, s, x, 1);
            break;
        default:
            throw std::invalid_argument("edge with node loop kind");
    }
    return psi;
}

double dissipation(const StorageSpec& s, const Node& n, const double* x) {
    const LoopKind k = loop_kind(n);
    require_loop(s, k);
    if (s.key != SubsystemKey{false, n.id}) throw std::invalid_argument("storage spec id mismatch");
    if (k == LoopKind::Capacitive) return 0.0;
    const double chi = x[0] + x[2] - s.x_bar(0) - s.x_bar(2);
    return n.pressure_ctl->R_p * chi * chi;
}

std::vector<StorageSpec> make_storages(const Assembly& a, const Eigen::VectorXd& x_bar,
                                       const Ports& ports_bar) {
    std::vector<StorageSpec> out;
    const int ne = a.layout.n_edges;
    for (int i = 0; i < static_cast<int>(a.layout.slots.size()); ++i) {
        const Slot& s = a.layout.slots[i];
        const Eigen::VectorXd xb = x_bar.segment(s.offset, s.size);
        if (i < ne) {
            out.push_back(make_storage(*a.edges[i], xb, ports_bar.d_edge(i)));
        } else {
            out.push_back(make_storage(*a.nodes[i - ne], xb, ports_bar.d_node(i - ne)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

PowerBalance power_balance(const Ports& p, const Ports* bar) {
    PowerBalance pb{p.power(), p.power_scale(), 0.0, 0.0};
    if (bar) {
        Ports s;
        s.d_edge = p.d_edge - bar->d_edge;
        s.z_edge = p.z_edge - bar->z_edge;
        s.d_node = p.d_node - bar->d_node;
        s.z_node = p.z_node - bar->z_node;
        s.d_junction = p.d_junction - bar->d_junction;
        s.z_junction = p.z_junction - bar->z_junction;
        pb.shifted_residual = s.power();
        pb.shifted_scale = (p.z_edge.cwiseAbs() + bar->z_edge.cwiseAbs()).dot(p.d_edge.cwiseAbs() + bar->d_edge.cwiseAbs()) +
                           (p.z_node.cwiseAbs() + bar->z_node.cwiseAbs()).dot(p.d_node.cwiseAbs() + bar->d_node.cwiseAbs()) +
                           (p.z_junction.cwiseAbs() + bar->z_junction.cwiseAbs())
                               .dot(p.d_junction.cwiseAbs() + bar->d_junction.cwiseAbs());
    }
    return pb;
}

Eigen::VectorXd supply_rates(const Assembly& a, const Ports& p,
                             const std::vector<StorageSpec>& specs) {
    const int ne = a.layout.n_edges;
    const int n = static_cast<int>(specs.size());
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
        const double z = i < ne ? p.z_edge(i) : p.z_node(i - ne);
        const double d = i < ne ? p.d_edge(i) : p.d_node(i - ne);
        out(i) = (z - specs[i].z_bar) * (d - specs[i].d_bar);
    }
    return out;
}

CertificateReport eip_certificate(const PortTrajectory& tr) {
    CertificateReport rep;
    const size_t n = tr.keys.size();
    if (tr.H.size() != tr.t.size() || tr.supply.size() != tr.t.size()) {
        throw std::invalid_argument("trajectory lacks storage or supply channels");
    }
    const bool integral = !tr.supply_integral.empty();
    const double inf = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) rep.entries.push_back({tr.keys[j], inf, 0.0, 0, 0});
    for (size_t k = 0; k + 1 < tr.t.size(); ++k) {
        if (!tr.epoch.empty() && tr.epoch[k] != tr.epoch[k + 1]) {
            ++rep.intervals_skipped;
            continue;
        }
        const double h = tr.t[k + 1] - tr.t[k];
        for (size_t j = 0; j < n; ++j) {
            const double H0 = tr.H[k][j], H1 = tr.H[k + 1][j];
            if (!std::isfinite(H0) || !std::isfinite(H1)) continue;
            const double S = integral ? tr.supply_integral[k + 1][j] - tr.supply_integral[k][j]
                                      : 0.5 * h * (tr.supply[k][j] + tr.supply[k + 1][j]);
            const double eps = 1e-9 * std::max(1.0, std::abs(H0));
            const double margin = S + eps - (H1 - H0);
            auto& e = rep.entries[j];
            ++e.intervals;
            if (margin < e.worst_margin) {
                e.worst_margin = margin;
                e.worst_time = tr.t[k];
            }
            if (margin < 0.0) {
                ++e.failures;
                ++rep.failures;
            }
        }
    }
    for (auto& e : rep.entries) {
        if (e.intervals == 0) e.worst_margin = 0.0;
    }
    return rep;
}

std::string CertificateReport::json() const {
    nlohmann::json j;
    j["passed"] = passed();
    j["failures"] = failures;
    j["intervals_skipped"] = intervals_skipped;
    auto& arr = j["subsystems"] = nlohmann::json::array();
    for (const auto& e : entries) {
        arr.push_back({{"subsystem", e.key.str()},
                       {"worst_margin", e.worst_margin},
                       {"worst_time", e.worst_time},
                       {"failures", e.failures},
                       {"intervals", e.intervals}});
    }
    return j.dump(2);
}

}  // namespace dhn
