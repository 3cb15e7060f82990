#pragma once
// Interconnected closed loop: state layout, junction pressures, vector field,
// manifold projection, explicit Runge-Kutta steppers and scenario events.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dhn/closed_loop.hpp"
#include "dhn/network.hpp"

namespace dhn {

/// Edge and node ids are separate id spaces, so a subsystem is addressed by both.
struct SubsystemKey {
    bool is_edge = true;
    int id = 0;

    auto operator<=>(const SubsystemKey&) const = default;
    std::string str() const;
};

struct Slot {
    SubsystemKey key;
    LoopKind loop;
    int offset;
    int size;
};

struct StateLayout {
    std::vector<Slot> slots;  // edges in incidence order, then delta nodes
    int n_edges = 0;
    int size = 0;

    const Slot* find(const SubsystemKey& k) const;
};

/// Solves the junction pressures from B_KE diag(1/J) B_KE^T z_K = B_KE diag(1/J) f.
class JunctionSolver {
public:
    JunctionSolver() = default;
    JunctionSolver(const Eigen::MatrixXd& B_junction, const Eigen::VectorXd& inv_J);

    int size() const { return static_cast<int>(B_.rows()); }
    /// f: per-edge momentum rate excluding the junction term.
    Eigen::VectorXd pressures(const Eigen::VectorXd& f) const;
    /// Minimal diag(J)-norm flow correction onto B_KE q = 0.
    Eigen::VectorXd project_flows(const Eigen::VectorXd& q) const;
    const Eigen::MatrixXd& laplacian() const { return L_; }

private:
    Eigen::MatrixXd B_;
    Eigen::VectorXd inv_J_;
    Eigen::MatrixXd L_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Everything derived from one topology epoch.
struct Assembly {
    IncidencePartition incidence;
    StateLayout layout;
    JunctionSolver junctions;
    // per edge in incidence order: endpoint rows, -1 if the endpoint is a junction
    std::vector<int> src_delta, tgt_delta, src_junction, tgt_junction;
    std::vector<const Edge*> edges;
    std::vector<const Node*> nodes;

    Eigen::VectorXd flows(const Eigen::VectorXd& x) const;
};

/// Throws std::invalid_argument when validation fails or L_g is singular.
/// The assembly keeps pointers into g; rebuild after mutating g's maps.
Assembly assemble(const NetworkGraph& g);

/// Interaction ports from one vector-field evaluation.
struct Ports {
    Eigen::VectorXd d_edge, z_edge;    // incidence edge order
    Eigen::VectorXd d_node, z_node;    // delta order
    Eigen::VectorXd d_junction, z_junction;
    std::vector<LoopSignals> edge_signals;
    std::vector<LoopSignals> node_signals;

    /// sum z d over edges, delta nodes and junctions
    double power() const;
    /// sum |z d|
    double power_scale() const;
};

Eigen::VectorXd junction_pressures(const Assembly& a, const Eigen::VectorXd& x);
Eigen::VectorXd vector_field(const Assembly& a, const Eigen::VectorXd& x, Ports* ports = nullptr);
Eigen::VectorXd project_onto_manifold(const Assembly& a, const Eigen::VectorXd& x);
/// max |B_KE q|
double manifold_residual(const Assembly& a, const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------
// explicit Runge-Kutta

enum class Integrator { Rk4, Rk45 };

struct Tableau {
    int stages;
    std::vector<double> c;
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    std::vector<double> b_err;  // b - b_hat; empty for fixed-step methods
    int order;
};

const Tableau& rk4_tableau();
const Tableau& dopri5_tableau();

/// f(stage index, t, y) -> y'
using StageFunction = std::function<Eigen::VectorXd(int, double, const Eigen::VectorXd&)>;

struct StepResult {
    Eigen::VectorXd y;
    Eigen::VectorXd err;  // empty for fixed-step
};

StepResult rk_step(const Tableau& tab, const StageFunction& f, double t, const Eigen::VectorXd& y,
                   double h);

// ---------------------------------------------------------------------------
// scenarios

enum class SetpointField { Flow, Pressure };

struct Action {
    enum class Type { Connect, Disconnect, SetpointStep, SetpointRamp, PerturbParams, Saturation };
    Type type = Type::SetpointStep;
    SubsystemKey target;
    SetpointField field = SetpointField::Flow;
    double value = 0.0;
    double duration = 0.0;
    std::optional<Eigen::VectorXd> state;  // Connect with a fresh local state
    std::vector<SubsystemKey> targets;     // PerturbParams; empty = all
    double magnitude = 0.0;
    std::uint64_t seed = 0;
    bool enabled = false;                  // Saturation
};

struct Event {
    double time = 0.0;
    Action action;
};

struct Scenario {
    std::string name;
    double t_end = 0.0;
    double dt = 1e-3;
    Integrator integrator = Integrator::Rk4;
    double rtol = 1e-8;
    double atol = 1e-12;
    int stride = 10;
    bool from_rest = false;
    std::vector<SubsystemKey> initially_disconnected;
    std::vector<Event> events;

    /// Throws std::invalid_argument if events are unsorted or reference missing ids.
    void check(const NetworkGraph& g) const;
};

/// Current setpoint of a controlled subsystem; throws if the field is absent.
double setpoint(const NetworkGraph& g, const SubsystemKey& k, SetpointField f);
void set_setpoint(NetworkGraph& g, const SubsystemKey& k, SetpointField f, double value);

/// Multiply R_P, J_P, C_P and C_v of the listed subsystems (all if empty) by
/// 1 + U(-m, m) from a seeded stream. Flow-controller gain conditions are
/// re-checked. Returns a log of the applied factors.
std::vector<std::string> perturb_parameters(NetworkGraph& g, const std::vector<SubsystemKey>& ids,
                                            double magnitude, std::uint64_t seed);

void set_valve_saturation(NetworkGraph& g, bool on);

/// Resting local state: zero flows and integrators, pressures at zero except
/// holding nodes, which sit at their setpoint.
Eigen::VectorXd rest_state(LoopKind k, const NetworkGraph& g, const SubsystemKey& key);

}  // namespace dhn
