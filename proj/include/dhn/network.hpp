#pragma once
// Typed digraph of the hydraulic network: nodes, edges, layers, validation and
// incidence partitioning.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dhn/components.hpp"
#include "dhn/controllers.hpp"

namespace dhn {

enum class EdgeKind { Dgu = 0, Consumer = 1, Pipe = 2, Mixing = 3 };
enum class EdgeMode { Form, Valve, Vsp, Boost, Plain };
enum class NodeKind { Holding = 0, Capacitive = 1, Junction = 2 };

struct Edge {
    int id = 0;
    EdgeKind kind = EdgeKind::Pipe;
    EdgeMode mode = EdgeMode::Plain;
    int source = 0;
    int target = 0;
    PipeHydraulics pipe;
    std::optional<PumpParams> pump;
    std::optional<ValveParams> valve;
    std::optional<PumpPressureCtl> pressure_ctl;
    std::optional<PumpFlowCtl> flow_ctl;
    std::optional<ValveFlowCtl> valve_ctl;
    bool active = true;
};

struct Node {
    int id = 0;
    NodeKind kind = NodeKind::Capacitive;
    double capacitance = 0.0;  // m^3/Pa, capacitive nodes
    std::optional<PumpParams> pump;
    std::optional<PumpPressureCtl> pressure_ctl;
    bool active = true;
};

/// Edge and node ids live in separate id spaces.
struct NetworkGraph {
    std::map<int, Node> nodes;
    std::map<int, Edge> edges;

    Edge& edge(int id);
    const Edge& edge(int id) const;
    Node& node(int id);
    const Node& node(int id) const;

    /// Active edges ordered by class (D, L, P, M) then id.
    std::vector<int> ordered_edges() const;
    /// Active holding, then capacitive nodes, by id.
    std::vector<int> ordered_delta_nodes() const;
    /// Active junction nodes by id.
    std::vector<int> ordered_junctions() const;
    /// Active nodes by id.
    std::vector<int> active_nodes() const;
};

const char* to_string(EdgeKind k);
const char* to_string(EdgeMode m);
const char* to_string(NodeKind k);

struct HydraulicLayers {
    std::map<int, int> layer_of;  // node id -> layer index
    int count = 0;
};

/// Connected components of the active pipe-only subgraph. Layers are numbered
/// in order of their lowest node id. Throws std::invalid_argument("no nodes").
HydraulicLayers compute_hydraulic_layers(const NetworkGraph& g);

/// Whether the active subgraph is weakly connected.
bool weakly_connected(const NetworkGraph& g);

struct ValidationIssue {
    char condition;  // 'a'..'e' per the feasibility conditions, 's' for structure
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> failures;
    std::vector<std::string> warnings;
    int layer_count = 0;

    bool ok() const { return failures.empty(); }
    bool failed(char condition) const;
    std::string str() const;
};

ValidationReport validate_network(const NetworkGraph& g);

/// Chords of the canonical spanning tree (BFS over pipes from the lowest-id
/// node of each layer, joined by the lowest-id bridging grid-forming DGU).
/// Throws std::invalid_argument if validation fails.
std::set<int> independent_flow_edges(const NetworkGraph& g);

struct IncidencePartition {
    std::vector<int> edge_order;
    std::vector<int> delta_order;     // holding then capacitive
    std::vector<int> junction_order;
    Eigen::MatrixXd B_delta;  // rows delta_order, cols edge_order
    Eigen::MatrixXd B_junction;
};

/// Throws std::invalid_argument on dangling references among active members.
IncidencePartition partition_incidence(const NetworkGraph& g);

/// Full signed incidence of the active graph, rows ordered by node id.
Eigen::MatrixXd full_incidence(const NetworkGraph& g, std::vector<int>* node_order = nullptr);

}  // namespace dhn
