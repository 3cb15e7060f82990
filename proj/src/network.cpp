#include "dhn/network.hpp"

#include <algorithm>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace dhn {

Edge& NetworkGraph::edge(int id) {
    auto it = edges.find(id);
    if (it == edges.end()) throw std::out_of_range("unknown edge " + std::to_string(id));
    return it->second;
}

const Edge& NetworkGraph::edge(int id) const { return const_cast<NetworkGraph*>(this)->edge(id); }

Node& NetworkGraph::node(int id) {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw std::out_of_range("unknown node " + std::to_string(id));
    return it->second;
}

const Node& NetworkGraph::node(int id) const { return const_cast<NetworkGraph*>(this)->node(id); }

std::vector<int> NetworkGraph::ordered_edges() const {
    std::vector<std::pair<int, int>> keyed;
    for (const auto& [id, e] : edges) {
        if (e.active) keyed.emplace_back(static_cast<int>(e.kind), id);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<int> out;
    for (const auto& k : keyed) out.push_back(k.second);
    return out;
}

std::vector<int> NetworkGraph::ordered_delta_nodes() const {
    std::vector<int> out;
    for (NodeKind kind : {NodeKind::Holding, NodeKind::Capacitive}) {
        for (const auto& [id, n] : nodes) {
            if (n.active && n.kind == kind) out.push_back(id);
        }
    }
    return out;
}

std::vector<int> NetworkGraph::ordered_junctions() const {
    std::vector<int> out;
    for (const auto& [id, n] : nodes) {
        if (n.active && n.kind == NodeKind::Junction) out.push_back(id);
    }
    return out;
}

std::vector<int> NetworkGraph::active_nodes() const {
    std::vector<int> out;
    for (const auto& [id, n] : nodes) {
        if (n.active) out.push_back(id);
    }
    return out;
}

const char* to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::Dgu: return "dgu";
        case EdgeKind::Consumer: return "consumer";
        case EdgeKind::Pipe: return "pipe";
        case EdgeKind::Mixing: return "mixing";
    }
    return "?";
}

const char* to_string(EdgeMode m) {
    switch (m) {
        case EdgeMode::Form: return "form";
        case EdgeMode::Valve: return "valve";
        case EdgeMode::Vsp: return "vsp";
        case EdgeMode::Boost: return "boost";
        case EdgeMode::Plain: return "plain";
    }
    return "?";
}

const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Holding: return "holding";
        case NodeKind::Capacitive: return "capacitive";
        case NodeKind::Junction: return "junction";
    }
    return "?";
}

namespace {

// Small union-find over node ids.
class Components {
public:
    explicit Components(const std::vector<int>& ids) {
        for (int id : ids) parent_[id] = id;
    }
    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (b < a) std::swap(a, b);
        parent_[b] = a;
        return true;
    }

private:
    std::map<int, int> parent_;
};

bool endpoints_ok(const NetworkGraph& g, const Edge& e) {
    auto s = g.nodes.find(e.source);
    auto t = g.nodes.find(e.target);
    return s != g.nodes.end() && t != g.nodes.end() && s->second.active && t->second.active &&
           e.source != e.target;
}

void check_structure(const NetworkGraph& g, ValidationReport& rep) {
    auto fail = [&](const std::string& m) { rep.failures.push_back({'s', m}); };
    auto guarded = [&](const std::string& who, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& ex) {
            fail(who + ": " + ex.what());
        }
    };

    for (const auto& [id, n] : g.nodes) {
        if (!n.active) continue;
        const std::string who = "node " + std::to_string(id);
        switch (n.kind) {
            case NodeKind::Holding:
                if (!n.pump || !n.pressure_ctl) {
                    fail(who + ": pressure holding needs pump and pressure control");
                } else {
                    guarded(who, [&] {
                        n.pump->check();
                        n.pressure_ctl->check();
                    });
                }
                break;
            case NodeKind::Capacitive:
                if (!(n.capacitance > 0.0)) fail(who + ": capacitance must be positive");
                break;
            case NodeKind::Junction:
                break;
        }
    }

    for (const auto& [id, e] : g.edges) {
        if (!e.active) continue;
        const std::string who = "edge " + std::to_string(id);
        if (!endpoints_ok(g, e)) {
            fail(who + ": endpoints must be distinct, existing, active nodes");
        }
        guarded(who, [&] { e.pipe.check(); });
        if (e.pump) guarded(who, [&] { e.pump->check(); });
        if (e.valve) guarded(who, [&] { e.valve->check(); });
        if (e.pressure_ctl) guarded(who, [&] { e.pressure_ctl->check(); });
        if (e.valve_ctl) guarded(who, [&] { e.valve_ctl->check(); });

        const bool pump = e.pump.has_value();
        const bool valve = e.valve.has_value();
        const bool pc = e.pressure_ctl.has_value();
        const bool fc = e.flow_ctl.has_value();
        const bool vc = e.valve_ctl.has_value();
        bool good = true;
        switch (e.kind) {
            case EdgeKind::Dgu:
                if (e.mode == EdgeMode::Form) good = pump && pc && !fc && !vc;
                else if (e.mode == EdgeMode::Valve) good = pump && pc && valve && vc && !fc;
                else if (e.mode == EdgeMode::Vsp) good = pump && fc && !pc && !vc;
                else good = false;
                break;
            case EdgeKind::Consumer:
                if (e.mode == EdgeMode::Boost) good = pump && pc && valve && vc && !fc;
                else if (e.mode == EdgeMode::Valve) good = !pump && valve && vc && !pc && !fc;
                else if (e.mode == EdgeMode::Vsp) good = pump && fc && !pc && !vc;
                else good = false;
                break;
            case EdgeKind::Pipe:
                if (e.mode == EdgeMode::Plain) good = !pump && !valve && !pc && !fc && !vc;
                else if (e.mode == EdgeMode::Boost) good = pump && pc && !valve && !fc && !vc;
                else good = false;
                break;
            case EdgeKind::Mixing:
                good = e.mode == EdgeMode::Valve && valve && vc && !pump && !pc && !fc;
                break;
        }
        if (!good) {
            fail(who + ": " + to_string(e.kind) + " in mode " + to_string(e.mode) +
                 " has an inconsistent set of pump/valve/controller records");
        }
    }
}

}  // namespace

HydraulicLayers compute_hydraulic_layers(const NetworkGraph& g) {
    const auto ids = g.active_nodes();
    if (ids.empty()) throw std::invalid_argument("no nodes");
    Components cc(ids);
    for (const auto& [id, e] : g.edges) {
        if (e.active && e.kind == EdgeKind::Pipe && endpoints_ok(g, e)) cc.unite(e.source, e.target);
    }
    HydraulicLayers out;
    std::map<int, int> root_layer;
    for (int id : ids) {
        const int r = cc.find(id);
        auto [it, fresh] = root_layer.emplace(r, out.count);
        if (fresh) ++out.count;
        out.layer_of[id] = it->second;
    }
    return out;
}

bool weakly_connected(const NetworkGraph& g) {
    const auto ids = g.active_nodes();
    if (ids.empty()) return false;
    Components cc(ids);
    int groups = static_cast<int>(ids.size());
    for (const auto& [id, e] : g.edges) {
        if (e.active && endpoints_ok(g, e) && cc.unite(e.source, e.target)) --groups;
    }
    return groups == 1;
}

bool ValidationReport::failed(char condition) const {
    return std::any_of(failures.begin(), failures.end(),
                       [&](const ValidationIssue& i) { return i.condition == condition; });
}

std::string ValidationReport::str() const {
    std::ostringstream os;
    os << (ok() ? "PASS" : "FAIL") << " (hydraulic layers: " << layer_count << ")\n";
    for (const auto& f : failures) os << "  fail (" << f.condition << "): " << f.message << "\n";
    for (const auto& w : warnings) os << "  warn: " << w << "\n";
    return os.str();
}

ValidationReport validate_network(const NetworkGraph& g) {
    ValidationReport rep;
    check_structure(g, rep);

    if (g.active_nodes().empty()) {
        rep.failures.push_back({'a', "no active nodes"});
        return rep;
    }
    if (!weakly_connected(g)) rep.failures.push_back({'a', "graph is not weakly connected"});

    const auto layers = compute_hydraulic_layers(g);
    rep.layer_count = layers.count;
    if (layers.count != 2) {
        rep.failures.push_back(
            {'b', "expected exactly 2 hydraulic layers, found " + std::to_string(layers.count)});
    }

    int n_dgu = 0, n_cons = 0, n_pipe = 0;
    bool bridging_form = false;
    for (const auto& [id, e] : g.edges) {
        if (!e.active) continue;
        n_dgu += e.kind == EdgeKind::Dgu;
        n_cons += e.kind == EdgeKind::Consumer;
        n_pipe += e.kind == EdgeKind::Pipe;
        if (e.kind == EdgeKind::Dgu && e.mode == EdgeMode::Form && endpoints_ok(g, e) &&
            layers.layer_of.at(e.source) != layers.layer_of.at(e.target)) {
            bridging_form = true;
        }
        if (e.flow_ctl && e.pump) {
            const double kappa = e.flow_ctl->Q_I() * (e.flow_ctl->K_P() + 1.0) - e.pump->C_P;
            if (!(kappa > 0.0)) {
                rep.failures.push_back(
                    {'e', "edge " + std::to_string(id) + ": flow controller gain condition"});
            }
        }
    }
    if (!bridging_form) {
        rep.failures.push_back({'c', "no grid-forming DGU connects the two hydraulic layers"});
    }
    if (n_dgu < 1) rep.failures.push_back({'d', "need at least one DGU"});
    if (n_cons < 1) rep.failures.push_back({'d', "need at least one consumer"});
    if (n_pipe < 2) rep.failures.push_back({'d', "need at least two pipes"});

    // DGUs and consumers are expected not to share a node
    std::map<int, std::pair<bool, bool>> touch;
    for (const auto& [id, e] : g.edges) {
        if (!e.active) continue;
        for (int n : {e.source, e.target}) {
            if (e.kind == EdgeKind::Dgu) touch[n].first = true;
            if (e.kind == EdgeKind::Consumer) touch[n].second = true;
        }
    }
    for (const auto& [n, t] : touch) {
        if (t.first && t.second) {
            rep.warnings.push_back("node " + std::to_string(n) + " joins a DGU and a consumer");
        }
    }
    bool holding = false;
    for (const auto& [id, n] : g.nodes) holding |= n.active && n.kind == NodeKind::Holding;
    if (!holding) rep.warnings.push_back("no pressure holding node");
    return rep;
}

std::set<int> independent_flow_edges(const NetworkGraph& g) {
    const auto rep = validate_network(g);
    if (!rep.ok()) throw std::invalid_argument("validation failed:\n" + rep.str());

    const auto layers = compute_hydraulic_layers(g);
    std::map<int, std::vector<std::pair<int, int>>> adj;  // node -> (edge id, neighbour)
    for (const auto& [id, e] : g.edges) {
        if (!e.active || e.kind != EdgeKind::Pipe) continue;
        adj[e.source].emplace_back(id, e.target);
        adj[e.target].emplace_back(id, e.source);
    }
    for (auto& [n, v] : adj) std::sort(v.begin(), v.end());

    std::set<int> tree;
    std::set<int> seen;
    for (int start : g.active_nodes()) {
        if (seen.count(start)) continue;
        std::queue<int> todo;
        todo.push(start);
        seen.insert(start);
        while (!todo.empty()) {
            const int n = todo.front();
            todo.pop();
            for (const auto& [eid, m] : adj[n]) {
                if (seen.insert(m).second) {
                    tree.insert(eid);
                    todo.push(m);
                }
            }
        }
    }
    for (const auto& [id, e] : g.edges) {
        if (e.active && e.kind == EdgeKind::Dgu && e.mode == EdgeMode::Form &&
            layers.layer_of.at(e.source) != layers.layer_of.at(e.target)) {
            tree.insert(id);
            break;
        }
    }
    std::set<int> chords;
    for (const auto& [id, e] : g.edges) {
        if (e.active && !tree.count(id)) chords.insert(id);
    }
    return chords;
}

IncidencePartition partition_incidence(const NetworkGraph& g) {
    IncidencePartition p;
    p.edge_order = g.ordered_edges();
    p.delta_order = g.ordered_delta_nodes();
    p.junction_order = g.ordered_junctions();

    std::map<int, std::pair<bool, int>> row;  // node -> (is junction, row)
    for (int i = 0; i < static_cast<int>(p.delta_order.size()); ++i) row[p.delta_order[i]] = {false, i};
    for (int i = 0; i < static_cast<int>(p.junction_order.size()); ++i) {
        row[p.junction_order[i]] = {true, i};
    }
    p.B_delta = Eigen::MatrixXd::Zero(p.delta_order.size(), p.edge_order.size());
    p.B_junction = Eigen::MatrixXd::Zero(p.junction_order.size(), p.edge_order.size());
    for (int c = 0; c < static_cast<int>(p.edge_order.size()); ++c) {
        const Edge& e = g.edge(p.edge_order[c]);
        auto s = row.find(e.source);
        auto t = row.find(e.target);
        if (s == row.end() || t == row.end() || e.source == e.target) {
            throw std::invalid_argument("edge " + std::to_string(e.id) + " has a dangling endpoint");
        }
        (s->second.first ? p.B_junction : p.B_delta)(s->second.second, c) = -1.0;
        (t->second.first ? p.B_junction : p.B_delta)(t->second.second, c) = 1.0;
    }
    return p;
}

Eigen::MatrixXd full_incidence(const NetworkGraph& g, std::vector<int>* node_order) {
    const auto nodes = g.active_nodes();
    const auto edges = g.ordered_edges();
    std::map<int, int> row;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) row[nodes[i]] = i;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nodes.size(), edges.size());
    for (int c = 0; c < static_cast<int>(edges.size()); ++c) {
        const Edge& e = g.edge(edges[c]);
        B(row.at(e.source), c) = -1.0;
        B(row.at(e.target), c) = 1.0;
    }
    if (node_order) *node_order = nodes;
    return B;
}

}  // namespace dhn
