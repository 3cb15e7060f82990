#include "dhn/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dhn {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::string> state_names(LoopKind k) {
    switch (k) {
        case LoopKind::Pipe: return {"q[m3/s]"};
        case LoopKind::PressurePump: return {"q[m3/s]", "q_P[m3/s]", "p_P[Pa]", "r[m3/s]"};
        case LoopKind::PressurePumpValve:
            return {"q[m3/s]", "q_P[m3/s]", "p_P[Pa]", "r[m3/s]", "r_v[-]"};
        case LoopKind::FlowPump: return {"q[m3/s]", "q_P[m3/s]", "p_P[Pa]", "r[Pa]"};
        case LoopKind::Valve: return {"q[m3/s]", "r_v[-]"};
        case LoopKind::Holding: return {"q_P[m3/s]", "p[Pa]", "r[m3/s]"};
        case LoopKind::Capacitive: return {"p[Pa]"};
    }
    return {};
}

struct Ramp {
    SubsystemKey key;
    SetpointField field;
    double v0, v1, t0, duration;
};

// All mutable run state.
class Simulation {
public:
    Simulation(const NetworkGraph& g, const Scenario& sc, const RunOptions& opt)
        : g_(g), sc_(sc), opt_(opt) {}

    RunResult execute();

private:
    // topology / state bookkeeping
    void scatter();
    void reassemble();
    StateMap snapshot() const;
    // reference equilibrium
    void solve_reference(bool polish);
    // events
    bool apply_events_at(double t);
    void apply(const Event& ev);
    void update_ramps(double t_mid);
    double next_breakpoint(double t) const;
    // stepping
    double step(double t, double h, double* h_next);
    void audit_step(double t, const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, double h);
    // recording
    void build_channels();
    void record(double t);
    void open_segment(double t);
    void close_segment(double t);
    void finish_summary(RunResult& out);

    NetworkGraph g_;
    Scenario sc_;
    RunOptions opt_;

    Assembly a_;
    Eigen::VectorXd x_;
    StateMap locals_;  // local states of inactive subsystems (and scratch on reassembly)
    std::map<SubsystemKey, int> slot_of_;

    EquilibriumSolution ref_;
    std::vector<StorageSpec> specs_;
    int epoch_ = 0;
    std::map<int, double> warm_;  // node pressures for warm starts

    std::vector<Ramp> ramps_;
    std::size_t next_event_ = 0;

    std::vector<Ports> stage_ports_;
    std::map<SubsystemKey, double> supply_int_;
    std::map<SubsystemKey, CertificateEntry> cert_;

    std::vector<SubsystemKey> subsystems_;  // fixed recording order
    std::vector<int> junction_ids_;
    TrajectoryRecord rec_;
    RunSummary sum_;
    SegmentAudit seg_;
    bool seg_open_ = false;
};

// ---------------------------------------------------------------------------

void Simulation::scatter() {
    for (const Slot& s : a_.layout.slots) locals_[s.key] = x_.segment(s.offset, s.size);
}

void Simulation::reassemble() {
    try {
        a_ = assemble(g_);
    } catch (const std::invalid_argument& ex) {
        throw TopologyError(ex.what());
    }
    x_.resize(a_.layout.size);
    slot_of_.clear();
    for (int i = 0; i < static_cast<int>(a_.layout.slots.size()); ++i) {
        const Slot& s = a_.layout.slots[i];
        slot_of_[s.key] = i;
        auto it = locals_.find(s.key);
        if (it == locals_.end()) {
            x_.segment(s.offset, s.size) = rest_state(s.loop, g_, s.key);
        } else {
            if (it->second.size() != s.size) {
                throw std::invalid_argument("state for " + s.key.str() + " has wrong size");
            }
            x_.segment(s.offset, s.size) = it->second;
        }
    }
    x_ = project_onto_manifold(a_, x_);
}

StateMap Simulation::snapshot() const {
    StateMap m = locals_;
    for (const Slot& s : a_.layout.slots) m[s.key] = x_.segment(s.offset, s.size);
    return m;
}

void Simulation::solve_reference(bool polish) {
    EquilibriumOptions eo = opt_.equilibrium;
    eo.polish = polish;
    ref_ = solve_equilibrium(g_, a_, eo, warm_.empty() ? nullptr : &warm_);
    ++sum_.reference_solves;
    for (const auto& [id, p] : ref_.node_pressure) warm_[id] = p;
    specs_ = make_storages(a_, ref_.x, ref_.ports);
    ++epoch_;
}

// ---------------------------------------------------------------------------

void Simulation::apply(const Event& ev) {
    const Action& a = ev.action;
    std::ostringstream log;
    std::size_t detail = 0;  // indented lines already appended for this event
    log << "t=" << ev.time << " ";
    switch (a.type) {
        case Action::Type::Connect: {
            auto& active = a.target.is_edge ? g_.edge(a.target.id).active : g_.node(a.target.id).active;
            if (a.state) locals_[a.target] = *a.state;
            active = true;
            log << "connect " << a.target.str();
            break;
        }
        case Action::Type::Disconnect: {
            auto& active = a.target.is_edge ? g_.edge(a.target.id).active : g_.node(a.target.id).active;
            active = false;
            log << "disconnect " << a.target.str();
            break;
        }
        case Action::Type::SetpointStep:
            std::erase_if(ramps_, [&](const Ramp& r) { return r.key == a.target && r.field == a.field; });
            set_setpoint(g_, a.target, a.field, a.value);
            log << "setpoint " << a.target.str() << " -> " << a.value;
            break;
        case Action::Type::SetpointRamp:
            std::erase_if(ramps_, [&](const Ramp& r) { return r.key == a.target && r.field == a.field; });
            ramps_.push_back({a.target, a.field, setpoint(g_, a.target, a.field), a.value, ev.time, a.duration});
            log << "ramp " << a.target.str() << " -> " << a.value << " over " << a.duration << " s";
            break;
        case Action::Type::PerturbParams: {
            const auto lines = perturb_parameters(g_, a.targets, a.magnitude, a.seed);
            detail = lines.size();
            log << "perturb magnitude " << a.magnitude << " seed " << a.seed << " (" << lines.size()
                << " factors)";
            for (const auto& l : lines) sum_.event_log.push_back("  " + l);
            break;
        }
        case Action::Type::Saturation:
            set_valve_saturation(g_, a.enabled);
            log << "valve saturation " << (a.enabled ? "on" : "off");
            break;
    }
    sum_.event_log.insert(sum_.event_log.end() - static_cast<long>(detail), log.str());
}

bool Simulation::apply_events_at(double t) {
    bool any = false, topology = false;
    const double tol = 1e-9 * std::max(1.0, sc_.dt);
    while (next_event_ < sc_.events.size() && sc_.events[next_event_].time <= t + tol) {
        const Event& ev = sc_.events[next_event_++];
        if (!topology && (ev.action.type == Action::Type::Connect ||
                          ev.action.type == Action::Type::Disconnect)) {
            scatter();
            topology = true;
        }
        apply(ev);
        any = true;
    }
    if (topology) reassemble();
    return any;
}

void Simulation::update_ramps(double t_mid) {
    for (const Ramp& r : ramps_) {
        const double w = std::clamp((t_mid - r.t0) / r.duration, 0.0, 1.0);
        set_setpoint(g_, r.key, r.field, r.v0 + w * (r.v1 - r.v0));
    }
}

double Simulation::next_breakpoint(double t) const {
    const double tol = 1e-9 * sc_.dt;
    double b = sc_.t_end;
    if (next_event_ < sc_.events.size()) b = std::min(b, sc_.events[next_event_].time);
    for (const Ramp& r : ramps_) {
        const double end = r.t0 + r.duration;
        if (end > t + tol) b = std::min(b, end);
    }
    return b;
}

// ---------------------------------------------------------------------------

double Simulation::step(double t, double h, double* h_next) {
    const Tableau& tab = sc_.integrator == Integrator::Rk4 ? rk4_tableau() : dopri5_tableau();
    stage_ports_.assign(tab.stages, Ports{});
    StageFunction f = [&](int s, double, const Eigen::VectorXd& y) {
        ++sum_.evaluations;
        return vector_field(a_, y, &stage_ports_[s]);
    };

    Eigen::VectorXd x0 = x_;
    if (sc_.integrator == Integrator::Rk4) {
        x_ = rk_step(tab, f, t, x0, h).y;
        *h_next = sc_.dt;
    } else {
        const Eigen::VectorXd floor = state_scale(a_, Eigen::VectorXd::Zero(x0.size()));
        for (int attempt = 0;; ++attempt) {
            StepResult r = rk_step(tab, f, t, x0, h);
            double err = 0.0;
            for (int i = 0; i < x0.size(); ++i) {
                const double sc = sc_.atol * floor(i) + sc_.rtol * std::max(std::abs(x0(i)), std::abs(r.y(i)));
                err = std::max(err, std::abs(r.err(i)) / sc);
            }
            if (!std::isfinite(err)) err = 1e10;
            const double fac = std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
            if (err <= 1.0 || h < 1e-14 * std::max(1.0, t)) {
                x_ = r.y;
                *h_next = h * fac;
                break;
            }
            h *= std::max(fac, 0.1);
            if (attempt > 60) throw NumericAbort("step size underflow", t, snapshot());
        }
    }

    if (!x_.allFinite()) {
        x_ = x0;
        throw NumericAbort("non-finite state at t=" + std::to_string(t + h), t, snapshot());
    }

    // power balance at every stage evaluation
    for (const Ports& p : stage_ports_) {
        const auto pb = power_balance(p, &ref_.ports);
        if (pb.scale > 0.0) sum_.max_power_residual = std::max(sum_.max_power_residual, std::abs(pb.residual) / pb.scale);
        if (pb.shifted_scale > 0.0) {
            sum_.max_shifted_power_residual =
                std::max(sum_.max_shifted_power_residual, std::abs(pb.shifted_residual) / pb.shifted_scale);
        }
    }

    // valve clamping seen by the first stage
    bool clamped = false;
    const Ports& p0 = stage_ports_[0];
    for (int i = 0; i < a_.layout.n_edges; ++i) {
        if (p0.edge_signals[i].clamped) {
            clamped = true;
            ++sum_.saturation_by_edge[a_.edges[i]->id];
        }
    }
    sum_.saturation_steps += clamped;

    audit_step(t, x0, x_, h);

    const double mres = manifold_residual(a_, x_);
    sum_.max_manifold_residual = std::max(sum_.max_manifold_residual, mres);
    if (mres > 10.0 * opt_.manifold_tol) {
        x_ = project_onto_manifold(a_, x_);
        ++sum_.projections;
    }
    ++sum_.steps;
    return h;
}

void Simulation::audit_step(double t, const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, double h) {
    const Tableau& tab = sc_.integrator == Integrator::Rk4 ? rk4_tableau() : dopri5_tableau();
    const int n = static_cast<int>(specs_.size());
    Eigen::VectorXd S = Eigen::VectorXd::Zero(n);
    for (int s = 0; s < tab.stages; ++s) {
        if (tab.b[s] != 0.0) S += h * tab.b[s] * supply_rates(a_, stage_ports_[s], specs_);
    }
    double V0 = 0.0, V1 = 0.0, rounding = 0.0;
    constexpr double kEps = std::numeric_limits<double>::epsilon();
    for (int i = 0; i < n; ++i) {
        const Slot& sl = a_.layout.slots[i];
        supply_int_[sl.key] += S(i);
        if (!opt_.audit) continue;
        const double H0 = storage_value(specs_[i], x0.data() + sl.offset);
        const double H1 = storage_value(specs_[i], x1.data() + sl.offset);
        V0 += H0;
        V1 += H1;
        // What storing x1 and evaluating V can change by rounding alone:
        // first order |W (x - x_bar)| eps |x|, plus the eps^2 term at x = x_bar.
        const auto& sp = specs_[i];
        const Eigen::VectorXd x = x1.segment(sl.offset, sl.size);
        const Eigen::VectorXd mag = (x.cwiseAbs() + sp.x_bar.cwiseAbs()) * (16.0 * kEps);
        const Eigen::VectorXd dev = (x - sp.x_bar).cwiseAbs() + mag;
        rounding += (sp.W.cwiseAbs() * dev).dot(mag);
        const double margin = S(i) + 1e-9 * std::max(1.0, std::abs(H0)) - (H1 - H0);
        auto& e = cert_[sl.key];
        e.key = sl.key;
        if (e.intervals == 0) e.worst_margin = kInf;
        ++e.intervals;
        if (margin < e.worst_margin) {
            e.worst_margin = margin;
            e.worst_time = t;
        }
        if (margin < 0.0) ++e.failures;
    }
    if (!opt_.audit) return;
    const double excess = V1 - V0 - 1e-9 * V0 - rounding;
    if (V0 > 0.0) seg_.worst_increase = std::max(seg_.worst_increase, (V1 - V0 - rounding) / V0);
    if (excess > 0.0) {
        ++seg_.lyapunov_violations;
        ++sum_.lyapunov_violations;
    }
    ++seg_.steps;
    seg_.v_end = V1;
}

// ---------------------------------------------------------------------------

void Simulation::build_channels() {
    // every subsystem known at t = 0, active or not: edges by class then id, then nodes
    std::vector<std::pair<int, int>> edges;
    for (const auto& [id, e] : g_.edges) edges.push_back({static_cast<int>(e.kind), id});
    std::sort(edges.begin(), edges.end());
    for (const auto& [k, id] : edges) subsystems_.push_back({true, id});
    std::vector<std::pair<int, int>> nodes;
    for (const auto& [id, n] : g_.nodes) {
        if (n.kind == NodeKind::Junction) {
            junction_ids_.push_back(id);
        } else {
            nodes.push_back({static_cast<int>(n.kind), id});
        }
    }
    std::sort(nodes.begin(), nodes.end());
    for (const auto& [k, id] : nodes) subsystems_.push_back({false, id});

    auto& ch = rec_.channels;
    ch.push_back("time_s");
    for (const auto& key : subsystems_) {
        const std::string p = key.str() + ".";
        if (key.is_edge) {
            const Edge& e = g_.edge(key.id);
            for (const auto& s : state_names(loop_kind(e))) ch.push_back(p + s);
            ch.push_back(p + "d[Pa]");
            if (e.pump) ch.push_back(p + "u_P[Pa]");
            if (e.valve) {
                ch.push_back(p + "u_v[-]");
                ch.push_back(p + "stem[-]");
            }
            if (e.pressure_ctl) ch.push_back(p + "p_set[Pa]");
            if (e.flow_ctl || e.valve_ctl) ch.push_back(p + "q_set[m3/s]");
        } else {
            const Node& n = g_.node(key.id);
            for (const auto& s : state_names(loop_kind(n))) ch.push_back(p + s);
            ch.push_back(p + "d[m3/s]");
            if (n.kind == NodeKind::Holding) {
                ch.push_back(p + "u_P[Pa]");
                ch.push_back(p + "p_set[Pa]");
            }
        }
        ch.push_back(p + "active[-]");
        if (opt_.diagnostics) {
            ch.push_back(p + "H[J]");
            ch.push_back(p + "psi[W]");
            ch.push_back(p + "supply[W]");
            ch.push_back(p + "supply_int[J]");
        }
    }
    for (int id : junction_ids_) {
        ch.push_back("n" + std::to_string(id) + ".p[Pa]");
        ch.push_back("n" + std::to_string(id) + ".d[m3/s]");
    }
    if (opt_.diagnostics) {
        ch.push_back("net.V[J]");
        ch.push_back("net.power_residual[-]");
        ch.push_back("net.manifold_residual[m3/s]");
        ch.push_back("net.ref_epoch[-]");
    }
}

void Simulation::record(double t) {
    Ports ports;
    vector_field(a_, x_, &ports);
    const Eigen::VectorXd supply = supply_rates(a_, ports, specs_);
    std::vector<double> row;
    row.reserve(rec_.channels.size());
    row.push_back(t);
    double V = 0.0;
    const int ne = a_.layout.n_edges;

    for (const auto& key : subsystems_) {
        auto slot = slot_of_.find(key);
        const bool active = slot != slot_of_.end();
        const int i = active ? slot->second : -1;
        Eigen::VectorXd local = active ? Eigen::VectorXd(x_.segment(a_.layout.slots[i].offset, a_.layout.slots[i].size))
                                       : locals_.at(key);
        for (int j = 0; j < local.size(); ++j) row.push_back(local(j));
        double H = 0.0, psi = 0.0, s = 0.0;
        if (active && opt_.diagnostics) {
            H = storage_value(specs_[i], local.data());
            psi = i < ne ? dissipation(specs_[i], *a_.edges[i], local.data())
                         : dissipation(specs_[i], *a_.nodes[i - ne], local.data());
            s = supply(i);
            V += H;
        }
        if (key.is_edge) {
            const Edge& e = g_.edge(key.id);
            const LoopSignals sig = active ? ports.edge_signals[i] : LoopSignals{};
            row.push_back(active ? ports.d_edge(i) : 0.0);
            if (e.pump) row.push_back(sig.u_P);
            if (e.valve) {
                const double u = active ? sig.u_v : applied_valve_input(e, local.data());
                row.push_back(u);
                const double uc = std::clamp(u, 1.0, e.valve->u_max());
                row.push_back(stem_from_input(*e.valve, uc));
            }
            if (e.pressure_ctl) row.push_back(e.pressure_ctl->setpoint);
            if (e.flow_ctl) row.push_back(e.flow_ctl->setpoint);
            else if (e.valve_ctl) row.push_back(e.valve_ctl->setpoint);
        } else {
            const Node& n = g_.node(key.id);
            row.push_back(active ? ports.d_node(i - ne) : 0.0);
            if (n.kind == NodeKind::Holding) {
                row.push_back(active ? ports.node_signals[i - ne].u_P : 0.0);
                row.push_back(n.pressure_ctl->setpoint);
            }
        }
        row.push_back(active ? 1.0 : 0.0);
        if (opt_.diagnostics) {
            row.push_back(H);
            row.push_back(psi);
            row.push_back(s);
            row.push_back(supply_int_[key]);
        }
    }
    const auto& jo = a_.incidence.junction_order;
    for (int id : junction_ids_) {
        auto it = std::find(jo.begin(), jo.end(), id);
        if (it == jo.end()) {
            row.push_back(0.0);
            row.push_back(0.0);
        } else {
            const auto k = it - jo.begin();
            row.push_back(ports.z_junction(k));
            row.push_back(ports.d_junction(k));
        }
    }
    if (opt_.diagnostics) {
        const auto pb = power_balance(ports);
        row.push_back(V);
        row.push_back(pb.scale > 0.0 ? std::abs(pb.residual) / pb.scale : 0.0);
        row.push_back(manifold_residual(a_, x_));
        row.push_back(epoch_);
    }
    rec_.rows.push_back(std::move(row));
}

void Simulation::open_segment(double t) {
    seg_ = SegmentAudit{};
    seg_.t0 = t;
    double V = 0.0;
    for (int i = 0; i < static_cast<int>(specs_.size()); ++i) {
        V += storage_value(specs_[i], x_.data() + a_.layout.slots[i].offset);
    }
    seg_.v_start = seg_.v_end = V;
    seg_open_ = true;
}

void Simulation::close_segment(double t) {
    if (!seg_open_) return;
    seg_.t1 = t;
    if (seg_.t1 - seg_.t0 >= 10.0 - 1e-9) {
        const Eigen::VectorXd sc = state_scale(a_, ref_.x);
        seg_.endpoint_error = (x_ - ref_.x).cwiseQuotient(sc).cwiseAbs().maxCoeff();
        seg_.endpoint_checked = true;
    }
    sum_.segments.push_back(seg_);
    seg_open_ = false;
}

// ---------------------------------------------------------------------------

RunResult Simulation::execute() {
    const auto wall0 = std::chrono::steady_clock::now();
    sc_.check(g_);

    for (const auto& k : sc_.initially_disconnected) {
        (k.is_edge ? g_.edge(k.id).active : g_.node(k.id).active) = false;
    }
    build_channels();

    // t = 0 events act before the initial state is formed
    const double t0 = 0.0;
    while (next_event_ < sc_.events.size() && sc_.events[next_event_].time <= 0.0) {
        apply(sc_.events[next_event_++]);
    }

    // inactive subsystems start at rest unless given
    for (const auto& [id, e] : g_.edges) {
        if (!e.active) locals_[{true, id}] = rest_state(loop_kind(e), g_, {true, id});
    }
    for (const auto& [id, n] : g_.nodes) {
        if (!n.active && n.kind != NodeKind::Junction) {
            locals_[{false, id}] = rest_state(loop_kind(n), g_, {false, id});
        }
    }
    reassemble();
    solve_reference(true);
    if (!ref_.feasible) {
        std::string msg = "initial setpoints are infeasible";
        for (const auto& v : ref_.violations) msg += "\n  " + v;
        if (!ref_.converged) msg += "\n  equilibrium residual " + std::to_string(ref_.residual);
        throw InfeasibleError(msg);
    }
    for (const auto& w : ref_.warnings) sum_.warnings.push_back("t=0 reference: " + w);
    if (!sc_.from_rest) x_ = ref_.x;
    for (const auto& [k, v] : opt_.initial_state) {
        if (auto it = slot_of_.find(k); it != slot_of_.end()) {
            const Slot& s = a_.layout.slots[it->second];
            if (v.size() != s.size) throw std::invalid_argument("initial state for " + k.str() + " has wrong size");
            x_.segment(s.offset, s.size) = v;
        } else {
            locals_[k] = v;
        }
    }
    x_ = project_onto_manifold(a_, x_);

    double t = t0;
    open_segment(t);
    record(t);
    const double sample_dt = sc_.stride * sc_.dt;
    long next_sample = 1;  // index on the grid t0 + k * sample_dt
    double h_try = sc_.dt;
    const double tol = 1e-9 * sc_.dt;
    const bool adaptive = sc_.integrator == Integrator::Rk45;
    // fixed steps count from the last breakpoint so t does not drift
    double t_anchor = t;
    long n_anchor = 0;

    while (t < sc_.t_end - tol) {
        if (next_event_ < sc_.events.size() && sc_.events[next_event_].time <= t + tol) {
            close_segment(t);
            apply_events_at(t);
            solve_reference(true);
            for (const auto& v : ref_.violations) sum_.warnings.push_back("t=" + std::to_string(t) + " reference: " + v);
            open_segment(t);
        }
        double target = next_breakpoint(t);
        // adaptive steps also land on the output grid
        if (adaptive) target = std::min(target, t0 + next_sample * sample_dt);
        double h = std::min(h_try, target - t);
        bool snap = false;
        if (target - t - h < tol) {
            h = target - t;
            snap = true;
        }
        if (!ramps_.empty()) {
            update_ramps(t + 0.5 * h);
            solve_reference(false);
        }
        double h_next = h_try;
        const double taken = step(t, h, &h_next);
        if (snap && taken == h) {
            t = target;
            t_anchor = t;
            n_anchor = 0;
        } else if (!adaptive) {
            t = t_anchor + static_cast<double>(++n_anchor) * sc_.dt;
        } else {
            t += taken;
            t_anchor = t;
            n_anchor = 0;
        }
        if (adaptive) h_try = std::min(h_next, sc_.dt);

        // finished ramps land exactly on their final value
        const std::size_t before = ramps_.size();
        std::erase_if(ramps_, [&](const Ramp& r) {
            if (t < r.t0 + r.duration - tol) return false;
            set_setpoint(g_, r.key, r.field, r.v1);
            return true;
        });
        if (ramps_.size() != before) solve_reference(true);

        if (t >= t0 + next_sample * sample_dt - tol || t >= sc_.t_end - tol) {
            record(t);
            while (t0 + next_sample * sample_dt <= t + tol) ++next_sample;
        }
    }
    close_segment(t);

    RunResult out;
    finish_summary(out);
    sum_.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    out.summary = sum_;
    out.record = std::move(rec_);
    out.final_state = snapshot();
    out.final_graph = g_;
    return out;
}

void Simulation::finish_summary(RunResult&) {
    for (auto& [k, e] : cert_) {
        if (e.intervals == 0) e.worst_margin = 0.0;
        sum_.certificate.entries.push_back(e);
        sum_.certificate.failures += e.failures;
    }
    // the final reference is the polished equilibrium of the final configuration
    const Eigen::VectorXd sc = state_scale(a_, ref_.x);
    sum_.final_error = (x_ - ref_.x).cwiseQuotient(sc).cwiseAbs().maxCoeff();
    for (int i = 0; i < a_.layout.n_edges; ++i) {
        const Edge& e = *a_.edges[i];
        const Slot& s = a_.layout.slots[i];
        const std::string p = "e" + std::to_string(e.id) + ".";
        if (e.flow_ctl || e.valve_ctl) {
            const double q_set = e.flow_ctl ? e.flow_ctl->setpoint : e.valve_ctl->setpoint;
            sum_.final_tracking_error[p + "q"] = std::abs(x_(s.offset) - q_set) / std::abs(q_set);
        }
        if (e.pressure_ctl) {
            sum_.final_tracking_error[p + "p_P"] =
                std::abs(x_(s.offset + 2) - e.pressure_ctl->setpoint) / e.pressure_ctl->setpoint;
        }
    }
    for (int j = 0; j < static_cast<int>(a_.nodes.size()); ++j) {
        const Node& n = *a_.nodes[j];
        if (!n.pressure_ctl) continue;
        const Slot& s = a_.layout.slots[a_.layout.n_edges + j];
        sum_.final_tracking_error["n" + std::to_string(n.id) + ".p"] =
            std::abs(x_(s.offset + 1) - n.pressure_ctl->setpoint) / n.pressure_ctl->setpoint;
    }
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------

int TrajectoryRecord::column(const std::string& name) const {
    auto it = std::find(channels.begin(), channels.end(), name);
    return it == channels.end() ? -1 : static_cast<int>(it - channels.begin());
}

std::vector<double> TrajectoryRecord::series(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw std::out_of_range("no channel " + name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

std::string TrajectoryRecord::csv() const {
    std::string s;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (i) s += ',';
        s += channels[i];
    }
    s += '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) s += ',';
            s += format_double(r[i]);
        }
        s += '\n';
    }
    return s;
}

TrajectoryRecord parse_csv(const std::string& text, const std::string& origin) {
    TrajectoryRecord rec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : l) {
            if (c == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split(line);
        if (rec.channels.empty()) {
            rec.channels = cells;
            if (rec.channels[0] != "time_s") throw InputError(origin + ":1: first column must be time_s");
            continue;
        }
        if (cells.size() != rec.channels.size()) {
            throw InputError(origin + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(rec.channels.size()) + " columns");
        }
        std::vector<double> row(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i) {
            try {
                std::size_t used = 0;
                row[i] = std::stod(cells[i], &used);
                if (used != cells[i].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw InputError(origin + ":" + std::to_string(lineno) + ":" + std::to_string(i + 1) +
                                 ": not a number");
            }
        }
        rec.rows.push_back(std::move(row));
    }
    if (rec.channels.empty()) throw InputError(origin + ": empty file");
    return rec;
}

RunResult run(const NetworkGraph& g, const Scenario& sc, const RunOptions& opt) {
    Simulation sim(g, sc, opt);
    return sim.execute();
}

StateMap initial_equilibrium(const NetworkGraph& g0, const Scenario& sc, EquilibriumSolution* sol) {
    NetworkGraph g = g0;
    for (const auto& k : sc.initially_disconnected) (k.is_edge ? g.edge(k.id).active : g.node(k.id).active) = false;
    for (const auto& ev : sc.events) {
        if (ev.time > 0.0) break;
        const Action& a = ev.action;
        switch (a.type) {
            case Action::Type::Connect: (a.target.is_edge ? g.edge(a.target.id).active : g.node(a.target.id).active) = true; break;
            case Action::Type::Disconnect: (a.target.is_edge ? g.edge(a.target.id).active : g.node(a.target.id).active) = false; break;
            case Action::Type::SetpointStep:
            case Action::Type::SetpointRamp: break;
            case Action::Type::PerturbParams: perturb_parameters(g, a.targets, a.magnitude, a.seed); break;
            case Action::Type::Saturation: set_valve_saturation(g, a.enabled); break;
        }
        if (a.type == Action::Type::SetpointStep) set_setpoint(g, a.target, a.field, a.value);
    }
    const Assembly a = assemble(g);
    EquilibriumSolution s = solve_equilibrium(g, a);
    StateMap m;
    for (const Slot& sl : a.layout.slots) m[sl.key] = s.x.segment(sl.offset, sl.size);
    if (sol) *sol = std::move(s);
    return m;
}

std::string RunSummary::json() const {
    nlohmann::json j;
    j["runtime_s"] = runtime_s;
    j["steps"] = steps;
    j["evaluations"] = evaluations;
    j["reference_solves"] = reference_solves;
    j["max_power_residual"] = max_power_residual;
    j["max_shifted_power_residual"] = max_shifted_power_residual;
    j["max_manifold_residual"] = max_manifold_residual;
    j["projections"] = projections;
    j["certificate"] = nlohmann::json::parse(certificate.json());
    j["lyapunov_violations"] = lyapunov_violations;
    auto& segs = j["segments"] = nlohmann::json::array();
    for (const auto& s : segments) {
        nlohmann::json e{{"t0", s.t0},
                         {"t1", s.t1},
                         {"V_start", s.v_start},
                         {"V_end", s.v_end},
                         {"steps", s.steps},
                         {"lyapunov_violations", s.lyapunov_violations},
                         {"worst_relative_increase", s.worst_increase}};
        if (s.endpoint_checked) e["endpoint_error"] = s.endpoint_error;
        segs.push_back(e);
    }
    j["saturation_steps"] = saturation_steps;
    auto& sat = j["saturation_by_edge"] = nlohmann::json::object();
    for (const auto& [id, n] : saturation_by_edge) sat["e" + std::to_string(id)] = n;
    j["events"] = event_log;
    j["warnings"] = warnings;
    j["final_error"] = final_error;
    j["final_tracking_error"] = final_tracking_error;
    return j.dump(2);
}

// ---------------------------------------------------------------------------

TrackingReport analyze_tracking(const TrajectoryRecord& rec, const Scenario& sc, double p_band,
                                double q_band) {
    struct Channel {
        int value, setpoint, active;
        bool pressure;
        std::string name;
    };
    std::vector<Channel> chans;
    for (std::size_t c = 0; c < rec.channels.size(); ++c) {
        const std::string& name = rec.channels[c];
        const auto dot = name.find('.');
        if (dot == std::string::npos) continue;
        const std::string sub = name.substr(0, dot);
        const std::string field = name.substr(dot + 1);
        const int active = rec.column(sub + ".active[-]");
        if (field == "p_set[Pa]") {
            int v = rec.column(sub + ".p_P[Pa]");
            if (v < 0) v = rec.column(sub + ".p[Pa]");
            if (v >= 0) chans.push_back({v, static_cast<int>(c), active, true, sub});
        } else if (field == "q_set[m3/s]") {
            const int v = rec.column(sub + ".q[m3/s]");
            if (v >= 0) chans.push_back({v, static_cast<int>(c), active, false, sub});
        }
    }

    std::vector<double> times;
    for (const auto& ev : sc.events) {
        if (ev.time > 0.0 && (times.empty() || ev.time > times.back() + 1e-12)) times.push_back(ev.time);
    }
    struct RampSpan {
        std::string sub;
        double t0, t1;
    };
    std::vector<RampSpan> ramps;
    for (const auto& ev : sc.events) {
        if (ev.action.type == Action::Type::SetpointRamp) {
            ramps.push_back({ev.action.target.str(), ev.time, ev.time + ev.action.duration});
        }
    }

    TrackingReport rep;
    for (std::size_t w = 0; w < times.size(); ++w) {
        TrackingWindow win;
        win.t_event = times[w];
        win.t_next = w + 1 < times.size() ? times[w + 1] : sc.t_end;
        const double tol = 1e-9;
        for (const auto& ch : chans) {
            double last_out = -kInf;
            double worst = 0.0;
            for (const auto& row : rec.rows) {
                const double t = row[0];
                if (t < win.t_event - tol || t >= win.t_next - tol) continue;
                if (ch.active >= 0 && row[ch.active] < 0.5) continue;
                const double sp = row[ch.setpoint];
                const double err = std::abs(row[ch.value] - sp) / std::abs(sp);
                worst = std::max(worst, err);
                if (err > (ch.pressure ? p_band : q_band)) last_out = t;
                if (!ch.pressure) {
                    bool in_ramp = false;
                    for (const auto& r : ramps) in_ramp |= t >= r.t0 - tol && t <= r.t1 + tol;
                    if (in_ramp && err > win.max_ramp_error) {
                        win.max_ramp_error = err;
                        win.worst_ramp_channel = ch.name;
                    }
                }
            }
            // time from the event until the channel stays inside its band
            const double settle = last_out == -kInf ? 0.0 : last_out - win.t_event;
            if (ch.pressure) {
                if (worst > win.max_pressure_dev) {
                    win.max_pressure_dev = worst;
                    win.worst_pressure_channel = ch.name;
                }
                win.pressure_settle_time = std::max(win.pressure_settle_time, settle);
            } else if (settle >= win.flow_settle_time) {
                win.flow_settle_time = settle;
                win.slowest_flow_channel = ch.name;
            }
        }
        rep.windows.push_back(win);
    }
    return rep;
}

std::string TrackingReport::json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : windows) {
        arr.push_back({{"t_event", w.t_event},
                       {"t_next", w.t_next},
                       {"max_pressure_deviation", w.max_pressure_dev},
                       {"worst_pressure_channel", w.worst_pressure_channel},
                       {"pressure_settle_time", finite_or_null(w.pressure_settle_time)},
                       {"flow_settle_time", finite_or_null(w.flow_settle_time)},
                       {"slowest_flow_channel", w.slowest_flow_channel},
                       {"max_ramp_error", w.max_ramp_error},
                       {"worst_ramp_channel", w.worst_ramp_channel}});
    }
    return arr.dump(2);
}

}  // namespace dhn
