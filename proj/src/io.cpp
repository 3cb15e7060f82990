#include "dhn/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dhn {

using nlohmann::json;

namespace {

// Cursor into a JSON document that remembers its pointer for diagnostics.
class Cursor {
public:
    Cursor(const json& j, std::string origin, std::string ptr = "")
        : j_(j), origin_(std::move(origin)), ptr_(std::move(ptr)) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw InputError(origin_ + ": " + (ptr_.empty() ? "/" : ptr_) + ": " + msg);
    }

    const json& raw() const { return j_; }
    const std::string& pointer() const { return ptr_; }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

    Cursor at(const char* key) const {
        if (!j_.is_object()) fail("expected an object");
        auto it = j_.find(key);
        if (it == j_.end()) {
            Cursor(j_, origin_, ptr_).fail(std::string("missing field \"") + key + "\"");
        }
        return Cursor(*it, origin_, ptr_ + "/" + key);
    }

    Cursor at(std::size_t i) const { return Cursor(j_.at(i), origin_, ptr_ + "/" + std::to_string(i)); }

    std::size_t size() const {
        if (!j_.is_array()) fail("expected an array");
        return j_.size();
    }

    void allow_only(std::initializer_list<const char*> keys) const {
        if (!j_.is_object()) fail("expected an object");
        std::set<std::string> ok(keys.begin(), keys.end());
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!ok.count(it.key())) fail("unknown field \"" + it.key() + "\"");
        }
    }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        return j_.get<double>();
    }
    double number(const char* key) const { return at(key).number(); }
    double number(const char* key, double fallback) const {
        return has(key) ? at(key).number() : fallback;
    }
    double positive(const char* key) const {
        const double v = number(key);
        if (!(v > 0.0)) at(key).fail("must be positive");
        return v;
    }
    int integer(const char* key) const {
        Cursor c = at(key);
        if (!c.j_.is_number_integer()) c.fail("expected an integer");
        return c.j_.get<int>();
    }
    bool boolean(const char* key, bool fallback) const {
        if (!has(key)) return fallback;
        Cursor c = at(key);
        if (!c.j_.is_boolean()) c.fail("expected true or false");
        return c.j_.get<bool>();
    }
    std::string string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }
    std::string string(const char* key) const { return at(key).string(); }
    std::string string(const char* key, const std::string& fallback) const {
        return has(key) ? at(key).string() : fallback;
    }

    template <typename E>
    E choice(const char* key, std::initializer_list<std::pair<const char*, E>> options) const {
        Cursor c = at(key);
        const std::string v = c.string();
        std::string list;
        for (const auto& [name, value] : options) {
            if (v == name) return value;
            list += std::string(list.empty() ? "" : ", ") + name;
        }
        c.fail("unknown value \"" + v + "\" (expected one of " + list + ")");
    }

private:
    const json& j_;
    std::string origin_;
    std::string ptr_;
};

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& ex) {
        // convert the byte offset into line:column
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(ex.byte ? ex.byte - 1 : 0, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = ex.what();
        if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
        throw InputError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
    }
}

double integral_weight(const Cursor& c) {
    const bool direct = c.has("Q_I"), inverse = c.has("Q_I_inv");
    if (direct == inverse) c.fail("give exactly one of \"Q_I\" or \"Q_I_inv\"");
    return direct ? c.positive("Q_I") : 1.0 / c.positive("Q_I_inv");
}

PumpParams read_pump(const Cursor& c) {
    c.allow_only({"R_P", "J_P", "C_P"});
    PumpParams p = PumpParams::from_resistance(c.positive("R_P"));
    if (c.has("J_P")) p.J_P = c.positive("J_P");
    if (c.has("C_P")) p.C_P = c.positive("C_P");
    return p;
}

ValveParams read_valve(const Cursor& c) {
    c.allow_only({"C_v", "characteristic", "rangeability", "s_min"});
    ValveParams v;
    v.C_v = c.positive("C_v");
    if (c.has("characteristic")) {
        v.characteristic = c.choice<ValveCharacteristic>(
            "characteristic", {{"linear", ValveCharacteristic::Linear},
                               {"equal_percentage", ValveCharacteristic::EqualPercentage}});
    }
    v.rangeability = c.number("rangeability", v.rangeability);
    v.s_min = c.number("s_min", v.s_min);
    try {
        v.check();
    } catch (const std::invalid_argument& ex) {
        c.fail(ex.what());
    }
    return v;
}

PipeHydraulics read_pipe(const Cursor& c) {
    c.allow_only({"diameter", "length", "roughness", "J", "a", "b"});
    PipeHydraulics p;
    if (c.has("diameter")) {
        if (c.has("a") || c.has("b")) c.fail("give either geometry or friction coefficients");
        p = pipe_from_geometry(c.positive("diameter"), c.positive("length"), c.positive("roughness"));
        if (c.has("J")) p.J = c.positive("J");
    } else {
        p.J = c.positive("J");
        p.friction.a = c.number("a");
        p.friction.b = c.number("b");
    }
    try {
        p.check();
    } catch (const std::invalid_argument& ex) {
        c.fail(ex.what());
    }
    return p;
}

PumpPressureCtl read_pressure_ctl(const Cursor& c, const std::optional<PumpParams>& pump) {
    c.allow_only({"setpoint", "R_p", "Q_I", "Q_I_inv"});
    PumpPressureCtl k;
    k.setpoint = c.positive("setpoint");
    if (c.has("R_p")) {
        k.R_p = c.positive("R_p");
    } else if (pump) {
        k.R_p = pump->R_P;
    } else {
        c.fail("missing field \"R_p\" (no pump to default from)");
    }
    k.Q_I = integral_weight(c);
    return k;
}

PumpFlowCtl read_flow_ctl(const Cursor& c, const std::optional<PumpParams>& pump) {
    c.allow_only({"setpoint", "K_P", "Q_I", "Q_I_inv"});
    if (!pump) c.fail("flow control needs a pump");
    try {
        return PumpFlowCtl(c.number("setpoint"), c.number("K_P"), integral_weight(c), pump->C_P);
    } catch (const std::invalid_argument& ex) {
        c.fail(ex.what());
    }
}

ValveFlowCtl read_valve_ctl(const Cursor& c) {
    c.allow_only({"setpoint", "K_P", "Q_I", "Q_I_inv", "saturate", "anti_windup"});
    ValveFlowCtl k;
    k.setpoint = c.number("setpoint");
    k.K_P = c.positive("K_P");
    k.Q_I = integral_weight(c);
    k.saturate = c.boolean("saturate", false);
    k.anti_windup = c.boolean("anti_windup", true);
    return k;
}

SubsystemKey read_key(const Cursor& c) {
    try {
        return parse_key(c.string());
    } catch (const std::invalid_argument& ex) {
        c.fail(ex.what());
    }
}

}  // namespace

SubsystemKey parse_key(const std::string& s) {
    if (s.size() >= 2 && (s[0] == 'e' || s[0] == 'n')) {
        int id = 0;
        auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), id);
        if (ec == std::errc() && p == s.data() + s.size()) return {s[0] == 'e', id};
    }
    throw std::invalid_argument("bad subsystem key \"" + s + "\" (expected e<id> or n<id>)");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot write");
    out << text;
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

NetworkGraph parse_network(const std::string& text, const std::string& origin) {
    const json doc = parse_json(text, origin);
    Cursor root(doc, origin);
    root.allow_only({"name", "description", "nodes", "edges"});
    NetworkGraph g;

    Cursor nodes = root.at("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        Cursor c = nodes.at(i);
        c.allow_only({"id", "kind", "capacitance", "pump", "pressure_control", "active"});
        Node n;
        n.id = c.integer("id");
        n.kind = c.choice<NodeKind>("kind", {{"holding", NodeKind::Holding},
                                             {"capacitive", NodeKind::Capacitive},
                                             {"junction", NodeKind::Junction}});
        n.active = c.boolean("active", true);
        if (n.kind == NodeKind::Capacitive) n.capacitance = c.positive("capacitance");
        if (c.has("pump")) n.pump = read_pump(c.at("pump"));
        if (c.has("pressure_control")) n.pressure_ctl = read_pressure_ctl(c.at("pressure_control"), n.pump);
        if (!g.nodes.emplace(n.id, n).second) c.at("id").fail("duplicate node id");
    }

    Cursor edges = root.at("edges");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        Cursor c = edges.at(i);
        c.allow_only({"id", "kind", "mode", "source", "target", "pipe", "pump", "valve",
                      "pressure_control", "flow_control", "valve_control", "active"});
        Edge e;
        e.id = c.integer("id");
        e.kind = c.choice<EdgeKind>("kind", {{"dgu", EdgeKind::Dgu},
                                             {"consumer", EdgeKind::Consumer},
                                             {"pipe", EdgeKind::Pipe},
                                             {"mixing", EdgeKind::Mixing}});
        const EdgeMode fallback = e.kind == EdgeKind::Pipe     ? EdgeMode::Plain
                                  : e.kind == EdgeKind::Mixing ? EdgeMode::Valve
                                                               : EdgeMode::Form;
        e.mode = c.has("mode") ? c.choice<EdgeMode>("mode", {{"form", EdgeMode::Form},
                                                             {"valve", EdgeMode::Valve},
                                                             {"vsp", EdgeMode::Vsp},
                                                             {"boost", EdgeMode::Boost},
                                                             {"plain", EdgeMode::Plain}})
                               : fallback;
        if (!c.has("mode") && (e.kind == EdgeKind::Dgu || e.kind == EdgeKind::Consumer)) {
            c.fail("missing field \"mode\"");
        }
        e.source = c.integer("source");
        e.target = c.integer("target");
        e.active = c.boolean("active", true);
        e.pipe = read_pipe(c.at("pipe"));
        if (c.has("pump")) e.pump = read_pump(c.at("pump"));
        if (c.has("valve")) e.valve = read_valve(c.at("valve"));
        if (c.has("pressure_control")) e.pressure_ctl = read_pressure_ctl(c.at("pressure_control"), e.pump);
        if (c.has("flow_control")) e.flow_ctl = read_flow_ctl(c.at("flow_control"), e.pump);
        if (c.has("valve_control")) e.valve_ctl = read_valve_ctl(c.at("valve_control"));
        if (!g.edges.emplace(e.id, e).second) c.at("id").fail("duplicate edge id");
    }
    return g;
}

NetworkGraph load_network(const std::string& path) { return parse_network(read_text(path), path); }

Scenario parse_scenario(const std::string& text, const std::string& origin) {
    const json doc = parse_json(text, origin);
    Cursor root(doc, origin);
    root.allow_only({"name", "description", "t_end", "dt", "integrator", "rtol", "atol", "stride",
                     "from_rest", "initially_disconnected", "events"});
    Scenario s;
    s.name = root.string("name", "");
    s.t_end = root.number("t_end");
    if (!(s.t_end >= 0.0)) root.at("t_end").fail("must be non-negative");
    s.dt = root.has("dt") ? root.positive("dt") : s.dt;
    if (root.has("integrator")) {
        s.integrator = root.choice<Integrator>("integrator", {{"rk4", Integrator::Rk4}, {"rk45", Integrator::Rk45}});
    }
    s.rtol = root.has("rtol") ? root.positive("rtol") : s.rtol;
    s.atol = root.has("atol") ? root.positive("atol") : s.atol;
    if (root.has("stride")) {
        s.stride = root.integer("stride");
        if (s.stride < 1) root.at("stride").fail("must be at least 1");
    }
    s.from_rest = root.boolean("from_rest", false);
    if (root.has("initially_disconnected")) {
        Cursor list = root.at("initially_disconnected");
        for (std::size_t i = 0; i < list.size(); ++i) s.initially_disconnected.push_back(read_key(list.at(i)));
    }
    if (root.has("events")) {
        Cursor list = root.at("events");
        double last = 0.0;
        for (std::size_t i = 0; i < list.size(); ++i) {
            Cursor c = list.at(i);
            c.allow_only({"time", "action", "target", "field", "value", "duration", "state", "targets",
                          "magnitude", "seed", "enabled", "comment"});
            Event ev;
            ev.time = c.number("time");
            if (!(ev.time >= 0.0)) c.at("time").fail("must be non-negative");
            if (ev.time < last) c.at("time").fail("events must be sorted by time");
            last = ev.time;
            Action& a = ev.action;
            a.type = c.choice<Action::Type>("action", {{"connect", Action::Type::Connect},
                                                        {"disconnect", Action::Type::Disconnect},
                                                        {"step", Action::Type::SetpointStep},
                                                        {"ramp", Action::Type::SetpointRamp},
                                                        {"perturb", Action::Type::PerturbParams},
                                                        {"saturation", Action::Type::Saturation}});
            switch (a.type) {
                case Action::Type::Connect:
                    a.target = read_key(c.at("target"));
                    if (c.has("state")) {
                        Cursor st = c.at("state");
                        Eigen::VectorXd v(st.size());
                        for (std::size_t k = 0; k < st.size(); ++k) v(k) = st.at(k).number();
                        a.state = v;
                    }
                    break;
                case Action::Type::Disconnect:
                    a.target = read_key(c.at("target"));
                    break;
                case Action::Type::SetpointRamp:
                    a.duration = c.positive("duration");
                    [[fallthrough]];
                case Action::Type::SetpointStep:
                    a.target = read_key(c.at("target"));
                    a.field = c.choice<SetpointField>("field", {{"flow", SetpointField::Flow},
                                                                {"pressure", SetpointField::Pressure}});
                    a.value = c.number("value");
                    break;
                case Action::Type::PerturbParams:
                    a.magnitude = c.number("magnitude");
                    if (!(a.magnitude >= 0.0 && a.magnitude < 1.0)) c.at("magnitude").fail("must lie in [0, 1)");
                    if (c.has("seed")) {
                        Cursor sd = c.at("seed");
                        if (!sd.raw().is_number_unsigned()) sd.fail("expected a non-negative integer");
                        a.seed = sd.raw().get<std::uint64_t>();
                    }
                    if (c.has("targets")) {
                        Cursor t = c.at("targets");
                        for (std::size_t k = 0; k < t.size(); ++k) a.targets.push_back(read_key(t.at(k)));
                    }
                    break;
                case Action::Type::Saturation: {
                    Cursor en = c.at("enabled");
                    if (!en.raw().is_boolean()) en.fail("expected true or false");
                    a.enabled = en.raw().get<bool>();
                    break;
                }
            }
            s.events.push_back(std::move(ev));
        }
    }
    return s;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(read_text(path), path); }

std::string state_to_json(const StateMap& states, double time) {
    json j;
    j["time"] = time;
    json& sub = j["subsystems"] = json::object();
    for (const auto& [k, v] : states) {
        json arr = json::array();
        for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
        sub[k.str()] = std::move(arr);
    }
    return j.dump(2) + "\n";
}

StateMap state_from_json(const std::string& text, const std::string& origin) {
    const json doc = parse_json(text, origin);
    Cursor root(doc, origin);
    root.allow_only({"time", "subsystems"});
    Cursor sub = root.at("subsystems");
    if (!sub.raw().is_object()) sub.fail("expected an object");
    StateMap out;
    for (auto it = sub.raw().begin(); it != sub.raw().end(); ++it) {
        Cursor c = sub.at(it.key().c_str());
        SubsystemKey k;
        try {
            k = parse_key(it.key());
        } catch (const std::invalid_argument& ex) {
            c.fail(ex.what());
        }
        Eigen::VectorXd v(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) v(i) = c.at(i).number();
        out[k] = v;
    }
    return out;
}

void write_state(const std::string& path, const StateMap& states, double time) {
    write_text(path, state_to_json(states, time));
}

StateMap read_state(const std::string& path) { return state_from_json(read_text(path), path); }

}  // namespace dhn
