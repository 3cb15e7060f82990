// dhnsim: command-line front end for the hydraulic simulator.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dhn/io.hpp"
#include "dhn/runner.hpp"

#ifndef DHN_DATA_DIR
#define DHN_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace dhn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInvalid = 2, kInfeasible = 3, kNumeric = 4 };

struct Overrides {
    std::optional<double> dt, t_end;
    std::optional<std::string> integrator, saturation;
    std::optional<std::uint64_t> seed;
    std::optional<int> stride;
    bool from_rest = false;
};

void apply(Scenario& sc, const Overrides& o) {
    if (o.dt) sc.dt = *o.dt;
    if (o.t_end) sc.t_end = *o.t_end;
    if (o.stride) sc.stride = *o.stride;
    if (o.integrator) sc.integrator = *o.integrator == "rk45" ? Integrator::Rk45 : Integrator::Rk4;
    if (o.from_rest) sc.from_rest = true;
    if (o.seed) {
        for (auto& ev : sc.events) {
            if (ev.action.type == Action::Type::PerturbParams) ev.action.seed = *o.seed;
        }
    }
    if (o.saturation) {
        // the flag replaces any saturation schedule in the scenario
        std::erase_if(sc.events, [](const Event& e) { return e.action.type == Action::Type::Saturation; });
        Event ev;
        ev.action.type = Action::Type::Saturation;
        ev.action.enabled = *o.saturation == "on";
        sc.events.insert(sc.events.begin(), ev);
    }
    if (!(sc.dt > 0.0)) throw InputError("--dt must be positive");
    if (sc.stride < 1) throw InputError("--stride must be at least 1");
    if (sc.t_end < 0.0) throw InputError("--t-end must be non-negative");
}

void add_overrides(CLI::App* c, Overrides& o) {
    c->add_option("--dt", o.dt, "step size [s]")->check(CLI::PositiveNumber);
    c->add_option("--t-end", o.t_end, "final time [s]")->check(CLI::NonNegativeNumber);
    c->add_option("--stride", o.stride, "output every n-th step")->check(CLI::PositiveNumber);
    c->add_option("--integrator", o.integrator)->check(CLI::IsMember({"rk4", "rk45"}));
    c->add_option("--seed", o.seed, "seed for parameter perturbation events");
    c->add_option("--saturation", o.saturation, "valve input saturation")->check(CLI::IsMember({"on", "off"}));
    c->add_flag("--from-rest", o.from_rest, "start from rest instead of the equilibrium");
}

void write_run(const fs::path& out, const RunResult& r, const Scenario& sc, bool figures) {
    fs::create_directories(out);
    // a zero-length run emits only the header
    if (sc.t_end == 0.0) {
        TrajectoryRecord head{r.record.channels, {}};
        write_text((out / "trajectory.csv").string(), head.csv());
    } else {
        write_text((out / "trajectory.csv").string(), r.record.csv());
    }
    write_state((out / "final_state.json").string(), r.final_state, sc.t_end);

    nlohmann::json s = nlohmann::json::parse(r.summary.json());
    s["scenario"] = sc.name;
    s["dt"] = sc.dt;
    s["integrator"] = sc.integrator == Integrator::Rk4 ? "rk4" : "rk45";
    s["tracking"] = nlohmann::json::parse(analyze_tracking(r.record, sc).json());
    write_text((out / "summary.json").string(), s.dump(2) + "\n");
    write_text((out / "certificate.json").string(), r.summary.certificate.json() + "\n");

    if (!figures) return;
    // headline channels plus relative deviations from setpoints
    TrajectoryRecord fig;
    fig.channels.push_back("time_s");
    struct Col { int value, set; };
    std::vector<Col> cols;
    auto add = [&](const std::string& sub, const std::string& v, const std::string& set, const std::string& unit) {
        const int cv = r.record.column(sub + "." + v + "[" + unit + "]");
        const int cs = r.record.column(sub + "." + set + "[" + unit + "]");
        if (cv < 0) return;
        fig.channels.push_back(sub + "." + v + "[" + unit + "]");
        cols.push_back({cv, -1});
        if (cs >= 0) {
            fig.channels.push_back(sub + "." + v + "_dev[-]");
            cols.push_back({cv, cs});
        }
    };
    for (const char* e : {"e1", "e2", "e7", "e15"}) add(e, "p_P", "p_set", "Pa");
    add("n4", "p", "p_set", "Pa");
    for (const char* e : {"e2", "e3", "e4", "e5", "e6", "e7", "e8", "e25"}) add(e, "q", "q_set", "m3/s");
    for (const auto& row : r.record.rows) {
        std::vector<double> out_row{row[0]};
        for (const auto& c : cols) {
            out_row.push_back(c.set < 0 ? row[c.value] : (row[c.value] - row[c.set]) / std::abs(row[c.set]));
        }
        fig.rows.push_back(std::move(out_row));
    }
    write_text((out / "figures.csv").string(), fig.csv());
}

PortTrajectory trajectory_from_csv(const TrajectoryRecord& rec) {
    PortTrajectory tr;
    std::vector<int> hc, sc, ic;
    for (const auto& name : rec.channels) {
        const auto pos = name.find(".H[J]");
        if (pos == std::string::npos || pos + 5 != name.size()) continue;
        const std::string sub = name.substr(0, pos);
        const int s = rec.column(sub + ".supply[W]");
        const int i = rec.column(sub + ".supply_int[J]");
        if (s < 0) throw InputError("trajectory lacks " + sub + ".supply[W]");
        tr.keys.push_back(parse_key(sub));
        hc.push_back(rec.column(name));
        sc.push_back(s);
        ic.push_back(i);
    }
    if (tr.keys.empty()) throw InputError("trajectory has no storage channels (H[J])");
    const int ep = rec.column("net.ref_epoch[-]");
    for (const auto& row : rec.rows) {
        tr.t.push_back(row[0]);
        std::vector<double> H, S, I;
        bool have_int = true;
        for (std::size_t k = 0; k < tr.keys.size(); ++k) {
            H.push_back(row[hc[k]]);
            S.push_back(row[sc[k]]);
            if (ic[k] >= 0) I.push_back(row[ic[k]]); else have_int = false;
        }
        tr.H.push_back(H);
        tr.supply.push_back(S);
        if (have_int) tr.supply_integral.push_back(I);
        tr.epoch.push_back(ep >= 0 ? static_cast<int>(row[ep]) : 0);
    }
    return tr;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"District heating network hydraulic simulator"};
    app.require_subcommand(1);

    std::string network, scenario, out, trajectory;
    Overrides ov;

    auto* validate = app.add_subcommand("validate", "check a network description");
    validate->add_option("--network", network)->required();

    auto* equilibrium = app.add_subcommand("equilibrium", "solve the steady state and write it as a state file");
    equilibrium->add_option("--network", network)->required();
    equilibrium->add_option("--scenario", scenario, "t = 0 configuration (disconnected units, perturbations)");
    equilibrium->add_option("--out", out, "state file (stdout if omitted)");
    equilibrium->add_option("--seed", ov.seed);
    equilibrium->add_option("--saturation", ov.saturation)->check(CLI::IsMember({"on", "off"}));

    auto* runc = app.add_subcommand("run", "simulate a scenario");
    runc->add_option("--network", network)->required();
    runc->add_option("--scenario", scenario)->required();
    runc->add_option("--out", out, "output directory")->required();
    add_overrides(runc, ov);

    auto* certify = app.add_subcommand("certify", "check the passivity certificate along a recorded trajectory");
    certify->add_option("--network", network)->required();
    certify->add_option("--trajectory", trajectory, "trajectory CSV written by run")->required();
    certify->add_option("--out", out, "certificate JSON (stdout if omitted)");

    std::string which;
    auto* preset = app.add_subcommand("scenario-paper", "run bundled scenario a or b");
    preset->add_option("which", which)->required()->check(CLI::IsMember({"a", "b"}));
    preset->add_option("--out", out, "output directory")->default_val("out");
    preset->add_option("--network", network, "override the bundled network");
    preset->add_option("--scenario", scenario, "override the bundled scenario");
    add_overrides(preset, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help exits 0; every other parse problem is a usage error
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*validate) {
            const NetworkGraph g = load_network(network);
            const ValidationReport rep = validate_network(g);
            std::cout << rep.str();
            if (!rep.ok()) return kInvalid;
            const auto chords = independent_flow_edges(g);
            std::cout << "nodes " << g.nodes.size() << ", edges " << g.edges.size() << ", layers "
                      << rep.layer_count << ", chords " << chords.size() << "\nvalid\n";
            return kOk;
        }
        if (*equilibrium) {
            NetworkGraph g = load_network(network);
            Scenario sc;
            if (!scenario.empty()) sc = load_scenario(scenario);
            sc.t_end = 0.0;
            apply(sc, ov);
            sc.check(g);
            EquilibriumSolution sol;
            StateMap m;
            try {
                m = initial_equilibrium(g, sc, &sol);
            } catch (const std::invalid_argument& ex) {
                std::cerr << "invalid network: " << ex.what() << "\n";
                return kInvalid;
            }
            for (const auto& w : sol.warnings) std::cerr << "warning: " << w << "\n";
            if (!sol.feasible) {
                std::cerr << "infeasible setpoints:\n";
                for (const auto& v : sol.violations) std::cerr << "  " << v << "\n";
                if (!sol.converged) std::cerr << "  residual " << sol.residual << "\n";
                return kInfeasible;
            }
            if (out.empty()) std::cout << state_to_json(m);
            else write_state(out, m);
            return kOk;
        }
        if (*certify) {
            (void)load_network(network);
            const TrajectoryRecord rec = parse_csv(read_text(trajectory), trajectory);
            const CertificateReport rep = eip_certificate(trajectory_from_csv(rec));
            if (out.empty()) std::cout << rep.json() << "\n";
            else write_text(out, rep.json() + "\n");
            std::cerr << (rep.passed() ? "certificate passed" : "certificate FAILED") << " ("
                      << rep.failures << " failing intervals)\n";
            return rep.passed() ? kOk : kNumeric;
        }
        const bool is_preset = static_cast<bool>(*preset);
        if (is_preset) {
            const fs::path data = DHN_DATA_DIR;
            if (network.empty()) network = (data / "reference_network.json").string();
            if (scenario.empty()) scenario = (data / ("scenario_" + which + ".json")).string();
        }
        const NetworkGraph g = load_network(network);
        Scenario sc = load_scenario(scenario);
        apply(sc, ov);
        try {
            sc.check(g);
        } catch (const std::invalid_argument& ex) {
            std::cerr << "invalid scenario: " << ex.what() << "\n";
            return kInvalid;
        }
        const ValidationReport rep = validate_network(g);
        if (!rep.ok()) {
            std::cerr << rep.str();
            return kInvalid;
        }
        const RunResult r = run(g, sc);
        write_run(out, r, sc, is_preset);
        const auto& s = r.summary;
        std::cerr << sc.name << ": " << s.steps << " steps in " << s.runtime_s << " s, certificate "
                  << (s.certificate.passed() ? "passed" : "FAILED") << ", lyapunov violations "
                  << s.lyapunov_violations << ", final error " << s.final_error << "\n";
        return kOk;
    } catch (const InputError& ex) {
        std::cerr << "input error: " << ex.what() << "\n";
        return kInvalid;
    } catch (const TopologyError& ex) {
        std::cerr << "topology error: " << ex.what() << "\n";
        return kInvalid;
    } catch (const InfeasibleError& ex) {
        std::cerr << "infeasible: " << ex.what() << "\n";
        return kInfeasible;
    } catch (const NumericAbort& ex) {
        std::cerr << "numeric abort at t=" << ex.time << ": " << ex.what() << "\n";
        if (!out.empty()) {
            fs::create_directories(out);
            write_state((fs::path(out) / "last_good_state.json").string(), ex.last_good, ex.time);
        }
        return kNumeric;
    } catch (const std::invalid_argument& ex) {
        std::cerr << "invalid: " << ex.what() << "\n";
        return kInvalid;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kNumeric;
    }
}
