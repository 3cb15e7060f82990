#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "common.hpp"
#include "dhn/runner.hpp"

using namespace dhn;

namespace {

double parse(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    EXPECT_TRUE(ec == std::errc{} && p == s.data() + s.size()) << s;
    return v;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const InputError& ex) {
        return ex.what();
    }
    return "";
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("dhn_io_" + name)).string();
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::uint64_t> bits;
    for (int k = 0; k < 20000; ++k) {
        double v;
        const std::uint64_t b = bits(rng);
        std::memcpy(&v, &b, sizeof v);
        if (!std::isfinite(v)) continue;
        EXPECT_EQ(parse(format_double(v)), v) << format_double(v);
    }
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(-2e-3), "-0.002");
    EXPECT_EQ(parse(format_double(std::numeric_limits<double>::denorm_min())),
              std::numeric_limits<double>::denorm_min());
}

TEST(StateFile, RoundTripIsBitIdentical) {
    const NetworkGraph g = test::bundled("reference_network.json");
    const Assembly a = assemble(g);
    const auto sol = solve_equilibrium(g, a);
    StateMap m;
    for (const Slot& s : a.layout.slots) m[s.key] = sol.x.segment(s.offset, s.size);
    m[{true, 1}](0) = 1.0 / 3.0;  // no short decimal form
    const std::string path = temp_path("state.json");
    write_state(path, m, 12.5);
    const StateMap back = read_state(path);
    ASSERT_EQ(back.size(), m.size());
    for (const auto& [k, v] : m) {
        ASSERT_TRUE(back.count(k)) << k.str();
        ASSERT_EQ(back.at(k).size(), v.size());
        for (int i = 0; i < v.size(); ++i) EXPECT_EQ(back.at(k)(i), v(i)) << k.str();
    }
    EXPECT_EQ(state_to_json(back, 12.5), state_to_json(m, 12.5));
    std::filesystem::remove(path);
}

TEST(StateFile, MalformedKeysRejected) {
    EXPECT_FALSE(error_of([] { state_from_json(R"({"subsystems": {"x3": [1]}})"); }).empty() &&
                 error_of([] { state_from_json(R"({"subsystems": {"e3": "one"}})"); }).empty());
    EXPECT_THROW(parse_key("q7"), std::invalid_argument);
    EXPECT_EQ(parse_key("n12"), (SubsystemKey{false, 12}));
    EXPECT_EQ(parse_key("e3").str(), "e3");
}

TEST(InputErrors, SyntaxErrorNamesLineAndColumn) {
    const std::string text = "{\n  \"nodes\": [\n    {\"id\": 1,, }\n  ]\n}\n";
    const std::string msg = error_of([&] { parse_network(text, "net.json"); });
    EXPECT_NE(msg.find("net.json:3:"), std::string::npos) << msg;
}

TEST(InputErrors, SchemaErrorNamesJsonPointer) {
    NetworkGraph g;
    std::string text = read_text(test::data_path("minimal_loop.json"));
    // capacitance of the second node made negative
    const auto pos = text.find("5e-10", text.find("\"id\": 2"));
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 5, "-5e-10");
    std::string msg = error_of([&] { parse_network(text, "loop.json"); });
    EXPECT_NE(msg.find("loop.json: /nodes/1/capacitance"), std::string::npos) << msg;

    msg = error_of([] { parse_network(R"({"nodes": [], "edges": [{"id": 1, "kind": "pipe", "sorce": 1}]})", "x"); });
    EXPECT_NE(msg.find("/edges/0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("sorce"), std::string::npos) << msg;

    msg = error_of([] { parse_network(R"({"nodes": [{"id": 1, "kind": "tank"}], "edges": []})", "x"); });
    EXPECT_NE(msg.find("/nodes/0/kind"), std::string::npos) << msg;
}

TEST(InputErrors, ScenarioChecks) {
    EXPECT_FALSE(error_of([] { parse_scenario(R"({"t_end": -1})"); }).empty());
    const std::string msg = error_of([] {
        parse_scenario(R"({"t_end": 5, "events": [{"time": 2, "action": "step", "target": "e1",
                            "field": "flow", "value": 1}, {"time": 1, "action": "disconnect", "target": "e1"}]})");
    });
    EXPECT_NE(msg.find("/events/1/time"), std::string::npos) << msg;
    EXPECT_FALSE(error_of([] { parse_scenario(R"({"t_end": 5, "events": [{"time": 0, "action": "explode"}]})"); }).empty());
}

TEST(Scenario, BundledScenariosParse) {
    const Scenario a = load_scenario(test::data_path("scenario_a.json"));
    EXPECT_EQ(a.t_end, 50.0);
    EXPECT_EQ(a.dt, 1e-3);
    EXPECT_EQ(a.integrator, Integrator::Rk45);
    ASSERT_EQ(a.initially_disconnected.size(), 1u);
    EXPECT_EQ(a.initially_disconnected[0], (SubsystemKey{true, 3}));
    std::vector<double> times;
    for (const auto& e : a.events) times.push_back(e.time);
    EXPECT_TRUE(std::is_sorted(times.begin(), times.end()));
    EXPECT_EQ(times.front(), 5.0);
    EXPECT_NO_THROW(a.check(test::bundled("reference_network.json")));

    const Scenario b = load_scenario(test::data_path("scenario_b.json"));
    bool perturb = false, saturation = false;
    for (const auto& e : b.events) {
        perturb |= e.action.type == Action::Type::PerturbParams && e.action.magnitude == 0.1;
        saturation |= e.action.type == Action::Type::Saturation && e.action.enabled;
    }
    EXPECT_TRUE(perturb);
    EXPECT_TRUE(saturation);
}

TEST(Network, UnknownFieldsAndDuplicatesRejected) {
    const std::string dup = R"({"nodes": [{"id": 1, "kind": "junction"}, {"id": 1, "kind": "junction"}], "edges": []})";
    EXPECT_NE(error_of([&] { parse_network(dup, "d"); }).find("duplicate node id"), std::string::npos);
    EXPECT_THROW(load_network("/nonexistent/net.json"), InputError);
}

TEST(Csv, RoundTrip) {
    TrajectoryRecord r;
    r.channels = {"time_s", "e1.q[m3/s]", "n4.p[Pa]"};
    r.rows = {{0.0, 1.0 / 3.0, 2e5}, {0.01, -1e-300, 2.0000000000000004e5}};
    const std::string text = r.csv();
    EXPECT_EQ(text.substr(0, text.find('\n')), "time_s,e1.q[m3/s],n4.p[Pa]");
    const TrajectoryRecord back = parse_csv(text);
    EXPECT_EQ(back.channels, r.channels);
    EXPECT_EQ(back.rows, r.rows);
    EXPECT_EQ(back.column("n4.p[Pa]"), 2);
    EXPECT_EQ(back.column("nope"), -1);
    EXPECT_THROW(parse_csv("time_s,a\n1,2,3\n"), InputError);
}
