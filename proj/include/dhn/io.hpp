#pragma once
// File formats: network and scenario descriptions (JSON), state files,
// trajectory CSV.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dhn/network.hpp"
#include "dhn/simulation.hpp"

namespace dhn {

/// Malformed input. The message names the file and either line:column for
/// syntax errors or a JSON pointer for schema errors.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

NetworkGraph parse_network(const std::string& text, const std::string& origin = "<network>");
NetworkGraph load_network(const std::string& path);

Scenario parse_scenario(const std::string& text, const std::string& origin = "<scenario>");
Scenario load_scenario(const std::string& path);

/// "e12" / "n4"
SubsystemKey parse_key(const std::string& s);

/// Local states per subsystem.
using StateMap = std::map<SubsystemKey, Eigen::VectorXd>;

std::string state_to_json(const StateMap& states, double time = 0.0);
StateMap state_from_json(const std::string& text, const std::string& origin = "<state>");
void write_state(const std::string& path, const StateMap& states, double time = 0.0);
StateMap read_state(const std::string& path);

/// Shortest round-trip decimal representation, locale independent.
std::string format_double(double v);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace dhn
