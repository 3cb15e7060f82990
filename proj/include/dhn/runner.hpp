#pragma once
// Scenario execution: event loop, time stepping, in-run energy audits and
// trajectory recording.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhn/io.hpp"
#include "dhn/passivity.hpp"

namespace dhn {

/// Non-finite state or a failed reference solve during a run.
class NumericAbort : public std::runtime_error {
public:
    NumericAbort(const std::string& what, double t, StateMap last_good)
        : std::runtime_error(what), time(t), last_good(std::move(last_good)) {}
    double time;
    StateMap last_good;
};

/// An event would leave the network invalid (e.g. removes the last
/// grid-forming DGU).
class TopologyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunOptions {
    bool audit = true;             // per-step EIP and Lyapunov checks
    bool diagnostics = true;       // H, psi and supply channels in the record
    double manifold_tol = 1e-12;   // re-project when residual > 10x this
    EquilibriumOptions equilibrium;
    /// Replaces the default initial state for the listed subsystems.
    StateMap initial_state;
};

/// Column-oriented samples; channels[0] is "time_s".
struct TrajectoryRecord {
    std::vector<std::string> channels;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;  // -1 if absent
    std::vector<double> series(const std::string& name) const;
    std::string csv() const;
};

TrajectoryRecord parse_csv(const std::string& text, const std::string& origin = "<csv>");

struct SegmentAudit {
    double t0 = 0.0, t1 = 0.0;
    double v_start = 0.0, v_end = 0.0;
    long steps = 0;
    long lyapunov_violations = 0;
    double worst_increase = 0.0;   // max (V_{n+1} - V_n - rounding allowance) / V_n
    bool endpoint_checked = false;
    double endpoint_error = 0.0;   // scaled inf-norm against the segment equilibrium
};

struct RunSummary {
    double runtime_s = 0.0;
    long steps = 0;
    long evaluations = 0;
    long reference_solves = 0;
    double max_power_residual = 0.0;          // |sum z d| / sum |z d|
    double max_shifted_power_residual = 0.0;
    double max_manifold_residual = 0.0;
    long projections = 0;
    CertificateReport certificate;            // per step, per subsystem
    std::vector<SegmentAudit> segments;
    long lyapunov_violations = 0;
    long saturation_steps = 0;                // steps with any valve clamped
    std::map<int, long> saturation_by_edge;
    std::vector<std::string> event_log;
    std::vector<std::string> warnings;
    double final_error = 0.0;                 // scaled inf-norm against the final equilibrium
    std::map<std::string, double> final_tracking_error;  // channel -> relative error

    std::string json() const;
};

struct RunResult {
    TrajectoryRecord record;
    RunSummary summary;
    StateMap final_state;
    NetworkGraph final_graph;
};

/// Throws std::invalid_argument for invalid scenarios, TopologyError,
/// InfeasibleError (initial reference) or NumericAbort.
RunResult run(const NetworkGraph& g, const Scenario& sc, const RunOptions& opt = {});

/// Initial equilibrium of the t = 0 configuration (after t = 0 events).
StateMap initial_equilibrium(const NetworkGraph& g, const Scenario& sc,
                             EquilibriumSolution* sol = nullptr);

/// Settling and deviation metrics of controlled channels around events,
/// computed from a record with setpoint channels.
struct TrackingWindow {
    double t_event = 0.0;
    double t_next = 0.0;
    double max_pressure_dev = 0.0;        // relative, over the window
    std::string worst_pressure_channel;
    double pressure_settle_time = 0.0;    // last exit from the 0.4 % band, after the event
    double flow_settle_time = 0.0;        // last exit from the 3 % band
    std::string slowest_flow_channel;
    double max_ramp_error = 0.0;          // relative, during ramps in the window
    std::string worst_ramp_channel;
};

struct TrackingReport {
    std::vector<TrackingWindow> windows;
    std::string json() const;
};

TrackingReport analyze_tracking(const TrajectoryRecord& rec, const Scenario& sc,
                                double pressure_band = 0.004, double flow_band = 0.03);

}  // namespace dhn
