#pragma once
// Per-subsystem closed loops: plant plus local controller, stacked in natural
// variables. Local state layouts:
//
//   Pipe               [q]
//   PressurePump       [q, q_P, p_P, r]          booster pipes, grid-forming DGUs
//   PressurePumpValve  [q, q_P, p_P, r, r_v]     valve DGUs, boosted consumers
//   FlowPump           [q, q_P, p_P, r]          variable-speed pump units
//   Valve              [q, r_v]                  valve consumers, mixing
//   Holding            [q_P, p, r]
//   Capacitive         [p]

#include <stdexcept>

#include "dhn/network.hpp"

namespace dhn {

enum class LoopKind { Pipe, PressurePump, PressurePumpValve, FlowPump, Valve, Holding, Capacitive };

const char* to_string(LoopKind k);
int loop_size(LoopKind k);
/// Index of the interaction output z inside the local state.
int output_index(LoopKind k);

/// Throws std::invalid_argument for unsupported kind/mode combinations.
LoopKind loop_kind(const Edge& e);
LoopKind loop_kind(const Node& n);

/// Fixed valve input of units running fully open.
inline constexpr double kOpenValveInput = 1.0;

struct LoopSignals {
    double u_P = 0.0;
    double u_v = 0.0;
    double y_hat = 0.0;
    bool clamped = false;
};

/// Writes the natural-variable derivative of the local state. d is the
/// pressure difference p_source - p_target.
void closed_loop_rhs(const Edge& e, const double* x, double d, double* dx,
                     LoopSignals* sig = nullptr);
/// d is the net volume inflow into the node.
void closed_loop_rhs(const Node& n, const double* x, double d, double* dx,
                     LoopSignals* sig = nullptr);

/// Valve input currently applied by the edge (fixed or controlled).
double applied_valve_input(const Edge& e, const double* x);

}  // namespace dhn
