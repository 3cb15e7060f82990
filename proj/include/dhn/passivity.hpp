#pragma once
// Storage functions, dissipation, equilibria and energy audits.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dhn/simulation.hpp"

namespace dhn {

/// H = 1/2 (T (xi - xi_bar))' Q (T (xi - xi_bar)) over the natural local state
/// xi, with T mapping to energy coordinates.
struct StorageSpec {
    SubsystemKey key;
    LoopKind loop = LoopKind::Pipe;
    Eigen::VectorXd x_bar;
    double d_bar = 0.0;
    double z_bar = 0.0;
    Eigen::MatrixXd T;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd W;  // T' Q T

    /// Smallest eigenvalue of Q.
    double min_eigenvalue() const;
};

StorageSpec make_storage(const Edge& e, const Eigen::VectorXd& x_bar, double d_bar);
StorageSpec make_storage(const Node& n, const Eigen::VectorXd& x_bar, double d_bar);

double storage_value(const StorageSpec& s, const double* x);
/// Gradient of H with respect to the natural local state.
Eigen::VectorXd storage_gradient(const StorageSpec& s, const double* x);

/// Nonnegative dissipation psi at local state x. Throws std::invalid_argument
/// on a mode mismatch.
double dissipation(const StorageSpec& s, const Edge& e, const double* x);
double dissipation(const StorageSpec& s, const Node& n, const double* x);

/// Storage specs for every active subsystem, in layout order.
std::vector<StorageSpec> make_storages(const Assembly& a, const Eigen::VectorXd& x_bar,
                                       const Ports& ports_bar);

// ---------------------------------------------------------------------------

/// Raised when no feasible equilibrium exists for the configured setpoints.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EquilibriumOptions {
    int max_iterations = 60;
    double tolerance = 1e-10;  // scaled vector-field residual [1/s]
    bool polish = true;
};

struct EquilibriumSolution {
    Eigen::VectorXd x;           // layout order
    Eigen::VectorXd z_junction;
    Ports ports;
    double residual = 0.0;       // max scaled |f(x)|
    int iterations = 0;
    bool converged = false;
    bool feasible = false;
    std::vector<std::string> violations;
    std::vector<std::string> warnings;
    /// node id -> pressure (delta and junction nodes)
    std::map<int, double> node_pressure;
    /// edge id -> valve input u_v where controlled
    std::map<int, double> valve_input;
};

/// Typical magnitude of each state entry, used for scaling.
Eigen::VectorXd state_scale(const Assembly& a, const Eigen::VectorXd& x);
/// max_j |f_j| / scale_j over a unit time scale
double scaled_residual(const Assembly& a, const Eigen::VectorXd& x);

/// Pressure-based hydraulic solve, analytic reconstruction of all internal
/// states, then damped Newton polishing on [f(x); B_KE q] with a central
/// finite-difference Jacobian. Warm start from `guess_pressures` if given.
/// Throws InfeasibleError if the hydraulic solve does not converge.
EquilibriumSolution solve_equilibrium(const NetworkGraph& g, const Assembly& a,
                                      const EquilibriumOptions& opt = {},
                                      const std::map<int, double>* guess_pressures = nullptr);

/// Damped Newton on [f(x); B_KE q] from an arbitrary state (finite-difference
/// Jacobian, least-squares step). Returns iterations used; throws on failure.
int newton_polish(const Assembly& a, Eigen::VectorXd& x, const EquilibriumOptions& opt);

// ---------------------------------------------------------------------------

/// Sum z d over all ports and its scale. The shifted variant sums
/// (z - z_bar)(d - d_bar); its scale is sum (|z| + |z_bar|)(|d| + |d_bar|),
/// the magnitude the cancellation is computed at (a pure deviation scale
/// vanishes at the equilibrium while rounding does not).
struct PowerBalance {
    double residual;
    double scale;
    double shifted_residual;
    double shifted_scale;
};

PowerBalance power_balance(const Ports& ports, const Ports* ports_bar = nullptr);

/// Supply (z - z_bar)(d - d_bar) per subsystem in layout order.
Eigen::VectorXd supply_rates(const Assembly& a, const Ports& ports,
                             const std::vector<StorageSpec>& specs);

struct CertificateEntry {
    SubsystemKey key;
    double worst_margin = 0.0;  // min over intervals of (supply + eps - dH)
    double worst_time = 0.0;    // start of that interval
    int failures = 0;
    int intervals = 0;
};

struct CertificateReport {
    std::vector<CertificateEntry> entries;
    int failures = 0;
    int intervals_skipped = 0;

    bool passed() const { return failures == 0; }
    std::string json() const;
};

/// Sampled-port trajectory for the interval certificate.
struct PortTrajectory {
    std::vector<double> t;
    std::vector<SubsystemKey> keys;
    /// rows per sample, one value per key
    std::vector<std::vector<double>> H, supply;
    /// optional accumulated supply integral; trapezoid of `supply` otherwise
    std::vector<std::vector<double>> supply_integral;
    /// reference epoch per sample; intervals across epochs are skipped
    std::vector<int> epoch;
};

/// Checks dH <= int supply + eps, eps = 1e-9 max(1, |H|), per interval.
CertificateReport eip_certificate(const PortTrajectory& tr);

}  // namespace dhn
