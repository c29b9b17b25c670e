#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ddpc/behavior.hpp"
#include "ddpc/errors.hpp"

namespace ddpc::controller {

/// Local step produced a locally infeasible problem (violates the
/// recursive-feasibility expectation from the offline design).
class LocalStepError : public Error {
public:
    using Error::Error;
};

class QcqpInfeasibleError : public Error {
public:
    using Error::Error;
};

struct QcqpOptions {
    double feas_tol = 1e-10;   // accepted constraint slack, relative to the constraint scale
    int bisect_iters = 200;
};

/// Global minimizer of  min 1/2 x^T H x + g^T x  s.t.  x^T A x + 2 b^T x + c >= 0
/// via the dual secular equation (exact by the S-procedure; A may be indefinite).
/// H must be PSD; the active case additionally needs H positive definite.
Eigen::VectorXd qcqp_solve(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                           const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double c,
                           const QcqpOptions& opts = {});

/// Static data of one distributed controller.
struct LocalControllerSetup {
    int id = 0;
    int dim = 0;                        // w_c^j
    Eigen::MatrixXd basis;              // F_c^j over the online window
    Eigen::MatrixXd condition;          // Phi_c^j, ((L^- + 1) * dim) square
    Eigen::MatrixXd cost_weight;        // per-step quadratic stage cost on w_c^j
    std::vector<int> manipulated_rows;  // step-local rows implemented at k
    std::vector<int> predicted_rows;    // step-local rows pinned to a constant hold
};

/// Per-controller run-time state: the measured history over the last L^- steps.
struct ControllerState {
    LocalControllerSetup setup;
    Eigen::MatrixXd history;  // dim x L_minus, oldest column first

    void push(const Eigen::VectorXd& measurement);
};

/// Constant-hold prediction for the unmeasured exogenous rows: one value per
/// predicted row per future step (steps k .. k + L^+), all equal to the last
/// measured value.
Eigen::VectorXd predict_shared(const ControllerState& s, int future);

struct AdmmConfig {
    double rho = 1.0;
    int max_iter = 500;
    double primal_tol = 1e-6;
    double dual_tol = 1e-6;
    bool adapt_rho = true;  // residual balancing, factor 2, bounded below/above
    double rho_min = 1e-3;
    double rho_max = 1e3;
};

/// Coupling data shared by all controllers: C w = 0 over the global window
/// vector plus the pinned past/predicted entries.
struct ConsensusProblem {
    Eigen::MatrixXd coupling;  // C
    behavior::VariableLayout layout;
    int window = 0;
    int past = 0;
    AdmmConfig config;
};

struct AdmmContext {
    Eigen::VectorXd target;  // E_j v - u_j
    double rho = 1.0;
};

struct LocalStepResult {
    Eigen::VectorXd window_values;  // candidate w_bar^j over the full window
    double constraint_value = 0.0;  // local QdF form at the candidate
};

/// Augmented local problem: stage cost + ADMM penalty subject to basis
/// membership with the past (and predicted rows) pinned, and the local QdF
/// constraint on [k - L^-, k]. Reduces to qcqp_solve in the basis coordinates.
LocalStepResult local_step(const ControllerState& s, const Eigen::VectorXd& predicted,
                           const AdmmContext& admm, int window, int past);

struct HorizonResult {
    Eigen::VectorXd agreed;                       // global window vector
    std::vector<Eigen::VectorXd> implemented;     // w_m^j(k) per controller
    double cost = 0.0;
    double consensus_residual = 0.0;
    double dual_residual = 0.0;
    std::vector<double> local_margins;  // local QdF values on the agreed windows
    int iterations = 0;
    bool converged = true;
};

/// Plant-side interface: applies the implemented values for step k, advances
/// one step and returns the measured single-step controller variable w_c(k).
class PlantInterface {
public:
    virtual ~PlantInterface() = default;
    virtual Eigen::VectorXd advance(const std::vector<Eigen::VectorXd>& implemented) = 0;
};

/// The online receding-horizon loop: local QCQP steps coordinated by ADMM on
/// the consensus constraint, then implement-and-shift.
class ControllerNetwork {
public:
    ControllerNetwork(std::vector<LocalControllerSetup> setups, ConsensusProblem consensus);

    /// History initialization; one column per step, oldest first.
    void warm_start(const Eigen::MatrixXd& global_history);

    /// One ADMM exchange to agreement; does not touch the plant.
    HorizonResult consensus_round();

    /// consensus_round + implement w_m^j(k) + measurement ingestion.
    HorizonResult step(PlantInterface& plant);

    const std::vector<ControllerState>& states() const { return states_; }
    int window() const { return consensus_.window; }

private:
    Eigen::VectorXd project_consensus(const Eigen::VectorXd& point,
                                      const Eigen::VectorXd& pinned_values) const;
    Eigen::VectorXd pinned_vector() const;
    Eigen::VectorXd initial_point() const;

    std::vector<LocalControllerSetup> setups_;
    std::vector<ControllerState> states_;
    ConsensusProblem consensus_;
    // global-window row indices per controller and pinned rows
    std::vector<std::vector<int>> rows_per_controller_;
    std::vector<int> pinned_rows_;
    Eigen::MatrixXd constraint_stack_;       // [C; pinned-row selector]
    Eigen::MatrixXd constraint_stack_pinv_;
    bool warmed_ = false;
};

}  // namespace ddpc::controller
