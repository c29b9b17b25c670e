#pragma once

#include <string>
#include <vector>

#include "ddpc/controller.hpp"
#include "ddpc/plant.hpp"
#include "ddpc/synthesis.hpp"

namespace ddpc::plant {

/// Piecewise-constant exogenous profile: level changes at the listed steps.
struct DisturbanceProfile {
    struct Change {
        int at_step = 0;
        Eigen::VectorXd level;
    };
    std::vector<Change> changes;
    int dim = 1;

    Eigen::VectorXd level_at(int k) const;
    void validate() const;
};

/// The design window [k - L^-, k] basis plus the extended network matrices.
struct DesignArtifacts {
    synthesis::DesignProblem problem;
    CompiledNetworks networks;
};

/// Builds the interconnected plant basis from the dataset (verifying the
/// declared excitation order) and assembles the offline design problem.
DesignArtifacts build_design_problem(const Scenario& scenario, const Dataset& dataset);

/// Everything the online loop needs beside the plant itself.
struct OnlineSetup {
    std::vector<controller::LocalControllerSetup> controllers;
    controller::ConsensusProblem consensus;
    // single-step measurement map: w_c(k) = measure * col(pi_ip-rows of w_p(k))
    Eigen::MatrixXd measure_from_wp;
    // plant free-input assembly: per plant manipulated row, the (controller,
    // entry) position inside the implemented vectors
    struct ActuationEntry {
        int controller = 0;
        int entry = 0;
    };
    std::vector<ActuationEntry> actuation;  // one per plant manipulated row
    std::vector<int> plant_manipulated_rows;
    std::vector<int> plant_exogenous_rows;
};

OnlineSetup build_online_setup(const Scenario& scenario, const Dataset& dataset,
                               const synthesis::ControllerCertificate& certificate,
                               const controller::AdmmConfig& admm);

struct ChangeMetrics {
    int at_step = 0;
    double delta_d = 0.0;
    double attenuation_ratio = 0.0;
    int settle_steps = 0;
    bool settled = false;
};

struct ClosedLoopMetrics {
    std::vector<ChangeMetrics> changes;
    double max_other_output = 0.0;   // ||y||_inf over non-targeted outputs
    double max_disturbance = 0.0;    // ||d||_inf of the profile
    double max_consensus_residual = 0.0;
    double min_local_margin = 0.0;
    int infeasible_horizons = 0;
    int nonconverged_horizons = 0;
};

struct ClosedLoopResult {
    behavior::Trajectory plant_record;       // w_p over the run
    behavior::Trajectory controller_record;  // w_c over the run
    std::vector<controller::HorizonResult> horizons;
    ClosedLoopMetrics metrics;
};

/// Runs the receding-horizon loop against the simulated network for T steps.
/// The first L^- steps warm the histories open loop.
ClosedLoopResult closed_loop(const Scenario& scenario, const Dataset& dataset,
                             const synthesis::ControllerCertificate& certificate,
                             const DisturbanceProfile& profile, int steps,
                             const controller::AdmmConfig& admm);

/// Per-step log (k, w_c, w_p, cost, residuals, iterations) as CSV.
void write_step_log(const ClosedLoopResult& r, const std::string& path);

/// Tidy (step, variable, value) CSV for plotting: outputs and disturbances.
void write_plot_csv(const ClosedLoopResult& r, const behavior::VariableLayout& layout,
                    const std::string& path);

}  // namespace ddpc::plant
