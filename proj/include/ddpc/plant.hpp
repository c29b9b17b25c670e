#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "ddpc/behavior.hpp"
#include "ddpc/qdf.hpp"

namespace ddpc::plant {

/// Rational transfer entry num(z)/den(z), coefficients in descending powers.
struct Rational {
    Eigen::VectorXd num;
    Eigen::VectorXd den;
};

/// rows x cols transfer matrix, entries row-major. Proper or strictly proper.
struct TransferMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<Rational> entries;

    const Rational& entry(int r, int c) const { return entries.at(r * cols + c); }
    void validate() const;
};

struct StateSpace {
    Eigen::MatrixXd A, B, C, D;

    int n() const { return static_cast<int>(A.rows()); }
    int inputs() const { return static_cast<int>(B.cols()); }
    int outputs() const { return static_cast<int>(C.rows()); }
};

/// Per-entry controllable canonical realization, parallel-composed;
/// feedthrough from polynomial division when an entry is proper.
StateSpace realize(const TransferMatrix& tm);

/// Power-series coefficients of num/den in 1/z (long-division oracle).
std::vector<double> impulse_response(const Rational& r, int steps);

/// Impulse response of one input/output pair of a realization.
std::vector<double> impulse_response(const StateSpace& ss, int input, int output, int steps);

/// One sharing equation "lhs = rhs" where rhs is a concatenation of component
/// references with optional 1-based row selections, e.g. "up3 = col(y2, y4)"
/// or "yr1 = ul1[3:4]".
struct SharingTerm {
    std::string component;
    int row_lo = 0;  // 1-based inclusive; 0 means the full component
    int row_hi = 0;
};

struct SharingEquation {
    std::string lhs;
    std::vector<SharingTerm> rhs;
    std::string text;  // original source line, for diagnostics
};

SharingEquation parse_equation(const std::string& text);

struct NetworkSpec {
    std::vector<SharingEquation> plant;             // within w_p
    std::vector<SharingEquation> plant_controller;  // across w_p and w_c
    std::vector<SharingEquation> controller;        // within w_c
};

/// Coefficient matrices compiled from the sharing equations. All are constant
/// (lag-0) representations; kernels encode exactly the declared equations.
struct CompiledNetworks {
    behavior::InterconnectionRep plant;       // Pi_p, over w_p
    Eigen::MatrixXd pc_plant;                 // Pi_ip, over w_p
    Eigen::MatrixXd pc_controller;            // Pi_ic, over w_c
    behavior::InterconnectionRep controller;  // Pi_c, over w_c
};

CompiledNetworks compile_network(const NetworkSpec& spec,
                                 const behavior::VariableLayout& plant_layout,
                                 const behavior::VariableLayout& controller_layout);

/// Rows of a controller-layout component that mirror an exogenous plant
/// variable whose current-step value is unknown during optimization.
struct PredictedRowSpec {
    std::string component;
    int row_lo = 1;  // 1-based inclusive within the component
    int row_hi = 1;
};

struct DataConfig {
    int T = 400;
    int warmup = 20;
    std::uint64_t seed = 1;
};

/// A complete experiment description: subsystem models (data generation only),
/// layouts, sharing equations, supply specification and design constants.
struct Scenario {
    std::string name;
    std::vector<TransferMatrix> subsystems;
    behavior::VariableLayout plant_layout;
    behavior::VariableLayout controller_layout;
    NetworkSpec network;
    qdf::SupplyRateSpec supply;
    int L_minus = 4;
    int L_plus = 0;
    std::vector<int> lag_bounds;    // declared per-subsystem upper bounds
    std::vector<int> state_bounds;  // declared per-subsystem upper bounds
    int network_lag = 0;
    int network_state_bound = 0;
    std::vector<PredictedRowSpec> predicted;
    DataConfig data;

    void validate() const;
    int excitation_order() const;  // L + sum(state_bounds) + network bound
    int max_lag_bound() const;
};

/// The running four-subsystem disturbance-attenuation example with three
/// distributed controllers.
Scenario build_paper_example();

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);

/// Deterministic uniform [-1, 1] source used for every excitation signal.
class UniformSource {
public:
    explicit UniformSource(std::uint64_t seed);
    double next();

private:
    std::uint64_t state_;
};

/// Steps the interconnected plant: per-subsystem state spaces coupled by the
/// plant sharing equations, free components supplied externally per step.
class NetworkSimulator {
public:
    NetworkSimulator(const Scenario& scenario);

    /// Free components (manipulated + exogenous rows in layout order) -> w_p(k).
    Eigen::VectorXd step(const Eigen::VectorXd& free_values);
    void reset();

    int free_dim() const { return static_cast<int>(free_rows_.size()); }
    const std::vector<int>& free_rows() const { return free_rows_; }

private:
    behavior::VariableLayout layout_;
    std::vector<StateSpace> subsystems_;
    std::vector<Eigen::VectorXd> states_;
    Eigen::MatrixXd coupling_from_outputs_;  // stacked coupling rows from stacked outputs
    Eigen::MatrixXd loop_;                   // I - D_coupling * S, factorized per step
    Eigen::PartialPivLU<Eigen::MatrixXd> loop_lu_;
    std::vector<int> free_rows_;
    std::vector<int> coupling_rows_;
    std::vector<int> output_rows_;
    // per-subsystem input assembly: global w_p row for each state-space input
    std::vector<std::vector<int>> input_rows_;
};

/// Full w_p record under interconnection driven by the given free-component
/// trajectory (columns = steps).
behavior::Trajectory simulate_network(const Scenario& scenario,
                                      const Eigen::MatrixXd& free_values);

struct Dataset {
    std::vector<behavior::TrajectorySet> subsystems;  // sliced per-subsystem records
    behavior::Trajectory full;                        // complete w_p record
    std::uint64_t seed = 0;
    int T = 0;
    int pe_order = 0;
    bool pe_ok = false;
    std::vector<ExcitationError::Item> pe_deficient;
};

/// Excites every free component with seeded uniform noise, records all local
/// variables under interconnection, and reports the excitation check against
/// the declared order bound.
Dataset generate_dataset(const Scenario& scenario, int T, std::uint64_t seed);

void write_dataset(const Dataset& d, const Scenario& scenario, const std::string& dir);
Dataset read_dataset(const Scenario& scenario, const std::string& dir);

}  // namespace ddpc::plant
