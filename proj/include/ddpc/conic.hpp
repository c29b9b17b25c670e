#pragma once

#include <Eigen/Dense>
#include <string>
#include <variant>
#include <vector>

#include "ddpc/errors.hpp"

namespace ddpc::conic {

/// One congruence term of an affine constraint map: sign * factor * X_v * factor^T.
struct ConstraintTerm {
    int variable = 0;
    Eigen::MatrixXd factor;  // constraint_dim x variable_dim
    double sign = 1.0;
};

/// Affine-in-the-unknowns matrix constraint required PSD (with margin):
/// constant + sum of terms >= margin * I.
struct Constraint {
    std::string name;
    Eigen::MatrixXd constant;  // symmetric
    std::vector<ConstraintTerm> terms;

    int dim() const { return static_cast<int>(constant.rows()); }
};

struct VariableSpec {
    std::string name;
    int dim = 0;  // symmetric dim x dim unknown
};

struct LmiProblem {
    std::vector<VariableSpec> variables;
    std::vector<Constraint> constraints;
    double margin = 1e-6;  // every constraint must reach >= margin * I

    void validate() const;
};

struct SolverConfig {
    int max_iter = 2000;
    double tol = 1e-7;             // accepted slack below the margin
    double over_relaxation = 1.0;  // 1 = Dykstra-corrected alternating projections
    int refine_steps = 2;          // iterative-refinement passes on the affine solve
    // The cone projections aim margin + slack_buffer so the Dykstra limit sits
    // strictly inside the acceptance region; dropped halfway through the
    // budget when the problem is only barely feasible.
    double slack_buffer = 1e-4;
    bool verbose = false;
};

struct FeasibilityCertificate {
    std::vector<Eigen::MatrixXd> assignments;  // one symmetric matrix per variable
    std::vector<double> achieved_margins;      // smallest eigenvalue per constraint
    int iterations = 0;
    bool converged = true;
};

struct InfeasibilityReport {
    double max_violation = 0.0;            // best-found max over constraints of (margin - psd_margin)
    std::vector<double> margins;           // margins at the best iterate
    std::vector<Eigen::MatrixXd> best_assignments;
    std::vector<double> violation_trace;   // per-iteration max violation
    int iterations = 0;
    bool converged = false;  // false: iteration budget exhausted (empirical verdict only)
};

using SolveResult = std::variant<FeasibilityCertificate, InfeasibilityReport>;

/// Finds an assignment with every constraint PSD up to the problem margin, by
/// alternating projections between the affine image of the constraint maps and
/// the shifted PSD cone. Deterministic for fixed inputs and configuration.
/// Infeasibility is reported empirically: non-convergence within max_iter.
SolveResult solve_feasibility(const LmiProblem& p, const SolverConfig& cfg = {});

/// Evaluates every constraint at the given assignment.
std::vector<Eigen::MatrixXd> evaluate_constraints(const LmiProblem& p,
                                                  const std::vector<Eigen::MatrixXd>& assignments);

/// Nearest PSD matrix in Frobenius norm (eigenvalue clipping at zero).
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& s);

/// Debug dump/load of a problem (variables and constraint coefficients).
std::string problem_to_json(const LmiProblem& p);
LmiProblem problem_from_json(const std::string& text);

}  // namespace ddpc::conic
