#pragma once

#include <Eigen/Dense>
#include <string>
#include <variant>
#include <vector>

#include "ddpc/behavior.hpp"
#include "ddpc/conic.hpp"
#include "ddpc/qdf.hpp"

namespace ddpc::synthesis {

/// Offline design inputs: the interconnected plant basis on the design window
/// [k - L^-, k] (future must be 0), the extended network coefficient matrices
/// over that window, the per-controller variable partition and the desired
/// supply rate.
struct DesignProblem {
    behavior::BehaviorBasis plant;            // F_p, orthonormal columns recommended
    Eigen::MatrixXd pi_ip_ext;                // over the window, columns = window * w_p
    Eigen::MatrixXd pi_ic_ext;                // columns = window * w_c
    Eigen::MatrixXd pi_c_ext;                 // columns = window * w_c
    behavior::VariableLayout controller_layout;
    qdf::QdF supply;                          // Phi_d over w_p
    int lag_bound = 0;                        // max declared lag bound (plant + networks)

    void validate() const;
};

/// Everything derived from F_p and the network matrices for the LMI assembly.
struct DerivedBases {
    Eigen::MatrixXd controller;                   // F_c
    std::vector<Eigen::MatrixXd> controller_j;    // F_c^j (rows of F_c per controller)
    Eigen::MatrixXd controller_past;              // F_c-
    Eigen::MatrixXd manipulated_k;                // F_mk
    Eigen::MatrixXd implemented;                  // F_cc
    Eigen::MatrixXd plant_implemented;            // F_pc
    Eigen::MatrixXd blocked;                      // F_h
    std::vector<Eigen::MatrixXd> local_past_map;  // F_cm^j
    std::vector<Eigen::MatrixXd> local_free_map;  // F_cf^j
    Eigen::MatrixXd global_past_map;              // F_cm
    Eigen::MatrixXd global_free_map;              // F_cf
    Eigen::MatrixXd permutation;                  // P with col{w_c^j} = P w_c
    Eigen::MatrixXd anchor_projector;             // pinv([F_c-; F_mk]) [F_c-; F_mk]
    double span_residual = 0.0;  // colspan([F_pc F_h]) vs colspan(F_p) diagnostic
};

/// Raw regular-case construction: [pi_ic; pi_c]^-1 [pi_ip * plant_basis; 0].
/// Throws GeneralCaseError when the stack is not square invertible.
Eigen::MatrixXd controller_basis(const Eigen::MatrixXd& plant_basis,
                                 const Eigen::MatrixXd& pi_ip_ext,
                                 const Eigen::MatrixXd& pi_ic_ext,
                                 const Eigen::MatrixXd& pi_c_ext);

Eigen::MatrixXd build_controller_basis(const DesignProblem& p);

DerivedBases decompose(const DesignProblem& p, const Eigen::MatrixXd& controller_basis);

/// Current-step rows of the exogenous selection must have full row rank.
bool rank_condition(const behavior::BehaviorBasis& plant);

conic::LmiProblem assemble_lmis(const DesignProblem& p, const DerivedBases& d);

struct ControllerCertificate {
    int L_minus = 0;
    Eigen::MatrixXd storage;                     // Psi, PSD, (L^- * w_p) square
    std::vector<Eigen::MatrixXd> local_conditions;  // Phi_c^j, ((L^- + 1) * w_c^j) square
    std::vector<double> margins;                 // revalidated per constraint
    std::vector<std::string> constraint_names;
    std::string layout_hash;
};

struct SynthesisFailure {
    std::string reason;            // which condition family failed hardest
    conic::InfeasibilityReport report;
};

using SynthesisResult = std::variant<ControllerCertificate, SynthesisFailure>;

SynthesisResult synthesize(const DesignProblem& p, const conic::SolverConfig& cfg = {});

/// Re-evaluates the three LMI families at a certificate; margins in condition order.
std::vector<double> revalidate(const DesignProblem& p, const DerivedBases& d,
                               const ControllerCertificate& cert);

std::string certificate_to_json(const ControllerCertificate& c);
ControllerCertificate certificate_from_json(const std::string& text);

std::uint64_t fnv1a(const std::string& text);

}  // namespace ddpc::synthesis
