#include "ddpc/synthesis.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ddpc/matlib.hpp"

namespace ddpc::synthesis {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void DesignProblem::validate() const {
    plant.validate();
    controller_layout.validate();
    supply.validate();
    if (plant.future != 0) {
        throw InvalidInputError("DesignProblem: plant basis must cover [k - L^-, k] (future = 0)");
    }
    const int window = plant.window_len;
    const int wp = plant.step_dim();
    const int wc = controller_layout.total_dim();
    if (supply.dim != wp) {
        throw InvalidInputError("DesignProblem: supply dimension does not match the plant");
    }
    if (pi_ip_ext.cols() != static_cast<Eigen::Index>(window) * wp) {
        throw InvalidInputError("DesignProblem: pi_ip columns do not match the plant window");
    }
    if (pi_ic_ext.cols() != static_cast<Eigen::Index>(window) * wc ||
        pi_c_ext.cols() != static_cast<Eigen::Index>(window) * wc) {
        throw InvalidInputError("DesignProblem: controller network columns do not match w_c window");
    }
    if (pi_ip_ext.rows() != pi_ic_ext.rows()) {
        throw InvalidInputError("DesignProblem: pi_ip/pi_ic row counts differ");
    }
}

Eigen::MatrixXd controller_basis(const Eigen::MatrixXd& plant_basis,
                                 const Eigen::MatrixXd& pi_ip_ext,
                                 const Eigen::MatrixXd& pi_ic_ext,
                                 const Eigen::MatrixXd& pi_c_ext) {
    const Eigen::Index wc_window = pi_ic_ext.cols();
    MatrixXd stack(pi_ic_ext.rows() + pi_c_ext.rows(), wc_window);
    stack.topRows(pi_ic_ext.rows()) = pi_ic_ext;
    stack.bottomRows(pi_c_ext.rows()) = pi_c_ext;
    if (stack.rows() != stack.cols()) {
        throw GeneralCaseError(
            "controller basis: [pi_ic; pi_c] is not square; the general construction "
            "(latent-variable elimination with annihilators) is out of the supported class");
    }
    Eigen::FullPivLU<MatrixXd> lu(stack);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible()) {
        throw GeneralCaseError(
            "controller basis: [pi_ic; pi_c] is singular; the regular case requires an "
            "invertible stack");
    }
    MatrixXd rhs = MatrixXd::Zero(stack.rows(), plant_basis.cols());
    rhs.topRows(pi_ip_ext.rows()) = pi_ip_ext * plant_basis;
    return lu.solve(rhs);
}

Eigen::MatrixXd build_controller_basis(const DesignProblem& p) {
    p.validate();
    return controller_basis(p.plant.basis, p.pi_ip_ext, p.pi_ic_ext, p.pi_c_ext);
}

namespace {

// Global window rows of controller j (steps grouped by time, controllers in
// declared order within each step).
std::vector<int> controller_rows(const behavior::VariableLayout& layout, int j, int window) {
    const int wc = layout.total_dim();
    const int off = layout.subsystem_offset(j);
    const int dim = layout.subsystems[j].dim();
    std::vector<int> rows;
    rows.reserve(static_cast<size_t>(window) * dim);
    for (int s = 0; s < window; ++s) {
        for (int r = 0; r < dim; ++r) rows.push_back(s * wc + off + r);
    }
    return rows;
}

MatrixXd take_rows(const MatrixXd& m, const std::vector<int>& rows) {
    MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

double span_residual(const MatrixXd& a, const MatrixXd& b) {
    // max one-directional residual of colspan(b) columns against colspan(a)
    const MatrixXd qa = matlib::orth(a);
    double worst = 0.0;
    for (int c = 0; c < b.cols(); ++c) {
        const VectorXd v = b.col(c);
        const double n = v.norm();
        if (n < 1e-14) continue;
        const VectorXd r = v - qa * (qa.transpose() * v);
        worst = std::max(worst, r.norm() / n);
    }
    return worst;
}

}  // namespace

DerivedBases decompose(const DesignProblem& p, const Eigen::MatrixXd& controller_basis) {
    p.validate();
    const int window = p.plant.window_len;
    const int past = p.plant.past;
    const int wc = p.controller_layout.total_dim();
    if (past < 1) {
        throw InvalidInputError("decompose: L^- must be at least 1");
    }
    if (controller_basis.rows() != static_cast<Eigen::Index>(window) * wc) {
        throw InvalidInputError("decompose: controller basis rows do not match the window");
    }
    // The anchor needs at least the past; a missing manipulated selection just
    // means the current step contributes no rows (no control authority).
    const auto manipulated = p.controller_layout.rows_of_kind(behavior::ComponentKind::Manipulated);

    DerivedBases d;
    d.controller = controller_basis;
    const int n_ctrl = p.controller_layout.subsystem_count();
    for (int j = 0; j < n_ctrl; ++j) {
        d.controller_j.push_back(
            take_rows(controller_basis, controller_rows(p.controller_layout, j, window)));
    }

    // Past rows: steps [0, past); current-step manipulated rows at step `past`.
    d.controller_past = controller_basis.topRows(static_cast<Eigen::Index>(past) * wc);
    std::vector<int> mk_rows;
    for (int r : manipulated) mk_rows.push_back(past * wc + r);
    d.manipulated_k = take_rows(controller_basis, mk_rows);

    MatrixXd anchor(d.controller_past.rows() + d.manipulated_k.rows(), controller_basis.cols());
    anchor.topRows(d.controller_past.rows()) = d.controller_past;
    anchor.bottomRows(d.manipulated_k.rows()) = d.manipulated_k;

    const MatrixXd anchor_proj = matlib::pinv(anchor) * anchor;
    const MatrixXd anchor_null = matlib::ann_right(anchor);
    d.anchor_projector = anchor_proj;
    d.implemented = controller_basis * anchor_proj;
    d.plant_implemented = p.plant.basis * anchor_proj;
    d.blocked = p.plant.basis * anchor_null;

    for (int j = 0; j < n_ctrl; ++j) {
        const int wcj = p.controller_layout.subsystems[j].dim();
        const MatrixXd past_j = d.controller_j[j].topRows(static_cast<Eigen::Index>(past) * wcj);
        const MatrixXd proj_j = matlib::pinv(past_j) * past_j;
        d.local_past_map.push_back(d.controller_j[j] * proj_j);
        d.local_free_map.push_back(d.controller_j[j] * matlib::ann_right(past_j));
    }
    const MatrixXd past_proj = matlib::pinv(d.controller_past) * d.controller_past;
    d.global_past_map = controller_basis * past_proj;
    d.global_free_map = controller_basis * matlib::ann_right(d.controller_past);

    std::vector<int> perm;
    for (int j = 0; j < n_ctrl; ++j) {
        const auto rows = controller_rows(p.controller_layout, j, window);
        perm.insert(perm.end(), rows.begin(), rows.end());
    }
    d.permutation = matlib::permutation_from_index_map(perm);

    MatrixXd combined(p.plant.basis.rows(), d.plant_implemented.cols() + d.blocked.cols());
    combined << d.plant_implemented, d.blocked;
    d.span_residual =
        std::max(span_residual(combined, p.plant.basis), span_residual(p.plant.basis, combined));
    return d;
}

bool rank_condition(const behavior::BehaviorBasis& plant) {
    const auto exo = plant.layout.rows_of_kind(behavior::ComponentKind::Exogenous);
    if (exo.empty()) return true;  // nothing required to stay free
    const int w = plant.step_dim();
    std::vector<int> rows;
    for (int r : exo) rows.push_back(plant.past * w + r);
    const MatrixXd f_fk = take_rows(plant.basis, rows);
    return matlib::rank(f_fk) == static_cast<int>(exo.size());
}

conic::LmiProblem assemble_lmis(const DesignProblem& p, const DerivedBases& d) {
    p.validate();
    const int wp = p.plant.step_dim();
    const int past = p.plant.past;
    const int n_ctrl = p.controller_layout.subsystem_count();

    conic::LmiProblem lmi;
    lmi.margin = 1e-6;
    lmi.variables.push_back({"psi", past * wp});
    for (int j = 0; j < n_ctrl; ++j) {
        lmi.variables.push_back(
            {"phi_c_" + std::to_string(j), (past + 1) * p.controller_layout.subsystems[j].dim()});
    }

    // (a) storage PSD
    {
        conic::Constraint c;
        c.name = "storage_psd";
        c.constant = MatrixXd::Zero(past * wp, past * wp);
        c.terms.push_back({0, MatrixXd::Identity(past * wp, past * wp), 1.0});
        lmi.constraints.push_back(std::move(c));
    }
    // (b) per-controller freedom of the past. The raw form F_cm^T Phi F_cm is
    // structurally singular (rank limited by the past rows), so the strict
    // margin is posed on an orthonormal basis of its range; this is an exact
    // congruence of the original PSD requirement.
    for (int j = 0; j < n_ctrl; ++j) {
        const MatrixXd a_full = d.local_past_map[j].transpose();
        const MatrixXd range = matlib::orth(a_full);
        if (range.cols() == 0) continue;  // vacuous constraint
        conic::Constraint c;
        c.name = "local_freedom_" + std::to_string(j);
        c.constant = MatrixXd::Zero(range.cols(), range.cols());
        c.terms.push_back({1 + j, MatrixXd(range.transpose() * a_full), 1.0});
        lmi.constraints.push_back(std::move(c));
    }
    // (c) dissipation with the blocked behavior, over (z_p, z_h). Both
    // coordinate groups are compressed onto their reachable subspaces: z_p
    // through the anchor projector's range, z_h through the column span of
    // the blocked basis.
    {
        const MatrixXd u_p = matlib::orth(d.anchor_projector);
        const MatrixXd q_h = matlib::orth(d.blocked);
        const Eigen::Index m = u_p.cols();
        const Eigen::Index mh = q_h.cols();
        if (m + mh == 0) return lmi;  // no reachable directions at all
        MatrixXd g(p.plant.basis.rows(), m + mh);
        if (m > 0) g.leftCols(m) = p.plant.basis * u_p;
        if (mh > 0) g.rightCols(mh) = q_h;

        const MatrixXd supply_hat = qdf::pad(p.supply, past);
        conic::Constraint c;
        c.name = "dissipation";
        c.constant = g.transpose() * supply_hat * g;
        c.constant = 0.5 * (c.constant + c.constant.transpose());

        // nabla of the storage through the window selections:
        // G^T nabla(Psi) G = (S_f G)^T Psi (S_f G) - (S_p G)^T Psi (S_p G).
        const MatrixXd g_future = g.bottomRows(static_cast<Eigen::Index>(past) * wp);
        const MatrixXd g_past = g.topRows(static_cast<Eigen::Index>(past) * wp);
        c.terms.push_back({0, g_future.transpose(), -1.0});
        c.terms.push_back({0, g_past.transpose(), 1.0});

        const MatrixXd implemented_red = d.controller * u_p;
        for (int j = 0; j < n_ctrl; ++j) {
            const auto rows = controller_rows(p.controller_layout, j, p.plant.window_len);
            const MatrixXd imp_j = take_rows(implemented_red, rows);
            MatrixXd factor = MatrixXd::Zero(m + mh, imp_j.rows());
            factor.topRows(m) = imp_j.transpose();
            c.terms.push_back({1 + j, factor, -1.0});
        }
        lmi.constraints.push_back(std::move(c));
    }
    return lmi;
}

std::vector<double> revalidate(const DesignProblem& p, const DerivedBases& d,
                               const ControllerCertificate& cert) {
    conic::LmiProblem lmi = assemble_lmis(p, d);
    std::vector<MatrixXd> assignments;
    assignments.push_back(cert.storage);
    for (const auto& phi : cert.local_conditions) assignments.push_back(phi);
    const auto values = conic::evaluate_constraints(lmi, assignments);
    std::vector<double> margins;
    for (const auto& v : values) margins.push_back(matlib::psd_margin(v));
    return margins;
}

SynthesisResult synthesize(const DesignProblem& p, const conic::SolverConfig& cfg) {
    p.validate();
    if (p.plant.past <= std::max(p.lag_bound, p.supply.order)) {
        throw InvalidInputError("synthesize: L^- must exceed the lag bound and the supply order");
    }
    if (!rank_condition(p.plant)) {
        throw InvalidInputError(
            "synthesize: current-step rows of the free-variable selection are rank deficient");
    }
    const MatrixXd fc = build_controller_basis(p);
    const DerivedBases d = decompose(p, fc);
    conic::LmiProblem lmi = assemble_lmis(p, d);
    auto result = conic::solve_feasibility(lmi, cfg);

    if (std::holds_alternative<conic::InfeasibilityReport>(result)) {
        auto report = std::get<conic::InfeasibilityReport>(std::move(result));
        std::string worst = "unknown";
        double worst_violation = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < report.margins.size(); ++i) {
            const double violation = lmi.margin - report.margins[i];
            if (violation > worst_violation) {
                worst_violation = violation;
                worst = lmi.constraints[i].name;
            }
        }
        return SynthesisFailure{worst, std::move(report)};
    }

    auto cert_in = std::get<conic::FeasibilityCertificate>(std::move(result));
    ControllerCertificate cert;
    cert.L_minus = p.plant.past;
    cert.storage = 0.5 * (cert_in.assignments[0] + cert_in.assignments[0].transpose());
    for (int j = 0; j < p.controller_layout.subsystem_count(); ++j) {
        const MatrixXd& phi = cert_in.assignments[1 + j];
        cert.local_conditions.push_back(0.5 * (phi + phi.transpose()));
    }
    for (const auto& c : lmi.constraints) cert.constraint_names.push_back(c.name);
    cert.margins = revalidate(p, d, cert);
    std::ostringstream hash_src;
    hash_src << p.plant.layout.canonical_string() << '|'
             << p.controller_layout.canonical_string() << '|' << p.plant.past;
    cert.layout_hash = std::to_string(fnv1a(hash_src.str()));
    return cert;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

nlohmann::json matrix_to_json(const MatrixXd& m) {
    nlohmann::json j;
    j["dim"] = m.rows();
    std::vector<double> data;
    data.reserve(m.size());
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    j["coeff"] = data;
    return j;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int n = j.at("dim").get<int>();
    const auto data = j.at("coeff").get<std::vector<double>>();
    if (static_cast<int>(data.size()) != n * n) {
        throw InvalidInputError("certificate: coefficient length mismatch");
    }
    MatrixXd m(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) m(r, c) = data[r * n + c];
    }
    return m;
}

}  // namespace

std::string certificate_to_json(const ControllerCertificate& c) {
    nlohmann::json j;
    j["L_minus"] = c.L_minus;
    j["psi"] = matrix_to_json(c.storage);
    j["phi_c"] = nlohmann::json::array();
    for (const auto& phi : c.local_conditions) j["phi_c"].push_back(matrix_to_json(phi));
    j["margins"] = c.margins;
    j["constraints"] = c.constraint_names;
    j["layout_hash"] = c.layout_hash;
    return j.dump(2);
}

ControllerCertificate certificate_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ControllerCertificate c;
    c.L_minus = j.at("L_minus").get<int>();
    c.storage = matrix_from_json(j.at("psi"));
    for (const auto& jp : j.at("phi_c")) c.local_conditions.push_back(matrix_from_json(jp));
    c.margins = j.at("margins").get<std::vector<double>>();
    c.constraint_names = j.at("constraints").get<std::vector<std::string>>();
    c.layout_hash = j.at("layout_hash").get<std::string>();
    return c;
}

}  // namespace ddpc::synthesis
