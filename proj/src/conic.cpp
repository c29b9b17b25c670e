#include "ddpc/conic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ddpc/matlib.hpp"

namespace ddpc::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

int svec_dim(int n) { return n * (n + 1) / 2; }

// Column-major upper-triangle ordering with sqrt(2)-scaled off-diagonals, so
// that the Euclidean inner product of svecs equals the Frobenius inner product.
VectorXd svec(const MatrixXd& s) {
    const int n = static_cast<int>(s.rows());
    VectorXd v(svec_dim(n));
    int at = 0;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i <= j; ++i) {
            v(at++) = (i == j) ? s(i, j) : kSqrt2 * 0.5 * (s(i, j) + s(j, i));
        }
    }
    return v;
}

MatrixXd smat(const VectorXd& v, int n) {
    MatrixXd s(n, n);
    int at = 0;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i <= j; ++i) {
            const double x = v(at++);
            if (i == j) {
                s(i, j) = x;
            } else {
                s(i, j) = x / kSqrt2;
                s(j, i) = s(i, j);
            }
        }
    }
    return s;
}

// svec representation of Y -> M Y M^T for rectangular M (p x q):
// output svec_dim(p) x svec_dim(q).
MatrixXd sym_kron(const MatrixXd& m) {
    const int p = static_cast<int>(m.rows());
    const int q = static_cast<int>(m.cols());
    MatrixXd k(svec_dim(p), svec_dim(q));
    int col = 0;
    for (int l = 0; l < q; ++l) {
        for (int kk = 0; kk <= l; ++kk) {
            int row = 0;
            if (kk == l) {
                for (int j = 0; j < p; ++j) {
                    for (int i = 0; i <= j; ++i) {
                        k(row++, col) = (i == j) ? m(i, kk) * m(i, kk)
                                                 : kSqrt2 * m(i, kk) * m(j, kk);
                    }
                }
            } else {
                for (int j = 0; j < p; ++j) {
                    for (int i = 0; i <= j; ++i) {
                        k(row++, col) = (i == j)
                                            ? kSqrt2 * m(i, kk) * m(i, l)
                                            : m(i, kk) * m(j, l) + m(i, l) * m(j, kk);
                    }
                }
            }
            ++col;
        }
    }
    return k;
}

MatrixXd symmetrized(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

struct Workspace {
    std::vector<int> var_dims;
    std::vector<int> var_offsets;  // into the concatenated svec coordinate vector
    int n_x = 0;
    std::vector<double> scales;  // per-constraint pre-scaling
    MatrixXd gram;               // destroyed in place by the factorization
    Eigen::LLT<Eigen::Ref<MatrixXd>>* llt = nullptr;
};

}  // namespace

void LmiProblem::validate() const {
    if (variables.empty() || constraints.empty()) {
        throw InvalidInputError("LmiProblem: variables and constraints required");
    }
    if (margin < 0.0) {
        throw InvalidInputError("LmiProblem: margin must be >= 0");
    }
    for (const auto& v : variables) {
        if (v.dim <= 0) {
            throw InvalidInputError("LmiProblem: variable with non-positive dim");
        }
    }
    for (const auto& c : constraints) {
        if (c.constant.rows() != c.constant.cols() || c.constant.rows() == 0) {
            throw InvalidInputError("LmiProblem: constraint constant must be square");
        }
        if (!c.constant.allFinite()) {
            throw InvalidInputError("LmiProblem: non-finite constraint constant");
        }
        const double scale = std::max(1.0, c.constant.cwiseAbs().maxCoeff());
        if ((c.constant - c.constant.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw InvalidInputError("LmiProblem: constraint constant not symmetric");
        }
        for (const auto& t : c.terms) {
            if (t.variable < 0 || t.variable >= static_cast<int>(variables.size())) {
                throw InvalidInputError("LmiProblem: term references unknown variable");
            }
            if (t.factor.rows() != c.constant.rows() ||
                t.factor.cols() != variables[t.variable].dim) {
                throw InvalidInputError("LmiProblem: term factor shape mismatch");
            }
            if (!t.factor.allFinite()) {
                throw InvalidInputError("LmiProblem: non-finite term factor");
            }
        }
    }
}

std::vector<Eigen::MatrixXd> evaluate_constraints(
    const LmiProblem& p, const std::vector<Eigen::MatrixXd>& assignments) {
    std::vector<MatrixXd> out;
    out.reserve(p.constraints.size());
    for (const auto& c : p.constraints) {
        MatrixXd value = c.constant;
        for (const auto& t : c.terms) {
            value.noalias() += t.sign * t.factor * assignments.at(t.variable) * t.factor.transpose();
        }
        out.push_back(symmetrized(value));
    }
    return out;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& s) {
    const auto eig = matlib::sym_eig(s);
    MatrixXd out = MatrixXd::Zero(s.rows(), s.cols());
    for (int i = 0; i < eig.values.size(); ++i) {
        if (eig.values(i) > 0.0) {
            out.noalias() += eig.values(i) * eig.vectors.col(i) * eig.vectors.col(i).transpose();
        }
    }
    return out;
}

namespace {

// x-coordinates -> per-variable symmetric matrices.
std::vector<MatrixXd> unpack(const VectorXd& x, const std::vector<int>& dims,
                             const std::vector<int>& offsets) {
    std::vector<MatrixXd> vars;
    vars.reserve(dims.size());
    for (size_t v = 0; v < dims.size(); ++v) {
        vars.push_back(smat(x.segment(offsets[v], svec_dim(dims[v])), dims[v]));
    }
    return vars;
}

// Adjoint of the scaled constraint stack at the product-space point (z - scaled constants).
VectorXd assemble_rhs(const LmiProblem& p, const Workspace& ws,
                      const std::vector<MatrixXd>& z) {
    VectorXd rhs = VectorXd::Zero(ws.n_x);
    for (size_t i = 0; i < p.constraints.size(); ++i) {
        const auto& c = p.constraints[i];
        const double a = ws.scales[i];
        const MatrixXd target = z[i] - a * c.constant;
        for (const auto& t : c.terms) {
            const MatrixXd grad = t.factor.transpose() * target * t.factor;
            rhs.segment(ws.var_offsets[t.variable], svec_dim(t.factor.cols()))
                .noalias() += a * t.sign * svec(symmetrized(grad));
        }
    }
    return rhs;
}

// Gram operator apply H * x via the constraint maps (avoids touching the
// factorized dense Gram).
VectorXd apply_gram(const LmiProblem& p, const Workspace& ws, const VectorXd& x) {
    const std::vector<MatrixXd> vars = [&] {
        std::vector<int> dims(ws.var_dims.begin(), ws.var_dims.end());
        return unpack(x, dims, ws.var_offsets);
    }();
    VectorXd out = VectorXd::Zero(ws.n_x);
    for (size_t i = 0; i < p.constraints.size(); ++i) {
        const auto& c = p.constraints[i];
        const double a2 = ws.scales[i] * ws.scales[i];
        MatrixXd forward = MatrixXd::Zero(c.dim(), c.dim());
        for (const auto& t : c.terms) {
            forward.noalias() += t.sign * t.factor * vars[t.variable] * t.factor.transpose();
        }
        forward = symmetrized(forward);
        for (const auto& t : c.terms) {
            const MatrixXd grad = t.factor.transpose() * forward * t.factor;
            out.segment(ws.var_offsets[t.variable], svec_dim(t.factor.cols()))
                .noalias() += a2 * t.sign * svec(symmetrized(grad));
        }
    }
    return out;
}

}  // namespace

SolveResult solve_feasibility(const LmiProblem& p, const SolverConfig& cfg) {
    p.validate();

    Workspace ws;
    for (const auto& v : p.variables) {
        ws.var_offsets.push_back(ws.n_x);
        ws.var_dims.push_back(v.dim);
        ws.n_x += svec_dim(v.dim);
    }
    ws.scales.resize(p.constraints.size());
    for (size_t i = 0; i < p.constraints.size(); ++i) {
        const double f = p.constraints[i].constant.norm();
        ws.scales[i] = 1.0 / std::max(1.0, f);
    }

    // Dense Gram of the scaled least-squares operator, assembled from
    // symmetric Kronecker blocks per ordered term pair.
    ws.gram = MatrixXd::Zero(ws.n_x, ws.n_x);
    for (size_t i = 0; i < p.constraints.size(); ++i) {
        const auto& c = p.constraints[i];
        const double a2 = ws.scales[i] * ws.scales[i];
        for (const auto& t : c.terms) {
            for (const auto& u : c.terms) {
                const MatrixXd m = t.factor.transpose() * u.factor;
                ws.gram.block(ws.var_offsets[t.variable], ws.var_offsets[u.variable],
                              svec_dim(static_cast<int>(m.rows())),
                              svec_dim(static_cast<int>(m.cols())))
                    .noalias() += a2 * t.sign * u.sign * sym_kron(m);
            }
        }
    }
    // Tiny ridge keeps the factorization well-posed when free-rider variable
    // directions never enter any constraint; refinement passes remove the bias.
    const double ridge = 1e-10 * std::max(1.0, ws.gram.trace() / ws.n_x);
    ws.gram.diagonal().array() += ridge;
    Eigen::LLT<Eigen::Ref<MatrixXd>> llt(ws.gram);  // in-place factorization
    if (llt.info() != Eigen::Success) {
        throw InvalidInputError("solve_feasibility: Gram factorization failed");
    }

    auto solve_normal = [&](const VectorXd& rhs) {
        VectorXd x = llt.solve(rhs);
        for (int r = 0; r < cfg.refine_steps; ++r) {
            const VectorXd residual = rhs - apply_gram(p, ws, x) - ridge * x;
            x += llt.solve(residual);
        }
        return x;
    };

    const int n_con = static_cast<int>(p.constraints.size());
    auto affine_image = [&](const std::vector<MatrixXd>& vars) {
        std::vector<MatrixXd> z = evaluate_constraints(p, vars);
        for (int i = 0; i < n_con; ++i) z[i] *= ws.scales[i];
        return z;
    };

    // State: product-space point z (scaled), Dykstra correction for the cone.
    VectorXd x = VectorXd::Zero(ws.n_x);
    std::vector<MatrixXd> vars = unpack(x, ws.var_dims, ws.var_offsets);
    std::vector<MatrixXd> z = affine_image(vars);
    std::vector<MatrixXd> cone_corr(n_con);
    for (int i = 0; i < n_con; ++i) {
        cone_corr[i] = MatrixXd::Zero(p.constraints[i].dim(), p.constraints[i].dim());
    }

    const bool dykstra = cfg.over_relaxation == 1.0;
    double best_violation = std::numeric_limits<double>::infinity();
    std::vector<double> best_margins;
    std::vector<MatrixXd> best_vars;
    std::vector<double> trace;
    trace.reserve(cfg.max_iter);

    double buffer = cfg.slack_buffer;
    int iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        if (buffer > 0.0 && iter == cfg.max_iter / 2) {
            buffer = 0.0;  // barely feasible problems: retarget the true cone
            for (auto& corr : cone_corr) corr.setZero();
        }
        // Margin check at the current affine-side iterate (unscaled).
        const auto values = evaluate_constraints(p, vars);
        double violation = 0.0;
        std::vector<double> margins(n_con);
        for (int i = 0; i < n_con; ++i) {
            margins[i] = matlib::psd_margin(values[i]);
            violation = std::max(violation, p.margin - margins[i]);
        }
        trace.push_back(violation);
        if (violation < best_violation) {
            best_violation = violation;
            best_margins = margins;
            best_vars = vars;
        }
        if (violation <= cfg.tol) {
            FeasibilityCertificate cert;
            cert.assignments = vars;
            cert.achieved_margins = margins;
            cert.iterations = iter;
            cert.converged = true;
            return cert;
        }

        // Cone projection with Dykstra correction, in the scaled space.
        std::vector<MatrixXd> projected(n_con);
        for (int i = 0; i < n_con; ++i) {
            const double shift = ws.scales[i] * (p.margin + buffer);
            const MatrixXd point = z[i] + cone_corr[i];
            const auto eig = matlib::sym_eig(point);
            MatrixXd proj = MatrixXd::Zero(point.rows(), point.cols());
            for (int e = 0; e < eig.values.size(); ++e) {
                const double clipped = std::max(eig.values(e), shift);
                proj.noalias() += clipped * eig.vectors.col(e) * eig.vectors.col(e).transpose();
            }
            if (dykstra) {
                cone_corr[i] = point - proj;
            }
            projected[i] = std::move(proj);
        }

        // Affine projection: least squares onto the image of the constraint maps.
        const VectorXd rhs = assemble_rhs(p, ws, projected);
        const VectorXd x_new = solve_normal(rhs);
        if (cfg.over_relaxation != 1.0) {
            x = x + cfg.over_relaxation * (x_new - x);
        } else {
            x = x_new;
        }
        vars = unpack(x, ws.var_dims, ws.var_offsets);
        z = affine_image(vars);
    }

    InfeasibilityReport report;
    report.max_violation = best_violation;
    report.margins = best_margins;
    report.best_assignments = best_vars;
    report.violation_trace = std::move(trace);
    report.iterations = iter;
    report.converged = false;
    return report;
}

std::string problem_to_json(const LmiProblem& p) {
    p.validate();
    nlohmann::json j;
    j["margin"] = p.margin;
    j["variables"] = nlohmann::json::array();
    for (const auto& v : p.variables) {
        j["variables"].push_back({{"name", v.name}, {"dim", v.dim}});
    }
    auto matrix_json = [](const MatrixXd& m) {
        nlohmann::json jm;
        jm["rows"] = m.rows();
        jm["cols"] = m.cols();
        std::vector<double> data;
        data.reserve(m.size());
        for (int r = 0; r < m.rows(); ++r) {
            for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
        }
        jm["data"] = data;
        return jm;
    };
    j["constraints"] = nlohmann::json::array();
    for (const auto& c : p.constraints) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["constant"] = matrix_json(c.constant);
        jc["terms"] = nlohmann::json::array();
        for (const auto& t : c.terms) {
            jc["terms"].push_back({{"variable", t.variable},
                                   {"sign", t.sign},
                                   {"factor", matrix_json(t.factor)}});
        }
        j["constraints"].push_back(jc);
    }
    return j.dump();
}

LmiProblem problem_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    auto matrix_from = [](const nlohmann::json& jm) {
        const int rows = jm.at("rows").get<int>();
        const int cols = jm.at("cols").get<int>();
        const auto data = jm.at("data").get<std::vector<double>>();
        if (static_cast<int>(data.size()) != rows * cols) {
            throw InvalidInputError("problem_from_json: matrix data length mismatch");
        }
        MatrixXd m(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
        }
        return m;
    };
    LmiProblem p;
    p.margin = j.at("margin").get<double>();
    for (const auto& jv : j.at("variables")) {
        p.variables.push_back({jv.at("name").get<std::string>(), jv.at("dim").get<int>()});
    }
    for (const auto& jc : j.at("constraints")) {
        Constraint c;
        c.name = jc.at("name").get<std::string>();
        c.constant = matrix_from(jc.at("constant"));
        for (const auto& jt : jc.at("terms")) {
            ConstraintTerm t;
            t.variable = jt.at("variable").get<int>();
            t.sign = jt.at("sign").get<double>();
            t.factor = matrix_from(jt.at("factor"));
            c.terms.push_back(std::move(t));
        }
        p.constraints.push_back(std::move(c));
    }
    p.validate();
    return p;
}

}  // namespace ddpc::conic
