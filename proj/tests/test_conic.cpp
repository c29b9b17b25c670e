#include <doctest.h>

#include <Eigen/Dense>
#include <variant>

#include "ddpc/conic.hpp"
#include "ddpc/matlib.hpp"
#include "test_util.hpp"

using namespace ddpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

conic::LmiProblem scalar_nonneg() {
    conic::LmiProblem p;
    p.variables.push_back({"x", 1});
    conic::Constraint c;
    c.name = "nonneg";
    c.constant = MatrixXd::Zero(1, 1);
    c.terms.push_back({0, MatrixXd::Identity(1, 1), 1.0});
    p.constraints.push_back(std::move(c));
    p.margin = 1e-6;
    return p;
}

// Plants a strictly feasible random instance: constraints
// C_i(X) = gamma I - sum_t A X0 A^T + sum_t A X A^T are PSD at X = X0.
conic::LmiProblem planted_instance(testutil::Rng& rng, int n_vars, int n_cons) {
    conic::LmiProblem p;
    std::vector<MatrixXd> x0;
    for (int v = 0; v < n_vars; ++v) {
        const int dim = 2 + v % 3;
        p.variables.push_back({"x" + std::to_string(v), dim});
        x0.push_back(rng.symmetric(dim));
    }
    for (int i = 0; i < n_cons; ++i) {
        conic::Constraint c;
        c.name = "c" + std::to_string(i);
        const int dim = 2 + i % 4;
        MatrixXd at_x0 = MatrixXd::Zero(dim, dim);
        for (int v = 0; v < n_vars; ++v) {
            const double sign = (i + v) % 2 == 0 ? 1.0 : -1.0;
            const MatrixXd factor = rng.matrix(dim, static_cast<int>(x0[v].rows()));
            c.terms.push_back({v, factor, sign});
            at_x0 += sign * factor * x0[v] * factor.transpose();
        }
        // constant chosen so that C_i(x0) = gamma I (strictly feasible)
        const double gamma = 0.5 + 0.05 * i;
        c.constant = gamma * MatrixXd::Identity(dim, dim) - 0.5 * (at_x0 + at_x0.transpose());
        p.constraints.push_back(std::move(c));
    }
    p.margin = 1e-6;
    return p;
}

}  // namespace

TEST_CASE("solve_feasibility: scalar nonnegativity") {
    const auto result = conic::solve_feasibility(scalar_nonneg());
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(result));
    const auto& cert = std::get<conic::FeasibilityCertificate>(result);
    CHECK(cert.converged);
    CHECK(cert.achieved_margins[0] >= 1e-6 - 1e-7);
}

TEST_CASE("solve_feasibility: [[x,1],[1,-1]] is reported infeasible") {
    conic::LmiProblem p;
    p.variables.push_back({"x", 1});
    conic::Constraint c;
    c.name = "corner";
    c.constant.resize(2, 2);
    c.constant << 0, 1, 1, -1;
    MatrixXd factor(2, 1);
    factor << 1, 0;
    c.terms.push_back({0, factor, 1.0});
    p.constraints.push_back(std::move(c));
    p.margin = 1e-6;

    conic::SolverConfig cfg;
    cfg.max_iter = 200;
    const auto result = conic::solve_feasibility(p, cfg);
    REQUIRE(std::holds_alternative<conic::InfeasibilityReport>(result));
    const auto& report = std::get<conic::InfeasibilityReport>(result);
    CHECK(!report.converged);
    CHECK(report.max_violation > 0.1);  // the trailing diagonal pins -1
    CHECK(report.violation_trace.size() == 200);
}

TEST_CASE("solve_feasibility: planted instances reach the margin") {
    testutil::Rng rng(70);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = planted_instance(rng, 1 + trial % 3, 1 + trial % 4);
        const auto result = conic::solve_feasibility(p);
        REQUIRE_MESSAGE(std::holds_alternative<conic::FeasibilityCertificate>(result),
                        "planted instance " << trial << " not solved");
        const auto& cert = std::get<conic::FeasibilityCertificate>(result);
        // recompute margins independently of the solver's bookkeeping
        const auto values = conic::evaluate_constraints(p, cert.assignments);
        for (size_t i = 0; i < values.size(); ++i) {
            const double margin = matlib::psd_margin(values[i]);
            CHECK(margin >= p.margin - 1e-7);
            CHECK(margin == doctest::Approx(cert.achieved_margins[i]).epsilon(1e-8));
        }
    }
}

TEST_CASE("solve_feasibility: deterministic across reruns") {
    testutil::Rng rng(71);
    auto p = planted_instance(rng, 2, 3);
    const auto r1 = conic::solve_feasibility(p);
    const auto r2 = conic::solve_feasibility(p);
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(r1));
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(r2));
    const auto& c1 = std::get<conic::FeasibilityCertificate>(r1);
    const auto& c2 = std::get<conic::FeasibilityCertificate>(r2);
    REQUIRE(c1.assignments.size() == c2.assignments.size());
    for (size_t v = 0; v < c1.assignments.size(); ++v) {
        CHECK((c1.assignments[v] - c2.assignments[v]).norm() == 0.0);
    }
    CHECK(c1.iterations == c2.iterations);
}

TEST_CASE("solve_feasibility: over-relaxed plain projections still converge") {
    testutil::Rng rng(72);
    auto p = planted_instance(rng, 2, 2);
    conic::SolverConfig cfg;
    cfg.over_relaxation = 1.5;
    const auto result = conic::solve_feasibility(p, cfg);
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(result));
}

TEST_CASE("psd_project: clipping behaviour") {
    testutil::Rng rng(73);
    const MatrixXd psd = rng.psd(4);
    CHECK((conic::psd_project(psd) - psd).norm() <= 1e-10 * std::max(1.0, psd.norm()));
    CHECK(conic::psd_project(-MatrixXd::Identity(3, 3)).norm() <= 1e-12);

    for (int trial = 0; trial < 10; ++trial) {
        const MatrixXd s = rng.symmetric(5);
        const MatrixXd proj = conic::psd_project(s);
        CHECK(matlib::psd_margin(proj) >= -1e-10);
        // idempotent
        CHECK((conic::psd_project(proj) - proj).norm() <= 1e-9 * std::max(1.0, proj.norm()));
        // the clipped residual is negative semidefinite and orthogonal in trace
        const MatrixXd residual = s - proj;
        CHECK(matlib::psd_margin(-residual) >= -1e-10);
        CHECK(std::abs((proj * residual).trace()) <= 1e-8 * std::max(1.0, s.squaredNorm()));
    }
}

TEST_CASE("psd_project: nonexpansive on sampled pairs") {
    testutil::Rng rng(74);
    for (int trial = 0; trial < 20; ++trial) {
        const MatrixXd a = rng.symmetric(4);
        const MatrixXd b = rng.symmetric(4);
        CHECK((conic::psd_project(a) - conic::psd_project(b)).norm() <=
              (a - b).norm() + 1e-12);
    }
}

TEST_CASE("problem JSON dump/load round trip") {
    testutil::Rng rng(75);
    auto p = planted_instance(rng, 2, 2);
    const auto text = conic::problem_to_json(p);
    const auto back = conic::problem_from_json(text);
    REQUIRE(back.variables.size() == p.variables.size());
    REQUIRE(back.constraints.size() == p.constraints.size());
    for (size_t i = 0; i < p.constraints.size(); ++i) {
        CHECK((back.constraints[i].constant - p.constraints[i].constant).norm() == 0.0);
        REQUIRE(back.constraints[i].terms.size() == p.constraints[i].terms.size());
        for (size_t t = 0; t < p.constraints[i].terms.size(); ++t) {
            CHECK((back.constraints[i].terms[t].factor - p.constraints[i].terms[t].factor)
                      .norm() == 0.0);
        }
    }
    // identical solve outcome from the reloaded problem
    const auto r1 = conic::solve_feasibility(p);
    const auto r2 = conic::solve_feasibility(back);
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(r1));
    REQUIRE(std::holds_alternative<conic::FeasibilityCertificate>(r2));
    CHECK(std::get<conic::FeasibilityCertificate>(r1).iterations ==
          std::get<conic::FeasibilityCertificate>(r2).iterations);
}

TEST_CASE("solve_feasibility: validation rejects malformed problems") {
    conic::LmiProblem p;
    CHECK_THROWS_AS(conic::solve_feasibility(p), InvalidInputError);

    p = scalar_nonneg();
    p.constraints[0].terms[0].factor = MatrixXd::Zero(2, 1);  // wrong rows
    CHECK_THROWS_AS(conic::solve_feasibility(p), InvalidInputError);
}
