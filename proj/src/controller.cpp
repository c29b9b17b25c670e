#include "ddpc/controller.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ddpc/matlib.hpp"

namespace ddpc::controller {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double quad_value(const MatrixXd& a, const VectorXd& b, double c, const VectorXd& x) {
    return x.dot(a * x) + 2.0 * b.dot(x) + c;
}

}  // namespace

Eigen::VectorXd qcqp_solve(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                           const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double c,
                           const QcqpOptions& opts) {
    const int n = static_cast<int>(h.rows());
    if (h.cols() != n || a.rows() != n || a.cols() != n || g.size() != n || b.size() != n) {
        throw InvalidInputError("qcqp_solve: dimension mismatch");
    }
    if (n == 0) {
        if (c < -opts.feas_tol) throw QcqpInfeasibleError("qcqp_solve: empty feasible set");
        return VectorXd();
    }
    const MatrixXd hs = 0.5 * (h + h.transpose());
    const MatrixXd as = 0.5 * (a + a.transpose());
    const double qscale = std::max({1.0, as.norm(), b.norm(), std::abs(c)});
    auto qval = [&](const VectorXd& x) { return quad_value(as, b, c, x); };

    if (!matlib::is_psd(hs, 1e-9)) {
        throw InvalidInputError("qcqp_solve: objective Hessian must be PSD");
    }

    // Unconstrained minimizer first (minimum-norm one when H is singular).
    const VectorXd x_free = -matlib::pinv(hs) * g;
    if ((hs * x_free + g).norm() > 1e-8 * std::max(1.0, g.norm())) {
        throw UnsupportedError("qcqp_solve: objective unbounded below");
    }
    if (qval(x_free) >= -opts.feas_tol * qscale) {
        return x_free;
    }

    // Active constraint: stationarity (H - 2 lambda A) x = 2 lambda b - g with
    // H - 2 lambda A > 0; the constraint value is nondecreasing in lambda there.
    Eigen::LLT<MatrixXd> llt(hs);
    if (llt.info() != Eigen::Success) {
        throw UnsupportedError("qcqp_solve: active case needs a positive definite Hessian");
    }
    const auto l = llt.matrixL();
    MatrixXd a_white = l.solve(as);
    a_white = l.solve(MatrixXd(a_white.transpose()));
    a_white = 0.5 * (a_white + a_white.transpose()).eval();
    const auto eig = matlib::sym_eig(a_white);
    const VectorXd mu = eig.values;  // descending
    const VectorXd g_t = eig.vectors.transpose() * l.solve(g);
    const VectorXd b_t = eig.vectors.transpose() * l.solve(b);

    auto y_of = [&](double lambda) {
        VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            y(i) = (2.0 * lambda * b_t(i) - g_t(i)) / (1.0 - 2.0 * lambda * mu(i));
        }
        return y;
    };
    auto q_of_y = [&](const VectorXd& y) {
        double v = c;
        for (int i = 0; i < n; ++i) {
            v += mu(i) * y(i) * y(i) + 2.0 * b_t(i) * y(i);
        }
        return v;
    };
    auto x_of_y = [&](const VectorXd& y) {
        return VectorXd(llt.matrixU().solve(eig.vectors * y));
    };

    const double mu_max = mu(0);
    const bool finite_pole = mu_max > 1e-14;
    const double lambda_bar = finite_pole ? 1.0 / (2.0 * mu_max) : 0.0;

    double lambda_hi = 0.0;
    bool found_hi = false;
    if (finite_pole) {
        for (int k = 1; k <= 60 && !found_hi; ++k) {
            const double lam = lambda_bar * (1.0 - std::pow(0.5, k));
            if (q_of_y(y_of(lam)) >= 0.0) {
                lambda_hi = lam;
                found_hi = true;
            }
        }
        if (!found_hi) {
            // Hard case: the pole components carry no forcing; extend along the
            // top eigदirection on the boundary.
            VectorXd y_hat = VectorXd::Zero(n);
            int singular = -1;
            for (int i = 0; i < n; ++i) {
                const double denom = 1.0 - 2.0 * lambda_bar * mu(i);
                if (std::abs(denom) <= 1e-9) {
                    if (singular < 0) singular = i;
                } else {
                    y_hat(i) = (2.0 * lambda_bar * b_t(i) - g_t(i)) / denom;
                }
            }
            const double q_hat = q_of_y(y_hat);
            if (q_hat >= -opts.feas_tol * qscale) {
                return x_of_y(y_hat);
            }
            if (singular < 0) {
                throw QcqpInfeasibleError("qcqp_solve: boundary unreachable (numerical)");
            }
            const double disc = b_t(singular) * b_t(singular) - mu_max * q_hat;
            const double root = std::sqrt(std::max(disc, 0.0));
            const double t1 = (-b_t(singular) + root) / mu_max;
            const double t2 = (-b_t(singular) - root) / mu_max;
            auto obj_shift = [&](double t) { return 0.5 * t * t + g_t(singular) * t; };
            const double t_best = obj_shift(t1) <= obj_shift(t2) ? t1 : t2;
            y_hat(singular) = t_best;
            return x_of_y(y_hat);
        }
    } else {
        // All curvature directions nonpositive: the constraint has a finite
        // supremum; grow lambda until feasible or provably empty.
        double lam = 1.0;
        for (int k = 0; k < 120 && !found_hi; ++k) {
            if (q_of_y(y_of(lam)) >= 0.0) {
                lambda_hi = lam;
                found_hi = true;
            } else {
                lam *= 2.0;
            }
        }
        if (!found_hi) {
            throw QcqpInfeasibleError("qcqp_solve: constraint set is empty");
        }
    }

    double lo = 0.0;
    double hi = lambda_hi;
    for (int it = 0; it < opts.bisect_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (q_of_y(y_of(mid)) >= 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return x_of_y(y_of(hi));
}

void ControllerState::push(const Eigen::VectorXd& measurement) {
    if (measurement.size() != setup.dim) {
        throw InvalidInputError("ControllerState::push: measurement size mismatch");
    }
    const int cols = static_cast<int>(history.cols());
    history.leftCols(cols - 1) = history.rightCols(cols - 1).eval();
    history.col(cols - 1) = measurement;
}

Eigen::VectorXd predict_shared(const ControllerState& s, int future) {
    const auto& rows = s.setup.predicted_rows;
    VectorXd out(static_cast<Eigen::Index>(rows.size()) * future);
    const VectorXd last = s.history.col(s.history.cols() - 1);
    for (int step = 0; step < future; ++step) {
        for (size_t i = 0; i < rows.size(); ++i) {
            out(step * static_cast<int>(rows.size()) + static_cast<int>(i)) = last(rows[i]);
        }
    }
    return out;
}

LocalStepResult local_step(const ControllerState& s, const Eigen::VectorXd& predicted,
                           const AdmmContext& admm, int window, int past) {
    const auto& su = s.setup;
    const int dim = su.dim;
    const int future_steps = window - past;
    const int n_pred = static_cast<int>(su.predicted_rows.size());
    if (su.basis.rows() != static_cast<Eigen::Index>(window) * dim) {
        throw InvalidInputError("local_step: basis rows do not match the window");
    }
    if (predicted.size() != static_cast<Eigen::Index>(n_pred) * future_steps) {
        throw InvalidInputError("local_step: prediction length mismatch");
    }

    // Pin the measured past and the predicted exogenous rows.
    const int n_pin = past * dim + n_pred * future_steps;
    MatrixXd f_pin(n_pin, su.basis.cols());
    VectorXd rhs(n_pin);
    int at = 0;
    for (int step = 0; step < past; ++step) {
        f_pin.middleRows(at, dim) = su.basis.middleRows(static_cast<Eigen::Index>(step) * dim, dim);
        rhs.segment(at, dim) = s.history.col(step);
        at += dim;
    }
    for (int step = 0; step < future_steps; ++step) {
        for (int i = 0; i < n_pred; ++i) {
            f_pin.row(at) = su.basis.row(static_cast<Eigen::Index>(past + step) * dim +
                                         su.predicted_rows[i]);
            rhs(at) = predicted(step * n_pred + i);
            ++at;
        }
    }
    const auto affine = matlib::solve_affine(f_pin, rhs, 1e-7);
    if (!affine) {
        throw LocalStepError("local_step: measured history is inconsistent with the local basis");
    }
    const VectorXd w_base = su.basis * affine->particular;
    const MatrixXd directions = matlib::orth(su.basis * affine->null_basis);

    const int c0_rows = (past + 1) * dim;
    const auto& phi = su.condition;
    if (phi.rows() != c0_rows) {
        throw InvalidInputError("local_step: local condition size does not match [k - L^-, k]");
    }

    auto finish = [&](const VectorXd& w) {
        LocalStepResult out;
        out.window_values = w;
        const VectorXd head = w.head(c0_rows);
        out.constraint_value = head.dot(phi * head);
        return out;
    };

    if (directions.cols() == 0) {
        auto out = finish(w_base);
        if (out.constraint_value < -1e-6 * (1.0 + phi.norm())) {
            throw LocalStepError("local_step: fully pinned window violates the local condition");
        }
        return out;
    }

    // Objective: stage cost on steps k .. k + L^+ plus the ADMM penalty.
    const int nfree = static_cast<int>(directions.cols());
    MatrixXd h = admm.rho * MatrixXd::Identity(nfree, nfree);  // directions are orthonormal
    VectorXd g = admm.rho * directions.transpose() * (w_base - admm.target);
    if (su.cost_weight.size() > 0) {
        const MatrixXd d_fut = directions.bottomRows(static_cast<Eigen::Index>(future_steps) * dim);
        const VectorXd w_fut = w_base.tail(static_cast<Eigen::Index>(future_steps) * dim);
        for (int step = 0; step < future_steps; ++step) {
            const MatrixXd ds = d_fut.middleRows(static_cast<Eigen::Index>(step) * dim, dim);
            const VectorXd ws = w_fut.segment(static_cast<Eigen::Index>(step) * dim, dim);
            h.noalias() += 2.0 * ds.transpose() * su.cost_weight * ds;
            g.noalias() += 2.0 * ds.transpose() * (su.cost_weight * ws);
        }
    }

    const MatrixXd d_c0 = directions.topRows(c0_rows);
    const VectorXd w_c0 = w_base.head(c0_rows);
    const MatrixXd a_q = d_c0.transpose() * phi * d_c0;
    const VectorXd b_q = d_c0.transpose() * (phi * w_c0);
    const double c_q = w_c0.dot(phi * w_c0);

    VectorXd xi;
    try {
        xi = qcqp_solve(h, g, a_q, b_q, c_q);
    } catch (const QcqpInfeasibleError& e) {
        throw LocalStepError(std::string("local_step: local problem infeasible: ") + e.what());
    }
    return finish(w_base + directions * xi);
}

ControllerNetwork::ControllerNetwork(std::vector<LocalControllerSetup> setups,
                                     ConsensusProblem consensus)
    : setups_(std::move(setups)), consensus_(std::move(consensus)) {
    consensus_.layout.validate();
    const int wc = consensus_.layout.total_dim();
    const int window = consensus_.window;
    const int past = consensus_.past;
    if (window != past + 1 && window <= past) {
        if (window <= past) {
            throw InvalidInputError("ControllerNetwork: window must exceed past");
        }
    }
    if (static_cast<int>(setups_.size()) != consensus_.layout.subsystem_count()) {
        throw InvalidInputError("ControllerNetwork: one setup per controller required");
    }
    for (int j = 0; j < static_cast<int>(setups_.size()); ++j) {
        auto& su = setups_[j];
        if (su.dim != consensus_.layout.subsystems[j].dim()) {
            throw InvalidInputError("ControllerNetwork: setup dim does not match the layout");
        }
        std::vector<int> rows;
        const int off = consensus_.layout.subsystem_offset(j);
        for (int s = 0; s < window; ++s) {
            for (int r = 0; r < su.dim; ++r) rows.push_back(s * wc + off + r);
        }
        rows_per_controller_.push_back(std::move(rows));
        ControllerState st;
        st.setup = su;
        st.history = MatrixXd::Zero(su.dim, past);
        states_.push_back(std::move(st));
    }

    for (int s = 0; s < past; ++s) {
        for (int r = 0; r < wc; ++r) pinned_rows_.push_back(s * wc + r);
    }
    for (int j = 0; j < static_cast<int>(setups_.size()); ++j) {
        const int off = consensus_.layout.subsystem_offset(j);
        for (int s = past; s < window; ++s) {
            for (int r : setups_[j].predicted_rows) pinned_rows_.push_back(s * wc + off + r);
        }
    }

    const Eigen::Index n = static_cast<Eigen::Index>(window) * wc;
    if (consensus_.coupling.size() > 0 && consensus_.coupling.cols() != n) {
        throw InvalidInputError("ControllerNetwork: coupling columns do not match the window");
    }
    const Eigen::Index c_rows = consensus_.coupling.rows();
    constraint_stack_ = MatrixXd::Zero(c_rows + static_cast<Eigen::Index>(pinned_rows_.size()), n);
    if (c_rows > 0) constraint_stack_.topRows(c_rows) = consensus_.coupling;
    for (size_t i = 0; i < pinned_rows_.size(); ++i) {
        constraint_stack_(c_rows + static_cast<Eigen::Index>(i), pinned_rows_[i]) = 1.0;
    }
    constraint_stack_pinv_ = matlib::pinv(constraint_stack_);
}

void ControllerNetwork::warm_start(const Eigen::MatrixXd& global_history) {
    const int wc = consensus_.layout.total_dim();
    if (global_history.rows() != wc || global_history.cols() != consensus_.past) {
        throw InvalidInputError("warm_start: history must be w_c x L^-");
    }
    for (int j = 0; j < static_cast<int>(states_.size()); ++j) {
        const int off = consensus_.layout.subsystem_offset(j);
        states_[j].history = global_history.middleRows(off, states_[j].setup.dim);
    }
    warmed_ = true;
}

Eigen::VectorXd ControllerNetwork::project_consensus(const Eigen::VectorXd& point,
                                                     const Eigen::VectorXd& pinned_values) const {
    const Eigen::Index c_rows = consensus_.coupling.rows();
    VectorXd rhs = VectorXd::Zero(constraint_stack_.rows());
    rhs.tail(static_cast<Eigen::Index>(pinned_rows_.size())) = pinned_values;
    return point - constraint_stack_pinv_ * (constraint_stack_ * point - rhs);
}

Eigen::VectorXd ControllerNetwork::pinned_vector() const {
    const int wc = consensus_.layout.total_dim();
    const int past = consensus_.past;
    const int window = consensus_.window;
    VectorXd vals(static_cast<Eigen::Index>(pinned_rows_.size()));
    Eigen::Index at = 0;
    for (int s = 0; s < past; ++s) {
        for (int j = 0; j < static_cast<int>(states_.size()); ++j) {
            vals.segment(at, states_[j].setup.dim) = states_[j].history.col(s);
            at += states_[j].setup.dim;
        }
    }
    for (int j = 0; j < static_cast<int>(states_.size()); ++j) {
        const auto& rows = states_[j].setup.predicted_rows;
        const VectorXd last = states_[j].history.col(past - 1);
        for (int s = past; s < window; ++s) {
            for (int r : rows) {
                vals(at++) = last(r);
            }
        }
    }
    return vals;
}

Eigen::VectorXd ControllerNetwork::initial_point() const {
    const int wc = consensus_.layout.total_dim();
    VectorXd v(static_cast<Eigen::Index>(consensus_.window) * wc);
    for (int s = 0; s < consensus_.window; ++s) {
        for (int j = 0; j < static_cast<int>(states_.size()); ++j) {
            const int off = consensus_.layout.subsystem_offset(j);
            const int col = std::min(s, consensus_.past - 1);
            v.segment(static_cast<Eigen::Index>(s) * wc + off, states_[j].setup.dim) =
                states_[j].history.col(col);
        }
    }
    return v;
}

HorizonResult ControllerNetwork::consensus_round() {
    if (!warmed_) {
        throw InvalidInputError("consensus_round: histories not initialized");
    }
    const int n_ctrl = static_cast<int>(states_.size());
    const int window = consensus_.window;
    const int past = consensus_.past;
    const int future_steps = window - past;
    const auto& cfg = consensus_.config;

    std::vector<VectorXd> predictions;
    for (const auto& st : states_) {
        predictions.push_back(predict_shared(st, future_steps));
    }
    const VectorXd pinned = pinned_vector();
    VectorXd v = project_consensus(initial_point(), pinned);

    std::vector<VectorXd> locals(n_ctrl);
    std::vector<VectorXd> duals(n_ctrl);
    for (int j = 0; j < n_ctrl; ++j) {
        duals[j] = VectorXd::Zero(static_cast<Eigen::Index>(rows_per_controller_[j].size()));
    }
    double rho = cfg.rho;
    double primal = std::numeric_limits<double>::infinity();
    double dual = std::numeric_limits<double>::infinity();
    int iter = 0;
    bool converged = false;

    auto extract = [&](const VectorXd& global, int j) {
        const auto& rows = rows_per_controller_[j];
        VectorXd out(static_cast<Eigen::Index>(rows.size()));
        for (size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = global(rows[i]);
        return out;
    };

    for (; iter < cfg.max_iter; ++iter) {
        for (int j = 0; j < n_ctrl; ++j) {
            AdmmContext ctx;
            ctx.target = extract(v, j) - duals[j];
            ctx.rho = rho;
            locals[j] = local_step(states_[j], predictions[j], ctx, window, past).window_values;
        }
        VectorXd t_global(v.size());
        for (int j = 0; j < n_ctrl; ++j) {
            const auto& rows = rows_per_controller_[j];
            const VectorXd entry = locals[j] + duals[j];
            for (size_t i = 0; i < rows.size(); ++i) t_global(rows[i]) = entry(static_cast<Eigen::Index>(i));
        }
        const VectorXd v_prev = v;
        v = project_consensus(t_global, pinned);

        double primal_sq = 0.0;
        for (int j = 0; j < n_ctrl; ++j) {
            const VectorXd gap = locals[j] - extract(v, j);
            duals[j] += gap;
            primal_sq += gap.squaredNorm();
        }
        primal = std::sqrt(primal_sq);
        dual = rho * (v - v_prev).norm();
        if (primal <= cfg.primal_tol && dual <= cfg.dual_tol) {
            converged = true;
            ++iter;
            break;
        }
        if (cfg.adapt_rho) {
            if (primal > 10.0 * dual && rho * 2.0 <= cfg.rho_max) {
                rho *= 2.0;
                for (auto& u : duals) u /= 2.0;
            } else if (dual > 10.0 * primal && rho / 2.0 >= cfg.rho_min) {
                rho /= 2.0;
                for (auto& u : duals) u *= 2.0;
            }
        }
    }

    HorizonResult hr;
    hr.agreed = v;
    hr.consensus_residual = primal;
    hr.dual_residual = dual;
    hr.iterations = iter;
    hr.converged = converged;
    hr.cost = 0.0;
    for (int j = 0; j < n_ctrl; ++j) {
        const auto& su = setups_[j];
        const VectorXd wj = extract(v, j);
        VectorXd implemented(static_cast<Eigen::Index>(su.manipulated_rows.size()));
        for (size_t i = 0; i < su.manipulated_rows.size(); ++i) {
            implemented(static_cast<Eigen::Index>(i)) =
                wj(static_cast<Eigen::Index>(past) * su.dim + su.manipulated_rows[i]);
        }
        hr.implemented.push_back(std::move(implemented));
        const VectorXd head = wj.head(static_cast<Eigen::Index>(past + 1) * su.dim);
        hr.local_margins.push_back(head.dot(su.condition * head));
        if (su.cost_weight.size() > 0) {
            for (int s = past; s < window; ++s) {
                const VectorXd ws = wj.segment(static_cast<Eigen::Index>(s) * su.dim, su.dim);
                hr.cost += ws.dot(su.cost_weight * ws);
            }
        }
    }
    return hr;
}

HorizonResult ControllerNetwork::step(PlantInterface& plant) {
    HorizonResult hr = consensus_round();
    const VectorXd measured = plant.advance(hr.implemented);
    const int wc = consensus_.layout.total_dim();
    if (measured.size() != wc) {
        throw InvalidInputError("step: plant measurement size mismatch");
    }
    for (int j = 0; j < static_cast<int>(states_.size()); ++j) {
        const int off = consensus_.layout.subsystem_offset(j);
        states_[j].push(measured.segment(off, states_[j].setup.dim));
    }
    return hr;
}

}  // namespace ddpc::controller
