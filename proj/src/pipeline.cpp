#include "ddpc/pipeline.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ddpc/matlib.hpp"

namespace ddpc::plant {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd DisturbanceProfile::level_at(int k) const {
    VectorXd level = VectorXd::Zero(dim);
    for (const auto& c : changes) {
        if (k >= c.at_step) level = c.level;
    }
    return level;
}

void DisturbanceProfile::validate() const {
    int prev = -1;
    for (const auto& c : changes) {
        if (c.level.size() != dim) {
            throw InvalidInputError("DisturbanceProfile: level dimension mismatch");
        }
        if (c.at_step <= prev) {
            throw InvalidInputError("DisturbanceProfile: change steps must increase");
        }
        prev = c.at_step;
    }
}

DesignArtifacts build_design_problem(const Scenario& scenario, const Dataset& dataset) {
    scenario.validate();
    const int window = scenario.L_minus + 1;  // the design interval [k - L^-, k]

    DesignArtifacts art;
    art.networks =
        compile_network(scenario.network, scenario.plant_layout, scenario.controller_layout);

    behavior::BasisOptions opts;
    art.problem.plant = behavior::interconnect(dataset.subsystems, scenario.plant_layout,
                                               art.networks.plant, window, scenario.L_minus,
                                               scenario.excitation_order(), opts);
    art.problem.pi_ip_ext = behavior::extend_coefficients(
        behavior::InterconnectionRep::constant(art.networks.pc_plant), window);
    art.problem.pi_ic_ext = behavior::extend_coefficients(
        behavior::InterconnectionRep::constant(art.networks.pc_controller), window);
    art.problem.pi_c_ext =
        behavior::extend_coefficients(art.networks.controller, window);
    art.problem.controller_layout = scenario.controller_layout;
    art.problem.supply = qdf::build_supply(scenario.supply, scenario.plant_layout);
    art.problem.lag_bound = scenario.max_lag_bound();
    return art;
}

OnlineSetup build_online_setup(const Scenario& scenario, const Dataset& dataset,
                               const synthesis::ControllerCertificate& certificate,
                               const controller::AdmmConfig& admm) {
    scenario.validate();
    if (certificate.L_minus != scenario.L_minus) {
        throw InvalidInputError("build_online_setup: certificate window does not match the scenario");
    }
    const int window = scenario.L_minus + 1 + scenario.L_plus;
    const auto networks =
        compile_network(scenario.network, scenario.plant_layout, scenario.controller_layout);

    behavior::BasisOptions opts;
    const auto plant_basis =
        behavior::interconnect(dataset.subsystems, scenario.plant_layout, networks.plant, window,
                               scenario.L_minus, scenario.excitation_order(), opts);
    const MatrixXd pi_ip_ext = behavior::extend_coefficients(
        behavior::InterconnectionRep::constant(networks.pc_plant), window);
    const MatrixXd pi_ic_ext = behavior::extend_coefficients(
        behavior::InterconnectionRep::constant(networks.pc_controller), window);
    const MatrixXd pi_c_ext = behavior::extend_coefficients(networks.controller, window);

    const MatrixXd f_c =
        synthesis::controller_basis(plant_basis.basis, pi_ip_ext, pi_ic_ext, pi_c_ext);

    OnlineSetup setup;
    const auto& clayout = scenario.controller_layout;
    const int wc = clayout.total_dim();
    for (int j = 0; j < clayout.subsystem_count(); ++j) {
        controller::LocalControllerSetup su;
        su.id = j;
        su.dim = clayout.subsystems[j].dim();
        const int off = clayout.subsystem_offset(j);
        MatrixXd basis_j(static_cast<Eigen::Index>(window) * su.dim, f_c.cols());
        for (int s = 0; s < window; ++s) {
            basis_j.middleRows(static_cast<Eigen::Index>(s) * su.dim, su.dim) =
                f_c.middleRows(static_cast<Eigen::Index>(s) * wc + off, su.dim);
        }
        su.basis = basis_j;
        su.condition = certificate.local_conditions.at(j);
        // Paper stage cost: squared norm of the implemented local output.
        MatrixXd weight = MatrixXd::Zero(su.dim, su.dim);
        int local = 0;
        for (const auto& comp : clayout.subsystems[j].components) {
            if (comp.kind == behavior::ComponentKind::Manipulated) {
                for (int r = 0; r < comp.dim; ++r) {
                    su.manipulated_rows.push_back(local + r);
                    weight(local + r, local + r) = 1.0;
                }
            }
            local += comp.dim;
        }
        su.cost_weight = weight;
        for (const auto& pred : scenario.predicted) {
            if (!clayout.has(pred.component)) continue;
            const auto slice = clayout.find(pred.component);
            if (slice.offset >= off && slice.offset < off + su.dim) {
                for (int r = pred.row_lo - 1; r <= pred.row_hi - 1; ++r) {
                    su.predicted_rows.push_back(slice.offset - off + r);
                }
            }
        }
        setup.controllers.push_back(std::move(su));
    }

    // Consensus coupling: [(pi_ip F_p)_perp pi_ic ; pi_c] over the online window.
    const MatrixXd blocked = matlib::ann_left(pi_ip_ext * plant_basis.basis);
    MatrixXd coupling(blocked.rows() + pi_c_ext.rows(), static_cast<Eigen::Index>(window) * wc);
    coupling.topRows(blocked.rows()) = blocked * pi_ic_ext;
    coupling.bottomRows(pi_c_ext.rows()) = pi_c_ext;
    setup.consensus.coupling = coupling;
    setup.consensus.layout = clayout;
    setup.consensus.window = window;
    setup.consensus.past = scenario.L_minus;
    setup.consensus.config = admm;

    // Single-step measurement map: w_c(k) solves [pi_ic; pi_c] w_c = [pi_ip w_p; 0].
    if (networks.controller.lag() != 0) {
        throw UnsupportedError("build_online_setup: dynamic controller networks not supported online");
    }
    const MatrixXd pi_ic0 = networks.pc_controller;
    const MatrixXd pi_c0 = networks.controller.poly_coeffs[0];
    MatrixXd k1(pi_ic0.rows() + pi_c0.rows(), wc);
    k1.topRows(pi_ic0.rows()) = pi_ic0;
    k1.bottomRows(pi_c0.rows()) = pi_c0;
    if (k1.rows() != k1.cols()) {
        throw GeneralCaseError("build_online_setup: per-step controller equations are not square");
    }
    Eigen::FullPivLU<MatrixXd> lu(k1);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible()) {
        throw GeneralCaseError("build_online_setup: per-step controller equations are singular");
    }
    MatrixXd rhs_map = MatrixXd::Zero(k1.rows(), scenario.plant_layout.total_dim());
    rhs_map.topRows(networks.pc_plant.rows()) = networks.pc_plant;
    setup.measure_from_wp = lu.solve(rhs_map);

    // Actuation: each plant manipulated component must be tied to a controller
    // manipulated component by one plant-controller equation.
    setup.plant_manipulated_rows =
        scenario.plant_layout.rows_of_kind(behavior::ComponentKind::Manipulated);
    setup.plant_exogenous_rows =
        scenario.plant_layout.rows_of_kind(behavior::ComponentKind::Exogenous);
    std::vector<int> manip_pos(scenario.plant_layout.total_dim(), -1);
    for (size_t i = 0; i < setup.plant_manipulated_rows.size(); ++i) {
        manip_pos[setup.plant_manipulated_rows[i]] = static_cast<int>(i);
    }
    setup.actuation.assign(setup.plant_manipulated_rows.size(), {});
    std::vector<bool> covered(setup.plant_manipulated_rows.size(), false);

    for (const auto& eq : scenario.network.plant_controller) {
        if (eq.rhs.size() != 1 || eq.rhs.front().row_lo != 0) continue;
        const bool lhs_ctrl = clayout.has(eq.lhs);
        const std::string& ctrl_name = lhs_ctrl ? eq.lhs : eq.rhs.front().component;
        const std::string& plant_name = lhs_ctrl ? eq.rhs.front().component : eq.lhs;
        if (!clayout.has(ctrl_name) || !scenario.plant_layout.has(plant_name)) continue;
        const auto pslice = scenario.plant_layout.find(plant_name);
        if (manip_pos[pslice.offset] < 0) continue;
        const auto cslice = clayout.find(ctrl_name);
        // locate the controller and the entry offset inside its implemented vector
        for (int j = 0; j < clayout.subsystem_count(); ++j) {
            const int off = clayout.subsystem_offset(j);
            if (cslice.offset < off || cslice.offset >= off + clayout.subsystems[j].dim()) continue;
            const auto& rows = setup.controllers[j].manipulated_rows;
            const int local = cslice.offset - off;
            for (int r = 0; r < pslice.dim; ++r) {
                const auto it = std::find(rows.begin(), rows.end(), local + r);
                if (it == rows.end()) {
                    throw InvalidInputError(
                        "build_online_setup: '" + ctrl_name + "' is not manipulated in its controller");
                }
                const int idx = manip_pos[pslice.offset + r];
                setup.actuation[idx] = {j, static_cast<int>(it - rows.begin())};
                covered[idx] = true;
            }
        }
    }
    for (size_t i = 0; i < covered.size(); ++i) {
        if (!covered[i]) {
            throw InvalidInputError(
                "build_online_setup: a plant manipulated row has no actuating controller");
        }
    }
    return setup;
}

namespace {

class SimulatorAdapter : public controller::PlantInterface {
public:
    SimulatorAdapter(const Scenario& scenario, const OnlineSetup& setup,
                     const DisturbanceProfile& profile)
        : sim_(scenario), setup_(setup), profile_(profile) {
        const auto& layout = scenario.plant_layout;
        free_rows_ = layout.free_rows();
        free_pos_.assign(layout.total_dim(), -1);
        for (size_t i = 0; i < free_rows_.size(); ++i) free_pos_[free_rows_[i]] = static_cast<int>(i);
        wp_dim_ = layout.total_dim();
    }

    // Open-loop warmup step (zero manipulated inputs).
    Eigen::VectorXd warm_step() {
        std::vector<VectorXd> zero;
        for (const auto& su : setup_.controllers) {
            zero.push_back(VectorXd::Zero(static_cast<Eigen::Index>(su.manipulated_rows.size())));
        }
        return advance(zero);
    }

    Eigen::VectorXd advance(const std::vector<Eigen::VectorXd>& implemented) override {
        VectorXd free_values = VectorXd::Zero(static_cast<Eigen::Index>(free_rows_.size()));
        const VectorXd level = profile_.level_at(k_);
        for (size_t i = 0; i < setup_.plant_exogenous_rows.size(); ++i) {
            free_values(free_pos_[setup_.plant_exogenous_rows[i]]) =
                level(static_cast<Eigen::Index>(i % level.size()));
        }
        for (size_t i = 0; i < setup_.plant_manipulated_rows.size(); ++i) {
            const auto& act = setup_.actuation[i];
            free_values(free_pos_[setup_.plant_manipulated_rows[i]]) =
                implemented.at(act.controller)(act.entry);
        }
        last_wp_ = sim_.step(free_values);
        ++k_;
        return setup_.measure_from_wp * last_wp_;
    }

    const VectorXd& last_wp() const { return last_wp_; }
    int step_index() const { return k_; }

private:
    NetworkSimulator sim_;
    const OnlineSetup& setup_;
    const DisturbanceProfile& profile_;
    std::vector<int> free_rows_;
    std::vector<int> free_pos_;
    int wp_dim_ = 0;
    VectorXd last_wp_;
    int k_ = 0;
};

std::vector<int> target_rows(const Scenario& scenario) {
    std::vector<int> rows;
    if (!scenario.supply.weighted) return rows;
    for (const auto& name : scenario.supply.weighted->target_outputs) {
        const auto slice = scenario.plant_layout.find(name);
        for (int r = 0; r < slice.dim; ++r) rows.push_back(slice.offset + r);
    }
    return rows;
}

std::vector<int> other_output_rows(const Scenario& scenario) {
    const auto targets = target_rows(scenario);
    std::vector<int> rows;
    for (int r : scenario.plant_layout.rows_of_kind(behavior::ComponentKind::Output)) {
        if (std::find(targets.begin(), targets.end(), r) == targets.end()) rows.push_back(r);
    }
    return rows;
}

}  // namespace

ClosedLoopResult closed_loop(const Scenario& scenario, const Dataset& dataset,
                             const synthesis::ControllerCertificate& certificate,
                             const DisturbanceProfile& profile, int steps,
                             const controller::AdmmConfig& admm) {
    profile.validate();
    const OnlineSetup setup = build_online_setup(scenario, dataset, certificate, admm);
    controller::ControllerNetwork network(setup.controllers, setup.consensus);
    SimulatorAdapter adapter(scenario, setup, profile);

    const int past = scenario.L_minus;
    if (steps <= past) {
        throw InvalidInputError("closed_loop: step count must exceed L^-");
    }
    const int wc = scenario.controller_layout.total_dim();
    const int wp = scenario.plant_layout.total_dim();

    ClosedLoopResult result;
    result.plant_record.values.resize(wp, steps);
    result.controller_record.values.resize(wc, steps);

    MatrixXd history(wc, past);
    for (int k = 0; k < past; ++k) {
        const VectorXd wck = adapter.warm_step();
        history.col(k) = wck;
        result.controller_record.values.col(k) = wck;
        result.plant_record.values.col(k) = adapter.last_wp();
    }
    network.warm_start(history);

    result.metrics.min_local_margin = std::numeric_limits<double>::infinity();
    for (int k = past; k < steps; ++k) {
        controller::HorizonResult hr = network.step(adapter);
        result.plant_record.values.col(k) = adapter.last_wp();
        result.controller_record.values.col(k) =
            setup.measure_from_wp * adapter.last_wp();
        result.metrics.max_consensus_residual =
            std::max(result.metrics.max_consensus_residual, hr.consensus_residual);
        for (double m : hr.local_margins) {
            result.metrics.min_local_margin = std::min(result.metrics.min_local_margin, m);
        }
        if (!hr.converged) ++result.metrics.nonconverged_horizons;
        result.horizons.push_back(std::move(hr));
    }

    // Attenuation metrics per disturbance change.
    const auto targets = target_rows(scenario);
    const auto others = other_output_rows(scenario);
    auto mean_segment = [&](int from, int to, const std::vector<int>& rows) {
        VectorXd mean = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
        const int lo = std::max(from, to - 10);
        for (int k = lo; k < to; ++k) {
            for (size_t i = 0; i < rows.size(); ++i) {
                mean(static_cast<Eigen::Index>(i)) += result.plant_record.values(rows[i], k);
            }
        }
        return VectorXd(mean / std::max(1, to - std::max(from, to - 10)));
    };

    VectorXd prev_level = VectorXd::Zero(profile.dim);
    int prev_start = 0;
    for (size_t c = 0; c < profile.changes.size(); ++c) {
        const auto& change = profile.changes[c];
        const int seg_end = (c + 1 < profile.changes.size()) ? profile.changes[c + 1].at_step : steps;
        if (change.at_step >= steps) break;
        ChangeMetrics cm;
        cm.at_step = change.at_step;
        cm.delta_d = (change.level - prev_level).norm();
        const VectorXd before = mean_segment(prev_start, change.at_step, targets);
        const VectorXd after = mean_segment(change.at_step, seg_end, targets);
        cm.attenuation_ratio = cm.delta_d > 0.0 ? (after - before).norm() / cm.delta_d : 0.0;
        const double band = 0.05 * cm.delta_d;
        int last_violation = -1;
        for (int k = change.at_step; k < seg_end; ++k) {
            double dev = 0.0;
            for (size_t i = 0; i < targets.size(); ++i) {
                const double e =
                    result.plant_record.values(targets[i], k) - after(static_cast<Eigen::Index>(i));
                dev += e * e;
            }
            if (std::sqrt(dev) > band) last_violation = k;
        }
        cm.settle_steps = last_violation < 0 ? 0 : last_violation - change.at_step + 1;
        cm.settled = last_violation < seg_end - 1;
        result.metrics.changes.push_back(cm);
        prev_level = change.level;
        prev_start = change.at_step;
    }

    for (int k = past; k < steps; ++k) {
        for (int r : others) {
            result.metrics.max_other_output =
                std::max(result.metrics.max_other_output, std::abs(result.plant_record.values(r, k)));
        }
    }
    for (const auto& change : profile.changes) {
        result.metrics.max_disturbance =
            std::max(result.metrics.max_disturbance, change.level.cwiseAbs().maxCoeff());
    }
    if (result.horizons.empty()) {
        result.metrics.min_local_margin = 0.0;
    }
    return result;
}

void write_step_log(const ClosedLoopResult& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw InvalidInputError("write_step_log: cannot open " + path);
    }
    os.precision(17);
    const int wc = static_cast<int>(r.controller_record.values.rows());
    const int wp = static_cast<int>(r.plant_record.values.rows());
    os << "k";
    for (int i = 0; i < wc; ++i) os << ",wc" << i;
    for (int i = 0; i < wp; ++i) os << ",wp" << i;
    os << ",cost,primal_residual,dual_residual,min_local_margin,iterations\n";
    const int first_horizon = static_cast<int>(r.plant_record.values.cols()) -
                              static_cast<int>(r.horizons.size());
    for (int k = 0; k < r.plant_record.values.cols(); ++k) {
        os << k;
        for (int i = 0; i < wc; ++i) os << ',' << r.controller_record.values(i, k);
        for (int i = 0; i < wp; ++i) os << ',' << r.plant_record.values(i, k);
        if (k >= first_horizon) {
            const auto& hr = r.horizons[k - first_horizon];
            double min_margin = std::numeric_limits<double>::infinity();
            for (double m : hr.local_margins) min_margin = std::min(min_margin, m);
            os << ',' << hr.cost << ',' << hr.consensus_residual << ',' << hr.dual_residual << ','
               << min_margin << ',' << hr.iterations;
        } else {
            os << ",0,0,0,0,0";
        }
        os << '\n';
    }
}

void write_plot_csv(const ClosedLoopResult& r, const behavior::VariableLayout& layout,
                    const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw InvalidInputError("write_plot_csv: cannot open " + path);
    }
    os.precision(17);
    os << "step,variable,value\n";
    int off = 0;
    for (const auto& sub : layout.subsystems) {
        for (const auto& comp : sub.components) {
            const bool keep = comp.kind == behavior::ComponentKind::Output ||
                              comp.kind == behavior::ComponentKind::Exogenous;
            if (keep) {
                for (int rdim = 0; rdim < comp.dim; ++rdim) {
                    const std::string name =
                        comp.dim > 1 ? comp.name + "_" + std::to_string(rdim + 1) : comp.name;
                    for (int k = 0; k < r.plant_record.values.cols(); ++k) {
                        os << k << ',' << name << ',' << r.plant_record.values(off + rdim, k)
                           << '\n';
                    }
                }
            }
            off += comp.dim;
        }
    }
}

}  // namespace ddpc::plant
