#include "ddpc/qdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "ddpc/matlib.hpp"

namespace ddpc::qdf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void QdF::validate(double sym_tol) const {
    if (order < 0 || dim <= 0) {
        throw InvalidInputError("QdF: order must be >= 0 and dim positive");
    }
    if (coeff.rows() != coeff_dim() || coeff.cols() != coeff_dim()) {
        throw InvalidInputError("QdF: coefficient size does not match (order + 1) * dim");
    }
    const double scale = std::max(1.0, coeff.cwiseAbs().maxCoeff());
    if ((coeff - coeff.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) {
        throw InvalidInputError("QdF: coefficient matrix is not symmetric");
    }
}

QdF QdF::zero(int order, int dim) {
    QdF q;
    q.order = order;
    q.dim = dim;
    q.coeff = MatrixXd::Zero((order + 1) * dim, (order + 1) * dim);
    return q;
}

double eval(const QdF& q, const behavior::Trajectory& t, int k) {
    q.validate();
    if (t.dim() != q.dim) {
        throw InvalidInputError("qdf::eval: trajectory dimension mismatch");
    }
    if (k <= q.order || k > t.length()) {
        throw InvalidInputError("qdf::eval: step has insufficient history");
    }
    const VectorXd w = t.stacked(k - q.order, k);
    return w.dot(q.coeff * w);
}

QdF nabla(const QdF& storage) {
    storage.validate();
    const int w = storage.dim;
    const int n = storage.coeff_dim();
    QdF out = QdF::zero(storage.order + 1, w);
    out.coeff.block(w, w, n, n) += storage.coeff;
    out.coeff.block(0, 0, n, n) -= storage.coeff;
    return out;
}

Eigen::MatrixXd pad(const QdF& q, int past) {
    q.validate();
    if (past < q.order) {
        throw InvalidInputError("qdf::pad: past window shorter than the form order");
    }
    const int n = (past + 1) * q.dim;
    MatrixXd out = MatrixXd::Zero(n, n);
    out.bottomRightCorner(q.coeff_dim(), q.coeff_dim()) = q.coeff;
    return out;
}

DissipativityReport check_dissipativity(const behavior::BehaviorBasis& basis,
                                        const QdF& supply, const QdF& storage,
                                        const DissipOptions& opts) {
    basis.validate();
    supply.validate();
    storage.validate();
    const int w = basis.step_dim();
    if (supply.dim != w || storage.dim != w) {
        throw InvalidInputError("check_dissipativity: form dimension does not match the basis");
    }
    if (!matlib::is_psd(storage.coeff, opts.tol_scale)) {
        throw InvalidInputError("check_dissipativity: storage coefficient must be PSD");
    }
    const int needed = std::max(supply.order, storage.order + 1);
    if (basis.past < needed) {
        throw WindowError("check_dissipativity: past window shorter than max{K_phi, K_psi + 1}");
    }
    if (basis.past <= opts.lag_bound) {
        throw WindowError("check_dissipativity: past window must exceed the lag bound");
    }
    const MatrixXd supply_hat = pad(supply, basis.past);
    const MatrixXd rate_hat = pad(nabla(storage), basis.past);
    const MatrixXd delta = supply_hat - rate_hat;

    DissipativityReport report;
    report.dissipative = true;
    for (int l = 0; l <= basis.future; ++l) {
        const MatrixXd fl = behavior::window(basis, l);
        const MatrixXd projected = fl.transpose() * delta * fl;
        const double margin = matlib::psd_margin(projected);
        report.margins.push_back(margin);
        if (margin < -opts.tol_scale * (1.0 + projected.norm())) {
            report.dissipative = false;
        }
    }
    return report;
}

ManifestResult quadratic_manifest(const Eigen::MatrixXd& m, int split, double tol_scale) {
    if (m.rows() != m.cols()) {
        throw InvalidInputError("quadratic_manifest: matrix must be square");
    }
    if (split <= 0 || split >= m.rows()) {
        throw InvalidInputError("quadratic_manifest: split must partition the matrix");
    }
    const MatrixXd sym = 0.5 * (m + m.transpose());
    const int n2 = static_cast<int>(m.rows()) - split;
    const MatrixXd q = sym.topLeftCorner(split, split);
    const MatrixXd s = sym.topRightCorner(split, n2);
    const MatrixXd r = sym.bottomRightCorner(n2, n2);

    ManifestResult out;
    // Restricted exactly when R <= 0; R = 0 falls into this branch as well.
    if (matlib::is_psd(-r, tol_scale)) {
        out.restricted = true;
        out.reduced = q - s * matlib::pinv(r) * s.transpose();
        out.guard = matlib::ann_left(r) * s.transpose();
    } else {
        out.restricted = false;
    }
    return out;
}

bool freeness_check(const Eigen::MatrixXd& m, int split, double tol_scale) {
    if (m.rows() != m.cols()) {
        throw InvalidInputError("freeness_check: matrix must be square");
    }
    if (split <= 0 || split > m.rows()) {
        throw InvalidInputError("freeness_check: bad split");
    }
    const MatrixXd sym = 0.5 * (m + m.transpose());
    return matlib::is_psd(sym.topLeftCorner(split, split), tol_scale);
}

void SupplyRateSpec::validate() const {
    if (direct.has_value() == weighted.has_value()) {
        throw InvalidInputError("SupplyRateSpec: exactly one of direct/weighted required");
    }
    if (direct) direct->validate();
    if (weighted) {
        if (weighted->disturbances.empty()) {
            throw InvalidInputError("SupplyRateSpec: weighted form needs disturbance names");
        }
        if (weighted->stabilization_weight < 0.0) {
            throw InvalidInputError("SupplyRateSpec: stabilization weight must be >= 0");
        }
    }
}

namespace {

MatrixXd selection_matrix(const behavior::VariableLayout& layout,
                          const std::vector<std::string>& names) {
    int total = 0;
    for (const auto& n : names) total += layout.find(n).dim;
    MatrixXd sel = MatrixXd::Zero(total, layout.total_dim());
    int at = 0;
    for (const auto& n : names) {
        const auto slice = layout.find(n);
        for (int r = 0; r < slice.dim; ++r) {
            sel(at + r, slice.offset + r) = 1.0;
        }
        at += slice.dim;
    }
    return sel;
}

}  // namespace

QdF build_supply(const SupplyRateSpec& spec, const behavior::VariableLayout& layout) {
    spec.validate();
    layout.validate();
    if (spec.direct) {
        QdF q = *spec.direct;
        if (q.dim != layout.total_dim()) {
            throw InvalidInputError("build_supply: direct QdF dimension does not match layout");
        }
        return q;
    }
    const auto& wspec = *spec.weighted;
    const int w = layout.total_dim();

    // Resolve names; targeted components must be outputs, disturbances exogenous.
    for (const auto& n : wspec.target_outputs) layout.find(n);
    for (const auto& n : wspec.disturbances) layout.find(n);

    std::vector<std::string> other_outputs;
    for (const auto& sub : layout.subsystems) {
        for (const auto& c : sub.components) {
            if (c.kind != behavior::ComponentKind::Output) continue;
            const bool targeted = std::find(wspec.target_outputs.begin(),
                                            wspec.target_outputs.end(),
                                            c.name) != wspec.target_outputs.end();
            if (!targeted) other_outputs.push_back(c.name);
        }
    }

    const MatrixXd pd = selection_matrix(layout, wspec.disturbances);
    const MatrixXd pt = wspec.target_outputs.empty()
                            ? MatrixXd::Zero(0, w)
                            : selection_matrix(layout, wspec.target_outputs);
    const MatrixXd po = other_outputs.empty() ? MatrixXd::Zero(0, w)
                                              : selection_matrix(layout, other_outputs);

    QdF q = QdF::zero(1, w);
    auto prev = [&](MatrixXd& coeff) { return coeff.block(0, 0, w, w); };
    auto cross = [&](MatrixXd& coeff) { return coeff.block(0, w, w, w); };
    auto cur = [&](MatrixXd& coeff) { return coeff.block(w, w, w, w); };

    const MatrixXd dd = pd.transpose() * pd;
    const double d0 = wspec.den.c0;
    const double d1 = wspec.den.c1;
    cur(q.coeff) += d0 * d0 * dd;
    prev(q.coeff) += d1 * d1 * dd;
    cross(q.coeff) += d0 * d1 * dd;

    if (pt.rows() > 0) {
        const MatrixXd tt = pt.transpose() * pt;
        const double n0 = wspec.num.c0;
        const double n1 = wspec.num.c1;
        cur(q.coeff) -= n0 * n0 * tt;
        prev(q.coeff) -= n1 * n1 * tt;
        cross(q.coeff) -= n0 * n1 * tt;
    }
    if (po.rows() > 0) {
        cur(q.coeff) -= wspec.stabilization_weight * (po.transpose() * po);
    }
    q.coeff.block(w, 0, w, w) = q.coeff.block(0, w, w, w).transpose();
    q.validate();
    return q;
}

bool verify_storage_certificate(const std::vector<double>& supply_seq,
                                const std::vector<double>& storage_seq, double tol) {
    if (supply_seq.size() != storage_seq.size() || supply_seq.empty()) {
        throw InvalidInputError("verify_storage_certificate: sequences must be non-empty and equal length");
    }
    const int n = static_cast<int>(supply_seq.size());
    double scale = 1.0;
    for (int k = 0; k < n; ++k) {
        scale = std::max({scale, std::abs(supply_seq[k]), std::abs(storage_seq[k])});
    }
    const double slack = tol * scale;
    for (int k = 0; k < n; ++k) {
        if (storage_seq[k] < -slack) return false;
    }
    for (int k = 1; k < n; ++k) {
        if (storage_seq[k] - storage_seq[k - 1] > supply_seq[k] + slack) return false;
    }
    // Running-sum bound: -sum_{k0..k1} s <= V(k0 - 1) for every sub-interval.
    // With prefix sums S, this is S[k0-1] - min_{k1 >= k0} S[k1] <= V(k0 - 1).
    std::vector<double> prefix(n, 0.0);
    for (int k = 1; k < n; ++k) prefix[k] = prefix[k - 1] + supply_seq[k];
    std::vector<double> suffix_min(n, 0.0);
    suffix_min[n - 1] = prefix[n - 1];
    for (int k = n - 2; k >= 0; --k) suffix_min[k] = std::min(prefix[k], suffix_min[k + 1]);
    for (int k0 = 1; k0 < n; ++k0) {
        if (prefix[k0 - 1] - suffix_min[k0] > storage_seq[k0 - 1] + slack) return false;
    }
    return true;
}

std::string qdf_to_json(const QdF& q) {
    q.validate();
    nlohmann::json j;
    j["order"] = q.order;
    j["dim"] = q.dim;
    std::vector<double> coeff;
    coeff.reserve(q.coeff.size());
    for (int r = 0; r < q.coeff.rows(); ++r) {
        for (int c = 0; c < q.coeff.cols(); ++c) {
            coeff.push_back(q.coeff(r, c));
        }
    }
    j["coeff"] = coeff;
    return j.dump(2);
}

QdF qdf_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    QdF q;
    q.order = j.at("order").get<int>();
    q.dim = j.at("dim").get<int>();
    const auto coeff = j.at("coeff").get<std::vector<double>>();
    const int n = (q.order + 1) * q.dim;
    if (static_cast<int>(coeff.size()) != n * n) {
        throw InvalidInputError("qdf_from_json: coefficient length mismatch");
    }
    q.coeff.resize(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            q.coeff(r, c) = coeff[r * n + c];
        }
    }
    q.validate();
    return q;
}

std::string supply_spec_to_json(const SupplyRateSpec& spec) {
    spec.validate();
    nlohmann::json j;
    if (spec.direct) {
        j["direct"] = nlohmann::json::parse(qdf_to_json(*spec.direct));
    } else {
        const auto& w = *spec.weighted;
        j["weighted"] = {{"targets", w.target_outputs},
                         {"disturbances", w.disturbances},
                         {"num", {w.num.c0, w.num.c1}},
                         {"den", {w.den.c0, w.den.c1}},
                         {"stabilization_weight", w.stabilization_weight}};
    }
    return j.dump(2);
}

SupplyRateSpec supply_spec_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SupplyRateSpec spec;
    if (j.contains("direct")) {
        spec.direct = qdf_from_json(j.at("direct").dump());
    } else if (j.contains("weighted")) {
        const auto& jw = j.at("weighted");
        SupplyRateSpec::Weighted w;
        w.target_outputs = jw.at("targets").get<std::vector<std::string>>();
        w.disturbances = jw.at("disturbances").get<std::vector<std::string>>();
        const auto num = jw.at("num").get<std::vector<double>>();
        const auto den = jw.at("den").get<std::vector<double>>();
        if (num.size() > 2 || den.size() > 2 || num.empty() || den.empty()) {
            throw UnsupportedError("supply spec: only first-order weighting filters are supported");
        }
        w.num.c0 = num[0];
        w.num.c1 = num.size() > 1 ? num[1] : 0.0;
        w.den.c0 = den[0];
        w.den.c1 = den.size() > 1 ? den[1] : 0.0;
        w.stabilization_weight = jw.value("stabilization_weight", 1e-3);
        spec.weighted = w;
    }
    spec.validate();
    return spec;
}

}  // namespace ddpc::qdf
