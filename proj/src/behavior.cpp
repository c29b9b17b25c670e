#include "ddpc/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ddpc::behavior {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd Trajectory::stacked(int from, int to) const {
    if (from < 1 || to > length() || from > to) {
        throw InvalidInputError("Trajectory::stacked: window out of range");
    }
    const int steps = to - from + 1;
    VectorXd out(steps * dim());
    for (int k = 0; k < steps; ++k) {
        out.segment(k * dim(), dim()) = values.col(from - 1 + k);
    }
    return out;
}

int TrajectorySet::dim() const {
    if (trajectories.empty()) {
        throw InvalidInputError("TrajectorySet: empty");
    }
    return trajectories.front().dim();
}

void TrajectorySet::validate() const {
    if (trajectories.empty()) {
        throw InvalidInputError("TrajectorySet: empty");
    }
    const int d = trajectories.front().dim();
    for (const auto& t : trajectories) {
        if (t.dim() != d) {
            throw InvalidInputError("TrajectorySet: dimension mismatch across trajectories");
        }
        if (t.length() < 1) {
            throw InvalidInputError("TrajectorySet: empty trajectory");
        }
        if (!t.values.allFinite()) {
            throw InvalidInputError("TrajectorySet: non-finite entries");
        }
    }
}

int SubsystemLayout::dim() const {
    int d = 0;
    for (const auto& c : components) d += c.dim;
    return d;
}

int VariableLayout::total_dim() const {
    int d = 0;
    for (const auto& s : subsystems) d += s.dim();
    return d;
}

int VariableLayout::subsystem_offset(int i) const {
    int off = 0;
    for (int j = 0; j < i; ++j) off += subsystems[j].dim();
    return off;
}

void VariableLayout::validate() const {
    if (subsystems.empty()) {
        throw InvalidInputError("VariableLayout: no subsystems");
    }
    std::set<std::string> names;
    for (const auto& s : subsystems) {
        if (s.components.empty()) {
            throw InvalidInputError("VariableLayout: subsystem without components");
        }
        for (const auto& c : s.components) {
            if (c.dim <= 0) {
                throw InvalidInputError("VariableLayout: component with non-positive dim");
            }
            if (!names.insert(c.name).second) {
                throw InvalidInputError("VariableLayout: duplicate component name " + c.name);
            }
        }
    }
}

Slice VariableLayout::find(const std::string& component_name) const {
    int off = 0;
    for (const auto& s : subsystems) {
        for (const auto& c : s.components) {
            if (c.name == component_name) {
                return Slice{off, c.dim};
            }
            off += c.dim;
        }
    }
    throw InvalidInputError("VariableLayout: unresolved component " + component_name);
}

bool VariableLayout::has(const std::string& component_name) const {
    for (const auto& s : subsystems) {
        for (const auto& c : s.components) {
            if (c.name == component_name) return true;
        }
    }
    return false;
}

std::vector<int> VariableLayout::rows_of_kind(ComponentKind kind) const {
    std::vector<int> rows;
    int off = 0;
    for (const auto& s : subsystems) {
        for (const auto& c : s.components) {
            if (c.kind == kind) {
                for (int r = 0; r < c.dim; ++r) rows.push_back(off + r);
            }
            off += c.dim;
        }
    }
    return rows;
}

std::vector<int> VariableLayout::free_rows() const {
    std::vector<int> rows;
    int off = 0;
    for (const auto& s : subsystems) {
        for (const auto& c : s.components) {
            if (c.kind == ComponentKind::Manipulated || c.kind == ComponentKind::Exogenous) {
                for (int r = 0; r < c.dim; ++r) rows.push_back(off + r);
            }
            off += c.dim;
        }
    }
    return rows;
}

std::vector<int> VariableLayout::free_rows_local(int i) const {
    std::vector<int> rows;
    int off = 0;
    for (const auto& c : subsystems.at(i).components) {
        if (c.kind == ComponentKind::Manipulated || c.kind == ComponentKind::Exogenous) {
            for (int r = 0; r < c.dim; ++r) rows.push_back(off + r);
        }
        off += c.dim;
    }
    return rows;
}

std::string VariableLayout::canonical_string() const {
    std::ostringstream os;
    for (const auto& s : subsystems) {
        os << s.name << '{';
        for (const auto& c : s.components) {
            os << c.name << ':' << c.dim << ':' << static_cast<int>(c.kind) << ';';
        }
        os << '}';
    }
    return os.str();
}

int InterconnectionRep::lag() const {
    for (int t = static_cast<int>(poly_coeffs.size()) - 1; t >= 0; --t) {
        if (poly_coeffs[t].size() > 0 && poly_coeffs[t].cwiseAbs().maxCoeff() > 0.0) {
            return t;
        }
    }
    return 0;
}

int InterconnectionRep::rows() const {
    return poly_coeffs.empty() ? 0 : static_cast<int>(poly_coeffs.front().rows());
}

int InterconnectionRep::var_dim() const {
    return poly_coeffs.empty() ? 0 : static_cast<int>(poly_coeffs.front().cols());
}

void InterconnectionRep::validate() const {
    if (poly_coeffs.empty()) {
        throw InvalidInputError("InterconnectionRep: no coefficients");
    }
    for (const auto& c : poly_coeffs) {
        if (c.rows() != rows() || c.cols() != var_dim()) {
            throw InvalidInputError("InterconnectionRep: coefficient shape mismatch");
        }
    }
}

InterconnectionRep InterconnectionRep::constant(const Eigen::MatrixXd& pi0) {
    return InterconnectionRep{{pi0}};
}

Eigen::MatrixXd extend_coefficients(const InterconnectionRep& rep, int window_len) {
    rep.validate();
    const int lag = rep.lag();
    if (window_len <= lag) {
        throw WindowError("extend_coefficients: window length must exceed the lag");
    }
    const int m = rep.rows();
    const int w = rep.var_dim();
    const int block_rows = window_len - lag;
    MatrixXd ext = MatrixXd::Zero(block_rows * m, window_len * w);
    for (int r = 0; r < block_rows; ++r) {
        for (int t = 0; t <= lag; ++t) {
            ext.block(r * m, (r + t) * w, m, w) = rep.poly_coeffs[t];
        }
    }
    return ext;
}

void BehaviorBasis::validate() const {
    layout.validate();
    if (past + future + 1 != window_len || past < 0 || future < 0) {
        throw InvalidInputError("BehaviorBasis: inconsistent window split");
    }
    if (basis.rows() != static_cast<Eigen::Index>(window_len) * layout.total_dim()) {
        throw InvalidInputError("BehaviorBasis: row count does not match window * dim");
    }
}

Eigen::MatrixXd hankel(const Trajectory& t, int order) {
    if (order < 1) {
        throw InvalidInputError("hankel: order must be positive");
    }
    if (order > t.length()) {
        throw WindowError("hankel: window longer than the trajectory");
    }
    const int w = t.dim();
    const int cols = t.length() - order + 1;
    MatrixXd h(order * w, cols);
    for (int j = 0; j < cols; ++j) {
        for (int k = 0; k < order; ++k) {
            h.block(k * w, j, w, 1) = t.values.col(j + k);
        }
    }
    return h;
}

Eigen::MatrixXd mosaic_hankel(const TrajectorySet& s, int order) {
    s.validate();
    std::vector<MatrixXd> blocks;
    blocks.reserve(s.trajectories.size());
    for (const auto& t : s.trajectories) {
        blocks.push_back(hankel(t, order));
    }
    Eigen::Index cols = 0;
    for (const auto& b : blocks) cols += b.cols();
    MatrixXd h(blocks.front().rows(), cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        h.middleCols(at, b.cols()) = b;
        at += b.cols();
    }
    return h;
}

PeCheck is_persistently_exciting(const TrajectorySet& s, int order) {
    const MatrixXd h = mosaic_hankel(s, order);
    PeCheck out;
    out.required = order * s.dim();
    out.rank = matlib::rank(h);
    out.verdict = (out.rank == out.required);
    return out;
}

MembershipResult membership(const BehaviorBasis& b, const Eigen::VectorXd& v, double tol) {
    if (v.size() != b.basis.rows()) {
        throw InvalidInputError("membership: vector length does not match basis rows");
    }
    const MatrixXd q = b.orthonormal ? b.basis : matlib::orth(b.basis);
    const VectorXd proj = q * (q.transpose() * v);
    MembershipResult out;
    out.residual = (v - proj).norm() / std::max(1.0, v.norm());
    out.inside = out.residual <= tol;
    return out;
}

Eigen::MatrixXd interleave_hankels(const std::vector<Eigen::MatrixXd>& hankels,
                                   const VariableLayout& layout, int window_len) {
    layout.validate();
    const int n_sub = layout.subsystem_count();
    if (static_cast<int>(hankels.size()) != n_sub) {
        throw InvalidInputError("interleave_hankels: one Hankel matrix per subsystem required");
    }
    Eigen::Index total_cols = 0;
    for (int i = 0; i < n_sub; ++i) {
        const int wi = layout.subsystems[i].dim();
        if (hankels[i].rows() != static_cast<Eigen::Index>(window_len) * wi) {
            throw InvalidInputError("interleave_hankels: Hankel rows do not match window * subsystem dim");
        }
        total_cols += hankels[i].cols();
    }
    const int w = layout.total_dim();
    MatrixXd stacked = MatrixXd::Zero(static_cast<Eigen::Index>(window_len) * w, total_cols);
    Eigen::Index col_at = 0;
    for (int i = 0; i < n_sub; ++i) {
        const int wi = layout.subsystems[i].dim();
        const int row_off = layout.subsystem_offset(i);
        for (int k = 0; k < window_len; ++k) {
            stacked.block(static_cast<Eigen::Index>(k) * w + row_off, col_at, wi,
                          hankels[i].cols()) = hankels[i].middleRows(static_cast<Eigen::Index>(k) * wi, wi);
        }
        col_at += hankels[i].cols();
    }
    return stacked;
}

BehaviorBasis interconnect(const std::vector<Eigen::MatrixXd>& hankels,
                           const VariableLayout& layout, const Eigen::MatrixXd& pi_ext,
                           int window_len, int past, const BasisOptions& opts) {
    const MatrixXd stacked = interleave_hankels(hankels, layout, window_len);
    MatrixXd f;
    if (pi_ext.rows() == 0) {
        f = stacked;
    } else {
        if (pi_ext.cols() != stacked.rows()) {
            throw InvalidInputError("interconnect: network matrix columns do not match window dim");
        }
        const MatrixXd constrained = pi_ext * stacked;
        f = stacked * matlib::ann_right(constrained, opts.rank_tol);
    }
    BehaviorBasis b;
    b.window_len = window_len;
    b.past = past;
    b.future = window_len - past - 1;
    b.layout = layout;
    if (opts.compress) {
        b.basis = matlib::orth(f, opts.rank_tol);
        b.orthonormal = true;
    } else {
        b.basis = f;
        b.orthonormal = false;
    }
    b.validate();
    return b;
}

std::vector<ExcitationError::Item> check_free_excitation(
    const std::vector<TrajectorySet>& data, const VariableLayout& layout, int order) {
    std::vector<ExcitationError::Item> items;
    for (int i = 0; i < layout.subsystem_count(); ++i) {
        const auto rows = layout.free_rows_local(i);
        if (rows.empty()) continue;  // nothing to excite in this subsystem
        TrajectorySet sliced;
        for (const auto& t : data.at(i).trajectories) {
            Trajectory s;
            s.values.resize(rows.size(), t.length());
            for (size_t r = 0; r < rows.size(); ++r) {
                s.values.row(r) = t.values.row(rows[r]);
            }
            sliced.trajectories.push_back(std::move(s));
        }
        const PeCheck pe = is_persistently_exciting(sliced, order);
        if (!pe.verdict) {
            items.push_back({i, pe.rank, pe.required});
        }
    }
    return items;
}

BehaviorBasis interconnect(const std::vector<TrajectorySet>& data,
                           const VariableLayout& layout, const InterconnectionRep& network,
                           int window_len, int past, int pe_order, const BasisOptions& opts) {
    layout.validate();
    if (static_cast<int>(data.size()) != layout.subsystem_count()) {
        throw InvalidInputError("interconnect: one trajectory set per subsystem required");
    }
    for (int i = 0; i < layout.subsystem_count(); ++i) {
        data[i].validate();
        if (data[i].dim() != layout.subsystems[i].dim()) {
            throw InvalidInputError("interconnect: data dim does not match layout for subsystem " +
                                    layout.subsystems[i].name);
        }
    }
    if (pe_order > 0) {
        const auto deficient = check_free_excitation(data, layout, pe_order);
        if (!deficient.empty()) {
            std::ostringstream os;
            os << "interconnect: free components not persistently exciting of order " << pe_order
               << " in subsystem(s)";
            for (const auto& d : deficient) {
                os << ' ' << layout.subsystems[d.subsystem].name << " (rank " << d.rank << '/'
                   << d.required << ')';
            }
            throw ExcitationError(os.str(), deficient);
        }
    }
    std::vector<MatrixXd> hankels;
    hankels.reserve(data.size());
    for (const auto& set : data) {
        hankels.push_back(mosaic_hankel(set, window_len));
    }
    MatrixXd pi_ext;
    if (network.rows() > 0) {
        if (window_len <= network.lag()) {
            throw WindowError("interconnect: window length must exceed the network lag");
        }
        pi_ext = extend_coefficients(network, window_len);
    } else {
        pi_ext = MatrixXd(0, static_cast<Eigen::Index>(window_len) * layout.total_dim());
    }
    return interconnect(hankels, layout, pi_ext, window_len, past, opts);
}

Eigen::MatrixXd window(const BehaviorBasis& b, int l) {
    if (l < 0 || l > b.future) {
        throw InvalidInputError("window: offset outside [0, future]");
    }
    const int w = b.step_dim();
    return b.basis.middleRows(static_cast<Eigen::Index>(l) * w,
                              static_cast<Eigen::Index>(b.past + 1) * w);
}

Trajectory weave(const Trajectory& w1, const Trajectory& w2, int l,
                 const BehaviorBasis* basis, double tol) {
    if (w1.dim() != w2.dim()) {
        throw InvalidInputError("weave: dimension mismatch");
    }
    if (w1.length() != w2.length()) {
        throw InvalidInputError("weave: windows must have equal length");
    }
    const int L = w1.length();
    if (l < 1 || l > L) {
        throw InvalidInputError("weave: overlap must be in [1, L]");
    }
    const MatrixXd tail = w1.values.rightCols(l);
    const MatrixXd head = w2.values.leftCols(l);
    const double deviation = (tail - head).cwiseAbs().maxCoeff();
    if (deviation > tol) {
        throw WeaveError("weave: overlap mismatch", deviation);
    }
    if (basis != nullptr) {
        for (const Trajectory* t : {&w1, &w2}) {
            const auto m = membership(*basis, t->stacked(1, L), tol);
            if (!m.inside) {
                throw InvalidInputError("weave: input window fails basis membership");
            }
        }
    }
    Trajectory out;
    out.values.resize(w1.dim(), 2 * L - l);
    out.values.leftCols(L) = w1.values;
    out.values.rightCols(L - l) = w2.values.rightCols(L - l);
    return out;
}

Eigen::MatrixXd manifest_from_latent(const Eigen::MatrixXd& r_ext,
                                     const Eigen::MatrixXd& m_ext) {
    if (m_ext.rows() != r_ext.rows()) {
        throw InvalidInputError("manifest_from_latent: row count mismatch");
    }
    if (m_ext.size() == 0 || m_ext.cwiseAbs().maxCoeff() == 0.0) {
        return matlib::ann_right(r_ext);
    }
    const MatrixXd blocked = matlib::ann_left(m_ext) * r_ext;
    return matlib::ann_right(blocked);
}

int lag_bound(const std::vector<int>& subsystem_lags, int network_lag) {
    int bound = network_lag;
    for (int l : subsystem_lags) bound = std::max(bound, l);
    return bound;
}

int order_bound(const std::vector<int>& subsystem_ns, int network_n, int window_len) {
    int bound = window_len + network_n;
    for (int n : subsystem_ns) bound += n;
    return bound;
}

void write_csv(const Trajectory& t, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw InvalidInputError("write_csv: cannot open " + path);
    }
    os.precision(17);
    for (int k = 0; k < t.length(); ++k) {
        for (int r = 0; r < t.dim(); ++r) {
            if (r > 0) os << ',';
            os << t.values(r, k);
        }
        os << '\n';
    }
}

Trajectory read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw InvalidInputError("read_csv: cannot open " + path);
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            row.push_back(std::stod(cell));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw InvalidInputError("read_csv: ragged rows in " + path);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw InvalidInputError("read_csv: empty file " + path);
    }
    Trajectory t;
    t.values.resize(rows.front().size(), rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
        for (size_t r = 0; r < rows[k].size(); ++r) {
            t.values(r, k) = rows[k][r];
        }
    }
    return t;
}

namespace {

const char* kind_name(ComponentKind k) {
    switch (k) {
        case ComponentKind::Output: return "output";
        case ComponentKind::Coupling: return "coupling";
        case ComponentKind::Manipulated: return "manipulated";
        case ComponentKind::Exogenous: return "exogenous";
    }
    return "output";
}

ComponentKind kind_from_name(const std::string& s) {
    if (s == "output") return ComponentKind::Output;
    if (s == "coupling") return ComponentKind::Coupling;
    if (s == "manipulated") return ComponentKind::Manipulated;
    if (s == "exogenous") return ComponentKind::Exogenous;
    throw InvalidInputError("layout: unknown component kind " + s);
}

}  // namespace

std::string layout_to_json(const VariableLayout& layout) {
    nlohmann::json j;
    j["subsystems"] = nlohmann::json::array();
    for (const auto& s : layout.subsystems) {
        nlohmann::json js;
        js["name"] = s.name;
        js["components"] = nlohmann::json::array();
        for (const auto& c : s.components) {
            js["components"].push_back(
                {{"name", c.name}, {"dim", c.dim}, {"kind", kind_name(c.kind)}});
        }
        j["subsystems"].push_back(js);
    }
    return j.dump(2);
}

VariableLayout layout_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    VariableLayout layout;
    for (const auto& js : j.at("subsystems")) {
        SubsystemLayout s;
        s.name = js.at("name").get<std::string>();
        for (const auto& jc : js.at("components")) {
            Component c;
            c.name = jc.at("name").get<std::string>();
            c.dim = jc.at("dim").get<int>();
            c.kind = kind_from_name(jc.at("kind").get<std::string>());
            s.components.push_back(c);
        }
        layout.subsystems.push_back(std::move(s));
    }
    layout.validate();
    return layout;
}

}  // namespace ddpc::behavior
