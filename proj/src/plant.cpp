#include "ddpc/plant.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ddpc/matlib.hpp"

namespace ddpc::plant {

using behavior::ComponentKind;
using behavior::VariableLayout;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Eigen::VectorXd trim_leading_zeros(const Eigen::VectorXd& p) {
    int first = 0;
    while (first < p.size() - 1 && p(first) == 0.0) ++first;
    return p.tail(p.size() - first);
}

}  // namespace

void TransferMatrix::validate() const {
    if (rows <= 0 || cols <= 0) {
        throw InvalidInputError("TransferMatrix: non-positive shape");
    }
    if (static_cast<int>(entries.size()) != rows * cols) {
        throw InvalidInputError("TransferMatrix: entry count mismatch");
    }
    for (const auto& e : entries) {
        if (e.den.size() == 0 || e.num.size() == 0) {
            throw InvalidInputError("TransferMatrix: empty polynomial");
        }
        const VectorXd den = trim_leading_zeros(e.den);
        const VectorXd num = trim_leading_zeros(e.num);
        if (den(0) == 0.0) {
            throw InvalidInputError("TransferMatrix: zero denominator");
        }
        const bool num_zero = num.cwiseAbs().maxCoeff() == 0.0;
        if (!num_zero && num.size() > den.size()) {
            throw InvalidInputError("TransferMatrix: improper entry");
        }
    }
}

StateSpace realize(const TransferMatrix& tm) {
    tm.validate();
    std::vector<MatrixXd> a_blocks;
    std::vector<std::pair<int, VectorXd>> c_rows;  // state offset handled below
    int total_states = 0;

    struct EntryReal {
        int offset = 0;
        int n = 0;
        MatrixXd a;
        VectorXd b;
        VectorXd c;
        double d = 0.0;
        int row = 0;
        int col = 0;
    };
    std::vector<EntryReal> parts;

    for (int r = 0; r < tm.rows; ++r) {
        for (int c = 0; c < tm.cols; ++c) {
            const Rational& e = tm.entry(r, c);
            VectorXd num = trim_leading_zeros(e.num);
            VectorXd den = trim_leading_zeros(e.den);
            if (num.cwiseAbs().maxCoeff() == 0.0) continue;
            // Normalize to a monic denominator.
            num /= den(0);
            den /= den(0);
            const int m = static_cast<int>(den.size()) - 1;
            EntryReal part;
            part.row = r;
            part.col = c;
            if (num.size() == den.size()) {
                part.d = num(0);
                num = (num - part.d * den).eval();
            }
            num = trim_leading_zeros(num);
            if (m == 0) {
                parts.push_back(part);
                continue;
            }
            // Controllable canonical form for the strictly proper remainder.
            part.n = m;
            part.offset = total_states;
            total_states += m;
            part.a = MatrixXd::Zero(m, m);
            for (int i = 0; i + 1 < m; ++i) part.a(i, i + 1) = 1.0;
            for (int i = 0; i < m; ++i) part.a(m - 1, i) = -den(m - i);  // -a_0 ... -a_{m-1}
            part.b = VectorXd::Zero(m);
            part.b(m - 1) = 1.0;
            part.c = VectorXd::Zero(m);
            // Remainder coefficients, ascending powers.
            for (int i = 0; i < num.size(); ++i) {
                part.c(num.size() - 1 - i) = num(i);
            }
            parts.push_back(part);
        }
    }

    StateSpace ss;
    ss.A = MatrixXd::Zero(total_states, total_states);
    ss.B = MatrixXd::Zero(total_states, tm.cols);
    ss.C = MatrixXd::Zero(tm.rows, total_states);
    ss.D = MatrixXd::Zero(tm.rows, tm.cols);
    for (const auto& p : parts) {
        if (p.n > 0) {
            ss.A.block(p.offset, p.offset, p.n, p.n) = p.a;
            ss.B.block(p.offset, p.col, p.n, 1) = p.b;
            ss.C.block(p.row, p.offset, 1, p.n) = p.c.transpose();
        }
        ss.D(p.row, p.col) += p.d;
    }
    return ss;
}

std::vector<double> impulse_response(const Rational& r, int steps) {
    VectorXd num = trim_leading_zeros(r.num);
    VectorXd den = trim_leading_zeros(r.den);
    if (den(0) == 0.0) {
        throw InvalidInputError("impulse_response: zero leading denominator coefficient");
    }
    const int m = static_cast<int>(den.size()) - 1;
    const int pad = m + 1 - static_cast<int>(num.size());
    std::vector<double> h(steps, 0.0);
    auto num_at = [&](int t) {
        const int idx = t - pad;
        return (idx >= 0 && idx < num.size()) ? num(idx) : 0.0;
    };
    auto den_at = [&](int t) { return (t >= 0 && t <= m) ? den(t) : 0.0; };
    for (int t = 0; t < steps; ++t) {
        double acc = num_at(t);
        for (int s = 0; s < t; ++s) {
            acc -= h[s] * den_at(t - s);
        }
        h[t] = acc / den(0);
    }
    return h;
}

std::vector<double> impulse_response(const StateSpace& ss, int input, int output, int steps) {
    std::vector<double> h(steps, 0.0);
    if (steps == 0) return h;
    h[0] = ss.D(output, input);
    VectorXd x = ss.B.col(input);
    for (int t = 1; t < steps; ++t) {
        h[t] = ss.C.row(output).dot(x);
        x = (ss.A * x).eval();
    }
    return h;
}

namespace {

struct Tokenizer {
    std::string s;
    size_t at = 0;

    void skip_ws() {
        while (at < s.size() && std::isspace(static_cast<unsigned char>(s[at]))) ++at;
    }
    bool eat(char c) {
        skip_ws();
        if (at < s.size() && s[at] == c) {
            ++at;
            return true;
        }
        return false;
    }
    std::string ident() {
        skip_ws();
        size_t start = at;
        while (at < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[at])) || s[at] == '_')) {
            ++at;
        }
        return s.substr(start, at - start);
    }
    int integer() {
        skip_ws();
        size_t start = at;
        while (at < s.size() && std::isdigit(static_cast<unsigned char>(s[at]))) ++at;
        if (start == at) throw InvalidInputError("sharing equation: expected integer in '" + s + "'");
        return std::stoi(s.substr(start, at - start));
    }
    bool done() {
        skip_ws();
        return at >= s.size();
    }
};

SharingTerm parse_term(Tokenizer& tz) {
    SharingTerm t;
    t.component = tz.ident();
    if (t.component.empty()) {
        throw InvalidInputError("sharing equation: expected component name in '" + tz.s + "'");
    }
    if (tz.eat('[')) {
        t.row_lo = tz.integer();
        if (!tz.eat(':')) throw InvalidInputError("sharing equation: expected ':' in '" + tz.s + "'");
        t.row_hi = tz.integer();
        if (!tz.eat(']')) throw InvalidInputError("sharing equation: expected ']' in '" + tz.s + "'");
        if (t.row_lo < 1 || t.row_hi < t.row_lo) {
            throw InvalidInputError("sharing equation: bad row selection in '" + tz.s + "'");
        }
    }
    return t;
}

}  // namespace

SharingEquation parse_equation(const std::string& text) {
    Tokenizer tz{text, 0};
    SharingEquation eq;
    eq.text = text;
    eq.lhs = tz.ident();
    if (eq.lhs.empty() || !tz.eat('=')) {
        throw InvalidInputError("sharing equation: expected 'name = expr' in '" + text + "'");
    }
    tz.skip_ws();
    const size_t mark = tz.at;
    std::string head = tz.ident();
    if (head == "col" && tz.eat('(')) {
        for (;;) {
            eq.rhs.push_back(parse_term(tz));
            if (tz.eat(')')) break;
            if (!tz.eat(',')) {
                throw InvalidInputError("sharing equation: expected ',' or ')' in '" + text + "'");
            }
        }
    } else {
        tz.at = mark;
        eq.rhs.push_back(parse_term(tz));
    }
    if (!tz.done()) {
        throw InvalidInputError("sharing equation: trailing input in '" + text + "'");
    }
    return eq;
}

namespace {

struct ResolvedTerm {
    bool in_plant = false;
    int offset = 0;
    int dim = 0;
};

ResolvedTerm resolve_term(const SharingTerm& t, const VariableLayout& plant_layout,
                          const VariableLayout& controller_layout, const std::string& ctx) {
    ResolvedTerm out;
    const bool in_plant = plant_layout.has(t.component);
    const bool in_ctrl = controller_layout.has(t.component);
    if (in_plant == in_ctrl) {
        throw InvalidInputError("sharing equation: component '" + t.component +
                                "' must resolve in exactly one layout (" + ctx + ")");
    }
    out.in_plant = in_plant;
    const auto slice = in_plant ? plant_layout.find(t.component) : controller_layout.find(t.component);
    if (t.row_lo == 0) {
        out.offset = slice.offset;
        out.dim = slice.dim;
    } else {
        if (t.row_hi > slice.dim) {
            throw InvalidInputError("sharing equation: selection out of range (" + ctx + ")");
        }
        out.offset = slice.offset + t.row_lo - 1;
        out.dim = t.row_hi - t.row_lo + 1;
    }
    return out;
}

}  // namespace

CompiledNetworks compile_network(const NetworkSpec& spec, const VariableLayout& plant_layout,
                                 const VariableLayout& controller_layout) {
    plant_layout.validate();
    const bool has_controllers = !controller_layout.subsystems.empty();
    if (has_controllers) controller_layout.validate();
    const int wp = plant_layout.total_dim();
    const int wc = has_controllers ? controller_layout.total_dim() : 0;

    auto single_space = [&](const std::vector<SharingEquation>& eqs, bool plant_space) {
        int rows = 0;
        for (const auto& eq : eqs) {
            const auto lhs = resolve_term(SharingTerm{eq.lhs, 0, 0}, plant_layout,
                                          controller_layout, eq.text);
            rows += lhs.dim;
        }
        MatrixXd pi = MatrixXd::Zero(rows, plant_space ? wp : wc);
        int at = 0;
        for (const auto& eq : eqs) {
            const auto lhs = resolve_term(SharingTerm{eq.lhs, 0, 0}, plant_layout,
                                          controller_layout, eq.text);
            if (lhs.in_plant != plant_space) {
                throw InvalidInputError("sharing equation: '" + eq.text + "' is in the wrong network group");
            }
            pi.block(at, lhs.offset, lhs.dim, lhs.dim) = MatrixXd::Identity(lhs.dim, lhs.dim);
            int row = at;
            for (const auto& term : eq.rhs) {
                const auto rt = resolve_term(term, plant_layout, controller_layout, eq.text);
                if (rt.in_plant != plant_space) {
                    throw InvalidInputError("sharing equation: mixed spaces in '" + eq.text + "'");
                }
                pi.block(row, rt.offset, rt.dim, rt.dim) -= MatrixXd::Identity(rt.dim, rt.dim);
                row += rt.dim;
            }
            if (row - at != lhs.dim) {
                throw InvalidInputError("sharing equation: dimension mismatch in '" + eq.text + "'");
            }
            at += lhs.dim;
        }
        return pi;
    };

    CompiledNetworks out;
    out.plant = behavior::InterconnectionRep::constant(single_space(spec.plant, true));
    out.controller = behavior::InterconnectionRep::constant(
        has_controllers ? single_space(spec.controller, false) : MatrixXd::Zero(0, 0));

    int pc_rows = 0;
    for (const auto& eq : spec.plant_controller) {
        const auto lhs = resolve_term(SharingTerm{eq.lhs, 0, 0}, plant_layout,
                                      controller_layout, eq.text);
        pc_rows += lhs.dim;
    }
    out.pc_plant = MatrixXd::Zero(pc_rows, wp);
    out.pc_controller = MatrixXd::Zero(pc_rows, wc);
    int at = 0;
    for (const auto& eq : spec.plant_controller) {
        const auto lhs = resolve_term(SharingTerm{eq.lhs, 0, 0}, plant_layout,
                                      controller_layout, eq.text);
        MatrixXd& lhs_side = lhs.in_plant ? out.pc_plant : out.pc_controller;
        lhs_side.block(at, lhs.offset, lhs.dim, lhs.dim) = MatrixXd::Identity(lhs.dim, lhs.dim);
        int row = at;
        for (const auto& term : eq.rhs) {
            const auto rt = resolve_term(term, plant_layout, controller_layout, eq.text);
            if (rt.in_plant == lhs.in_plant) {
                throw InvalidInputError("sharing equation: '" + eq.text +
                                        "' must connect the plant and controller sides");
            }
            MatrixXd& rhs_side = rt.in_plant ? out.pc_plant : out.pc_controller;
            rhs_side.block(row, rt.offset, rt.dim, rt.dim) = MatrixXd::Identity(rt.dim, rt.dim);
            row += rt.dim;
        }
        if (row - at != lhs.dim) {
            throw InvalidInputError("sharing equation: dimension mismatch in '" + eq.text + "'");
        }
        at += lhs.dim;
    }
    return out;
}

void Scenario::validate() const {
    plant_layout.validate();
    controller_layout.validate();
    if (static_cast<int>(subsystems.size()) != plant_layout.subsystem_count()) {
        throw InvalidInputError("Scenario: one transfer matrix per subsystem required");
    }
    if (L_minus < 1 || L_plus < 0) {
        throw InvalidInputError("Scenario: L_minus must be >= 1 and L_plus >= 0");
    }
    if (static_cast<int>(lag_bounds.size()) != plant_layout.subsystem_count() ||
        static_cast<int>(state_bounds.size()) != plant_layout.subsystem_count()) {
        throw InvalidInputError("Scenario: lag/state bounds required per subsystem");
    }
    for (int i = 0; i < plant_layout.subsystem_count(); ++i) {
        const auto& sub = plant_layout.subsystems[i];
        int out_dim = 0;
        int in_dim = 0;
        for (const auto& c : sub.components) {
            if (c.kind == ComponentKind::Output) {
                out_dim += c.dim;
            } else {
                in_dim += c.dim;
            }
        }
        subsystems[i].validate();
        if (subsystems[i].rows != out_dim || subsystems[i].cols != in_dim) {
            throw InvalidInputError("Scenario: transfer shape does not match layout for " + sub.name);
        }
    }
    supply.validate();
    for (const auto& p : predicted) {
        const auto slice = controller_layout.find(p.component);
        if (p.row_lo < 1 || p.row_hi < p.row_lo || p.row_hi > slice.dim) {
            throw InvalidInputError("Scenario: predicted row range out of bounds for " + p.component);
        }
    }
}

int Scenario::excitation_order() const {
    const int window = L_minus + L_plus + 1;
    return behavior::order_bound(state_bounds, network_state_bound, window);
}

int Scenario::max_lag_bound() const {
    return behavior::lag_bound(lag_bounds, network_lag);
}

namespace {

Rational rat(std::initializer_list<double> num, std::initializer_list<double> den) {
    Rational r;
    r.num = VectorXd::Zero(static_cast<int>(num.size()));
    int i = 0;
    for (double v : num) r.num(i++) = v;
    r.den = VectorXd::Zero(static_cast<int>(den.size()));
    i = 0;
    for (double v : den) r.den(i++) = v;
    return r;
}

Rational zero_entry() { return rat({0.0}, {1.0}); }

}  // namespace

Scenario build_paper_example() {
    Scenario s;
    s.name = "four-unit-attenuation";

    using behavior::Component;
    using behavior::SubsystemLayout;
    s.plant_layout.subsystems = {
        SubsystemLayout{"sigma1",
                        {Component{"y1", 2, ComponentKind::Output},
                         Component{"up1", 2, ComponentKind::Coupling},
                         Component{"uc1", 2, ComponentKind::Manipulated},
                         Component{"d", 1, ComponentKind::Exogenous}}},
        SubsystemLayout{"sigma2",
                        {Component{"y2", 2, ComponentKind::Output},
                         Component{"up2", 2, ComponentKind::Coupling}}},
        SubsystemLayout{"sigma3",
                        {Component{"y3", 2, ComponentKind::Output},
                         Component{"up3", 4, ComponentKind::Coupling},
                         Component{"uc3", 2, ComponentKind::Manipulated}}},
        SubsystemLayout{"sigma4",
                        {Component{"y4", 2, ComponentKind::Output},
                         Component{"up4", 2, ComponentKind::Coupling},
                         Component{"uc4", 2, ComponentKind::Manipulated}}},
    };

    s.controller_layout.subsystems = {
        SubsystemLayout{"ctrl1",
                        {Component{"yl1", 2, ComponentKind::Manipulated},
                         Component{"yr1", 2, ComponentKind::Coupling},
                         Component{"ul1", 5, ComponentKind::Coupling},
                         Component{"ur1", 2, ComponentKind::Coupling}}},
        SubsystemLayout{"ctrl2",
                        {Component{"yl2", 2, ComponentKind::Manipulated},
                         Component{"yr2", 2, ComponentKind::Coupling},
                         Component{"ul2", 2, ComponentKind::Coupling},
                         Component{"ur2", 4, ComponentKind::Coupling}}},
        SubsystemLayout{"ctrl3",
                        {Component{"yl3", 2, ComponentKind::Manipulated},
                         Component{"yr3", 2, ComponentKind::Coupling},
                         Component{"ul3", 2, ComponentKind::Coupling},
                         Component{"ur3", 2, ComponentKind::Coupling}}},
    };

    TransferMatrix y1;
    y1.rows = 2;
    y1.cols = 5;
    y1.entries = {rat({1}, {1, 0.5}),  zero_entry(),        rat({0.2}, {1, 0.5}),
                  zero_entry(),        rat({0.8}, {1, 0.5}),
                  zero_entry(),        rat({1}, {1, -0.1}), rat({0.1}, {1, -0.1}),
                  rat({0.5}, {1, -0.1}), rat({0.6}, {1, -0.1})};

    TransferMatrix y2;
    y2.rows = 2;
    y2.cols = 2;
    y2.entries = {zero_entry(), rat({-0.5}, {1, 0.3}),
                  rat({1, -0.34}, {4, 1.2, -0.4}), rat({-0.2}, {1, -0.2})};

    TransferMatrix y3;
    y3.rows = 2;
    y3.cols = 6;
    y3.entries = {rat({1}, {1, -0.3}),   zero_entry(),          rat({0.2}, {1, -0.3}),
                  rat({0.1}, {1, -0.3}), rat({0.5}, {1, -0.3}), zero_entry(),
                  rat({0.1}, {1, -0.3}), rat({-0.54}, {1, -0.6}),
                  rat({1, -0.34}, {6.85, 6.17, 1.23}),          rat({0.01}, {1, -0.3}),
                  rat({0.05}, {1, -0.3}), rat({0.9}, {1, -0.6})};

    TransferMatrix y4;
    y4.rows = 2;
    y4.cols = 4;
    y4.entries = {rat({0.1}, {1, -0.1}), rat({0.2}, {1, -0.1}), rat({1}, {1, -0.1}),
                  zero_entry(),
                  zero_entry(), rat({-0.5}, {1, 0.35}), zero_entry(), rat({1}, {1, 0.35})};

    s.subsystems = {y1, y2, y3, y4};

    auto eqs = [](std::initializer_list<const char*> lines) {
        std::vector<SharingEquation> out;
        for (const char* l : lines) out.push_back(parse_equation(l));
        return out;
    };
    s.network.plant = eqs({"up1 = y3", "up2 = y1", "up3 = col(y2, y4)", "up4 = y3"});
    s.network.plant_controller = eqs({"ul1 = col(y1, y2, d)", "yl1 = uc1", "ul2 = y3",
                                      "yl2 = uc3", "ul3 = y4", "yl3 = uc4"});
    s.network.controller = eqs({"ur1 = yr2", "ur2 = col(yr1, yr3)", "ur3 = yr2",
                                "yr1 = ul1[3:4]", "yr2 = ul2", "yr3 = ul3"});

    qdf::SupplyRateSpec::Weighted w;
    w.target_outputs = {"y3", "y4"};
    w.disturbances = {"d"};
    w.num = {3.625, 0.0};
    w.den = {1.0, -0.8187};
    w.stabilization_weight = 1e-3;
    s.supply.weighted = w;

    s.L_minus = 4;
    s.L_plus = 0;
    s.lag_bounds = {1, 2, 2, 1};
    s.state_bounds = {7, 4, 11, 5};
    s.network_lag = 0;
    s.network_state_bound = 0;
    s.predicted = {PredictedRowSpec{"ul1", 5, 5}};
    s.data = DataConfig{400, 20, 1};
    s.validate();
    return s;
}

UniformSource::UniformSource(std::uint64_t seed) : state_(seed) {
    // splitmix64 warmup so that nearby seeds decorrelate
    state_ += 0x9e3779b97f4a7c15ULL;
}

double UniformSource::next() {
    // xorshift64* generator; fixed mapping keeps datasets bit-identical across platforms
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    const std::uint64_t bits = state_ * 0x2545F4914F6CDD1DULL;
    const double u = static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
    return 2.0 * u - 1.0;
}

NetworkSimulator::NetworkSimulator(const Scenario& scenario) {
    scenario.validate();
    layout_ = scenario.plant_layout;
    const int n_sub = layout_.subsystem_count();
    output_rows_ = layout_.rows_of_kind(ComponentKind::Output);
    coupling_rows_ = layout_.rows_of_kind(ComponentKind::Coupling);
    free_rows_ = layout_.free_rows();

    for (int i = 0; i < n_sub; ++i) {
        subsystems_.push_back(realize(scenario.subsystems[i]));
        states_.push_back(VectorXd::Zero(subsystems_[i].n()));
        std::vector<int> rows;
        const int off = layout_.subsystem_offset(i);
        int local = 0;
        for (const auto& c : layout_.subsystems[i].components) {
            if (c.kind != ComponentKind::Output) {
                for (int r = 0; r < c.dim; ++r) rows.push_back(off + local + r);
            }
            local += c.dim;
        }
        input_rows_.push_back(std::move(rows));
    }

    // Coupling values as a selection of stacked outputs: every coupling
    // component must be defined by one plant equation over output components.
    std::vector<int> output_pos(layout_.total_dim(), -1);
    for (size_t i = 0; i < output_rows_.size(); ++i) output_pos[output_rows_[i]] = static_cast<int>(i);
    std::vector<int> coupling_pos(layout_.total_dim(), -1);
    for (size_t i = 0; i < coupling_rows_.size(); ++i) coupling_pos[coupling_rows_[i]] = static_cast<int>(i);

    coupling_from_outputs_ =
        MatrixXd::Zero(static_cast<int>(coupling_rows_.size()), static_cast<int>(output_rows_.size()));
    std::vector<bool> covered(coupling_rows_.size(), false);
    for (const auto& eq : scenario.network.plant) {
        const auto lhs = layout_.find(eq.lhs);
        int row = 0;
        for (const auto& term : eq.rhs) {
            auto slice = layout_.find(term.component);
            int offset = slice.offset;
            int dim = slice.dim;
            if (term.row_lo > 0) {
                offset += term.row_lo - 1;
                dim = term.row_hi - term.row_lo + 1;
            }
            for (int r = 0; r < dim; ++r) {
                const int coupling_idx = coupling_pos[lhs.offset + row + r];
                const int out_idx = output_pos[offset + r];
                if (coupling_idx < 0) {
                    throw InvalidInputError("simulate: plant equation lhs must be a coupling component: " + eq.text);
                }
                if (out_idx < 0) {
                    throw InvalidInputError("simulate: plant equation rhs must reference outputs: " + eq.text);
                }
                coupling_from_outputs_(coupling_idx, out_idx) = 1.0;
                covered[coupling_idx] = true;
            }
            row += dim;
        }
    }
    for (size_t i = 0; i < covered.size(); ++i) {
        if (!covered[i]) {
            throw InvalidInputError("simulate: coupling row without a defining sharing equation");
        }
    }

    // Algebraic loop: y = C x + D_cpl * (S y) + D_free * u_free.
    const int n_out = static_cast<int>(output_rows_.size());
    MatrixXd d_cpl = MatrixXd::Zero(n_out, static_cast<int>(coupling_rows_.size()));
    int out_at = 0;
    for (int i = 0; i < n_sub; ++i) {
        const auto& ss = subsystems_[i];
        for (size_t ic = 0; ic < input_rows_[i].size(); ++ic) {
            const int grow = input_rows_[i][ic];
            if (coupling_pos[grow] >= 0) {
                d_cpl.block(out_at, coupling_pos[grow], ss.outputs(), 1) =
                    ss.D.col(static_cast<int>(ic));
            }
        }
        out_at += ss.outputs();
    }
    loop_ = MatrixXd::Identity(n_out, n_out) - d_cpl * coupling_from_outputs_;
    if (std::abs(Eigen::FullPivLU<MatrixXd>(loop_).determinant()) < 1e-12) {
        throw InvalidInputError("simulate: singular algebraic loop (ill-posed interconnection)");
    }
    loop_lu_ = Eigen::PartialPivLU<MatrixXd>(loop_);
}

void NetworkSimulator::reset() {
    for (auto& x : states_) x.setZero();
}

Eigen::VectorXd NetworkSimulator::step(const Eigen::VectorXd& free_values) {
    if (free_values.size() != static_cast<Eigen::Index>(free_rows_.size())) {
        throw InvalidInputError("NetworkSimulator::step: free input size mismatch");
    }
    const int w = layout_.total_dim();
    const int n_sub = layout_.subsystem_count();

    std::vector<int> free_pos(w, -1);
    for (size_t i = 0; i < free_rows_.size(); ++i) free_pos[free_rows_[i]] = static_cast<int>(i);
    std::vector<int> coupling_pos(w, -1);
    for (size_t i = 0; i < coupling_rows_.size(); ++i) coupling_pos[coupling_rows_[i]] = static_cast<int>(i);

    // Solve the per-step algebraic system for the stacked outputs.
    VectorXd rhs = VectorXd::Zero(static_cast<int>(output_rows_.size()));
    int out_at = 0;
    for (int i = 0; i < n_sub; ++i) {
        const auto& ss = subsystems_[i];
        VectorXd contrib = ss.C * states_[i];
        for (size_t ic = 0; ic < input_rows_[i].size(); ++ic) {
            const int grow = input_rows_[i][ic];
            if (free_pos[grow] >= 0) {
                contrib += ss.D.col(static_cast<int>(ic)) * free_values(free_pos[grow]);
            }
        }
        rhs.segment(out_at, ss.outputs()) = contrib;
        out_at += ss.outputs();
    }
    const VectorXd y = loop_lu_.solve(rhs);
    const VectorXd coupling = coupling_from_outputs_ * y;

    VectorXd wp = VectorXd::Zero(w);
    for (size_t i = 0; i < output_rows_.size(); ++i) wp(output_rows_[i]) = y(static_cast<int>(i));
    for (size_t i = 0; i < coupling_rows_.size(); ++i) wp(coupling_rows_[i]) = coupling(static_cast<int>(i));
    for (size_t i = 0; i < free_rows_.size(); ++i) wp(free_rows_[i]) = free_values(static_cast<int>(i));

    // Advance the subsystem states with the resolved inputs.
    for (int i = 0; i < n_sub; ++i) {
        const auto& ss = subsystems_[i];
        if (ss.n() == 0) continue;
        VectorXd u(static_cast<int>(input_rows_[i].size()));
        for (size_t ic = 0; ic < input_rows_[i].size(); ++ic) {
            u(static_cast<int>(ic)) = wp(input_rows_[i][ic]);
        }
        states_[i] = ss.A * states_[i] + ss.B * u;
    }
    return wp;
}

behavior::Trajectory simulate_network(const Scenario& scenario, const Eigen::MatrixXd& free_values) {
    NetworkSimulator sim(scenario);
    if (free_values.rows() != sim.free_dim()) {
        throw InvalidInputError("simulate_network: free input rows do not match the layout");
    }
    behavior::Trajectory out;
    out.values.resize(scenario.plant_layout.total_dim(), free_values.cols());
    for (int k = 0; k < free_values.cols(); ++k) {
        out.values.col(k) = sim.step(free_values.col(k));
    }
    return out;
}

Dataset generate_dataset(const Scenario& scenario, int T, std::uint64_t seed) {
    scenario.validate();
    if (T < scenario.L_minus + scenario.L_plus + 1) {
        throw InvalidInputError("generate_dataset: T shorter than the window");
    }
    NetworkSimulator sim(scenario);
    const int warmup = scenario.data.warmup;
    UniformSource rng(seed);
    MatrixXd free_values(sim.free_dim(), warmup + T);
    for (int k = 0; k < free_values.cols(); ++k) {
        for (int r = 0; r < free_values.rows(); ++r) {
            free_values(r, k) = rng.next();
        }
    }
    behavior::Trajectory full = simulate_network(scenario, free_values);

    Dataset d;
    d.seed = seed;
    d.T = T;
    d.full.values = full.values.rightCols(T);
    for (int i = 0; i < scenario.plant_layout.subsystem_count(); ++i) {
        behavior::Trajectory t;
        const int off = scenario.plant_layout.subsystem_offset(i);
        const int dim = scenario.plant_layout.subsystems[i].dim();
        t.values = d.full.values.middleRows(off, dim);
        d.subsystems.push_back(behavior::TrajectorySet{{t}});
    }
    d.pe_order = scenario.excitation_order();
    d.pe_deficient =
        behavior::check_free_excitation(d.subsystems, scenario.plant_layout, d.pe_order);
    d.pe_ok = d.pe_deficient.empty();
    return d;
}

void write_dataset(const Dataset& d, const Scenario& scenario, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream layout(fs::path(dir) / "layout.json");
    layout << behavior::layout_to_json(scenario.plant_layout);

    nlohmann::json manifest;
    manifest["seed"] = d.seed;
    manifest["T"] = d.T;
    manifest["pe_order"] = d.pe_order;
    manifest["pe_ok"] = d.pe_ok;
    manifest["subsystems"] = nlohmann::json::array();
    for (int i = 0; i < static_cast<int>(d.subsystems.size()); ++i) {
        const auto& name = scenario.plant_layout.subsystems[i].name;
        nlohmann::json js;
        js["name"] = name;
        js["files"] = nlohmann::json::array();
        for (int t = 0; t < static_cast<int>(d.subsystems[i].trajectories.size()); ++t) {
            const std::string file = name + "_" + std::to_string(t) + ".csv";
            behavior::write_csv(d.subsystems[i].trajectories[t], (fs::path(dir) / file).string());
            js["files"].push_back(file);
        }
        manifest["subsystems"].push_back(js);
    }
    std::ofstream mf(fs::path(dir) / "dataset.json");
    mf << manifest.dump(2) << '\n';
}

Dataset read_dataset(const Scenario& scenario, const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "dataset.json");
    if (!mf) {
        throw InvalidInputError("read_dataset: missing manifest in " + dir);
    }
    nlohmann::json manifest;
    mf >> manifest;
    Dataset d;
    d.seed = manifest.at("seed").get<std::uint64_t>();
    d.T = manifest.at("T").get<int>();
    d.pe_order = manifest.at("pe_order").get<int>();
    for (const auto& js : manifest.at("subsystems")) {
        behavior::TrajectorySet set;
        for (const auto& f : js.at("files")) {
            set.trajectories.push_back(
                behavior::read_csv((fs::path(dir) / f.get<std::string>()).string()));
        }
        d.subsystems.push_back(std::move(set));
    }
    if (static_cast<int>(d.subsystems.size()) != scenario.plant_layout.subsystem_count()) {
        throw InvalidInputError("read_dataset: subsystem count mismatch");
    }
    // Rebuild the full record for convenience (trajectory 0 of each subsystem).
    int cols = d.subsystems.front().trajectories.front().length();
    d.full.values.resize(scenario.plant_layout.total_dim(), cols);
    for (int i = 0; i < scenario.plant_layout.subsystem_count(); ++i) {
        const int off = scenario.plant_layout.subsystem_offset(i);
        d.full.values.middleRows(off, scenario.plant_layout.subsystems[i].dim()) =
            d.subsystems[i].trajectories.front().values;
    }
    d.pe_deficient =
        behavior::check_free_excitation(d.subsystems, scenario.plant_layout, d.pe_order);
    d.pe_ok = d.pe_deficient.empty();
    return d;
}

namespace {

nlohmann::json rational_to_json(const Rational& r) {
    std::vector<double> num(r.num.data(), r.num.data() + r.num.size());
    std::vector<double> den(r.den.data(), r.den.data() + r.den.size());
    return {{"num", num}, {"den", den}};
}

Rational rational_from_json(const nlohmann::json& j) {
    Rational r;
    const auto num = j.at("num").get<std::vector<double>>();
    const auto den = j.at("den").get<std::vector<double>>();
    r.num = Eigen::Map<const VectorXd>(num.data(), num.size());
    r.den = Eigen::Map<const VectorXd>(den.data(), den.size());
    return r;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
    s.validate();
    nlohmann::json j;
    j["name"] = s.name;
    j["L_minus"] = s.L_minus;
    j["L_plus"] = s.L_plus;
    j["plant_layout"] = nlohmann::json::parse(behavior::layout_to_json(s.plant_layout));
    j["controller_layout"] = nlohmann::json::parse(behavior::layout_to_json(s.controller_layout));
    j["subsystems"] = nlohmann::json::array();
    for (const auto& tm : s.subsystems) {
        nlohmann::json jt;
        jt["rows"] = tm.rows;
        jt["cols"] = tm.cols;
        jt["entries"] = nlohmann::json::array();
        for (const auto& e : tm.entries) jt["entries"].push_back(rational_to_json(e));
        j["subsystems"].push_back(jt);
    }
    auto eq_lines = [](const std::vector<SharingEquation>& eqs) {
        std::vector<std::string> lines;
        for (const auto& e : eqs) lines.push_back(e.text);
        return lines;
    };
    j["network"] = {{"plant", eq_lines(s.network.plant)},
                    {"plant_controller", eq_lines(s.network.plant_controller)},
                    {"controller", eq_lines(s.network.controller)}};
    j["supply"] = nlohmann::json::parse(qdf::supply_spec_to_json(s.supply));
    j["lag_bounds"] = s.lag_bounds;
    j["state_bounds"] = s.state_bounds;
    j["network_lag"] = s.network_lag;
    j["network_state_bound"] = s.network_state_bound;
    j["predicted"] = nlohmann::json::array();
    for (const auto& p : s.predicted) {
        j["predicted"].push_back(
            {{"component", p.component}, {"rows", {p.row_lo, p.row_hi}}});
    }
    j["data"] = {{"T", s.data.T}, {"warmup", s.data.warmup}, {"seed", s.data.seed}};
    return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Scenario s;
    s.name = j.value("name", "scenario");
    s.L_minus = j.at("L_minus").get<int>();
    s.L_plus = j.value("L_plus", 0);
    s.plant_layout = behavior::layout_from_json(j.at("plant_layout").dump());
    s.controller_layout = behavior::layout_from_json(j.at("controller_layout").dump());
    for (const auto& jt : j.at("subsystems")) {
        TransferMatrix tm;
        tm.rows = jt.at("rows").get<int>();
        tm.cols = jt.at("cols").get<int>();
        for (const auto& je : jt.at("entries")) tm.entries.push_back(rational_from_json(je));
        s.subsystems.push_back(std::move(tm));
    }
    const auto& jn = j.at("network");
    for (const auto& l : jn.at("plant")) s.network.plant.push_back(parse_equation(l));
    for (const auto& l : jn.at("plant_controller"))
        s.network.plant_controller.push_back(parse_equation(l));
    for (const auto& l : jn.at("controller")) s.network.controller.push_back(parse_equation(l));
    s.supply = qdf::supply_spec_from_json(j.at("supply").dump());
    s.lag_bounds = j.at("lag_bounds").get<std::vector<int>>();
    s.state_bounds = j.at("state_bounds").get<std::vector<int>>();
    s.network_lag = j.value("network_lag", 0);
    s.network_state_bound = j.value("network_state_bound", 0);
    if (j.contains("predicted")) {
        for (const auto& jp : j.at("predicted")) {
            PredictedRowSpec p;
            p.component = jp.at("component").get<std::string>();
            const auto rows = jp.at("rows").get<std::vector<int>>();
            p.row_lo = rows.at(0);
            p.row_hi = rows.at(1);
            s.predicted.push_back(p);
        }
    }
    if (j.contains("data")) {
        s.data.T = j["data"].value("T", 400);
        s.data.warmup = j["data"].value("warmup", 20);
        s.data.seed = j["data"].value("seed", 1ULL);
    }
    s.validate();
    return s;
}

}  // namespace ddpc::plant
