#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "ddpc/errors.hpp"
#include "ddpc/matlib.hpp"

namespace ddpc::behavior {

/// A recorded multivariable signal: values(i, k) is component i at step k.
struct Trajectory {
    Eigen::MatrixXd values;  // dim x length

    int dim() const { return static_cast<int>(values.rows()); }
    int length() const { return static_cast<int>(values.cols()); }

    /// Stacked window col(w(from), ..., w(to)), steps 1-indexed inclusive.
    Eigen::VectorXd stacked(int from, int to) const;
};

/// Several trajectories of the same system; uniform dimension required.
struct TrajectorySet {
    std::vector<Trajectory> trajectories;

    int dim() const;
    void validate() const;
};

enum class ComponentKind {
    Output,       ///< subsystem output (y)
    Coupling,     ///< shared/interconnecting variable (restricted by the network)
    Manipulated,  ///< free variable the controllers actuate (u_c, y_l)
    Exogenous,    ///< free external variable (disturbances, references)
};

struct Component {
    std::string name;
    int dim = 0;
    ComponentKind kind = ComponentKind::Output;
};

struct SubsystemLayout {
    std::string name;
    std::vector<Component> components;

    int dim() const;
};

/// Row slice [offset, offset + dim) into a single-step variable stack.
struct Slice {
    int offset = 0;
    int dim = 0;
};

/// Named variable partition per subsystem. The single-step global stack is
/// col(w^1, ..., w^N) with components in declared order inside each subsystem.
struct VariableLayout {
    std::vector<SubsystemLayout> subsystems;

    int subsystem_count() const { return static_cast<int>(subsystems.size()); }
    int total_dim() const;
    int subsystem_offset(int i) const;

    /// Component names must be unique across the whole layout.
    void validate() const;

    /// Global single-step slice of a named component. Throws when unresolved.
    Slice find(const std::string& component_name) const;
    bool has(const std::string& component_name) const;

    /// Global single-step row indices of all components of a kind.
    std::vector<int> rows_of_kind(ComponentKind kind) const;
    /// Free rows = manipulated + exogenous.
    std::vector<int> free_rows() const;
    /// Free rows restricted to subsystem i, as offsets local to that subsystem.
    std::vector<int> free_rows_local(int i) const;

    std::string canonical_string() const;
};

/// Kernel representation Pi(sigma) w = 0 stored by powers of sigma.
struct InterconnectionRep {
    std::vector<Eigen::MatrixXd> poly_coeffs;  // coefficient of sigma^t at index t

    int lag() const;  // highest power with a nonzero coefficient
    int rows() const;
    int var_dim() const;
    void validate() const;

    static InterconnectionRep constant(const Eigen::MatrixXd& pi0);
};

/// Extended coefficient matrix: banded block-Toeplitz with L - lag block rows,
/// so that ext * w_[1,L] = 0 encodes Pi(sigma) w = 0 on every valid window.
Eigen::MatrixXd extend_coefficients(const InterconnectionRep& rep, int window_len);

/// Finite-window behavior basis. Row k*w + r of `basis` is component r of the
/// variable at window step k (steps grouped by time, subsystems in declared
/// order within each step). past + future + 1 = window_len.
struct BehaviorBasis {
    Eigen::MatrixXd basis;
    int window_len = 0;
    int past = 0;
    int future = 0;
    VariableLayout layout;
    bool orthonormal = false;  // set when the basis was compressed to an orthonormal span

    int step_dim() const { return layout.total_dim(); }
    void validate() const;
};

/// Hankel matrix of order L: column j is the stacked window w_[j+1, j+L].
Eigen::MatrixXd hankel(const Trajectory& t, int order);

/// Horizontal concatenation of per-trajectory Hankel matrices.
Eigen::MatrixXd mosaic_hankel(const TrajectorySet& s, int order);

struct PeCheck {
    bool verdict = false;
    int rank = 0;
    int required = 0;
};

/// Collectively-persistently-exciting test: full row rank of the order-L mosaic Hankel.
PeCheck is_persistently_exciting(const TrajectorySet& s, int order);

struct MembershipResult {
    bool inside = false;
    double residual = 0.0;  // ||(I - F pinv(F)) v|| / max(1, ||v||)
};

MembershipResult membership(const BehaviorBasis& b, const Eigen::VectorXd& v,
                            double tol = 1e-8);

struct BasisOptions {
    double rank_tol = matlib::kRankTol;
    bool compress = true;  // replace the raw product basis by an orthonormal column basis
};

/// Assembles the interleaved per-subsystem Hankel stack: block rows grouped by
/// time step, subsystems in declared order within each step; block-diagonal in
/// the per-subsystem coefficient vectors.
Eigen::MatrixXd interleave_hankels(const std::vector<Eigen::MatrixXd>& hankels,
                                   const VariableLayout& layout, int window_len);

/// Basis of the window interconnected behavior from per-subsystem Hankel
/// matrices and the extended network coefficient matrix: H * (pi_ext * H)^perp,
/// optionally compressed to an orthonormal column basis.
BehaviorBasis interconnect(const std::vector<Eigen::MatrixXd>& hankels,
                           const VariableLayout& layout,
                           const Eigen::MatrixXd& pi_ext, int window_len, int past,
                           const BasisOptions& opts = {});

/// Data-level variant: builds the per-subsystem mosaic Hankels and, when
/// pe_order > 0, first verifies that the free components of every subsystem's
/// data are collectively persistently exciting of that order. Throws
/// ExcitationError listing the deficient subsystems otherwise.
BehaviorBasis interconnect(const std::vector<TrajectorySet>& data,
                           const VariableLayout& layout,
                           const InterconnectionRep& network, int window_len, int past,
                           int pe_order, const BasisOptions& opts = {});

/// Per-subsystem free-component excitation report against a required order.
std::vector<ExcitationError::Item> check_free_excitation(
    const std::vector<TrajectorySet>& data, const VariableLayout& layout, int order);

/// Sub-matrix of the basis for window steps [l, l + past], l in [0, future].
Eigen::MatrixXd window(const BehaviorBasis& b, int l);

/// Weaves two equal-length windows overlapping on l steps into one of length
/// 2L - l. When a basis is given, both inputs must pass membership.
Trajectory weave(const Trajectory& w1, const Trajectory& w2, int l,
                 const BehaviorBasis* basis = nullptr, double tol = 1e-8);

/// Basis of the window manifest behavior of R w = M l: (M_perp R)^perp.
Eigen::MatrixXd manifest_from_latent(const Eigen::MatrixXd& r_ext,
                                     const Eigen::MatrixXd& m_ext);

/// Upper bound on the interconnected lag: max of subsystem and network lags.
int lag_bound(const std::vector<int>& subsystem_lags, int network_lag);

/// Excitation order bound for window length L: L + sum of state-cardinality
/// bounds + network state bound.
int order_bound(const std::vector<int>& subsystem_ns, int network_n, int window_len);

/// CSV I/O: one row per time step, columns in layout order.
void write_csv(const Trajectory& t, const std::string& path);
Trajectory read_csv(const std::string& path);

/// Layout manifest round trip (JSON).
std::string layout_to_json(const VariableLayout& layout);
VariableLayout layout_from_json(const std::string& text);

}  // namespace ddpc::behavior
