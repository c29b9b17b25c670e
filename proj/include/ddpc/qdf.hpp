#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "ddpc/behavior.hpp"

namespace ddpc::qdf {

/// Quadratic difference form on length-(order + 1) trajectory windows:
/// value at step k is the quadratic form of col(w(k - order), ..., w(k)).
struct QdF {
    int order = 0;
    int dim = 0;
    Eigen::MatrixXd coeff;  // ((order + 1) * dim) square, symmetric

    int coeff_dim() const { return (order + 1) * dim; }
    void validate(double sym_tol = 1e-12) const;

    static QdF zero(int order, int dim);
};

/// Evaluate the form along a trajectory at 1-indexed step k (requires k > order).
double eval(const QdF& q, const behavior::Trajectory& t, int k);

/// Rate-of-change form of a storage function: order K + 1 with coefficient
/// diag(0_w, Psi) - diag(Psi, 0_w), so that eval telescopes the storage.
QdF nabla(const QdF& storage);

/// Embed the coefficient matrix into the trailing block of a ((past + 1) * dim)
/// square zero matrix. Requires past >= order.
Eigen::MatrixXd pad(const QdF& q, int past);

struct DissipOptions {
    double tol_scale = 1e-9;  // verdict margin >= -tol_scale * (1 + ||matrix||)
    int lag_bound = 0;        // caller-declared bound; past must exceed it
};

struct DissipativityReport {
    bool dissipative = false;
    std::vector<double> margins;  // one per window offset l in [0, future]
};

/// Data-driven dissipativity certificate on a behavior basis: for every window
/// offset l the projected form F_l^T (supply_hat - nabla_storage_hat) F_l must
/// be PSD. Requires a PSD storage and past >= max{supply order, storage order + 1}.
DissipativityReport check_dissipativity(const behavior::BehaviorBasis& basis,
                                        const QdF& supply, const QdF& storage,
                                        const DissipOptions& opts = {});

struct ManifestResult {
    bool restricted = false;
    Eigen::MatrixXd reduced;  // Q - S pinv(R) S^T, set when restricted
    Eigen::MatrixXd guard;    // ann_left(R) * S^T; guard * w1 = 0 required when restricted
};

/// Behavior of the leading split-dim rows of a quadratic-form behavior
/// w^T M w >= 0: restricted quadratic form when the trailing block is negative
/// semidefinite, free otherwise.
ManifestResult quadratic_manifest(const Eigen::MatrixXd& m, int split, double tol_scale = 1e-9);

/// Sufficient freeness test: leading diagonal block PSD.
bool freeness_check(const Eigen::MatrixXd& m, int split, double tol_scale = 1e-9);

/// First-order weighting filter acting as value(k) = c0 * x(k) + c1 * x(k - 1).
struct FirstOrderFilter {
    double c0 = 1.0;
    double c1 = 0.0;
};

/// Disturbance-attenuation supply specification: either a direct QdF or a
/// weighted form ||den * d||^2 - ||num * y_t||^2 - eps_stab * ||y_other||^2
/// built over a plant layout.
struct SupplyRateSpec {
    std::optional<QdF> direct;

    struct Weighted {
        std::vector<std::string> target_outputs;
        std::vector<std::string> disturbances;
        FirstOrderFilter num;  // applied to the targeted outputs
        FirstOrderFilter den;  // applied to the disturbances
        double stabilization_weight = 1e-3;
    };
    std::optional<Weighted> weighted;

    void validate() const;
};

/// Order-1 QdF over the full layout dimension realizing the weighted supply.
QdF build_supply(const SupplyRateSpec& spec, const behavior::VariableLayout& layout);

/// Checks a sampled dissipation certificate: V >= 0, V(k) - V(k-1) <= s(k) and
/// the running-sum bound -sum s <= V(start - 1) over every sub-interval.
bool verify_storage_certificate(const std::vector<double>& supply_seq,
                                const std::vector<double>& storage_seq, double tol = 1e-9);

std::string qdf_to_json(const QdF& q);
QdF qdf_from_json(const std::string& text);
std::string supply_spec_to_json(const SupplyRateSpec& spec);
SupplyRateSpec supply_spec_from_json(const std::string& text);

}  // namespace ddpc::qdf
