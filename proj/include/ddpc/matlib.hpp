#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "ddpc/errors.hpp"

namespace ddpc::matlib {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff used by every rank decision in the toolkit.
/// Data matrices here come from exact simulated trajectories, so a tight
/// relative cutoff avoids spurious rank inflation.
inline constexpr double kRankTol = 1e-9;

/// Spectral decomposition of a symmetric matrix; values sorted descending,
/// vectors orthonormal columns with A = V * diag(values) * V^T.
struct EigDecomposition {
    Vector values;
    Matrix vectors;
};

/// Moore-Penrose inverse. Singular values below tol * sigma_max are treated as zero.
Matrix pinv(const Matrix& a, double tol = kRankTol);

/// Numerical rank with the same cutoff convention as pinv.
int rank(const Matrix& a, double tol = kRankTol);

/// Right annihilator A^perp = I - pinv(A) * A. Symmetric idempotent projector
/// onto the null space of A, so A * ann_right(A) = 0.
Matrix ann_right(const Matrix& a, double tol = kRankTol);

/// Left annihilator A_perp = I - A * pinv(A), with ann_left(A) * A = 0.
Matrix ann_left(const Matrix& a, double tol = kRankTol);

/// Orthonormal basis of the column space (thin, rank-revealing).
Matrix orth(const Matrix& a, double tol = kRankTol);

/// Orthonormal basis of the null space of A (columns).
Matrix null_basis(const Matrix& a, double tol = kRankTol);

/// Solution set of A x = b as particular + span(null_basis).
struct AffineSolution {
    Vector particular;
    Matrix null_basis;
};

/// Returns nullopt when the system is inconsistent, i.e. ||(I - A pinv(A)) b|| > tol * ||b||.
std::optional<AffineSolution> solve_affine(const Matrix& a, const Vector& b,
                                           double tol = kRankTol);

/// Full spectral decomposition of (A + A^T)/2. Throws on non-square input.
EigDecomposition sym_eig(const Matrix& a);

/// Smallest eigenvalue of the symmetrized input. Callers treat margin >= -tol as PSD.
double psd_margin(const Matrix& a);

/// Scale-aware PSD verdict: psd_margin(a) >= -tol_scale * (1 + ||a||_F).
bool is_psd(const Matrix& a, double tol_scale = 1e-9);

/// Vertical stack of blocks (all with equal column counts).
Matrix block_col(const std::vector<Matrix>& blocks);

/// Block-diagonal stack.
Matrix block_diag(const std::vector<Matrix>& blocks);

/// Permutation matrix P with (P x)[r] = x[index_map[r]]. The map must be a
/// bijection on [0, n); the identity map yields the identity matrix.
Matrix permutation_from_index_map(const std::vector<int>& index_map);

}  // namespace ddpc::matlib
