#include "ddpc/matlib.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace ddpc::matlib {

namespace {

void require_finite(const Matrix& a, const char* op) {
    if (a.size() == 0) {
        throw InvalidInputError(std::string(op) + ": empty matrix");
    }
    if (!a.allFinite()) {
        throw InvalidInputError(std::string(op) + ": non-finite entries");
    }
}

Eigen::BDCSVD<Matrix> thin_svd(const Matrix& a) {
    return Eigen::BDCSVD<Matrix>(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

// Singular values below tol * sigma_max count as zero. The absolute floor
// keeps matrices that are zero up to roundoff of prior O(1) arithmetic from
// acquiring spurious rank.
constexpr double kZeroFloor = 1e-12;

int svd_rank(const Eigen::BDCSVD<Matrix>& svd, double tol) {
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= kZeroFloor) return 0;
    const double cutoff = tol * sv(0);
    int r = 0;
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff) ++r;
    }
    return r;
}

}  // namespace

Matrix pinv(const Matrix& a, double tol) {
    require_finite(a, "pinv");
    if (tol <= 0.0) {
        throw InvalidInputError("pinv: tolerance must be positive");
    }
    auto svd = thin_svd(a);
    const int r = svd_rank(svd, tol);
    Matrix result = Matrix::Zero(a.cols(), a.rows());
    if (r == 0) return result;
    const auto& sv = svd.singularValues();
    for (int i = 0; i < r; ++i) {
        result.noalias() += svd.matrixV().col(i) * (svd.matrixU().col(i).transpose() / sv(i));
    }
    return result;
}

int rank(const Matrix& a, double tol) {
    require_finite(a, "rank");
    auto svd = thin_svd(a);
    return svd_rank(svd, tol);
}

Matrix ann_right(const Matrix& a, double tol) {
    require_finite(a, "ann_right");
    auto svd = thin_svd(a);
    const int r = svd_rank(svd, tol);
    const Matrix vr = svd.matrixV().leftCols(r);
    Matrix p = Matrix::Identity(a.cols(), a.cols());
    p.noalias() -= vr * vr.transpose();
    return p;
}

Matrix ann_left(const Matrix& a, double tol) {
    require_finite(a, "ann_left");
    auto svd = thin_svd(a);
    const int r = svd_rank(svd, tol);
    const Matrix ur = svd.matrixU().leftCols(r);
    Matrix p = Matrix::Identity(a.rows(), a.rows());
    p.noalias() -= ur * ur.transpose();
    return p;
}

Matrix orth(const Matrix& a, double tol) {
    require_finite(a, "orth");
    auto svd = thin_svd(a);
    const int r = svd_rank(svd, tol);
    return svd.matrixU().leftCols(r);
}

Matrix null_basis(const Matrix& a, double tol) {
    require_finite(a, "null_basis");
    // Full V needed: null directions live beyond the thin rank.
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    int r = 0;
    if (sv.size() > 0 && sv(0) > kZeroFloor) {
        const double cutoff = tol * sv(0);
        for (int i = 0; i < sv.size(); ++i) {
            if (sv(i) > cutoff) ++r;
        }
    }
    return svd.matrixV().rightCols(a.cols() - r);
}

std::optional<AffineSolution> solve_affine(const Matrix& a, const Vector& b, double tol) {
    require_finite(a, "solve_affine");
    if (b.size() != a.rows()) {
        throw InvalidInputError("solve_affine: rhs dimension mismatch");
    }
    const Matrix a_pinv = pinv(a, tol);
    const Vector particular = a_pinv * b;
    const Vector residual = b - a * particular;
    if (residual.norm() > tol * std::max(1.0, b.norm())) {
        return std::nullopt;
    }
    return AffineSolution{particular, null_basis(a, tol)};
}

EigDecomposition sym_eig(const Matrix& a) {
    require_finite(a, "sym_eig");
    if (a.rows() != a.cols()) {
        throw InvalidInputError("sym_eig: matrix must be square");
    }
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    const int n = static_cast<int>(a.rows());
    EigDecomposition out;
    out.values = Vector(n);
    out.vectors = Matrix(n, n);
    // Eigen sorts ascending; flip to descending.
    for (int i = 0; i < n; ++i) {
        out.values(i) = es.eigenvalues()(n - 1 - i);
        out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    return out;
}

double psd_margin(const Matrix& a) {
    require_finite(a, "psd_margin");
    if (a.rows() != a.cols()) {
        throw InvalidInputError("psd_margin: matrix must be square");
    }
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

bool is_psd(const Matrix& a, double tol_scale) {
    return psd_margin(a) >= -tol_scale * (1.0 + a.norm());
}

Matrix block_col(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) {
        throw InvalidInputError("block_col: no blocks");
    }
    const auto cols = blocks.front().cols();
    Eigen::Index rows = 0;
    for (const auto& b : blocks) {
        if (b.cols() != cols) {
            throw InvalidInputError("block_col: column count mismatch");
        }
        rows += b.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.middleRows(at, b.rows()) = b;
        at += b.rows();
    }
    return out;
}

Matrix block_diag(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) {
        throw InvalidInputError("block_diag: no blocks");
    }
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    for (const auto& b : blocks) {
        rows += b.rows();
        cols += b.cols();
    }
    Matrix out = Matrix::Zero(rows, cols);
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

Matrix permutation_from_index_map(const std::vector<int>& index_map) {
    const int n = static_cast<int>(index_map.size());
    if (n == 0) {
        throw InvalidInputError("permutation_from_index_map: empty map");
    }
    std::vector<bool> seen(n, false);
    Matrix p = Matrix::Zero(n, n);
    for (int r = 0; r < n; ++r) {
        const int s = index_map[r];
        if (s < 0 || s >= n || seen[s]) {
            throw InvalidInputError("permutation_from_index_map: map is not a bijection");
        }
        seen[s] = true;
        p(r, s) = 1.0;
    }
    return p;
}

}  // namespace ddpc::matlib
