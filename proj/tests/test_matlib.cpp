#include <doctest.h>

#include <Eigen/Dense>

#include "ddpc/matlib.hpp"
#include "test_util.hpp"

using namespace ddpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("pinv: scalar and projector cases") {
    MatrixXd a(1, 1);
    a << 2.0;
    CHECK(matlib::pinv(a)(0, 0) == doctest::Approx(0.5));

    MatrixXd p(2, 2);
    p << 1, 0, 0, 0;
    CHECK((matlib::pinv(p) - p).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pinv: Penrose conditions on random matrices") {
    testutil::Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const int rows = 2 + trial % 5;
        const int cols = 2 + (trial * 3) % 5;
        const MatrixXd a = rng.matrix(rows, cols);
        const MatrixXd ap = matlib::pinv(a);
        const double scale = std::max(1.0, a.norm());
        CHECK((a * ap * a - a).norm() <= 1e-8 * scale);
        CHECK((ap * a * ap - ap).norm() <= 1e-8 * std::max(1.0, ap.norm()));
        CHECK((a * ap - (a * ap).transpose()).norm() <= 1e-8);
        CHECK((ap * a - (ap * a).transpose()).norm() <= 1e-8);
    }
}

TEST_CASE("pinv: rank-deficient 5x3 keeps reconstruction") {
    testutil::Rng rng(7);
    MatrixXd a(5, 3);
    a.leftCols(2) = rng.matrix(5, 2);
    a.col(2) = a.col(0) - 2.0 * a.col(1);  // deficient
    const MatrixXd ap = matlib::pinv(a);
    CHECK((a * ap * a - a).norm() <= 1e-9 * a.norm());
}

TEST_CASE("pinv rejects non-finite input") {
    MatrixXd a(1, 2);
    a << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(matlib::pinv(a), InvalidInputError);
}

TEST_CASE("annihilators: axis and full-rank cases") {
    MatrixXd a(1, 2);
    a << 1, 0;
    MatrixXd expect(2, 2);
    expect << 0, 0, 0, 1;
    CHECK((matlib::ann_right(a) - expect).norm() <= 1e-12);

    testutil::Rng rng(3);
    const MatrixXd full = rng.matrix(5, 3);  // full column rank a.s.
    CHECK(matlib::ann_right(full).norm() <= 1e-9);

    MatrixXd col(2, 1);
    col << 1, 0;
    CHECK((matlib::ann_left(col) - expect).norm() <= 1e-12);
    const MatrixXd fat = rng.matrix(3, 5);  // full row rank a.s.
    CHECK(matlib::ann_left(fat).norm() <= 1e-9);
}

TEST_CASE("annihilators: projector identities and rank split") {
    testutil::Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const MatrixXd a = rng.matrix(3, 6);
        const MatrixXd right = matlib::ann_right(a);
        const MatrixXd left = matlib::ann_left(a);
        CHECK((a * right).norm() <= 1e-9 * std::max(1.0, a.norm()));
        CHECK((left * a).norm() <= 1e-9 * std::max(1.0, a.norm()));
        CHECK((right - right.transpose()).norm() <= 1e-10);
        CHECK((right * right - right).norm() <= 1e-10);
        CHECK((left - left.transpose()).norm() <= 1e-10);
        CHECK((left * left - left).norm() <= 1e-10);
        CHECK(matlib::rank(right) == 6 - matlib::rank(a));
    }
}

TEST_CASE("solve_affine: explicit cases") {
    MatrixXd a(2, 2);
    a << 1, 0, 0, 0;
    VectorXd b(2);
    b << 1, 0;
    const auto sol = matlib::solve_affine(a, b);
    REQUIRE(sol.has_value());
    CHECK((sol->particular - (VectorXd(2) << 1, 0).finished()).norm() <= 1e-10);
    REQUIRE(sol->null_basis.cols() == 1);
    CHECK(std::abs(sol->null_basis(1, 0)) == doctest::Approx(1.0));

    VectorXd inconsistent(2);
    inconsistent << 0, 1;
    CHECK(!matlib::solve_affine(a, inconsistent).has_value());
}

TEST_CASE("solve_affine: random consistent systems") {
    testutil::Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        const MatrixXd a = rng.matrix(4, 6);
        const VectorXd x0 = rng.vector(6);
        const VectorXd b = a * x0;
        const auto sol = matlib::solve_affine(a, b);
        REQUIRE(sol.has_value());
        CHECK((a * sol->particular - b).norm() <= 1e-9 * std::max(1.0, b.norm()));
        // every point of the affine family solves the system
        const VectorXd z = rng.vector(sol->null_basis.cols());
        const VectorXd x = sol->particular + sol->null_basis * z;
        CHECK((a * x - b).norm() <= 1e-8 * std::max(1.0, b.norm()));
    }
}

TEST_CASE("sym_eig: explicit spectra and reconstruction") {
    MatrixXd d = MatrixXd::Zero(2, 2);
    d(0, 0) = 3;
    d(1, 1) = 1;
    auto eig = matlib::sym_eig(d);
    CHECK(eig.values(0) == doctest::Approx(3.0));
    CHECK(eig.values(1) == doctest::Approx(1.0));

    MatrixXd swap(2, 2);
    swap << 0, 1, 1, 0;
    eig = matlib::sym_eig(swap);
    CHECK(eig.values(0) == doctest::Approx(1.0));
    CHECK(eig.values(1) == doctest::Approx(-1.0));

    testutil::Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const MatrixXd a = rng.symmetric(6);
        eig = matlib::sym_eig(a);
        const MatrixXd rebuilt =
            eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
        CHECK((rebuilt - a).norm() <= 1e-9 * std::max(1.0, a.norm()));
        CHECK((eig.vectors.transpose() * eig.vectors - MatrixXd::Identity(6, 6)).norm() <= 1e-10);
        for (int i = 0; i + 1 < 6; ++i) CHECK(eig.values(i) >= eig.values(i + 1));
    }
    CHECK_THROWS_AS(matlib::sym_eig(rng.matrix(2, 3)), InvalidInputError);
}

TEST_CASE("psd_margin: identity, negation, Gram") {
    CHECK(matlib::psd_margin(MatrixXd::Identity(3, 3)) == doctest::Approx(1.0));
    CHECK(matlib::psd_margin(-MatrixXd::Identity(3, 3)) == doctest::Approx(-1.0));
    testutil::Rng rng(23);
    const MatrixXd b = rng.matrix(4, 4);
    CHECK(matlib::psd_margin(b.transpose() * b) >= -1e-12);
}

TEST_CASE("block stackers and permutations") {
    const MatrixXd one = MatrixXd::Identity(1, 1);
    const MatrixXd col = matlib::block_col({one, one});
    CHECK(col.rows() == 2);
    CHECK(col.cols() == 1);
    CHECK(col(0, 0) == 1.0);
    CHECK(col(1, 0) == 1.0);

    MatrixXd two(1, 1), three(1, 1);
    two << 2;
    three << 3;
    const MatrixXd diag = matlib::block_diag({two, three});
    MatrixXd expect(2, 2);
    expect << 2, 0, 0, 3;
    CHECK((diag - expect).norm() == 0.0);

    const MatrixXd id = matlib::permutation_from_index_map({0, 1, 2});
    CHECK((id - MatrixXd::Identity(3, 3)).norm() == 0.0);
    const MatrixXd p = matlib::permutation_from_index_map({2, 0, 1});
    VectorXd x(3);
    x << 10, 20, 30;
    const VectorXd px = p * x;
    CHECK(px(0) == 30.0);
    CHECK(px(1) == 10.0);
    CHECK(px(2) == 20.0);
    // exactly one 1 per row and column
    CHECK((p.rowwise().sum() - VectorXd::Ones(3)).norm() == 0.0);
    CHECK((p.colwise().sum().transpose() - VectorXd::Ones(3)).norm() == 0.0);
    CHECK_THROWS_AS(matlib::permutation_from_index_map({0, 0, 1}), InvalidInputError);
}
