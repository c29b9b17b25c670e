#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "ddpc/behavior.hpp"
#include "ddpc/plant.hpp"

namespace testutil {

/// Deterministic test randomness; thin wrapper over the toolkit source.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : src_(seed) {}

    double uniform() { return src_.next(); }  // [-1, 1]

    Eigen::MatrixXd matrix(int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) m(r, c) = uniform();
        }
        return m;
    }

    Eigen::VectorXd vector(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = uniform();
        return v;
    }

    Eigen::MatrixXd symmetric(int n) {
        const Eigen::MatrixXd m = matrix(n, n);
        return 0.5 * (m + m.transpose());
    }

    Eigen::MatrixXd psd(int n) {
        const Eigen::MatrixXd m = matrix(n, n);
        return m * m.transpose();
    }

private:
    ddpc::plant::UniformSource src_;
};

/// Simulates x(k+1) = a x(k) + b u(k), y = x; returns the stacked (u, y)
/// record as a dim-2 trajectory (u first).
inline ddpc::behavior::Trajectory first_order_siso(double a, double b,
                                                   const Eigen::VectorXd& input, double x0 = 0.0) {
    ddpc::behavior::Trajectory t;
    t.values.resize(2, input.size());
    double x = x0;
    for (int k = 0; k < input.size(); ++k) {
        t.values(0, k) = input(k);
        t.values(1, k) = x;
        x = a * x + b * input(k);
    }
    return t;
}

}  // namespace testutil
