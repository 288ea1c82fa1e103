#pragma once

// Central finite-difference gradient oracle. Used by every gradient
// verification in the library and the test suites.

#include <cmath>
#include <functional>
#include <string>

#include "opera/matrix.hpp"

namespace opera {

// Per-entry central difference of a scalar function of a matrix. The step
// for entry (i,j) is h * (1 + |x_ij|): second-order accurate and scale
// aware, which is what the 1e-6-level agreement checks need.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                               const Matrix& x, double h = 1e-5) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
    Matrix grad(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double orig = probe(i, j);
            const double step = h * (1.0 + std::abs(orig));
            probe(i, j) = orig + step;
            const double f_plus = f(probe);
            probe(i, j) = orig - step;
            const double f_minus = f(probe);
            probe(i, j) = orig;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                throw NumericError("finite_diff_grad: non-finite evaluation at entry (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
            }
            grad(i, j) = (f_plus - f_minus) / (2.0 * step);
        }
    }
    return grad;
}

// Convenience wrapper for vector-valued points.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               const Vector& x, double h = 1e-5) {
    const auto wrapped = [&f](const Matrix& m) { return f(m.data()); };
    return finite_diff_grad(wrapped, Matrix(1, x.size(), x), h).data();
}

}  // namespace opera
