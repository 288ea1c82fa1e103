#pragma once

// Dense row-major matrices and the handful of linear-algebra routines the
// rest of the library is built on. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "opera/errors.hpp"

namespace opera {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix init: got " + std::to_string(data_.size()) +
                             " values for " + std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_row(const Vector& v) { return Matrix(1, v.size(), v); }
    static Matrix from_col(const Vector& v) { return Matrix(v.size(), 1, v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    Vector row(std::size_t i) const {
        return Vector(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                      data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
    }

    void set_row(std::size_t i, const Vector& v) {
        if (v.size() != cols_) throw ShapeError("set_row: width mismatch");
        std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.data()); }

inline void require_finite(const Matrix& m, const char* what) {
    if (!all_finite(m)) throw NumericError(std::string(what) + ": non-finite entry");
}

inline void require_finite(const Vector& v, const char* what) {
    if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite entry");
}

// c = a * b. Plain ikj loop; fast enough at desk scale.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b.row_ptr(p);
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    require_finite(c, "matmul");
    return c;
}

// c = a^T * b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: row counts differ");
    Matrix c(a.cols(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t p = 0; p < n; ++p) {
        const double* ap = a.row_ptr(p);
        const double* bp = b.row_ptr(p);
        for (std::size_t i = 0; i < k; ++i) {
            double* ci = c.row_ptr(i);
            const double aip = ap[i];
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    require_finite(c, "matmul_tn");
    return c;
}

// c = a * b^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: col counts differ");
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
    require_finite(c, "matmul_nt");
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline double dot(const Vector& y, const Vector& p) {
    if (y.size() != p.size()) {
        throw ShapeError("dot: lengths " + std::to_string(y.size()) + " vs " + std::to_string(p.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * p[i];
    if (!std::isfinite(acc)) throw NumericError("dot: non-finite result");
    return acc;
}

inline double norm2_squared(const Vector& v) { return dot(v, v); }

inline double norm2(const Vector& v) { return std::sqrt(norm2_squared(v)); }

inline Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols() != x.size()) throw ShapeError("matvec: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row_ptr(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += ai[j] * x[j];
        y[i] = acc;
    }
    require_finite(y, "matvec");
    return y;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& x : c.data()) x *= s;
    return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Relative discrepancy with a floor so near-zero pairs compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-30) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

inline double max_rel_err(const Matrix& a, const Matrix& b, double floor = 1e-30) {
    if (!a.same_shape(b)) throw ShapeError("max_rel_err: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a.data()[i], b.data()[i], floor));
    return m;
}

}  // namespace opera
