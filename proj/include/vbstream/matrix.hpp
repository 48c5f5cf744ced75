#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vbstream/errors.hpp"

namespace vbs {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. Small by design: everything in this
// project lives in the latent dimension (D <= a few dozen) or a data
// dimension small enough to iterate naively.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, Vec data);

    static Matrix identity(std::size_t n);
    // Builds from nested initializer-like rows; throws ShapeError on ragged input.
    static Matrix from_rows(const std::vector<Vec>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Vec row_vec(std::size_t r) const { return Vec(row(r).begin(), row(r).end()); }
    void set_row(std::size_t r, const Vec& v);

    Vec& data() noexcept { return data_; }
    const Vec& data() const noexcept { return data_; }

    bool all_finite() const noexcept;
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    Matrix transposed() const;
    Matrix operator*(const Matrix& rhs) const;
    Matrix& operator+=(const Matrix& rhs);
    Matrix& operator-=(const Matrix& rhs);
    Matrix& operator*=(double s);

    Vec mul_vec(const Vec& v) const;          // A v
    double trace() const;
    double quad_form(const Vec& v) const;     // v^T A v
    double frobenius_norm() const;
    double max_abs_asymmetry() const;         // max |a_ij - a_ji| / max|a|
    void symmetrize();                        // a <- (a + a^T)/2

    // Appends the rows of `other` below this matrix (column counts must agree).
    void append_rows(const Matrix& other);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// a b^T for vectors.
Matrix outer(const Vec& a, const Vec& b);
double dot(const Vec& a, const Vec& b);
// y += s * x
void axpy(double s, const Vec& x, Vec& y);

// Lower-triangular Cholesky factor L with A = L L^T.
//
// PSD matrices enter this project as precision-scale updates
// (W^-1 = W0^-1 + N S + ...); they are factored once and afterwards touched
// only through solves and the log-determinant.
class CholeskyFactor {
public:
    // Empty placeholder; usable only after assignment from a real factor.
    CholeskyFactor() = default;

    // Factors `a`, which must be symmetric to 1e-9 relative asymmetry.
    // Throws NotPositiveDefinite (with the failing pivot index) when a pivot
    // is not strictly positive, ShapeError on non-square input.
    explicit CholeskyFactor(const Matrix& a);

    std::size_t dim() const noexcept { return dim_; }
    const Matrix& lower() const noexcept { return lower_; }

    double log_det() const;          // log det A = 2 sum log L_ii
    Vec solve(const Vec& b) const;   // A x = b
    Matrix solve(const Matrix& b) const;
    Matrix inverse() const;          // via solves against the identity, symmetrized
    Matrix reconstruct() const;      // L L^T

    // ||L^T v||^2 = v^T A v, useful when A is a precision matrix held as a factor.
    double quad_form(const Vec& v) const;

    // Rebuilds a factor from a stored lower triangle (checkpoint path). The
    // triangle is trusted; only the positive diagonal is re-checked.
    static CholeskyFactor from_lower(Matrix lower);

private:
    Matrix lower_;
    std::size_t dim_ = 0;
};

} // namespace vbs
