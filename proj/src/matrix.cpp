#include "vbstream/matrix.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

namespace vbs {

Matrix::Matrix(std::size_t rows, std::size_t cols, Vec data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ * cols_ != data_.size())
        throw ShapeError("Matrix: rows*cols != data length");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return {};
    const std::size_t c = rows.front().size();
    Matrix m(rows.size(), c);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
        for (std::size_t j = 0; j < c; ++j) m(r, j) = rows[r][j];
    }
    return m;
}

void Matrix::set_row(std::size_t r, const Vec& v) {
    if (v.size() != cols_) throw ShapeError("Matrix::set_row: length mismatch");
    for (std::size_t j = 0; j < cols_; ++j) (*this)(r, j) = v[j];
}

bool Matrix::all_finite() const noexcept {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
    if (cols_ != rhs.rows_) throw ShapeError("Matrix multiply: inner dimensions differ");
    Matrix out(rows_, rhs.cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t k = 0; k < cols_; ++k) {
            const double a = (*this)(r, k);
            if (a == 0.0) continue;
            for (std::size_t c = 0; c < rhs.cols_; ++c) out(r, c) += a * rhs(k, c);
        }
    }
    return out;
}

Matrix& Matrix::operator+=(const Matrix& rhs) {
    if (!same_shape(rhs)) throw ShapeError("Matrix add: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& rhs) {
    if (!same_shape(rhs)) throw ShapeError("Matrix subtract: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
}

Vec Matrix::mul_vec(const Vec& v) const {
    if (v.size() != cols_) throw ShapeError("Matrix::mul_vec: length mismatch");
    Vec out(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols_; ++c) acc += (*this)(r, c) * v[c];
        out[r] = acc;
    }
    return out;
}

double Matrix::trace() const {
    double t = 0.0;
    const std::size_t n = rows_ < cols_ ? rows_ : cols_;
    for (std::size_t i = 0; i < n; ++i) t += (*this)(i, i);
    return t;
}

double Matrix::quad_form(const Vec& v) const {
    return dot(v, mul_vec(v));
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
}

double Matrix::max_abs_asymmetry() const {
    double asym = 0.0, scale = 0.0;
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) {
            scale = std::max(scale, std::fabs((*this)(r, c)));
            if (c > r) asym = std::max(asym, std::fabs((*this)(r, c) - (*this)(c, r)));
        }
    return scale > 0.0 ? asym / scale : asym;
}

void Matrix::symmetrize() {
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = r + 1; c < cols_; ++c) {
            const double m = 0.5 * ((*this)(r, c) + (*this)(c, r));
            (*this)(r, c) = m;
            (*this)(c, r) = m;
        }
}

void Matrix::append_rows(const Matrix& other) {
    if (other.rows_ == 0) return;
    if (rows_ == 0 && cols_ == 0) {
        *this = other;
        return;
    }
    if (other.cols_ != cols_) throw ShapeError("Matrix::append_rows: column mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix outer(const Vec& a, const Vec& b) {
    Matrix m(a.size(), b.size());
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < b.size(); ++c) m(r, c) = a[r] * b[c];
    return m;
}

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void axpy(double s, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

CholeskyFactor::CholeskyFactor(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix not square");
    if (!a.all_finite()) throw std::domain_error("cholesky: non-finite entry");
    if (a.max_abs_asymmetry() > 1e-9)
        throw std::domain_error("cholesky: matrix not symmetric");

    const std::size_t n = a.rows();
    dim_ = n;
    lower_ = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= lower_(j, k) * lower_(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag))
            throw NotPositiveDefinite(j, "cholesky: non-positive pivot " + std::to_string(j));
        const double ljj = std::sqrt(diag);
        lower_(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= lower_(i, k) * lower_(j, k);
            lower_(i, j) = s / ljj;
        }
    }
}

CholeskyFactor CholeskyFactor::from_lower(Matrix lower) {
    if (lower.rows() != lower.cols()) throw ShapeError("cholesky factor: not square");
    for (std::size_t i = 0; i < lower.rows(); ++i)
        if (!(lower(i, i) > 0.0))
            throw NotPositiveDefinite(i, "cholesky factor: non-positive diagonal");
    CholeskyFactor f;
    f.dim_ = lower.rows();
    f.lower_ = std::move(lower);
    return f;
}

double CholeskyFactor::log_det() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) s += std::log(lower_(i, i));
    return 2.0 * s;
}

Vec CholeskyFactor::solve(const Vec& b) const {
    if (b.size() != dim_) throw ShapeError("cholesky solve: length mismatch");
    Vec y(b);
    // forward: L y = b
    for (std::size_t i = 0; i < dim_; ++i) {
        double s = y[i];
        for (std::size_t k = 0; k < i; ++k) s -= lower_(i, k) * y[k];
        y[i] = s / lower_(i, i);
    }
    // backward: L^T x = y
    for (std::size_t ii = dim_; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < dim_; ++k) s -= lower_(k, ii) * y[k];
        y[ii] = s / lower_(ii, ii);
    }
    return y;
}

Matrix CholeskyFactor::solve(const Matrix& b) const {
    if (b.rows() != dim_) throw ShapeError("cholesky solve: row mismatch");
    Matrix out(b.rows(), b.cols());
    Vec col(dim_);
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t r = 0; r < dim_; ++r) col[r] = b(r, c);
        Vec x = solve(col);
        for (std::size_t r = 0; r < dim_; ++r) out(r, c) = x[r];
    }
    return out;
}

Matrix CholeskyFactor::inverse() const {
    Matrix inv = solve(Matrix::identity(dim_));
    inv.symmetrize();
    return inv;
}

Matrix CholeskyFactor::reconstruct() const {
    return lower_ * lower_.transposed();
}

double CholeskyFactor::quad_form(const Vec& v) const {
    if (v.size() != dim_) throw ShapeError("cholesky quad_form: length mismatch");
    // ||L^T v||^2
    double total = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
        double s = 0.0;
        for (std::size_t i = j; i < dim_; ++i) s += lower_(i, j) * v[i];
        total += s * s;
    }
    return total;
}

} // namespace vbs
