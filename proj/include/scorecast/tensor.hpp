#pragma once

// Dense row-major matrices and the handful of kernels the networks need.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace scorecast {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data))
    {
        if (data_.size() != rows_ * cols_)
            throw UsageError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows)
    {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw UsageError("ragged matrix initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(std::span<const double> xs)
{
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

inline void require_finite(std::span<const double> xs, const char* where)
{
    if (!all_finite(xs)) throw NumericError(std::string("non-finite value in ") + where);
}

// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x)
{
    if (x.size() != a.cols())
        throw UsageError("matvec: expected input of length " + std::to_string(a.cols()) + ", got " +
                         std::to_string(x.size()));
    Vector y(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

// y += A^T g
inline void matvec_transposed_acc(const Matrix& a, std::span<const double> g, std::span<double> y)
{
    assert(g.size() == a.rows() && y.size() == a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        const double gr = g[r];
        if (gr == 0.0) continue;
        for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * gr;
    }
}

// A += g x^T
inline void outer_acc(Matrix& a, std::span<const double> g, std::span<const double> x)
{
    assert(g.size() == a.rows() && x.size() == a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row(r);
        const double gr = g[r];
        if (gr == 0.0) continue;
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += gr * x[c];
    }
}

inline void add_to(std::span<double> y, std::span<const double> x)
{
    assert(y.size() == x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Vector concat(std::span<const double> a, std::span<const double> b)
{
    Vector out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

// Numerically stable for any finite x: only ever exponentiates a non-positive number.
inline double sigmoid(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Vector sigmoid(std::span<const double> xs)
{
    Vector out(xs.size());
    std::transform(xs.begin(), xs.end(), out.begin(), [](double v) { return sigmoid(v); });
    return out;
}

inline Vector tanh(std::span<const double> xs)
{
    Vector out(xs.size());
    std::transform(xs.begin(), xs.end(), out.begin(), [](double v) { return std::tanh(v); });
    return out;
}

// Solves A x = b for symmetric positive definite A by Cholesky.
// Returns false when A is not numerically positive definite.
inline bool cholesky_solve(Matrix a, Vector& b)
{
    const std::size_t n = a.rows();
    assert(a.cols() == n && b.size() == n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > 1e-12 * std::max(1.0, std::abs(a(j, j))))) return false;
        const double ljj = std::sqrt(d);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
        b[i] = s / a(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
        b[i] = s / a(i, i);
    }
    return true;
}

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline void init_uniform_fan_in(Matrix& m, std::size_t fan_in, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (double& v : m.flat()) v = rng.uniform(-bound, bound);
}

} // namespace scorecast
