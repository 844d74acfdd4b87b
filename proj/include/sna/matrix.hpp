#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sna {

/// Dense row-major matrix of doubles with an optional gradient slot of the same shape.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// Copies the listed rows, in order, into a new matrix.
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::vector<double>& grad() noexcept { return grad_; }
    const std::vector<double>& grad() const noexcept { return grad_; }
    /// Adds `delta` into the gradient slot, allocating it on first use.
    void accumulate_grad(std::span<const double> delta);
    void clear_grad() noexcept { grad_.clear(); }

    bool all_finite() const noexcept;

    /// Value equality; gradient slots are ignored.
    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
    std::vector<double> grad_;
};

/// Throws DimensionError unless `m` is rows x cols.
void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what);
/// Throws NumericError if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

}  // namespace sna
