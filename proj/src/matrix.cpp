#include "sna/matrix.hpp"

#include <cmath>
#include <string>

#include "sna/errors.hpp"

namespace sna {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) {
        throw DimensionError("matrix: " + std::to_string(values_.size()) + " values for " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols_) throw DimensionError("matrix: ragged rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) {
            throw IndexError("row index " + std::to_string(indices[i]) + " out of range " +
                             std::to_string(rows_));
        }
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

void Matrix::accumulate_grad(std::span<const double> delta) {
    if (delta.size() != values_.size()) throw DimensionError("gradient shape mismatch");
    if (grad_.empty()) grad_.assign(values_.size(), 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i) grad_[i] += delta[i];
}

bool Matrix::all_finite() const noexcept {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    }
}

void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace sna
