#include "sam/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sam/errors.hpp"

namespace sam {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return {r, c, std::move(data)};
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

double Matrix::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Matrix::max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

void Matrix::add_scaled(const Matrix& other, double scale) {
    if (!same_shape(other)) {
        throw DimensionError("add_scaled: " + shape_string() + " vs " + other.shape_string());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace sam
