#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sam {

/// Dense row-major float64 matrix. Value type; copies are deep.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);
    static Matrix scalar(double v) { return Matrix(1, 1, v); }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] bool same_shape(const Matrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    [[nodiscard]] Matrix transposed() const;
    [[nodiscard]] double sum() const noexcept;
    [[nodiscard]] double max_abs() const noexcept;
    [[nodiscard]] bool all_finite() const noexcept;
    void fill(double v) noexcept;

    /// In-place `this += scale * other`; shapes must match.
    void add_scaled(const Matrix& other, double scale = 1.0);

    [[nodiscard]] std::string shape_string() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Largest absolute entry difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace sam
