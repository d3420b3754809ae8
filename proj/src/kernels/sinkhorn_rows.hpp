#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>

#include "sam/matrix.hpp"

// Sinkhorn building blocks shared by the serial and parallel backends. Each works
// on a contiguous range of rows or columns and performs the same operations per
// element whatever the range, so partitioning never changes results.
namespace sam::kernels::detail {

// exp(x) for x <= 709 by range reduction x = n ln2 + r and a degree-13 Taylor
// polynomial in r; relative error within a few ulp, 0 below -708. Branch-free so
// loops over it vectorize.
inline double exp_poly(double x) {
    constexpr double kLog2e = 1.4426950408889634;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kRound = 6755399441055744.0;  // 1.5 * 2^52
    const bool underflow = x < -708.0;
    x = x < -708.0 ? -708.0 : (x > 709.0 ? 709.0 : x);
    const double shifted = x * kLog2e + kRound;
    const double n = shifted - kRound;
    const std::int64_t ni = std::bit_cast<std::int64_t>(shifted) - std::bit_cast<std::int64_t>(kRound);
    const double r = (x - n * kLn2Hi) - n * kLn2Lo;
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const double scale = std::bit_cast<double>(static_cast<std::uint64_t>(ni + 1023) << 52);
    return underflow ? 0.0 : p * scale;
}

// u_i = la_i - LSE_j(z_ij + v_j) for rows [begin, end).
void sinkhorn_rows(const Matrix& z, std::span<const double> v, std::span<const double> la,
                   std::span<double> u, std::size_t begin, std::size_t end);

// v_j = lb_j - LSE_i(z_ij + u_i) for columns [begin, end).
void sinkhorn_cols(const Matrix& z, std::span<const double> u, std::span<const double> lb,
                   std::span<double> v, std::size_t begin, std::size_t end);

// Backward through one column step for rows [begin, end):
// w_ij = exp(z_ij + u_i + v_j - lb_j); dz_ij -= dv_j w_ij; du_i -= sum_j dv_j w_ij.
void sinkhorn_cols_backward(const Matrix& z, std::span<const double> u, std::span<const double> v,
                            std::span<const double> lb, std::span<const double> dv, Matrix& dz,
                            std::span<double> du, std::size_t begin, std::size_t end);

// Backward through one row step for rows [begin, end):
// weights_ij = du_i exp(z_ij + v_j + u_i - la_i); dz_ij -= weights_ij.
void sinkhorn_rows_backward(const Matrix& z, std::span<const double> u, std::span<const double> v,
                            std::span<const double> la, std::span<const double> du, Matrix& dz,
                            Matrix& weights, std::size_t begin, std::size_t end);

// out_j = -sum_i weights_ij for columns [begin, end), rows summed in order.
void negated_column_sums(const Matrix& weights, std::span<double> out, std::size_t begin,
                         std::size_t end);

}  // namespace sam::kernels::detail
