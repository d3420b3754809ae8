#pragma once

#include <cstddef>

#include "sam/matrix.hpp"

// Row kernels shared by the serial and parallel backends so both accumulate every
// output element in the same order (k ascending).
namespace sam::kernels::detail {

// out_row = a_row * b
void gemm_row(const double* a_row, const Matrix& b, double* out_row);

// out_row = (column i of a)^T * b
void gemm_col(const Matrix& a, std::size_t i, const Matrix& b, double* out_row);

}  // namespace sam::kernels::detail
