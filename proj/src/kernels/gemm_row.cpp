#include "gemm_row.hpp"

// AVX2 clones are selected at load time where the CPU has them. FMA is not
// enabled, so each element sees the same multiply and add as the default build.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define SAM_TARGET_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define SAM_TARGET_CLONES
#endif

namespace sam::kernels::detail {

SAM_TARGET_CLONES
void gemm_row(const double* __restrict a_row, const Matrix& b, double* __restrict out_row) {
    const std::size_t inner = b.rows(), m = b.cols();
    const double* bp = b.data().data();
    for (std::size_t k = 0; k < inner; ++k) {
        const double aik = a_row[k];
        const double* __restrict br = bp + k * m;
        for (std::size_t j = 0; j < m; ++j) out_row[j] += aik * br[j];
    }
}

SAM_TARGET_CLONES
void gemm_col(const Matrix& a, std::size_t i, const Matrix& b, double* __restrict out_row) {
    const std::size_t inner = a.rows(), m = b.cols(), stride = a.cols();
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    for (std::size_t k = 0; k < inner; ++k) {
        const double aki = ap[k * stride + i];
        const double* __restrict br = bp + k * m;
        for (std::size_t j = 0; j < m; ++j) out_row[j] += aki * br[j];
    }
}

}  // namespace sam::kernels::detail
